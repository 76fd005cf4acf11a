"""Randomized loss-fixture generation shared by the unit and acceptance tests."""

import numpy as np


def random_loss_fixture(rng: np.random.Generator, num_classes: int = 3) -> dict:
    """Build a fixture bundle with explicit match lists and no degeneracies."""
    h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    probs = rng.uniform(0.05, 1.0, size=(h, w, num_classes))
    probs /= probs.sum(axis=2, keepdims=True)
    target = rng.integers(1, num_classes + 1, size=(h, w))

    def random_box():
        return [
            float(rng.uniform(5, 60)),
            float(rng.uniform(5, 60)),
            float(rng.uniform(2, 30)),
            float(rng.uniform(2, 30)),
        ]

    n_anchor = int(rng.integers(2, 7))
    n_gt = int(rng.integers(1, 4))
    anchors = [random_box() for _ in range(n_anchor)]
    pred_boxes = [random_box() for _ in range(n_anchor)]
    objectness = rng.uniform(0.05, 0.95, size=n_anchor).tolist()
    rpn_gt = [random_box() for _ in range(n_gt)]
    anchor_ids = list(rng.permutation(n_anchor))
    n_pos = int(rng.integers(1, min(n_anchor, 3) + 1))
    rpn_pos = [[int(rng.integers(0, n_gt)), int(anchor_ids[i])] for i in range(n_pos)]
    rpn_neg = [int(a) for a in anchor_ids[n_pos:]]

    n_prop = int(rng.integers(2, 6))
    n_roi_gt = int(rng.integers(1, 3))
    proposals = [random_box() for _ in range(n_prop)]
    roi_gt = [random_box() for _ in range(n_roi_gt)]
    roi_classes = [int(rng.integers(1, num_classes + 1)) for _ in range(n_roi_gt)]
    class_probs = rng.uniform(0.05, 1.0, size=(n_prop, num_classes + 1))
    class_probs /= class_probs.sum(axis=1, keepdims=True)
    class_boxes = [[random_box() for _ in range(num_classes)] for _ in range(n_prop)]
    prop_ids = list(rng.permutation(n_prop))
    n_roi_pos = int(rng.integers(1, min(n_prop, 3) + 1))
    roi_pos = [[int(rng.integers(0, n_roi_gt)), int(prop_ids[i])] for i in range(n_roi_pos)]
    roi_neg = [int(p) for p in prop_ids[n_roi_pos:]]

    pred_masks = [rng.uniform(0.02, 0.98, size=(28, 28)).tolist() for _ in range(n_roi_pos)]
    gt_masks = []
    for _ in range(n_roi_pos):
        grid = rng.integers(0, 2, size=(28, 28)).astype(float)
        void = rng.random(size=(28, 28)) < 0.1
        grid[void] = -1.0
        gt_masks.append(grid.tolist())

    return {
        "semantic": {"probs": probs.tolist(), "target": target.tolist()},
        "rpn": {
            "anchors": anchors,
            "gt_boxes": rpn_gt,
            "pred_boxes": pred_boxes,
            "objectness": objectness,
            "match": {"positives": rpn_pos, "negatives": rpn_neg},
        },
        "roi": {
            "proposals": proposals,
            "gt_boxes": roi_gt,
            "gt_classes": roi_classes,
            "class_probs": class_probs.tolist(),
            "class_boxes": class_boxes,
            "pred_masks": pred_masks,
            "gt_masks": gt_masks,
            "match": {"positives": roi_pos, "negatives": roi_neg},
        },
    }


def naive_report(fixture: dict) -> dict:
    """Evaluate a fixture with the naive loop implementation."""
    from naive_losses import naive_roi, naive_rpn, naive_semantic

    sem = naive_semantic(fixture["semantic"]["probs"], fixture["semantic"]["target"])
    rpn = fixture["rpn"]
    positives = [tuple(p) for p in rpn["match"]["positives"]]
    ob, bb = naive_rpn(
        rpn["objectness"],
        [tuple(b) for b in rpn["pred_boxes"]],
        [tuple(b) for b in rpn["anchors"]],
        [tuple(b) for b in rpn["gt_boxes"]],
        positives,
        rpn["match"]["negatives"],
    )
    roi = fixture["roi"]
    cls, rbb, msk = naive_roi(
        roi["class_probs"],
        roi["class_boxes"],
        [tuple(b) for b in roi["proposals"]],
        [tuple(b) for b in roi["gt_boxes"]],
        roi["gt_classes"],
        [tuple(p) for p in roi["match"]["positives"]],
        roi["match"]["negatives"],
        roi["pred_masks"],
        roi["gt_masks"],
    )
    return {
        "semantic": sem,
        "rpn_objectness": ob,
        "rpn_box": bb,
        "roi_class": cls,
        "roi_box": rbb,
        "roi_mask": msk,
    }
