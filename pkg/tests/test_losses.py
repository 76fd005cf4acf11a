import math

import numpy as np
import pytest

from panoptikit import (
    Box,
    LossInputError,
    MaskTarget,
    MatchSet,
    MaskGrid,
    SemanticProb,
    SemanticTarget,
    loss_report_from_fixture,
    rasterize_mask_target,
    roi_losses,
    rpn_losses,
    semantic_loss,
    smooth_l1,
)

from fixture_gen import naive_report, random_loss_fixture

RNG = np.random.default_rng(7)


# --- smooth L1 -------------------------------------------------------------


@pytest.mark.parametrize("x,expected", [(0.0, 0.0), (0.5, 0.125), (2.0, 1.5), (-2.0, 1.5), (-0.5, 0.125), (1.0, 0.5)])
def test_smooth_l1_values(x, expected):
    assert smooth_l1(x) == pytest.approx(expected, abs=1e-12)


# --- semantic loss ------------------------------------------------------------


def uniform_probs(h, w, c):
    return SemanticProb(np.full((h, w, c), 1.0 / c))


def test_semantic_perfect_prediction_is_zero():
    h = w = 4
    target = np.ones((h, w), dtype=int)
    probs = np.zeros((h, w, 3))
    probs[:, :, 0] = 1.0
    out = semantic_loss(SemanticProb(probs), SemanticTarget(target))
    assert out.value == 0.0
    assert out.flags == ()


def test_semantic_uniform_two_by_two_gives_log_c():
    c = 5
    out = semantic_loss(uniform_probs(2, 2, c), SemanticTarget(np.ones((2, 2), dtype=int)))
    # one pixel selected at weight 1
    assert out.value == pytest.approx(math.log(c), abs=1e-12)


def test_semantic_hard_mining_selects_worst_quarter():
    probs = np.zeros((2, 2, 2))
    correct = np.array([[0.9, 0.8], [0.5, 0.7]])
    probs[:, :, 0] = correct
    probs[:, :, 1] = 1.0 - correct
    out = semantic_loss(SemanticProb(probs), SemanticTarget(np.ones((2, 2), dtype=int)))
    assert out.value == pytest.approx(math.log(2), abs=1e-12)


def test_semantic_zero_probability_saturates():
    probs = np.zeros((2, 2, 2))
    probs[:, :, 1] = 1.0
    out = semantic_loss(SemanticProb(probs), SemanticTarget(np.ones((2, 2), dtype=int)))
    assert out.value == math.inf
    assert "semantic:log_zero" in out.flags


def test_semantic_permutation_invariance():
    h, w, c = 4, 4, 3
    probs = RNG.uniform(0.05, 1.0, size=(h, w, c))
    probs /= probs.sum(axis=2, keepdims=True)
    target = RNG.integers(1, c + 1, size=(h, w))
    base = semantic_loss(SemanticProb(probs), SemanticTarget(target)).value
    perm = RNG.permutation(h * w)
    flat_p = probs.reshape(-1, c)[perm].reshape(h, w, c)
    flat_t = target.reshape(-1)[perm].reshape(h, w)
    assert semantic_loss(SemanticProb(flat_p), SemanticTarget(flat_t)).value == pytest.approx(base, rel=1e-12)


def test_semantic_probs_validation():
    with pytest.raises(LossInputError):
        SemanticProb(np.full((2, 2, 2), 0.9))


# --- rpn losses ------------------------------------------------------------------


def simple_anchors():
    return [Box(5, 5, 4, 4), Box(20, 20, 4, 4)]


def test_rpn_perfect_predictions():
    anchors = simple_anchors()
    gt = [anchors[0]]
    sampled = MatchSet(positives=((0, 0),), negatives=(1,))
    out = rpn_losses([1.0, 0.0], list(anchors), anchors, gt, sampled)
    assert out.objectness == 0.0
    assert out.box == 0.0


def test_rpn_half_objectness_single_positive():
    anchors = [simple_anchors()[0]]
    gt = [anchors[0]]
    sampled = MatchSet(positives=((0, 0),), negatives=())
    out = rpn_losses([0.5], [anchors[0]], anchors, gt, sampled)
    assert out.objectness == pytest.approx(math.log(2), abs=1e-12)
    assert out.box == 0.0


def test_rpn_box_loss_divides_by_full_match_count():
    anchors = simple_anchors()
    gt = [anchors[0]]
    # predicted box shifted so (x_gt - x_pred) / w_anchor = 0.5, everything else exact
    shifted = Box(anchors[0].cx - 2.0, anchors[0].cy, 4, 4)
    sampled = MatchSet(positives=((0, 0),), negatives=(1,))
    out = rpn_losses([1.0, 0.0], [shifted, anchors[1]], anchors, gt, sampled)
    assert out.box == pytest.approx(0.0625, abs=1e-12)


def test_rpn_negatives_dilute_box_loss():
    anchors = [Box(5, 5, 4, 4)] + [Box(50 + 10 * i, 50, 4, 4) for i in range(21)]
    gt = [anchors[0]]
    shifted = Box(anchors[0].cx - 2.0, anchors[0].cy, 4, 4)
    preds = [shifted] + anchors[1:]
    scores = [1.0] + [0.0] * 21
    one_neg = rpn_losses(scores, preds, anchors, gt, MatchSet(positives=((0, 0),), negatives=(1,)))
    two_neg = rpn_losses(scores, preds, anchors, gt, MatchSet(positives=((0, 0),), negatives=(1, 2)))
    assert one_neg.box == pytest.approx(0.0625)
    assert two_neg.box == pytest.approx(one_neg.box * 2 / 3)
    # the box term scales as 1 / |M|: doubling the match count halves it
    ten = rpn_losses(scores, preds, anchors, gt, MatchSet(positives=((0, 0),), negatives=tuple(range(1, 11))))
    twentyone = rpn_losses(
        scores, preds, anchors, gt, MatchSet(positives=((0, 0),), negatives=tuple(range(1, 22)))
    )
    assert twentyone.box == pytest.approx(ten.box / 2, rel=1e-12)


def test_rpn_empty_match_set_flag():
    out = rpn_losses([], [], [], [], MatchSet(positives=(), negatives=()))
    assert (out.objectness, out.box) == (0.0, 0.0)
    assert "rpn:empty_match_set" in out.flags


# --- roi losses ---------------------------------------------------------------------


def perfect_roi_inputs():
    gt_box = Box(10, 10, 6, 6)
    proposals = [gt_box]
    gt = [(gt_box, 1)]
    class_probs = np.array([[1.0, 0.0, 0.0]])  # classes 1..2 + void
    class_boxes = np.array([[[10, 10, 6, 6], [10, 10, 6, 6]]], dtype=float)
    mask_values = RNG.integers(0, 2, size=(28, 28)).astype(float)
    pred = MaskGrid(mask_values)
    target = MaskTarget(values=mask_values, void=np.zeros((28, 28), dtype=bool))
    sampled = MatchSet(positives=((0, 0),), negatives=())
    return class_probs, class_boxes, proposals, gt, sampled, [pred], [target]


def test_roi_perfect_everything_zero():
    out = roi_losses(*perfect_roi_inputs())
    assert (out.classification, out.box, out.mask) == (0.0, 0.0, 0.0)


def test_roi_single_negative_void_half():
    class_probs = np.array([[0.25, 0.25, 0.5]])
    class_boxes = np.full((1, 2, 4), 1.0)
    out = roi_losses(
        class_probs,
        class_boxes,
        [Box(1, 1, 1, 1)],
        [],
        MatchSet(positives=(), negatives=(0,)),
        [],
        [],
    )
    assert out.classification == pytest.approx(math.log(2), abs=1e-12)
    assert out.box == 0.0
    assert out.mask == 0.0


def test_roi_uniform_half_mask_gives_log_two():
    class_probs, class_boxes, proposals, gt, sampled, _, targets = perfect_roi_inputs()
    pred = MaskGrid(np.full((28, 28), 0.5))
    out = roi_losses(class_probs, class_boxes, proposals, gt, sampled, [pred], targets)
    assert out.mask == pytest.approx(math.log(2), abs=1e-12)


def test_roi_all_void_target_flags_and_contributes_zero():
    class_probs, class_boxes, proposals, gt, sampled, preds, _ = perfect_roi_inputs()
    target = MaskTarget(values=np.zeros((28, 28)), void=np.ones((28, 28), dtype=bool))
    out = roi_losses(class_probs, class_boxes, proposals, gt, sampled, preds, [target])
    assert out.mask == 0.0
    assert any(f.startswith("roi:empty_mask") for f in out.flags)


def test_roi_empty_match_set():
    out = roi_losses(np.zeros((0, 3)), np.zeros((0, 2, 4)), [], [], MatchSet((), ()), [], [])
    assert (out.classification, out.box, out.mask) == (0.0, 0.0, 0.0)
    assert "roi:empty_match_set" in out.flags


# --- fixture bundle and naive agreement ------------------------------------------------


def assert_report_close(lib: dict, ref: dict, tol=1e-9):
    for key, expected in ref.items():
        got = lib[key]
        if isinstance(got, str):
            got = math.inf
        assert got == pytest.approx(expected, rel=tol, abs=tol), key


def test_fixture_agreement_with_naive_reimplementation():
    rng = np.random.default_rng(123)
    for _ in range(25):
        fixture = random_loss_fixture(rng)
        lib = loss_report_from_fixture(fixture).to_dict()
        assert_report_close(lib, naive_report(fixture))


def test_fixture_with_matcher_block():
    gt = [[10.0, 10.0, 4.0, 4.0]]
    fixture = {
        "rpn": {
            "anchors": [[10.0, 10.0, 4.0, 4.0], [30.0, 30.0, 4.0, 4.0]],
            "gt_boxes": gt,
            "pred_boxes": [[10.0, 10.0, 4.0, 4.0], [30.0, 30.0, 4.0, 4.0]],
            "objectness": [1.0, 0.0],
            "matcher": {"seed": 3},
        }
    }
    report = loss_report_from_fixture(fixture)
    assert report.rpn_objectness == 0.0
    assert report.rpn_box == 0.0
    assert "semantic:absent" in report.flags


def test_fixture_schema_violation():
    with pytest.raises(LossInputError):
        loss_report_from_fixture({"rpn": {"anchors": [[1, 1, 2, 2]]}})


# --- ground-truth mask rasterization -----------------------------------------------------


def test_rasterize_full_box_foreground():
    mask = np.ones((32, 32), dtype=int)
    target = rasterize_mask_target(mask, Box(16, 16, 16, 16))
    assert target.values.all()
    assert not target.void.any()


def test_rasterize_half_split():
    mask = np.zeros((32, 32), dtype=int)
    mask[:, :16] = 1
    target = rasterize_mask_target(mask, Box(16, 16, 32, 32))
    assert target.values[:, :14].all()
    assert not target.values[:, 14:].any()


def test_rasterize_void_fraction():
    mask = np.ones((32, 32), dtype=int)
    void = np.zeros((32, 32), dtype=bool)
    void[:, 16:] = True
    target = rasterize_mask_target(mask, Box(16, 16, 32, 32), void=void)
    assert not target.void[:, :14].any()
    assert target.void[:, 14:].all()


def test_mask_target_from_ternary():
    grid = np.zeros((28, 28))
    grid[0, 0] = -1
    grid[5, 5] = 1
    target = MaskTarget.from_ternary(grid)
    assert target.void[0, 0]
    assert target.values[5, 5] == 1.0
    assert target.values[0, 0] == 0.0
