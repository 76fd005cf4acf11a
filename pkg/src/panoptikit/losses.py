"""Forward-only training loss oracles.

Computes the value of each training loss from raw predictions and a match
set, with no gradients and no framework dependencies. Degenerate inputs
(log of zero, empty match sets, all-void target masks) never raise: they
saturate to infinity or zero and are reported through flags, so a fixture
that would break a trainer is exposed rather than hidden.

Summation order is fixed (row-major over pixels, pair order over matches)
so results are bit-identical across runs.

Class-id convention: semantic targets and ground-truth detection classes
use ids 1..C; probability rows carry C class columns (id c at column c-1)
plus, for the second stage, a trailing void column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .boxes import Anchor, Box
from .matching import MatcherConfig, MatchSet, SeededRng, match_proposals, match_rpn, sample_matches
from .tensor_ops import MASK_SIZE, MaskGrid

PROB_TOLERANCE = 1e-6


class LossInputError(ValueError):
    """Malformed loss-oracle input."""


def smooth_l1(x: float) -> float:
    """Piecewise loss: quadratic 0.5*x*x inside |x| < 1, linear |x| - 0.5 outside."""
    ax = abs(x)
    if ax < 1.0:
        return 0.5 * x * x
    return ax - 0.5


@dataclass(frozen=True, eq=False)
class SemanticProb:
    """H x W x C per-pixel class probabilities; each pixel sums to 1."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise LossInputError(f"probabilities must be H x W x C, got shape {values.shape}")
        if values.size:
            if values.min() < 0.0 or values.max() > 1.0:
                raise LossInputError("probabilities must lie in [0, 1]")
            sums = values.sum(axis=2)
            if np.abs(sums - 1.0).max() > PROB_TOLERANCE:
                raise LossInputError("per-pixel probabilities must sum to 1")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class SemanticTarget:
    """H x W ground-truth class ids, 1-based."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int64)
        if labels.ndim != 2:
            raise LossInputError(f"target must be H x W, got shape {labels.shape}")
        if labels.size and labels.min() < 1:
            raise LossInputError("target class ids must be >= 1")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True, eq=False)
class MaskTarget:
    """Ternary 28 x 28 ground-truth instance mask: {0, 1} values plus a void grid."""

    values: np.ndarray
    void: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        void = np.array(self.void, dtype=bool)
        if values.shape != (MASK_SIZE, MASK_SIZE) or void.shape != (MASK_SIZE, MASK_SIZE):
            raise LossInputError(f"mask target grids must be {MASK_SIZE} x {MASK_SIZE}")
        if not np.isin(values, (0.0, 1.0)).all():
            raise LossInputError("mask target values must be 0 or 1")
        values.flags.writeable = False
        void.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "void", void)

    @classmethod
    def from_ternary(cls, grid: np.ndarray) -> "MaskTarget":
        """Build from a single grid where -1 marks void cells."""
        grid = np.asarray(grid, dtype=np.float64)
        void = grid < 0
        return cls(values=np.where(void, 0.0, grid), void=void)


@dataclass(frozen=True)
class SemanticLoss:
    value: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RpnLosses:
    objectness: float
    box: float
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RoiLosses:
    classification: float
    box: float
    mask: float
    flags: tuple[str, ...] = ()


def _neg_log(p: float, flags: list[str], flag: str) -> float:
    if p <= 0.0:
        if flag not in flags:
            flags.append(flag)
        return math.inf
    return -math.log(p)


def semantic_loss(probs: SemanticProb, target: SemanticTarget) -> SemanticLoss:
    """Hard-mined per-pixel log loss.

    The floor(H*W/4) pixels with the lowest probability of their true class
    are selected (ties broken by row-major pixel index); each contributes
    -log p weighted by 4/(W*H), all other pixels contribute nothing. A
    selected pixel with zero probability saturates the loss to +inf and is
    flagged.
    """
    h, w, c = probs.values.shape
    if target.labels.shape != (h, w):
        raise LossInputError(f"target shape {target.labels.shape} != probability shape {(h, w)}")
    if target.labels.size and target.labels.max() > c:
        raise LossInputError("target class id exceeds the number of probability channels")
    true_prob = np.take_along_axis(probs.values, (target.labels - 1)[..., None], axis=2)[..., 0]
    flat = true_prob.reshape(-1)
    select = (h * w) // 4
    if select == 0:
        return SemanticLoss(0.0)
    worst = np.sort(np.argsort(flat, kind="stable")[:select])
    chosen = flat[worst]
    if (chosen == 0.0).any():
        return SemanticLoss(math.inf, ("semantic:log_zero",))
    weight = 4.0 / (w * h)
    return SemanticLoss(float(weight * np.sum(-np.log(chosen))))


def _ref_box(ref: Union[Anchor, Box]) -> Box:
    return ref.box if isinstance(ref, Anchor) else ref


def _box_residual(gt: Box, pred: Box, norm: Box) -> float:
    return (
        smooth_l1((gt.cx - pred.cx) / norm.w)
        + smooth_l1((gt.cy - pred.cy) / norm.h)
        + smooth_l1(math.log(pred.w / gt.w))
        + smooth_l1(math.log(pred.h / gt.h))
    )


def rpn_losses(
    objectness: Sequence[float],
    pred_boxes: Sequence[Box],
    anchors: Sequence[Union[Anchor, Box]],
    gt_boxes: Sequence[Box],
    sampled: MatchSet,
) -> RpnLosses:
    """First-stage objectness and box regression losses.

    Objectness is a binary log loss over the sampled positives and
    negatives. The box term sums smooth-L1 residuals of the positive pairs,
    with center offsets normalized by the anchor dimensions and sizes
    compared in log space. Both terms divide by the full match count, so
    extra negatives dilute the box loss as well. An empty match set yields
    zeros with a flag.
    """
    match_count = len(sampled.positives) + len(sampled.negatives)
    if match_count == 0:
        return RpnLosses(0.0, 0.0, ("rpn:empty_match_set",))
    flags: list[str] = []
    total = 0.0
    for _, pred_idx in sampled.positives:
        total += _neg_log(float(objectness[pred_idx]), flags, "rpn:log_zero")
    for pred_idx in sampled.negatives:
        total += _neg_log(1.0 - float(objectness[pred_idx]), flags, "rpn:log_zero")
    objectness_loss = total / match_count

    box_total = 0.0
    for gt_idx, pred_idx in sampled.positives:
        box_total += _box_residual(gt_boxes[gt_idx], pred_boxes[pred_idx], _ref_box(anchors[pred_idx]))
    return RpnLosses(objectness_loss, box_total / match_count, tuple(flags))


def roi_losses(
    class_probs: np.ndarray,
    class_boxes: np.ndarray,
    proposals: Sequence[Box],
    gt: Sequence[tuple[Box, int]],
    sampled: MatchSet,
    pred_masks: Sequence[MaskGrid],
    gt_masks: Sequence[MaskTarget],
) -> RoiLosses:
    """Second-stage classification, class-specific box, and mask losses.

    ``class_probs`` is (num_proposals, C+1) with the void column last;
    ``class_boxes`` is (num_proposals, C, 4) in center form. ``pred_masks``
    and ``gt_masks`` are aligned with ``sampled.positives`` and carry the
    matched class's mask prediction and its ternary target. The mask loss
    averages binary cross entropy over the non-void cells of each positive,
    then divides the sum by the full match count, like the other two terms.
    """
    probs = np.asarray(class_probs, dtype=np.float64)
    boxes = np.asarray(class_boxes, dtype=np.float64)
    if probs.ndim != 2:
        raise LossInputError("class_probs must be (num_proposals, num_classes + 1)")
    num_classes = probs.shape[1] - 1
    if num_classes < 1:
        raise LossInputError("need at least one class column plus the void column")
    if boxes.shape != (probs.shape[0], num_classes, 4):
        raise LossInputError(f"class_boxes must have shape {(probs.shape[0], num_classes, 4)}, got {boxes.shape}")
    if len(pred_masks) != len(sampled.positives) or len(gt_masks) != len(sampled.positives):
        raise LossInputError("pred_masks and gt_masks must align with sampled.positives")

    match_count = len(sampled.positives) + len(sampled.negatives)
    if match_count == 0:
        return RoiLosses(0.0, 0.0, 0.0, ("roi:empty_match_set",))
    flags: list[str] = []

    total = 0.0
    for gt_idx, prop_idx in sampled.positives:
        class_id = gt[gt_idx][1]
        if not 1 <= class_id <= num_classes:
            raise LossInputError(f"ground-truth class id {class_id} outside 1..{num_classes}")
        total += _neg_log(float(probs[prop_idx, class_id - 1]), flags, "roi:log_zero")
    for prop_idx in sampled.negatives:
        total += _neg_log(float(probs[prop_idx, num_classes]), flags, "roi:log_zero")
    classification = total / match_count

    box_total = 0.0
    for gt_idx, prop_idx in sampled.positives:
        gt_box, class_id = gt[gt_idx]
        refined = Box(*boxes[prop_idx, class_id - 1])
        box_total += _box_residual(gt_box, refined, proposals[prop_idx])
    box_loss = box_total / match_count

    mask_total = 0.0
    for pair_idx in range(len(sampled.positives)):
        target = gt_masks[pair_idx]
        pred = pred_masks[pair_idx].values
        valid = ~target.void
        cell_count = int(valid.sum())
        if cell_count == 0:
            flags.append(f"roi:empty_mask:{pair_idx}")
            continue
        fg = target.values[valid].astype(bool)
        p = pred[valid]
        with np.errstate(divide="ignore"):
            cell_loss = np.where(fg, np.log(p), np.log(1.0 - p))
        if np.isneginf(cell_loss).any():
            if "roi:mask_log_zero" not in flags:
                flags.append("roi:mask_log_zero")
            mask_total = math.inf
            continue
        mask_total += float(-np.sum(cell_loss) / cell_count)
    return RoiLosses(classification, box_loss, mask_total / match_count, tuple(flags))


@dataclass(frozen=True)
class LossReport:
    """The six forward loss values plus any degeneracy flags."""

    semantic: float
    rpn_objectness: float
    rpn_box: float
    roi_class: float
    roi_box: float
    roi_mask: float
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        def enc(v: float):
            return v if math.isfinite(v) else "inf"

        return {
            "semantic": enc(self.semantic),
            "rpn_objectness": enc(self.rpn_objectness),
            "rpn_box": enc(self.rpn_box),
            "roi_class": enc(self.roi_class),
            "roi_box": enc(self.roi_box),
            "roi_mask": enc(self.roi_mask),
            "flags": list(self.flags),
        }


def _boxes_from(rows, what: str) -> list[Box]:
    try:
        return [Box(*map(float, row)) for row in rows]
    except Exception as exc:
        raise LossInputError(f"bad {what} entry: {exc}") from exc


def _match_from_fixture(section: dict, kind: str) -> MatchSet:
    """Resolve a fixture section's match set.

    Accepts either an explicit {"match": {"positives", "negatives"}} block
    or a {"matcher": {...}} block carrying thresholds, caps, and a seed,
    in which case the assignment and sampling are recomputed here.
    """
    if "match" in section:
        m = section["match"]
        return MatchSet(
            positives=tuple((int(g), int(p)) for g, p in m.get("positives", [])),
            negatives=tuple(int(p) for p in m.get("negatives", [])),
            ignored=tuple(int(p) for p in m.get("ignored", [])),
        )
    if "matcher" not in section:
        raise LossInputError(f"{kind} section needs either a 'match' or a 'matcher' block")
    spec = dict(section["matcher"])
    seed = int(spec.pop("seed", 0))
    if kind == "rpn":
        pos_cap = int(spec.pop("pos_cap", 128))
        total_cap = int(spec.pop("total_cap", 256))
        cfg = MatcherConfig.from_dict(spec)
        anchors = _boxes_from(section["anchors"], "anchor")
        gt = _boxes_from(section["gt_boxes"], "gt box")
        ms = match_rpn(anchors, gt, cfg)
    else:
        pos_cap = int(spec.pop("pos_cap", 128))
        total_cap = int(spec.pop("total_cap", 512))
        cfg = MatcherConfig.from_dict(spec)
        proposals = _boxes_from(section["proposals"], "proposal")
        gt = [
            (box, int(c))
            for box, c in zip(_boxes_from(section["gt_boxes"], "gt box"), section["gt_classes"])
        ]
        ms = match_proposals(proposals, gt, cfg)
    return sample_matches(ms, pos_cap, total_cap, SeededRng(seed))


def loss_report_from_fixture(doc: dict) -> LossReport:
    """Compute all six losses from a parsed JSON fixture bundle.

    The bundle may carry "semantic", "rpn" and "roi" sections; absent
    sections contribute zeros and an ``<section>:absent`` flag. Schema
    errors raise LossInputError naming the offending field.
    """
    if not isinstance(doc, dict):
        raise LossInputError("fixture bundle must be a JSON object")
    flags: list[str] = []

    if "semantic" in doc:
        sem = doc["semantic"]
        try:
            probs = SemanticProb(np.asarray(sem["probs"], dtype=np.float64))
            target = SemanticTarget(np.asarray(sem["target"], dtype=np.int64))
        except LossInputError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise LossInputError(f"semantic section: {exc}") from exc
        sem_result = semantic_loss(probs, target)
        flags.extend(sem_result.flags)
        sem_value = sem_result.value
    else:
        flags.append("semantic:absent")
        sem_value = 0.0

    if "rpn" in doc:
        rpn = doc["rpn"]
        try:
            anchors = _boxes_from(rpn["anchors"], "anchor")
            gt_boxes = _boxes_from(rpn["gt_boxes"], "rpn gt box")
            pred_boxes = _boxes_from(rpn["pred_boxes"], "rpn predicted box")
            objectness = [float(s) for s in rpn["objectness"]]
            sampled = _match_from_fixture(rpn, "rpn")
        except LossInputError:
            raise
        except KeyError as exc:
            raise LossInputError(f"rpn section is missing {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise LossInputError(f"rpn section: {exc}") from exc
        rpn_result = rpn_losses(objectness, pred_boxes, anchors, gt_boxes, sampled)
        flags.extend(rpn_result.flags)
    else:
        flags.append("rpn:absent")
        rpn_result = RpnLosses(0.0, 0.0)

    if "roi" in doc:
        roi = doc["roi"]
        try:
            proposals = _boxes_from(roi["proposals"], "proposal")
            gt = [
                (box, int(c))
                for box, c in zip(_boxes_from(roi["gt_boxes"], "roi gt box"), roi["gt_classes"])
            ]
            class_probs = np.asarray(roi["class_probs"], dtype=np.float64)
            class_boxes = np.asarray(roi["class_boxes"], dtype=np.float64)
            sampled = _match_from_fixture(roi, "roi")
            pred_masks = [MaskGrid(np.asarray(m, dtype=np.float64)) for m in roi.get("pred_masks", [])]
            gt_masks = [MaskTarget.from_ternary(np.asarray(m, dtype=np.float64)) for m in roi.get("gt_masks", [])]
        except LossInputError:
            raise
        except KeyError as exc:
            raise LossInputError(f"roi section is missing {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise LossInputError(f"roi section: {exc}") from exc
        roi_result = roi_losses(class_probs, class_boxes, proposals, gt, sampled, pred_masks, gt_masks)
        flags.extend(roi_result.flags)
    else:
        flags.append("roi:absent")
        roi_result = RoiLosses(0.0, 0.0, 0.0)

    return LossReport(
        semantic=sem_value,
        rpn_objectness=rpn_result.objectness,
        rpn_box=rpn_result.box,
        roi_class=roi_result.classification,
        roi_box=roi_result.box,
        roi_mask=roi_result.mask,
        flags=tuple(flags),
    )


def rasterize_mask_target(
    mask: np.ndarray,
    box: Box,
    void: Optional[np.ndarray] = None,
) -> MaskTarget:
    """Crop and resize a full-image binary mask to a box-aligned 28 x 28 target.

    The box is divided into 28 x 28 cells; a cell is foreground when more
    than half of its area is covered by foreground pixels, and void when
    more than half is covered by the optional void grid. Areas outside the
    image count as background. Coverage is computed exactly via an integral
    image evaluated at fractional cell edges.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise LossInputError("mask must be a non-empty 2-d grid")
    fg_fraction = _cell_cover_fractions(mask.astype(np.float64), box, MASK_SIZE)
    values = (fg_fraction > 0.5).astype(np.float64)
    if void is None:
        void_grid = np.zeros((MASK_SIZE, MASK_SIZE), dtype=bool)
    else:
        void = np.asarray(void)
        if void.shape != mask.shape:
            raise LossInputError("void grid must match the mask shape")
        void_grid = _cell_cover_fractions(void.astype(np.float64), box, MASK_SIZE) > 0.5
    return MaskTarget(values=values, void=void_grid)


def _cell_cover_fractions(grid: np.ndarray, box: Box, out_size: int) -> np.ndarray:
    h, w = grid.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = grid.cumsum(axis=0).cumsum(axis=1)

    def eval_integral(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        x = np.clip(xs, 0.0, float(w))
        y = np.clip(ys, 0.0, float(h))
        ix = np.minimum(np.floor(x).astype(np.intp), w - 1)
        iy = np.minimum(np.floor(y).astype(np.intp), h - 1)
        ax = x - ix
        ay = y - iy
        s00 = integral[iy, ix]
        s01 = integral[iy, ix + 1]
        s10 = integral[iy + 1, ix]
        s11 = integral[iy + 1, ix + 1]
        return (1 - ay) * ((1 - ax) * s00 + ax * s01) + ay * ((1 - ax) * s10 + ax * s11)

    edge_x = box.x0 + np.arange(out_size + 1) * (box.w / out_size)
    edge_y = box.y0 + np.arange(out_size + 1) * (box.h / out_size)
    gx, gy = np.meshgrid(edge_x, edge_y)
    corner = eval_integral(gx, gy)
    area = corner[1:, 1:] - corner[:-1, 1:] - corner[1:, :-1] + corner[:-1, :-1]
    cell_area = (box.w / out_size) * (box.h / out_size)
    return area / cell_area
