"""Panoptic quality metrics with void handling and parallel-mergeable state.

Matching between ground-truth and predicted segments runs in a single pass
over (gt_id, pred_id) pixel co-occurrence counts; because segments cannot
overlap, a pair whose IoU exceeds 0.5 is automatically the unique match for
both of its segments.

Void rules: ground-truth void pixels are excluded from every IoU
denominator; an unmatched predicted segment is not a false positive when
more than half of its pixels lie on ground-truth void; an unmatched
ground-truth segment is not a false negative when more than half of its
pixels lie on predicted void (this last rule can be disabled for
compatibility with tools that omit it).

Beyond the strict IoU > 0.5 matching, stuff classes additionally accumulate
a relaxed per-image score: each image contributes the IoU between the union
of its ground-truth pixels of the class and the union of its predicted
pixels of the class, whenever that IoU is positive, normalized by the
number of images in which the class occurs. Thing classes reuse their
strict score. The report calls this the "dagger" variant.

Accumulators merge by fieldwise addition, so evaluation over an image set
can be split across workers in any way without changing the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .panoptic import ClassTable, Kind, PanopticMap

MATCH_IOU = 0.5
VOID_OVERLAP = 0.5


class MetricError(ValueError):
    """Invalid metric input (dimension or class-table mismatch)."""


@dataclass(frozen=True)
class ClassStats:
    """Per-class counters; merge by fieldwise addition.

    IoU contributions are kept as exact (intersection, union) integer pairs
    in canonically sorted order, so merging is exactly associative and
    commutative and the float sums come out bit-identical however the
    image set was split across workers.
    """

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tp_iou_terms: tuple[tuple[int, int], ...] = ()
    dagger_iou_terms: tuple[tuple[int, int], ...] = ()
    dagger_gt_count: int = 0

    @property
    def tp_iou_sum(self) -> float:
        return sum(i / u for i, u in self.tp_iou_terms)

    @property
    def dagger_iou_sum(self) -> float:
        return sum(i / u for i, u in self.dagger_iou_terms)

    def plus(self, other: "ClassStats") -> "ClassStats":
        return ClassStats(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tp_iou_terms=tuple(sorted(self.tp_iou_terms + other.tp_iou_terms)),
            dagger_iou_terms=tuple(sorted(self.dagger_iou_terms + other.dagger_iou_terms)),
            dagger_gt_count=self.dagger_gt_count + other.dagger_gt_count,
        )


@dataclass(frozen=True, eq=False)
class MetricAccumulator:
    """Immutable per-class counts supporting associative, commutative merge."""

    class_table: ClassTable
    stats: Mapping[int, ClassStats] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "stats", dict(self.stats))

    def get(self, class_id: int) -> ClassStats:
        return self.stats.get(class_id, ClassStats())


def segment_iou(gt_mask: np.ndarray, pred_mask: np.ndarray, gt_void: np.ndarray) -> float:
    """IoU between two pixel sets, ignoring ground-truth void pixels.

    Returns 0 when the void-excluded union is empty.
    """
    gt_mask = np.asarray(gt_mask, dtype=bool)
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gt_void = np.asarray(gt_void, dtype=bool)
    keep = ~gt_void
    inter = int(np.count_nonzero(gt_mask & pred_mask & keep))
    union = int(np.count_nonzero((gt_mask | pred_mask) & keep))
    return inter / union if union else 0.0


def merge(a: MetricAccumulator, b: MetricAccumulator) -> MetricAccumulator:
    """Fieldwise sum of two accumulators over the same class table."""
    if a.class_table.entries != b.class_table.entries:
        raise MetricError("cannot merge accumulators built over different class tables")
    stats = dict(a.stats)
    for class_id, s in b.stats.items():
        stats[class_id] = stats[class_id].plus(s) if class_id in stats else s
    return MetricAccumulator(class_table=a.class_table, stats=stats)


@dataclass(frozen=True)
class ImageMatches:
    """Per-image matching outcome, keyed by class id.

    ``tp`` holds matched (gt_id, pred_id) pairs, ``fp`` unmatched predicted
    segment ids (after the void exemption), ``fn`` unmatched ground-truth
    segment ids (after the predicted-void exemption when enabled), and
    ``pair_iou`` the IoU of each matched pair. ``pair_terms`` carries the
    exact (intersection, union) integers behind each IoU.
    """

    tp: Mapping[int, frozenset]
    fp: Mapping[int, frozenset]
    fn: Mapping[int, frozenset]
    pair_iou: Mapping[tuple[int, int], float]
    pair_terms: Mapping[tuple[int, int], tuple[int, int]]


class _Cooccurrence:
    """Pixel co-occurrence counts between two id grids."""

    def __init__(self, gt: PanopticMap, pred: PanopticMap) -> None:
        gt_ids = gt.pixels.astype(np.int64).ravel()
        pred_ids = pred.pixels.astype(np.int64).ravel()
        offset = int(pred_ids.max(initial=0)) + 1
        pair_codes, pair_counts = np.unique(gt_ids * offset + pred_ids, return_counts=True)
        self.inter: dict[tuple[int, int], int] = {}
        for code, count in zip(pair_codes.tolist(), pair_counts.tolist()):
            self.inter[(code // offset, code % offset)] = count

        gt_unique, gt_counts = np.unique(gt_ids, return_counts=True)
        self.gt_area = dict(zip(gt_unique.tolist(), gt_counts.tolist()))
        pred_unique, pred_counts = np.unique(pred_ids, return_counts=True)
        self.pred_area = dict(zip(pred_unique.tolist(), pred_counts.tolist()))
        self.gt_area.pop(0, None)
        self.pred_area.pop(0, None)

        self.pred_on_void = {p: self.inter.get((0, p), 0) for p in self.pred_area}
        self.gt_on_pred_void = {g: self.inter.get((g, 0), 0) for g in self.gt_area}


def _matches_from_counts(
    gt: PanopticMap,
    pred: PanopticMap,
    co: _Cooccurrence,
    fn_void_rule: bool,
) -> ImageMatches:
    tp: dict[int, set] = {}
    fp: dict[int, set] = {}
    fn: dict[int, set] = {}
    pair_iou: dict[tuple[int, int], float] = {}
    pair_terms: dict[tuple[int, int], tuple[int, int]] = {}
    matched_gt: set[int] = set()
    matched_pred: set[int] = set()

    for (g, p), count in co.inter.items():
        if g == 0 or p == 0:
            continue
        class_id = gt.segments[g]
        if pred.segments[p] != class_id:
            continue
        union = co.gt_area[g] + co.pred_area[p] - count - co.pred_on_void[p]
        iou = count / union
        if iou > MATCH_IOU:
            tp.setdefault(class_id, set()).add((g, p))
            pair_iou[(g, p)] = iou
            pair_terms[(g, p)] = (count, union)
            matched_gt.add(g)
            matched_pred.add(p)

    for g, area in co.gt_area.items():
        if g in matched_gt:
            continue
        if fn_void_rule and co.gt_on_pred_void[g] / area > VOID_OVERLAP:
            continue
        fn.setdefault(gt.segments[g], set()).add(g)

    for p, area in co.pred_area.items():
        if p in matched_pred:
            continue
        if co.pred_on_void[p] / area > VOID_OVERLAP:
            continue
        fp.setdefault(pred.segments[p], set()).add(p)

    return ImageMatches(
        tp={c: frozenset(v) for c, v in tp.items()},
        fp={c: frozenset(v) for c, v in fp.items()},
        fn={c: frozenset(v) for c, v in fn.items()},
        pair_iou=dict(pair_iou),
        pair_terms=dict(pair_terms),
    )


def match_segments(gt: PanopticMap, pred: PanopticMap, *, fn_void_rule: bool = True) -> ImageMatches:
    """Match one image pair's segments by class and void-excluded IoU > 0.5."""
    if gt.pixels.shape != pred.pixels.shape:
        raise MetricError(f"image dimensions differ: gt {gt.pixels.shape}, pred {pred.pixels.shape}")
    return _matches_from_counts(gt, pred, _Cooccurrence(gt, pred), fn_void_rule)


def accumulate_image(
    gt: PanopticMap,
    pred: PanopticMap,
    class_table: ClassTable,
    acc: Optional[MetricAccumulator] = None,
    *,
    fn_void_rule: bool = True,
) -> MetricAccumulator:
    """Score one image pair and merge the result into ``acc`` (or a fresh one)."""
    if gt.pixels.shape != pred.pixels.shape:
        raise MetricError(f"image dimensions differ: gt {gt.pixels.shape}, pred {pred.pixels.shape}")
    if acc is None:
        acc = MetricAccumulator(class_table=class_table)
    elif acc.class_table.entries != class_table.entries:
        raise MetricError("accumulator built over a different class table")

    co = _Cooccurrence(gt, pred)
    matches = _matches_from_counts(gt, pred, co, fn_void_rule)

    stats: dict[int, ClassStats] = {}

    def bump(class_id: int, **delta) -> None:
        base = stats.get(class_id, ClassStats())
        updates = {}
        for key, value in delta.items():
            current = getattr(base, key)
            updates[key] = tuple(sorted(current + value)) if isinstance(current, tuple) else current + value
        stats[class_id] = replace(base, **updates)

    for class_id, pairs in matches.tp.items():
        for pair in sorted(pairs):
            bump(class_id, tp=1, tp_iou_terms=(matches.pair_terms[pair],))
    for class_id, ids in matches.fn.items():
        bump(class_id, fn=len(ids))
    for class_id, ids in matches.fp.items():
        bump(class_id, fp=len(ids))

    # Relaxed stuff scoring: one candidate pair per class per image, formed
    # by the per-class pixel unions.
    gt_class_segments: dict[int, list[int]] = {}
    for g in co.gt_area:
        gt_class_segments.setdefault(gt.segments[g], []).append(g)
    pred_class_segments: dict[int, list[int]] = {}
    for p in co.pred_area:
        pred_class_segments.setdefault(pred.segments[p], []).append(p)

    for class_id, gt_segs in gt_class_segments.items():
        if class_table.kind(class_id) is not Kind.STUFF:
            continue
        pred_segs = pred_class_segments.get(class_id, [])
        inter_c = sum(co.inter.get((g, p), 0) for g in gt_segs for p in pred_segs)
        gt_area_c = sum(co.gt_area[g] for g in gt_segs)
        pred_area_c = sum(co.pred_area[p] for p in pred_segs)
        void_c = sum(co.pred_on_void[p] for p in pred_segs)
        union_c = gt_area_c + pred_area_c - inter_c - void_c
        if union_c and inter_c:
            bump(class_id, dagger_iou_terms=((inter_c, union_c),), dagger_gt_count=1)
        else:
            bump(class_id, dagger_gt_count=1)

    return merge(acc, MetricAccumulator(class_table=class_table, stats=stats))


@dataclass(frozen=True)
class PerClassMetrics:
    pq: Optional[float]
    pq_dagger: Optional[float]
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricReport:
    """Aggregated panoptic quality scores.

    Classes never observed (tp + fp + fn == 0) are excluded from the strict
    averages and listed in ``undefined_classes``; the dagger average for a
    stuff class instead requires at least one image with ground truth of
    that class. Aggregates over an empty class set are None.
    """

    pq: Optional[float]
    pq_dagger: Optional[float]
    pq_stuff: Optional[float]
    pq_things: Optional[float]
    per_class: Mapping[int, PerClassMetrics]
    undefined_classes: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "pq": self.pq,
            "pq_dagger": self.pq_dagger,
            "pq_stuff": self.pq_stuff,
            "pq_things": self.pq_things,
            "per_class": {
                str(class_id): {
                    "pq": m.pq,
                    "pq_dagger": m.pq_dagger,
                    "tp": m.tp,
                    "fp": m.fp,
                    "fn": m.fn,
                }
                for class_id, m in sorted(self.per_class.items())
            },
            "undefined_classes": list(self.undefined_classes),
        }


def _mean(values: list[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def finalize(acc: MetricAccumulator, class_table: Optional[ClassTable] = None) -> MetricReport:
    """Turn accumulated counts into the final report.

    Per class, the strict score is the TP IoU sum over (TP + FP/2 + FN/2);
    the dagger score is the relaxed per-image IoU mean for stuff and the
    strict score for things. Averages run over the classes where the
    respective score is defined.
    """
    table = class_table if class_table is not None else acc.class_table
    if class_table is not None and class_table.entries != acc.class_table.entries:
        raise MetricError("finalize called with a different class table than the accumulator")

    per_class: dict[int, PerClassMetrics] = {}
    undefined: list[int] = []
    pq_values: list[float] = []
    dagger_values: list[float] = []
    stuff_values: list[float] = []
    thing_values: list[float] = []

    for class_id in sorted(table.entries):
        s = acc.get(class_id)
        denom = s.tp + 0.5 * s.fp + 0.5 * s.fn
        pq_c = s.tp_iou_sum / denom if denom > 0 else None
        if table.is_stuff(class_id):
            dagger_c = s.dagger_iou_sum / s.dagger_gt_count if s.dagger_gt_count > 0 else None
        else:
            dagger_c = pq_c
        per_class[class_id] = PerClassMetrics(pq=pq_c, pq_dagger=dagger_c, tp=s.tp, fp=s.fp, fn=s.fn)
        if pq_c is None:
            undefined.append(class_id)
        else:
            pq_values.append(pq_c)
            (stuff_values if table.is_stuff(class_id) else thing_values).append(pq_c)
        if dagger_c is not None:
            dagger_values.append(dagger_c)

    return MetricReport(
        pq=_mean(pq_values),
        pq_dagger=_mean(dagger_values),
        pq_stuff=_mean(stuff_values),
        pq_things=_mean(thing_values),
        per_class=per_class,
        undefined_classes=tuple(undefined),
    )
