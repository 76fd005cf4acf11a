import numpy as np
import pytest

from panoptikit import (
    ClassInfo,
    ClassTable,
    Kind,
    MetricAccumulator,
    MetricError,
    PanopticMap,
    accumulate_image,
    finalize,
    match_segments,
    merge,
    segment_iou,
)

from map_gen import EIGHT_CLASS_TABLE, fraction_map, random_pair
from oracles import pq_match_oracle

STUFF_ONLY = ClassTable({1: ClassInfo("sidewalk", Kind.STUFF)})
FIG_TABLE = ClassTable({1: ClassInfo("sidewalk", Kind.STUFF), 2: ClassInfo("road", Kind.STUFF)})


# --- segment_iou -------------------------------------------------------------


def test_segment_iou_identical_no_void():
    mask = np.zeros((4, 4), dtype=bool)
    mask[1:3, 1:3] = True
    void = np.zeros((4, 4), dtype=bool)
    assert segment_iou(mask, mask, void) == 1.0


def test_segment_iou_disjoint():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[0, 0] = True
    b[3, 3] = True
    assert segment_iou(a, b, np.zeros((4, 4), dtype=bool)) == 0.0


def test_segment_iou_void_excluded():
    # gt 10 px, pred 10 px, overlap 6; 2 of pred's non-overlap pixels on void
    gt = np.zeros((1, 20), dtype=bool)
    pred = np.zeros((1, 20), dtype=bool)
    void = np.zeros((1, 20), dtype=bool)
    gt[0, 0:10] = True
    pred[0, 4:14] = True
    void[0, 12:14] = True
    assert segment_iou(gt, pred, void) == 0.5


# --- strict and relaxed fixtures ------------------------------------------------


def iou_pair_maps(inter: int, gt_area: int, pred_area: int):
    """One gt and one pred segment of class 1 with exact void-excluded IoU.

    The rest of the canvas is covered by a class-2 filler segment so no part
    of the prediction falls on ground-truth void (which would shrink the
    union).
    """
    gt = fraction_map(10, 10, [(1, 0, gt_area), (9, gt_area, 100)], {1: 1, 9: 2})
    start = gt_area - inter
    pred = fraction_map(10, 10, [(2, start, start + pred_area)], {2: 1})
    return gt, pred


def test_low_iou_stuff_scores_zero_strict_and_049_relaxed():
    gt, pred = iou_pair_maps(inter=49, gt_area=70, pred_area=79)
    acc = accumulate_image(gt, pred, FIG_TABLE)
    report = finalize(acc)
    m = report.per_class[1]
    assert m.tp == 0 and m.fp == 1 and m.fn == 1
    assert m.pq == 0.0
    assert abs(m.pq_dagger - 0.49) < 1e-12


def test_above_threshold_stuff_scores_equal():
    gt, pred = iou_pair_maps(inter=62, gt_area=80, pred_area=82)
    report = finalize(accumulate_image(gt, pred, FIG_TABLE))
    m = report.per_class[1]
    assert m.tp == 1 and m.fp == 0 and m.fn == 0
    assert abs(m.pq - 0.62) < 1e-12
    assert abs(m.pq_dagger - 0.62) < 1e-12


def test_perfect_prediction_all_ones():
    rng = np.random.default_rng(5)
    gt, _ = random_pair(rng)
    report = finalize(accumulate_image(gt, gt, EIGHT_CLASS_TABLE))
    assert report.pq == 1.0
    assert report.pq_dagger == 1.0
    for class_id, m in report.per_class.items():
        if m.pq is not None:
            assert m.pq == 1.0 and m.fp == 0 and m.fn == 0


def test_thing_dagger_equals_strict_on_random_maps():
    rng = np.random.default_rng(17)
    for _ in range(20):
        gt, pred = random_pair(rng)
        report = finalize(accumulate_image(gt, pred, EIGHT_CLASS_TABLE))
        for class_id, m in report.per_class.items():
            if EIGHT_CLASS_TABLE.is_thing(class_id):
                assert m.pq_dagger == m.pq


def test_relaxed_beats_strict_when_all_stuff_ious_high():
    rng = np.random.default_rng(29)
    table = EIGHT_CLASS_TABLE
    acc = MetricAccumulator(class_table=table)
    for _ in range(10):
        gt, _ = random_pair(rng)
        pixels = np.array(gt.pixels)
        # erode each stuff segment a little (IoU stays above 0.5) and plant a
        # spurious stuff segment over a thing region now and then
        for seg_id, class_id in gt.segments.items():
            if table.is_stuff(class_id):
                where = np.argwhere(pixels == seg_id)
                drop = where[: max(1, len(where) // 10)]
                if len(where) > 3:
                    pixels[drop[:, 0], drop[:, 1]] = 0
        segments = {s: gt.segments[s] for s in np.unique(pixels).tolist() if s != 0}
        if rng.random() < 0.5:
            thing_cells = np.argwhere(np.isin(np.array(gt.pixels), [s for s, c in gt.segments.items() if table.is_thing(c)]))
            if len(thing_cells) > 4:
                spur = 999
                cells = thing_cells[:3]
                pixels[cells[:, 0], cells[:, 1]] = spur
                absent_stuff = [c for c in table.stuff_ids() if c not in {gt.segments[s] for s in gt.segments}]
                segments[spur] = absent_stuff[0] if absent_stuff else table.stuff_ids()[0]
        pred = PanopticMap(pixels=pixels, segments=segments)
        acc = accumulate_image(gt, pred, table, acc)
    report = finalize(acc)
    for class_id in table.stuff_ids():
        m = report.per_class[class_id]
        if m.pq is not None and m.pq_dagger is not None:
            assert m.pq_dagger >= m.pq - 1e-12


def test_two_stuff_segments_same_class_count_once_for_dagger():
    gt = fraction_map(10, 10, [(1, 0, 10), (2, 50, 60)], {1: 1, 2: 1})
    pred = fraction_map(10, 10, [(3, 0, 10), (4, 50, 60)], {3: 1, 4: 1})
    acc = accumulate_image(gt, pred, STUFF_ONLY)
    s = acc.get(1)
    assert s.dagger_gt_count == 1
    assert abs(s.dagger_iou_sum - 1.0) < 1e-12


# --- void rules ---------------------------------------------------------------------


def two_class_table():
    return ClassTable({1: ClassInfo("road", Kind.STUFF), 5: ClassInfo("car", Kind.THING)})


def test_fp_void_exemption():
    table = two_class_table()
    # ground truth fully void; predicted segment lies 100% on void
    gt = fraction_map(10, 10, [], {})
    pred = fraction_map(10, 10, [(1, 0, 10)], {1: 5})
    acc = accumulate_image(gt, pred, table)
    assert acc.get(5).fp == 0

    # only 40% on void: counts as a false positive
    gt2 = fraction_map(10, 10, [(9, 4, 60)], {9: 1})
    acc2 = accumulate_image(gt2, pred, table)
    assert acc2.get(5).fp == 1


def test_fn_void_exemption_and_flag():
    table = two_class_table()
    # gt segment 10 px; prediction leaves 6 of them void (60% > 50%)
    gt = fraction_map(10, 10, [(7, 0, 10)], {7: 5})
    pred = fraction_map(10, 10, [(1, 6, 30)], {1: 1})
    acc = accumulate_image(gt, pred, table)
    assert acc.get(5).fn == 0

    acc_no_rule = accumulate_image(gt, pred, table, fn_void_rule=False)
    assert acc_no_rule.get(5).fn == 1
    # the rule must flip nothing else
    a, b = acc.get(5), acc_no_rule.get(5)
    assert (a.tp, a.fp, a.tp_iou_sum) == (b.tp, b.fp, b.tp_iou_sum)
    for class_id in (1,):
        assert acc.get(class_id) == acc_no_rule.get(class_id)


def test_match_iou_uses_void_excluded_union():
    # overlap 6 of gt 10; pred 10 with exactly 2 pixels on gt-void:
    # void-excluded IoU = 6 / (10 + 10 - 6 - 2) = 0.5 -> not a match (strict >)
    gt = fraction_map(1, 30, [(1, 0, 10), (3, 12, 30)], {1: 1, 3: 1})
    pred = fraction_map(1, 30, [(2, 4, 14)], {2: 1})
    matches = match_segments(gt, pred)
    assert matches.tp == {}
    assert matches.pair_iou == {}
    # widening the void band to 3 pixels lifts the IoU to 6/11 > 0.5
    gt_more_void = fraction_map(1, 30, [(1, 0, 10), (3, 13, 30)], {1: 1, 3: 1})
    matches2 = match_segments(gt_more_void, pred)
    assert (1, 2) in matches2.pair_iou
    assert matches2.pair_iou[(1, 2)] == 6 / 11


# --- merge ----------------------------------------------------------------------------


def test_merge_identity_and_commutativity():
    rng = np.random.default_rng(3)
    gt1, pred1 = random_pair(rng)
    gt2, pred2 = random_pair(rng)
    a = accumulate_image(gt1, pred1, EIGHT_CLASS_TABLE)
    b = accumulate_image(gt2, pred2, EIGHT_CLASS_TABLE)
    empty = MetricAccumulator(class_table=EIGHT_CLASS_TABLE)
    assert dict(merge(a, empty).stats) == dict(a.stats)
    assert dict(merge(a, b).stats) == dict(merge(b, a).stats)


def test_sequential_equals_split_merge():
    rng = np.random.default_rng(11)
    pairs = [random_pair(rng) for _ in range(10)]
    sequential = MetricAccumulator(class_table=EIGHT_CLASS_TABLE)
    for gt, pred in pairs:
        sequential = accumulate_image(gt, pred, EIGHT_CLASS_TABLE, sequential)
    half_a = MetricAccumulator(class_table=EIGHT_CLASS_TABLE)
    for gt, pred in pairs[:5]:
        half_a = accumulate_image(gt, pred, EIGHT_CLASS_TABLE, half_a)
    half_b = MetricAccumulator(class_table=EIGHT_CLASS_TABLE)
    for gt, pred in pairs[5:]:
        half_b = accumulate_image(gt, pred, EIGHT_CLASS_TABLE, half_b)
    combined = merge(half_a, half_b)
    assert dict(sequential.stats) == dict(combined.stats)
    assert finalize(sequential).to_dict() == finalize(combined).to_dict()


def test_merge_rejects_different_tables():
    a = MetricAccumulator(class_table=EIGHT_CLASS_TABLE)
    b = MetricAccumulator(class_table=STUFF_ONLY)
    with pytest.raises(MetricError):
        merge(a, b)


# --- brute-force oracle agreement ---------------------------------------------------------


@pytest.mark.parametrize("fn_void_rule", [True, False])
def test_matches_equal_brute_force_on_random_maps(fn_void_rule):
    rng = np.random.default_rng(1234 if fn_void_rule else 4321)
    for _ in range(50):
        gt, pred = random_pair(rng, 16, 16)
        got = match_segments(gt, pred, fn_void_rule=fn_void_rule)
        tp, fp, fn, pair_iou = pq_match_oracle(gt, pred, EIGHT_CLASS_TABLE, fn_void_rule)
        assert {c: set(v) for c, v in got.tp.items()} == tp
        assert {c: set(v) for c, v in got.fp.items()} == fp
        assert {c: set(v) for c, v in got.fn.items()} == fn
        for pair, iou in pair_iou.items():
            assert got.pair_iou[pair] == iou
        # non-overlap implies at most one match per segment on either side
        for pairs in tp.values():
            gts = [g for g, _ in pairs]
            preds = [p for _, p in pairs]
            assert len(gts) == len(set(gts))
            assert len(preds) == len(set(preds))


def test_dimension_mismatch_rejected():
    gt = fraction_map(4, 4, [], {})
    pred = fraction_map(4, 5, [], {})
    with pytest.raises(MetricError):
        accumulate_image(gt, pred, EIGHT_CLASS_TABLE)


# --- finalize edge cases ---------------------------------------------------------------------


def test_undefined_classes_listed_and_excluded():
    table = two_class_table()
    gt = fraction_map(10, 10, [(1, 0, 50)], {1: 1})
    report = finalize(accumulate_image(gt, gt, table))
    assert report.per_class[5].pq is None
    assert report.undefined_classes == (5,)
    assert report.pq == 1.0


def test_empty_accumulator_reports_none():
    report = finalize(MetricAccumulator(class_table=EIGHT_CLASS_TABLE))
    assert report.pq is None
    assert report.pq_dagger is None
    assert len(report.undefined_classes) == 8
