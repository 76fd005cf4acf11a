"""Ground-truth assignment and match sampling for the two detection stages.

Anchor matching (first stage) uses a dual-threshold rule with a forced
positive per ground-truth box; proposal matching (second stage) uses a
single threshold with no ignored band. Sampling enforces the per-image
match caps with a deterministic, portable RNG so that fixtures reproduce
bit-identically across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

from .boxes import Anchor, Box, iou_box

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def counter_draw(seed: int, index: int) -> int:
    """Return the uint64 value of draw ``index`` for ``seed``.

    SplitMix64 finalizer applied to seed + (index + 1) * golden gamma. Pure
    function of (seed, index); the basis for all sampling in this package.
    """
    z = (seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass
class SeededRng:
    """Counter-based random stream: equal seeds give equal draw sequences."""

    seed: int
    _index: int = field(default=0, repr=False)

    def next_u64(self) -> int:
        value = counter_draw(self.seed, self._index)
        self._index += 1
        return value

    def sample(self, population: int, count: int) -> list[int]:
        """Choose ``count`` distinct indices from range(population), ascending.

        Partial Fisher-Yates driven by the counter stream. The draw uses a
        modulo reduction; the bias is below 2**-40 for populations under
        2**24 and is accepted for the sake of cross-platform portability.
        """
        if count >= population:
            return list(range(population))
        pool = list(range(population))
        for j in range(count):
            k = j + self.next_u64() % (population - j)
            pool[j], pool[k] = pool[k], pool[j]
        return sorted(pool[:count])


@dataclass(frozen=True)
class MatchSet:
    """Assignment outcome: positive (gt, prediction) pairs, negative and ignored predictions."""

    positives: tuple[tuple[int, int], ...]
    negatives: tuple[int, ...]
    ignored: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        pos = {p for _, p in self.positives}
        neg = set(self.negatives)
        ign = set(self.ignored)
        if pos & neg or pos & ign or neg & ign:
            raise ValueError("positives, negatives and ignored must be disjoint over predictions")


@dataclass(frozen=True)
class MatcherConfig:
    """Thresholds and sampling caps for both matching stages."""

    rpn_positive_iou: float = 0.7
    rpn_negative_iou: float = 0.3
    roi_positive_iou: float = 0.5
    rpn_pos_cap: int = 128
    rpn_total_cap: int = 256
    roi_pos_cap: int = 128
    roi_total_cap: int = 512

    def __post_init__(self) -> None:
        if not 0.0 <= self.rpn_negative_iou < self.rpn_positive_iou <= 1.0:
            raise ValueError("need 0 <= rpn_negative_iou < rpn_positive_iou <= 1")
        if not 0.0 < self.roi_positive_iou <= 1.0:
            raise ValueError("need 0 < roi_positive_iou <= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "MatcherConfig":
        return cls(**{k: v for k, v in doc.items() if k in cls.__dataclass_fields__})


def _as_box(ref: Union[Anchor, Box]) -> Box:
    return ref.box if isinstance(ref, Anchor) else ref


def match_rpn(anchors: Sequence[Union[Anchor, Box]], gt: Sequence[Box], cfg: MatcherConfig) -> MatchSet:
    """Assign anchors to ground-truth boxes for first-stage training.

    Every anchor is matched to its highest-IoU ground-truth box: positive
    above the high threshold, negative below the low threshold, ignored in
    between (boundary values fall in the ignored band). Independently, the
    highest-IoU anchor of each ground-truth box is a positive for that box
    regardless of the thresholds; ties go to the lower anchor index. Forced
    anchors take part only in their forcing pair. With no ground truth all
    anchors are negative.
    """
    if not anchors:
        raise ValueError("anchor list must be non-empty")
    if not gt:
        return MatchSet(positives=(), negatives=tuple(range(len(anchors))))

    iou = [[iou_box(_as_box(a), g) for g in gt] for a in anchors]

    forced: list[tuple[int, int]] = []
    forced_anchors: set[int] = set()
    for g_idx in range(len(gt)):
        best = max(range(len(anchors)), key=lambda a_idx: (iou[a_idx][g_idx], -a_idx))
        forced.append((g_idx, best))
        forced_anchors.add(best)

    positives: list[tuple[int, int]] = list(forced)
    negatives: list[int] = []
    ignored: list[int] = []
    for a_idx in range(len(anchors)):
        if a_idx in forced_anchors:
            continue
        best_g = max(range(len(gt)), key=lambda g_idx: (iou[a_idx][g_idx], -g_idx))
        best_iou = iou[a_idx][best_g]
        if best_iou > cfg.rpn_positive_iou:
            positives.append((best_g, a_idx))
        elif best_iou < cfg.rpn_negative_iou:
            negatives.append(a_idx)
        else:
            ignored.append(a_idx)
    positives.sort()
    return MatchSet(positives=tuple(positives), negatives=tuple(negatives), ignored=tuple(ignored))


def match_proposals(
    proposals: Sequence[Box],
    gt: Sequence[tuple[Box, int]],
    cfg: MatcherConfig,
) -> MatchSet:
    """Assign proposals to ground-truth boxes for second-stage training.

    Each proposal matches its highest-IoU ground-truth box; the match is
    positive iff the IoU strictly exceeds the threshold, negative otherwise.
    Callers are expected to have already unioned the ground-truth boxes into
    the proposal set, which guarantees a positive self-match per box.
    """
    positives: list[tuple[int, int]] = []
    negatives: list[int] = []
    for p_idx, prop in enumerate(proposals):
        best_g, best_iou = -1, 0.0
        for g_idx, (g_box, _) in enumerate(gt):
            v = iou_box(prop, g_box)
            if v > best_iou:
                best_g, best_iou = g_idx, v
        if best_g >= 0 and best_iou > cfg.roi_positive_iou:
            positives.append((best_g, p_idx))
        else:
            negatives.append(p_idx)
    return MatchSet(positives=tuple(positives), negatives=tuple(negatives))


def sample_matches(ms: MatchSet, pos_cap: int, total_cap: int, rng: SeededRng) -> MatchSet:
    """Cap a match set by uniform subsampling without replacement.

    Keeps at most ``pos_cap`` positives and fills negatives up to
    ``total_cap`` total matches. Ignored predictions pass through untouched.
    Deterministic for a given rng seed; positives are sampled before
    negatives.
    """
    if pos_cap <= 0 or total_cap <= 0:
        raise ValueError("sampling caps must be positive")
    keep_pos = rng.sample(len(ms.positives), min(len(ms.positives), pos_cap))
    neg_budget = total_cap - len(keep_pos)
    keep_neg = rng.sample(len(ms.negatives), min(len(ms.negatives), max(neg_budget, 0)))
    return MatchSet(
        positives=tuple(ms.positives[i] for i in keep_pos),
        negatives=tuple(ms.negatives[i] for i in keep_neg),
        ignored=ms.ignored,
    )
