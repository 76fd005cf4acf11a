"""Combine instance detections with a semantic prediction into a panoptic map.

Detections claim pixels in descending score order; each instance keeps only
the pixels no earlier instance took, and is dropped entirely when those
remaining pixels cover less than the configured fraction of its pasted mask.
Pixels left unclaimed fall back to the semantic prediction when it names a
stuff class, and to void when it names a thing class (an instance should
have claimed them) or is itself void. Stuff classes whose surviving pixel
count falls below the minimum area are erased to void.

Accepted instances receive segment ids 1..n in processing order; stuff
segments follow, one per surviving class in ascending class-id order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import Box
from .panoptic import ClassTable, Kind, PanopticMap, SemanticMap
from .tensor_ops import MaskGrid, paste_mask

logger = logging.getLogger(__name__)


class FusionError(ValueError):
    """Invalid fusion input."""


@dataclass(frozen=True, eq=False)
class Detection:
    """A scored, classed instance: box, thing class, and 28 x 28 mask probabilities."""

    box: Box
    class_id: int
    score: float
    mask: MaskGrid

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise FusionError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class FusionConfig:
    coverage_threshold: float = 0.5
    stuff_min_area: int = 4096
    mask_threshold: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.coverage_threshold <= 1.0:
            raise FusionError("coverage_threshold must be in (0, 1]")
        if self.stuff_min_area < 0:
            raise FusionError("stuff_min_area must be >= 0")


def fuse(
    detections: Sequence[Detection],
    semantic: SemanticMap,
    class_table: ClassTable,
    cfg: FusionConfig = FusionConfig(),
) -> PanopticMap:
    """Fuse detections and a semantic map into one non-overlapping panoptic map.

    Deterministic: detections are processed by descending score with ties
    broken by input position, and the output grid is independent of the
    input ordering whenever scores are distinct.
    """
    semantic.validate_classes(class_table)
    height, width = semantic.labels.shape
    for idx, det in enumerate(detections):
        if det.class_id not in class_table or class_table.kind(det.class_id) is not Kind.THING:
            raise FusionError(f"detection {idx}: class {det.class_id} is not a thing class")

    ids = np.zeros((height, width), dtype=np.int32)
    assigned = np.zeros((height, width), dtype=bool)
    segments: dict[int, int] = {}
    next_id = 1

    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    for idx in order:
        det = detections[idx]
        full = paste_mask(det.mask, det.box, width, height, cfg.mask_threshold)
        area = int(full.sum())
        if area == 0:
            logger.warning("detection %d produced an empty mask; discarded", idx)
            continue
        claim = full & ~assigned
        if int(claim.sum()) < cfg.coverage_threshold * area:
            continue
        ids[claim] = next_id
        segments[next_id] = det.class_id
        assigned |= claim
        next_id += 1

    unassigned = ~assigned
    labels = semantic.labels
    for class_id in class_table.stuff_ids():
        region = unassigned & (labels == class_id)
        count = int(region.sum())
        if count == 0 or count < cfg.stuff_min_area:
            continue
        ids[region] = next_id
        segments[next_id] = class_id
        next_id += 1

    return PanopticMap(pixels=ids, segments=segments)
