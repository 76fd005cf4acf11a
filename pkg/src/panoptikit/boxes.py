"""Axis-aligned box geometry: codecs, IoU, anchors, pyramid level selection, NMS.

Boxes are stored in center form (cx, cy, w, h) in continuous image
coordinates. Corner form is derived as (cx - w/2, cy - h/2, cx + w/2,
cy + h/2). All functions are pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence


class BoxError(ValueError):
    """Invalid box or box-operation input."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in center form. Width and height must be positive."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise BoxError(f"box dimensions must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise BoxError("box coordinates must be finite")

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    @property
    def area(self) -> float:
        return self.w * self.h

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Anchor:
    """A reference box pinned to a feature-pyramid level."""

    box: Box
    level: int


@dataclass(frozen=True)
class BoxDelta:
    """Offset parameterization mapping a reference box to a target box.

    The center moves by a fraction of the reference dimensions and the
    dimensions scale exponentially:

        cx' = cx + du * w      w' = w * exp(dw)
        cy' = cy + dv * h      h' = h * exp(dh)
    """

    du: float
    dv: float
    dw: float
    dh: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.du, self.dv, self.dw, self.dh)):
            raise BoxError("box delta must be finite")


@dataclass(frozen=True)
class ScoredBox:
    """A box with a confidence score in [0, 1] and an optional class id."""

    box: Box
    score: float
    class_id: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise BoxError(f"score must be in [0, 1], got {self.score}")


def decode_box(ref: Box, delta: BoxDelta) -> Box:
    """Apply an offset delta to a reference box."""
    return Box(
        cx=ref.cx + delta.du * ref.w,
        cy=ref.cy + delta.dv * ref.h,
        w=ref.w * math.exp(delta.dw),
        h=ref.h * math.exp(delta.dh),
    )


def encode_box(ref: Box, target: Box) -> BoxDelta:
    """Compute the delta that maps ``ref`` onto ``target`` (inverse of decode_box)."""
    return BoxDelta(
        du=(target.cx - ref.cx) / ref.w,
        dv=(target.cy - ref.cy) / ref.h,
        dw=math.log(target.w / ref.w),
        dh=math.log(target.h / ref.h),
    )


def iou_box(a: Box, b: Box) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Areas come from the same corner arithmetic as the intersection so the
    result stays bounded by 1 exactly, identical boxes included.
    """
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    area_a = (a.x1 - a.x0) * (a.y1 - a.y0)
    area_b = (b.x1 - b.x0) * (b.y1 - b.y0)
    return inter / (area_a + area_b - inter)


def fpn_level(w: float, h: float, *, min_level: int = 1, max_level: int = 4) -> int:
    """Select the feature-pyramid level for a box of the given dimensions.

    A box with sqrt(w*h) == 224 maps to level 3; each doubling of scale
    moves one level up. The result is clamped to [min_level, max_level].
    """
    if w <= 0 or h <= 0:
        raise BoxError("fpn_level requires positive dimensions")
    k = math.floor(3 + math.log2(math.sqrt(w * h) / 224))
    return max(min_level, min(max_level, k))


def clip_box(box: Box, image_w: float, image_h: float) -> Box:
    """Intersect a box with the image rectangle [0, image_w] x [0, image_h].

    Raises BoxError if the box does not overlap the image interior.
    """
    x0 = max(box.x0, 0.0)
    y0 = max(box.y0, 0.0)
    x1 = min(box.x1, float(image_w))
    y1 = min(box.y1, float(image_h))
    if x1 <= x0 or y1 <= y0:
        raise BoxError("box lies entirely outside the image")
    return Box.from_corners(x0, y0, x1, y1)


@dataclass(frozen=True)
class AnchorLevel:
    stride: float
    area: float


@dataclass(frozen=True)
class AnchorConfig:
    """Anchor grid and NMS settings.

    JSON document form::

        {"levels": [{"stride": 4, "area": 64}, ...],
         "aspect_ratios": [0.5, 1, 2],
         "nms": {"objectness_iou": 0.7, "classwise_iou": 0.5}}
    """

    levels: tuple[AnchorLevel, ...]
    aspect_ratios: tuple[float, ...]
    objectness_iou: float = 0.7
    classwise_iou: float = 0.5

    @classmethod
    def from_dict(cls, doc: dict) -> "AnchorConfig":
        nms_doc = doc.get("nms", {})
        return cls(
            levels=tuple(AnchorLevel(float(l["stride"]), float(l["area"])) for l in doc["levels"]),
            aspect_ratios=tuple(float(r) for r in doc["aspect_ratios"]),
            objectness_iou=float(nms_doc.get("objectness_iou", 0.7)),
            classwise_iou=float(nms_doc.get("classwise_iou", 0.5)),
        )

    @classmethod
    def from_json(cls, text: str) -> "AnchorConfig":
        return cls.from_dict(json.loads(text))


def generate_anchors(
    image_w: float,
    image_h: float,
    level_strides: Sequence[float],
    level_areas: Sequence[float],
    aspect_ratios: Sequence[float],
) -> list[Anchor]:
    """Build the anchor set for an image.

    One anchor per (level, grid position, aspect ratio). Grid positions on a
    level with stride s are the half-stride offsets ((i + 0.5) * s,
    (j + 0.5) * s). For aspect ratio r and level area A the dimensions are
    w = sqrt(A * r), h = sqrt(A / r), so w * h == A and w / h == r. Anchors
    not entirely contained in the image are excluded. Levels are numbered
    from 1 in the order given.
    """
    if len(level_strides) != len(level_areas):
        raise BoxError("level_strides and level_areas must have equal length")
    if not aspect_ratios:
        raise BoxError("aspect_ratios must be non-empty")
    anchors: list[Anchor] = []
    for level_index, (stride, area) in enumerate(zip(level_strides, level_areas), start=1):
        dims = [(math.sqrt(area * r), math.sqrt(area / r)) for r in aspect_ratios]
        ny = int(math.ceil(image_h / stride))
        nx = int(math.ceil(image_w / stride))
        for j in range(ny):
            cy = (j + 0.5) * stride
            for i in range(nx):
                cx = (i + 0.5) * stride
                for w, h in dims:
                    if cx - w / 2 < 0 or cy - h / 2 < 0 or cx + w / 2 > image_w or cy + h / 2 > image_h:
                        continue
                    anchors.append(Anchor(Box(cx, cy, w, h), level_index))
    return anchors


def nms(boxes: Sequence[ScoredBox], iou_threshold: float, per_class: bool = False) -> list[int]:
    """Greedy non-maximum suppression; returns kept indices in score order.

    Boxes are visited by descending score (ties broken by lower input
    index). A box is kept iff its IoU with every previously kept box is at
    most ``iou_threshold``; with ``per_class`` only boxes of the same
    class_id suppress each other.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise BoxError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[int] = []
    for i in order:
        candidate = boxes[i]
        suppressed = False
        for k in kept:
            keeper = boxes[k]
            if per_class and keeper.class_id != candidate.class_id:
                continue
            if iou_box(keeper.box, candidate.box) > iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return kept
