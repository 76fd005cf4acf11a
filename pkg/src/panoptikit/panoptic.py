"""Panoptic annotation types and the RGB-PNG + JSON interchange codec.

A panoptic map stores one segment id per pixel (0 = void) plus a table
mapping segment ids to class ids. On disk, ids are packed into 8-bit RGB
as id = R + 256*G + 65536*B with a JSON sidecar listing
{"segments_info": [{"id": ..., "category_id": ...}]}. Class metadata comes
from a categories document {"categories": [{"id", "name", "isthing"}]}.
All types are immutable after construction.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Union

import numpy as np
from PIL import Image

MAX_SEGMENT_ID = 1 << 24


class PanopticDecodeError(ValueError):
    """Malformed panoptic input (pixels, sidecar, or categories)."""


class Kind(str, Enum):
    STUFF = "stuff"
    THING = "thing"


@dataclass(frozen=True)
class ClassInfo:
    name: str
    kind: Kind


@dataclass(frozen=True)
class ClassTable:
    """Immutable class_id -> (name, kind) registry. Id 0 is reserved for void."""

    entries: Mapping[int, ClassInfo]

    def __post_init__(self) -> None:
        for class_id in self.entries:
            if class_id <= 0:
                raise PanopticDecodeError(f"class id must be positive, got {class_id}")
        object.__setattr__(self, "entries", dict(self.entries))

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def kind(self, class_id: int) -> Kind:
        return self.entries[class_id].kind

    def is_thing(self, class_id: int) -> bool:
        return self.entries[class_id].kind is Kind.THING

    def is_stuff(self, class_id: int) -> bool:
        return self.entries[class_id].kind is Kind.STUFF

    def stuff_ids(self) -> list[int]:
        return sorted(c for c, info in self.entries.items() if info.kind is Kind.STUFF)

    def thing_ids(self) -> list[int]:
        return sorted(c for c, info in self.entries.items() if info.kind is Kind.THING)

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassTable":
        entries = {}
        for cat in doc["categories"]:
            kind = Kind.THING if cat["isthing"] else Kind.STUFF
            entries[int(cat["id"])] = ClassInfo(name=str(cat.get("name", "")), kind=kind)
        return cls(entries)

    def to_dict(self) -> dict:
        return {
            "categories": [
                {"id": c, "name": info.name, "isthing": 1 if info.kind is Kind.THING else 0}
                for c, info in sorted(self.entries.items())
            ]
        }


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """Per-pixel segment ids plus the segment -> class table.

    Pixels are an H x W int32 grid; 0 means void. Every nonzero pixel value
    must appear in ``segments``. Segments cannot overlap by construction
    (one id per pixel).
    """

    pixels: np.ndarray
    segments: Mapping[int, int]

    def __post_init__(self) -> None:
        pixels = np.array(self.pixels, dtype=np.int32)
        if pixels.ndim != 2:
            raise PanopticDecodeError(f"pixel grid must be 2-d, got shape {pixels.shape}")
        if pixels.min(initial=0) < 0:
            raise PanopticDecodeError("segment ids must be non-negative")
        present = set(np.unique(pixels).tolist()) - {0}
        missing = present - set(self.segments)
        if missing:
            raise PanopticDecodeError(f"pixel ids missing from segment table: {sorted(missing)}")
        object.__setattr__(self, "pixels", _freeze(pixels))
        object.__setattr__(self, "segments", dict(self.segments))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def validate_classes(self, class_table: ClassTable) -> None:
        for seg_id, class_id in self.segments.items():
            if class_id not in class_table:
                raise PanopticDecodeError(
                    f"segment {seg_id} has class {class_id} not present in the class table"
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PanopticMap):
            return NotImplemented
        return dict(self.segments) == dict(other.segments) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class SemanticMap:
    """Per-pixel class ids (0 = void)."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=np.int32)
        if labels.ndim != 2:
            raise PanopticDecodeError(f"label grid must be 2-d, got shape {labels.shape}")
        if labels.min(initial=0) < 0:
            raise PanopticDecodeError("class ids must be non-negative")
        object.__setattr__(self, "labels", _freeze(labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def validate_classes(self, class_table: ClassTable) -> None:
        present = set(np.unique(self.labels).tolist()) - {0}
        unknown = {c for c in present if c not in class_table}
        if unknown:
            raise PanopticDecodeError(f"semantic labels not in the class table: {sorted(unknown)}")


def _ids_from_rgb(rgb: np.ndarray) -> np.ndarray:
    r = rgb[..., 0].astype(np.int32)
    g = rgb[..., 1].astype(np.int32)
    b = rgb[..., 2].astype(np.int32)
    return r + 256 * g + 65536 * b


def _ids_to_rgb(ids: np.ndarray) -> np.ndarray:
    rgb = np.empty(ids.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = ids % 256
    rgb[..., 1] = (ids // 256) % 256
    rgb[..., 2] = ids // 65536
    return rgb


def parse_segments_info(doc: Union[dict, list]) -> dict[int, int]:
    """Extract the segment_id -> class_id mapping from a sidecar document.

    Accepts either {"segments_info": [...]} or the bare record list. Crowd
    records are not modeled and rejected.
    """
    records = doc["segments_info"] if isinstance(doc, dict) else doc
    segments: dict[int, int] = {}
    for rec in records:
        seg_id = int(rec["id"])
        if rec.get("iscrowd"):
            raise PanopticDecodeError(f"crowd segments are not supported (segment {seg_id})")
        if seg_id in segments:
            raise PanopticDecodeError(f"duplicate segment id {seg_id} in sidecar")
        segments[seg_id] = int(rec["category_id"])
    return segments


def read_panoptic(
    png_bytes: bytes,
    json_segments: Union[dict, list, str, bytes],
    class_table: ClassTable,
) -> PanopticMap:
    """Decode a panoptic map from PNG bytes and its JSON sidecar.

    The PNG must be 8-bit RGB (an alpha channel is ignored). Raises
    PanopticDecodeError when a pixel id is missing from the sidecar, a
    category is unknown, or the image cannot be decoded.
    """
    if isinstance(json_segments, (str, bytes)):
        json_segments = json.loads(json_segments)
    segments = parse_segments_info(json_segments)

    try:
        img = Image.open(io.BytesIO(png_bytes))
        img.load()
    except Exception as exc:
        raise PanopticDecodeError(f"cannot decode PNG: {exc}") from exc
    if img.mode not in ("RGB", "RGBA"):
        raise PanopticDecodeError(f"panoptic PNG must be 8-bit RGB, got mode {img.mode}")
    rgb = np.asarray(img.convert("RGB"))
    ids = _ids_from_rgb(rgb)

    present = set(np.unique(ids).tolist()) - {0}
    missing = present - set(segments)
    if missing:
        raise PanopticDecodeError(f"pixel ids missing from sidecar: {sorted(missing)}")
    for seg_id, class_id in segments.items():
        if class_id not in class_table:
            raise PanopticDecodeError(f"segment {seg_id}: category {class_id} not in the class table")
    return PanopticMap(pixels=ids, segments=segments)


def write_panoptic(pmap: PanopticMap) -> tuple[bytes, dict]:
    """Encode a panoptic map to PNG bytes plus a JSON-ready sidecar dict.

    Inverse of read_panoptic: round-tripping reproduces the pixel grid
    bit-exactly. Segment ids must fit the 24-bit RGB encoding.
    """
    too_big = [s for s in pmap.segments if s >= MAX_SEGMENT_ID]
    if too_big:
        raise PanopticDecodeError(f"segment ids do not fit 24 bits: {sorted(too_big)}")
    rgb = _ids_to_rgb(pmap.pixels)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    sidecar = {
        "segments_info": [
            {"id": seg_id, "category_id": class_id}
            for seg_id, class_id in sorted(pmap.segments.items())
        ]
    }
    return buf.getvalue(), sidecar


@dataclass(frozen=True, eq=False)
class SegmentRecord:
    segment_id: int
    class_id: int
    pixel_count: int
    mask: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "mask", _freeze(np.asarray(self.mask, dtype=np.bool_)))


def extract_segments(pmap: PanopticMap) -> list[SegmentRecord]:
    """List the segments present in the pixel grid, with counts and masks.

    Segments are defined by id, not connectivity: a scattered id yields one
    record. Sidecar entries with no pixels yield no record. Pixel counts
    partition the nonvoid pixel domain.
    """
    ids, counts = np.unique(pmap.pixels, return_counts=True)
    records = []
    for seg_id, count in zip(ids.tolist(), counts.tolist()):
        if seg_id == 0:
            continue
        records.append(
            SegmentRecord(
                segment_id=seg_id,
                class_id=pmap.segments[seg_id],
                pixel_count=int(count),
                mask=pmap.pixels == seg_id,
            )
        )
    return records


def read_class_table(text: Union[str, bytes, dict]) -> ClassTable:
    """Load a ClassTable from a categories JSON document or parsed dict."""
    if isinstance(text, (str, bytes)):
        text = json.loads(text)
    return ClassTable.from_dict(text)
