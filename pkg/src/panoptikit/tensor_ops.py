"""Reference forward tensor operations on C x H x W grids.

Everything here is a plain, deterministic float64 implementation meant to
serve as ground truth for optimized kernels: ROI pooling with bilinear
sampling, stride-1 average pooling with boundary-replication padding,
dilated convolution, the multi-branch context block composed of them, and
instance-mask pasting onto an image canvas.

Coordinate convention: feature cell (row j, column i) is centered at the
continuous coordinate (i + 0.5, j + 0.5). Bilinear samples are clamped to
the span of cell centers, so border values replicate and constants are
preserved everywhere. No coordinate is ever rounded.

Weight fixtures use a flat binary container: a little-endian uint32 header
length, a JSON header {"tensors": [{"name", "shape"}, ...]}, then the
tensors' float32 data concatenated row-major in header order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import Box, BoxError

MASK_SIZE = 28


class TensorOpError(ValueError):
    """Shape or argument error in a tensor operation."""


@dataclass(frozen=True, eq=False)
class FeatureGrid:
    """An immutable C x H x W grid of finite reals."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise TensorOpError(f"feature grid must be C x H x W, got shape {values.shape}")
        if values.size and not np.isfinite(values).all():
            raise TensorOpError("feature grid values must be finite")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True, eq=False)
class MaskGrid:
    """A 28 x 28 grid of foreground probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (MASK_SIZE, MASK_SIZE):
            raise TensorOpError(f"mask grid must be {MASK_SIZE} x {MASK_SIZE}, got {values.shape}")
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise TensorOpError("mask probabilities must lie in [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


def _bilinear_sample(values: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) values at continuous points; returns (C,) + x.shape.

    Cell centers sit at half-integer coordinates; points are clamped into
    the center span so that out-of-range samples replicate the border.
    """
    _, h, w = values.shape
    u = np.clip(x, 0.5, w - 0.5) - 0.5
    v = np.clip(y, 0.5, h - 0.5) - 0.5
    i0 = np.floor(u).astype(np.intp)
    j0 = np.floor(v).astype(np.intp)
    a = u - i0
    b = v - j0
    i0 = np.clip(i0, 0, w - 1)
    j0 = np.clip(j0, 0, h - 1)
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    f00 = values[:, j0, i0]
    f01 = values[:, j0, i1]
    f10 = values[:, j1, i0]
    f11 = values[:, j1, i1]
    return (1 - b) * ((1 - a) * f00 + a * f01) + b * ((1 - a) * f10 + a * f11)


def roi_align(feat: FeatureGrid, box: Box, out_size: int = 14) -> FeatureGrid:
    """Pool the feature values inside a box to a fixed out_size x out_size grid.

    The box is divided into equal cells; each cell is sampled at the centers
    of its 2 x 2 sub-cells, each sample is bilinearly interpolated, and the
    cell output is the mean of its four samples. The box must overlap the
    grid's coordinate domain [0, W] x [0, H].
    """
    if out_size <= 0:
        raise TensorOpError("out_size must be positive")
    _, h, w = feat.values.shape
    if box.x1 <= 0 or box.x0 >= w or box.y1 <= 0 or box.y0 >= h:
        raise TensorOpError("box does not overlap the feature grid")
    cell_w = box.w / out_size
    cell_h = box.h / out_size
    offsets = np.array([0.25, 0.75])
    xs = box.x0 + (np.arange(out_size)[:, None] + offsets[None, :]) * cell_w
    ys = box.y0 + (np.arange(out_size)[:, None] + offsets[None, :]) * cell_h
    grid_x, grid_y = np.meshgrid(xs.reshape(-1), ys.reshape(-1))
    samples = _bilinear_sample(feat.values, grid_x, grid_y)
    c = feat.channels
    pooled = samples.reshape(c, out_size, 2, out_size, 2).mean(axis=(2, 4))
    return FeatureGrid(pooled)


def avg_pool_replicate(feat: FeatureGrid, kernel: int) -> FeatureGrid:
    """Stride-1 average pooling without padding, then replicate back to H x W.

    The valid-region pooling yields (H-K+1) x (W-K+1); the original
    resolution is restored by repeating the boundary rows and columns,
    floor((K-1)/2) before and ceil((K-1)/2) after. With K == H == W the
    output is the global mean broadcast everywhere.
    """
    k = int(kernel)
    if k <= 0:
        raise TensorOpError("kernel must be positive")
    _, h, w = feat.values.shape
    if k > h or k > w:
        raise TensorOpError(f"kernel {k} exceeds grid size {h} x {w}")
    windows = sliding_window_view(feat.values, (k, k), axis=(1, 2))
    pooled = windows.mean(axis=(-2, -1))
    before, after = (k - 1) // 2, k // 2
    padded = np.pad(pooled, ((0, 0), (before, after), (before, after)), mode="edge")
    return FeatureGrid(padded)


def conv2d(
    feat: FeatureGrid,
    weights: np.ndarray,
    dilation: int = 1,
    stride: int = 1,
    padding: int = 0,
) -> FeatureGrid:
    """Cross-correlate the grid with a (C_out, C_in, kh, kw) weight tensor.

    Zero padding; output spatial dims follow
    floor((H + 2p - d*(k-1) - 1) / s) + 1.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4:
        raise TensorOpError(f"weights must be 4-d, got shape {w.shape}")
    if dilation < 1 or stride < 1 or padding < 0:
        raise TensorOpError("dilation and stride must be >= 1, padding >= 0")
    c_out, c_in, kh, kw = w.shape
    if c_in != feat.channels:
        raise TensorOpError(f"weight input channels {c_in} != grid channels {feat.channels}")
    eff_h = dilation * (kh - 1) + 1
    eff_w = dilation * (kw - 1) + 1
    _, h, wid = feat.values.shape
    if eff_h > h + 2 * padding or eff_w > wid + 2 * padding:
        raise TensorOpError("effective kernel larger than the padded input")
    padded = np.pad(feat.values, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (eff_h, eff_w), axis=(1, 2))
    windows = windows[:, ::stride, ::stride, ::dilation, ::dilation]
    out = np.einsum("ihwyx,oiyx->ohw", windows, w)
    return FeatureGrid(out)


@dataclass(frozen=True, eq=False)
class ContextBlockWeights:
    """Weights for the three-branch context block.

    conv_dil1, conv_dil6: (128, C_in, 3, 3) dilated 3x3 branches;
    pool_proj: (128, C_in, 1, 1) projection after the pooled branch;
    merge: (128, 384, 3, 3) applied to the concatenated branches;
    pool_kernel: side of the stride-1 average pooling window.
    """

    conv_dil1: np.ndarray
    conv_dil6: np.ndarray
    pool_proj: np.ndarray
    merge: np.ndarray
    pool_kernel: int = 64

    OUT_CHANNELS = 128

    def __post_init__(self) -> None:
        for name in ("conv_dil1", "conv_dil6", "pool_proj", "merge"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        c_in = self.conv_dil1.shape[1] if self.conv_dil1.ndim == 4 else -1
        expect = {
            "conv_dil1": (self.OUT_CHANNELS, c_in, 3, 3),
            "conv_dil6": (self.OUT_CHANNELS, c_in, 3, 3),
            "pool_proj": (self.OUT_CHANNELS, c_in, 1, 1),
            "merge": (self.OUT_CHANNELS, 3 * self.OUT_CHANNELS, 3, 3),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise TensorOpError(f"{name} must have shape {shape}, got {got}")
        if self.pool_kernel <= 0:
            raise TensorOpError("pool_kernel must be positive")

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], pool_kernel: int = 64) -> "ContextBlockWeights":
        try:
            return cls(
                conv_dil1=tensors["conv_dil1"],
                conv_dil6=tensors["conv_dil6"],
                pool_proj=tensors["pool_proj"],
                merge=tensors["merge"],
                pool_kernel=pool_kernel,
            )
        except KeyError as exc:
            raise TensorOpError(f"missing tensor {exc} in weight container") from exc


def context_block_forward(feat: FeatureGrid, weights: ContextBlockWeights) -> FeatureGrid:
    """Run the three-branch context block.

    Branch one: 3x3 convolution, dilation 1. Branch two: 3x3 convolution,
    dilation 6. Branch three: stride-1 average pooling with replicated
    boundary followed by a 1x1 projection. The branches (128 channels each)
    are concatenated and merged by a final 3x3 convolution back to 128
    channels. All convolutions use same-padding so H x W is preserved.
    Normalization and activation layers are intentionally absent.
    """
    branch_a = conv2d(feat, weights.conv_dil1, dilation=1, padding=1)
    branch_b = conv2d(feat, weights.conv_dil6, dilation=6, padding=6)
    pooled = avg_pool_replicate(feat, weights.pool_kernel)
    branch_c = conv2d(pooled, weights.pool_proj)
    stacked = FeatureGrid(np.concatenate([branch_a.values, branch_b.values, branch_c.values], axis=0))
    return conv2d(stacked, weights.merge, padding=1)


def paste_mask(
    mask: MaskGrid,
    box: Box,
    image_w: int,
    image_h: int,
    threshold: float = 0.5,
) -> np.ndarray:
    """Paste a 28 x 28 probability mask into an image-sized binary grid.

    The mask is bilinearly resized to ceil(w) x ceil(h), placed with its
    top-left corner at the rounded box corner, clipped to the image, and
    thresholded with a strict > comparison. Pixels outside the box region
    are always 0. Returns a bool (image_h, image_w) array.
    """
    if box.x1 <= 0 or box.x0 >= image_w or box.y1 <= 0 or box.y0 >= image_h:
        raise BoxError("box does not intersect the image")
    target_w = int(math.ceil(box.w))
    target_h = int(math.ceil(box.h))
    ox = int(math.floor(box.x0 + 0.5))
    oy = int(math.floor(box.y0 + 0.5))

    xs = (np.arange(target_w) + 0.5) * (MASK_SIZE / target_w)
    ys = (np.arange(target_h) + 0.5) * (MASK_SIZE / target_h)
    grid_x, grid_y = np.meshgrid(xs, ys)
    resized = _bilinear_sample(mask.values[None], grid_x, grid_y)[0]

    out = np.zeros((image_h, image_w), dtype=bool)
    px0, py0 = max(ox, 0), max(oy, 0)
    px1, py1 = min(ox + target_w, image_w), min(oy + target_h, image_h)
    if px1 > px0 and py1 > py0:
        piece = resized[py0 - oy : py1 - oy, px0 - ox : px1 - ox]
        out[py0:py1, px0:px1] = piece > threshold
    return out


def save_tensors(path: Union[str, Path], tensors: Mapping[str, np.ndarray]) -> None:
    """Write named float32 tensors to the flat binary container format."""
    header = {"tensors": [{"name": name, "shape": list(np.asarray(a).shape)} for name, a in tensors.items()]}
    header_bytes = json.dumps(header, sort_keys=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for array in tensors.values():
            fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def load_tensors(path: Union[str, Path]) -> dict[str, np.ndarray]:
    """Read a tensor container written by save_tensors."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TensorOpError("truncated tensor container")
    header_len = struct.unpack_from("<I", raw)[0]
    if len(raw) < 4 + header_len:
        raise TensorOpError("truncated tensor container header")
    header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    offset = 4 + header_len
    out: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise TensorOpError(f"truncated tensor data for {entry['name']!r}")
        out[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape).astype(np.float64)
        offset = end
    return out
