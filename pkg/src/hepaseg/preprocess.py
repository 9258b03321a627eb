"""CT slice reformation: windowing, resizing, local contrast, normalization.

The pipeline runs in a fixed order::

    slice -> hu_window -> resize_bilinear -> clahe -> zscore

Each op stamps the stage it produced and refuses input from the wrong
stage, so slices cannot sneak through out of order.  Idempotent ops
(windowing, z-scoring) also accept their own output stage.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import ModelConfig
from .errors import DimensionError, NumericError, StageError
from .imio import to_u8, write_pgm


class Stage(str, Enum):
    RAW = "raw"
    WINDOWED = "windowed"
    RESIZED = "resized"
    EQUALIZED = "equalized"
    NORMALIZED = "normalized"


@dataclass
class CtVolume:
    """A CT scan: ``voxels`` is int16 Hounsfield units shaped (D, H, W)."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    uid: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise DimensionError(f"volume must be (D, H, W), got {self.voxels.shape}")
        if self.voxels.dtype != np.int16:
            raise ValueError(f"voxels must be int16, got {self.voxels.dtype}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def depth(self) -> int:
        return self.voxels.shape[0]


@dataclass
class SliceImage:
    pixels: np.ndarray
    stage: Stage = Stage.RAW
    index: int = -1

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 2:
            raise DimensionError(f"slice must be 2-d, got shape {self.pixels.shape}")
        if not np.isfinite(self.pixels).all():
            raise NumericError("slice holds non-finite pixels")


def _expect_stage(s: SliceImage, allowed: tuple[Stage, ...], op: str) -> None:
    if s.stage not in allowed:
        names = "/".join(a.value for a in allowed)
        raise StageError(f"{op} expects a {names} slice, got {s.stage.value}")


def slice_volume(volume: CtVolume) -> list[SliceImage]:
    """Split a volume into axial slices, first index first."""
    return [
        SliceImage(volume.voxels[d].astype(np.float32), Stage.RAW, index=d)
        for d in range(volume.depth)
    ]


def hu_window(s: SliceImage, lo: float = -250.0, hi: float = 200.0) -> SliceImage:
    """Clamp radiodensity to [lo, hi]; idempotent."""
    if lo >= hi:
        raise ValueError(f"window must satisfy lo < hi, got ({lo}, {hi})")
    _expect_stage(s, (Stage.RAW, Stage.WINDOWED), "hu_window")
    return SliceImage(np.clip(s.pixels, lo, hi), Stage.WINDOWED, s.index)


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centered bilinear resampling with edge clamping."""
    in_h, in_w = img.shape
    src = img.astype(np.float64)
    r = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0, in_h - 1)
    c = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0, in_w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    top = src[np.ix_(r0, c0)] * (1 - fc) + src[np.ix_(r0, c1)] * fc
    bot = src[np.ix_(r1, c0)] * (1 - fc) + src[np.ix_(r1, c1)] * fc
    return (top * (1 - fr) + bot * fr).astype(np.float32)


def resize_bilinear(s: SliceImage, size: int) -> SliceImage:
    if size < 1:
        raise ValueError(f"target size must be >= 1, got {size}")
    _expect_stage(s, (Stage.WINDOWED,), "resize_bilinear")
    return SliceImage(_bilinear_resize(s.pixels, size, size), Stage.RESIZED, s.index)


def resize_mask_nearest(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor mask resize; never invents labels."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2-d, got shape {mask.shape}")
    in_h, in_w = mask.shape
    rows = np.minimum(((np.arange(size) + 0.5) * (in_h / size)).astype(np.int64), in_h - 1)
    cols = np.minimum(((np.arange(size) + 0.5) * (in_w / size)).astype(np.int64), in_w - 1)
    return mask[np.ix_(rows, cols)]


def _tile_edges(extent: int, tiles: int) -> np.ndarray:
    return np.round(np.linspace(0, extent, tiles + 1)).astype(np.int64)


def clahe(
    s: SliceImage,
    tiles: tuple[int, int] = (8, 8),
    clip_limit: float | None = 2.0,
    bins: int = 256,
) -> SliceImage:
    """Contrast-limited adaptive histogram equalization.

    The slice is min-max rescaled to [0, 1], binned, equalized per tile
    with the clipped histogram's excess spread uniformly over all bins,
    and every pixel blends the mappings of its four surrounding tile
    centers (clamped at the borders).  Output lands in [0, 1].
    """
    _expect_stage(s, (Stage.RESIZED,), "clahe")
    ty, tx = tiles
    h, w = s.pixels.shape
    if ty < 1 or tx < 1:
        raise ValueError(f"tile grid must be positive, got {tiles}")
    if h < ty or w < tx:
        raise DimensionError(f"image {h}x{w} smaller than tile grid {ty}x{tx}")
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")

    px = s.pixels.astype(np.float64)
    lo, hi = px.min(), px.max()
    x01 = np.zeros_like(px) if hi - lo < 1e-12 else (px - lo) / (hi - lo)
    idx = np.minimum((x01 * bins).astype(np.int64), bins - 1)

    row_edges = _tile_edges(h, ty)
    col_edges = _tile_edges(w, tx)
    maps = np.empty((ty, tx, bins), dtype=np.float64)
    for i in range(ty):
        for j in range(tx):
            tile = idx[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=bins).astype(np.float64)
            if clip_limit is not None and np.isfinite(clip_limit):
                limit = clip_limit * n / bins
                excess = np.maximum(hist - limit, 0.0).sum()
                hist = np.minimum(hist, limit) + excess / bins
            maps[i, j] = np.cumsum(hist) / n

    def _blend_axis(coords, edges, count):
        centers = (edges[:-1] + edges[1:] - 1) / 2.0
        if count == 1:
            return np.zeros(len(coords), dtype=np.int64), np.zeros(len(coords))
        i0 = np.clip(np.searchsorted(centers, coords, side="right") - 1, 0, count - 2)
        t = (coords - centers[i0]) / (centers[i0 + 1] - centers[i0])
        return i0, np.clip(t, 0.0, 1.0)

    iy, wy = _blend_axis(np.arange(h, dtype=np.float64), row_edges, ty)
    jx, wx = _blend_axis(np.arange(w, dtype=np.float64), col_edges, tx)
    iy0, iy1 = iy[:, None], np.minimum(iy + 1, ty - 1)[:, None]
    jx0, jx1 = jx[None, :], np.minimum(jx + 1, tx - 1)[None, :]
    wy = wy[:, None]
    wx = wx[None, :]
    out = (
        maps[iy0, jx0, idx] * (1 - wy) * (1 - wx)
        + maps[iy0, jx1, idx] * (1 - wy) * wx
        + maps[iy1, jx0, idx] * wy * (1 - wx)
        + maps[iy1, jx1, idx] * wy * wx
    )
    return SliceImage(out.astype(np.float32), Stage.EQUALIZED, s.index)


def zscore(s: SliceImage, eps: float = 1e-8) -> SliceImage:
    """Standardize to mean 0, unit spread; constant slices map to zeros."""
    _expect_stage(s, (Stage.EQUALIZED, Stage.NORMALIZED), "zscore")
    px = s.pixels.astype(np.float64)
    out = (px - px.mean()) / (px.std() + eps)
    return SliceImage(out.astype(np.float32), Stage.NORMALIZED, s.index)


def reform_slice(s: SliceImage, cfg: ModelConfig) -> SliceImage:
    s = hu_window(s, *cfg.hu_window)
    s = resize_bilinear(s, cfg.input_size)
    s = clahe(s, cfg.clahe_tiles, cfg.clahe_clip, cfg.clahe_bins)
    return zscore(s)


def reform_volume(
    volume: CtVolume, cfg: ModelConfig, debug_dir: str | None = None
) -> list[SliceImage]:
    """Reform every slice; with ``debug_dir`` set, dump each stage as PGM."""
    out = []
    for s in slice_volume(volume):
        stages = [s]
        stages.append(hu_window(stages[-1], *cfg.hu_window))
        stages.append(resize_bilinear(stages[-1], cfg.input_size))
        stages.append(clahe(stages[-1], cfg.clahe_tiles, cfg.clahe_clip, cfg.clahe_bins))
        stages.append(zscore(stages[-1]))
        if debug_dir is not None:
            os.makedirs(debug_dir, exist_ok=True)
            for st in stages:
                name = f"{volume.uid or 'volume'}_{s.index:04d}_{st.stage.value}.pgm"
                write_pgm(os.path.join(debug_dir, name), to_u8(st.pixels))
        out.append(stages[-1])
    return out
