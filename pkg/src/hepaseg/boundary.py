"""Morphological boundary extraction and label-map refinement.

Masks are 2-d uint8 label maps: 0 background, 1 liver, 2 tumor.  The
liver is treated as the union {1, 2} when binarizing, so a tumor sitting
inside the liver does not punch a hole in the liver boundary; the tumor
class binarizes alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError

LABELS = (0, 1, 2)


def validate_mask(mask: np.ndarray) -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise DimensionError(f"label mask must be 2-d, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise FormatError(f"label mask must be integer, got {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() > 2):
        raise FormatError(f"labels outside {{0,1,2}}: found range [{arr.min()}, {arr.max()}]")
    return arr.astype(np.uint8, copy=False)


def class_foreground(mask: np.ndarray, label: int) -> np.ndarray:
    """Binarize one class; liver (1) absorbs the nested tumor label."""
    mask = validate_mask(mask)
    if label == 1:
        return mask >= 1
    if label == 2:
        return mask == 2
    raise ValueError(f"foreground classes are 1 and 2, got {label}")


def binary_erode(fg: np.ndarray, se_size: int = 3, iterations: int = 1) -> np.ndarray:
    """Erosion by a square of ones; pixels past the border count as background."""
    fg = np.asarray(fg, dtype=bool)
    if fg.ndim != 2:
        raise DimensionError(f"erosion expects a 2-d mask, got shape {fg.shape}")
    if se_size < 1 or se_size % 2 == 0:
        raise ValueError(f"structuring element must be odd and positive, got {se_size}")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    r = se_size // 2
    out = fg
    for _ in range(iterations):
        padded = np.pad(out, r, constant_values=False)
        acc = np.ones_like(out)
        for di in range(se_size):
            for dj in range(se_size):
                acc &= padded[di : di + out.shape[0], dj : dj + out.shape[1]]
        out = acc
    return out


def boundary_mask(mask: np.ndarray, label: int, se_size: int = 3, iterations: int = 1) -> np.ndarray:
    """Pixels of a class that erosion strips away: fg AND NOT eroded(fg)."""
    fg = class_foreground(mask, label)
    return fg & ~binary_erode(fg, se_size, iterations)


@dataclass
class BoundaryArtifacts:
    """Refinement output bundle: interior map, boundary band, final labels."""

    eroded: np.ndarray
    boundary: np.ndarray
    refined: np.ndarray


def refine(
    mask: np.ndarray,
    probs: np.ndarray | None = None,
    mode: str = "emit-only",
    tau: float = 0.6,
    se_size: int = 3,
    iterations: int = 1,
) -> BoundaryArtifacts:
    """Extract boundaries and optionally gate weak boundary pixels.

    ``emit-only`` computes the artifacts and leaves labels untouched.
    ``prob-gated`` demotes a boundary pixel one class level (tumor ->
    liver -> background) when the probability of its own class falls
    below ``tau``.  Interior pixels never change.
    """
    mask = validate_mask(mask)
    liver_fg = class_foreground(mask, 1)
    tumor_fg = class_foreground(mask, 2)
    liver_interior = binary_erode(liver_fg, se_size, iterations)
    tumor_interior = binary_erode(tumor_fg, se_size, iterations)
    liver_boundary = liver_fg & ~liver_interior
    tumor_boundary = tumor_fg & ~tumor_interior

    eroded = np.zeros_like(mask)
    eroded[liver_interior] = 1
    eroded[tumor_interior] = 2
    band = liver_boundary | tumor_boundary

    refined = mask.copy()
    if mode == "prob-gated":
        if probs is None:
            raise ValueError("prob-gated refinement needs a probability map")
        probs = np.asarray(probs)
        if probs.shape != mask.shape + (3,):
            raise DimensionError(
                f"probability map shape {probs.shape} does not match mask {mask.shape}"
            )
        weak_tumor = band & (mask == 2) & (probs[..., 2] < tau)
        weak_liver = liver_boundary & (mask == 1) & (probs[..., 1] < tau)
        refined[weak_tumor] = 1
        refined[weak_liver] = 0
    elif mode != "emit-only":
        raise ValueError(f"refine mode must be 'emit-only' or 'prob-gated', got {mode!r}")
    return BoundaryArtifacts(eroded=eroded, boundary=band, refined=refined)
