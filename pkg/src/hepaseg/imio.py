"""Tiny PGM/PBM writers and readers for mask and debug-image export.

PGM (P5) carries 8-bit grayscale; label masks are stored with maxval 2 so
the three classes round-trip untouched.  PBM (P4) packs binary boundary
masks one bit per pixel.
"""

from __future__ import annotations

import numpy as np

from .errors import CorruptFileError, FormatError


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise FormatError(f"PGM wants a 2-d array, got shape {arr.shape}")
    if not 0 < maxval < 256:
        raise FormatError(f"maxval must be in 1..255, got {maxval}")
    if arr.min() < 0 or arr.max() > maxval:
        raise FormatError("image values fall outside [0, maxval]")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode())
        fh.write(arr.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4 and pos < len(blob):
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":  # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    if len(fields) != 4 or fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    data = blob[pos + 1 :]
    if len(data) != w * h:
        raise CorruptFileError(f"{path}: expected {w * h} pixel bytes, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def write_pbm(path, mask: np.ndarray) -> None:
    """1-bit packed PBM; nonzero pixels are written as 1 (ink)."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise FormatError(f"PBM wants a 2-d array, got shape {arr.shape}")
    h, w = arr.shape
    bits = np.packbits((arr != 0).astype(np.uint8), axis=1)
    with open(path, "wb") as fh:
        fh.write(f"P4\n{w} {h}\n".encode())
        fh.write(bits.tobytes())


def to_u8(image: np.ndarray) -> np.ndarray:
    """Min-max rescale a float image to 0..255 for debug dumps."""
    arr = np.asarray(image, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi - lo < 1e-12:
        return np.zeros(arr.shape, dtype=np.uint8)
    return np.round((arr - lo) / (hi - lo) * 255.0).astype(np.uint8)
