import numpy as np
import pytest

from hepaseg.boundary import (
    BoundaryArtifacts,
    binary_erode,
    boundary_mask,
    class_foreground,
    refine,
    validate_mask,
)
from hepaseg.errors import FormatError


def erode_oracle(fg, se_size=3):
    """Brute force: a pixel survives iff the SE fits entirely in foreground."""
    h, w = fg.shape
    r = se_size // 2
    out = np.zeros_like(fg, dtype=bool)
    for i in range(h):
        for j in range(w):
            ok = True
            for di in range(-r, r + 1):
                for dj in range(-r, r + 1):
                    ii, jj = i + di, j + dj
                    if not (0 <= ii < h and 0 <= jj < w) or not fg[ii, jj]:
                        ok = False
            out[i, j] = ok
    return out


def test_validate_mask_rejects_bad_labels():
    with pytest.raises(FormatError):
        validate_mask(np.array([[0, 3]], dtype=np.uint8))
    with pytest.raises(FormatError):
        validate_mask(np.array([[0.5, 1.0]]))


def test_erode_3x3_block_leaves_center():
    fg = np.zeros((5, 5), dtype=bool)
    fg[1:4, 1:4] = True
    out = binary_erode(fg)
    expected = np.zeros((5, 5), dtype=bool)
    expected[2, 2] = True
    np.testing.assert_array_equal(out, expected)


def test_erode_empty_and_full():
    assert not binary_erode(np.zeros((6, 6), dtype=bool)).any()
    # a full frame loses its one-pixel rim because outside counts as background
    out = binary_erode(np.ones((6, 6), dtype=bool))
    expected = np.zeros((6, 6), dtype=bool)
    expected[1:5, 1:5] = True
    np.testing.assert_array_equal(out, expected)


def test_erode_matches_brute_force(rng):
    for _ in range(10):
        fg = rng.random((16, 16)) < 0.6
        np.testing.assert_array_equal(binary_erode(fg), erode_oracle(fg))


def test_erode_is_anti_extensive(rng):
    fg = rng.random((20, 20)) < 0.7
    out = binary_erode(fg)
    assert not (out & ~fg).any()


def test_erode_iterations_compose(rng):
    fg = rng.random((16, 16)) < 0.8
    twice = binary_erode(binary_erode(fg))
    np.testing.assert_array_equal(binary_erode(fg, iterations=2), twice)


def test_liver_foreground_absorbs_tumor():
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[1:4, 1:4] = 1
    mask[2, 2] = 2
    liver = class_foreground(mask, 1)
    assert liver[2, 2]  # no hole where the tumor sits
    tumor = class_foreground(mask, 2)
    assert tumor.sum() == 1 and tumor[2, 2]


def test_boundary_ring_of_a_block():
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[1:4, 1:4] = 1
    ring = boundary_mask(mask, 1)
    assert ring.sum() == 8 and not ring[2, 2]


def test_boundary_disjoint_from_interior_and_empty_class():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[2:7, 2:7] = 1
    b = boundary_mask(mask, 1)
    interior = binary_erode(mask >= 1)
    assert not (b & interior).any()
    assert boundary_mask(mask, 2).sum() == 0  # no tumor anywhere


def test_refine_emit_only_keeps_labels(rng):
    mask = rng.integers(0, 3, size=(16, 16)).astype(np.uint8)
    art = refine(mask, mode="emit-only")
    assert isinstance(art, BoundaryArtifacts)
    np.testing.assert_array_equal(art.refined, mask)
    # artifact bookkeeping: boundary is foreground minus interior, per class
    for label in (1, 2):
        fg = class_foreground(mask, label)
        np.testing.assert_array_equal(
            fg & ~binary_erode(fg), fg & ~class_foreground(art.eroded, label)
        )


def test_refine_prob_gated_confident_is_identity(rng):
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[2:8, 2:8] = 1
    mask[4:6, 4:6] = 2
    probs = np.zeros((10, 10, 3))
    for c in range(3):
        probs[..., c] = mask == c
    art = refine(mask, probs, mode="prob-gated", tau=0.6)
    np.testing.assert_array_equal(art.refined, mask)


def test_refine_prob_gated_demotes_weak_boundary_pixel():
    mask = np.zeros((7, 7), dtype=np.uint8)
    mask[1:6, 1:6] = 1
    mask[2:5, 2:5] = 2
    probs = np.full((7, 7, 3), 0.9)
    probs[2, 2, 2] = 0.3   # weak tumor pixel on the tumor boundary
    probs[1, 1, 1] = 0.3   # weak liver pixel on the liver boundary
    art = refine(mask, probs, mode="prob-gated", tau=0.6)
    assert art.refined[2, 2] == 1      # tumor demotes to liver
    assert art.refined[1, 1] == 0      # liver demotes to background
    assert art.refined[3, 3] == 2      # tumor interior untouched


def test_refine_never_touches_interior(rng):
    mask = np.zeros((20, 20), dtype=np.uint8)
    mask[3:17, 3:17] = 1
    mask[7:13, 7:13] = 2
    probs = rng.random((20, 20, 3))
    art = refine(mask, probs, mode="prob-gated", tau=0.99)
    changed = art.refined != mask
    assert not (changed & ~art.boundary).any()
    assert changed.sum() <= art.boundary.sum()
    # labels only ever demote, and tumors stay inside the old foreground
    assert set(np.unique(art.refined)) <= {0, 1, 2}
    assert not ((art.refined == 2) & (mask == 0)).any()


def test_refine_rejects_bad_mode_and_missing_probs():
    mask = np.zeros((4, 4), dtype=np.uint8)
    with pytest.raises(ValueError):
        refine(mask, mode="nope")
    with pytest.raises(ValueError):
        refine(mask, mode="prob-gated")
