import json

import numpy as np
import pytest

from hepaseg.errors import DimensionError
from hepaseg.metrics import DiceReport, dsc, one_hot, report, soft_dice_loss
from hepaseg.tensor import Tensor, gradient_check_error


def soft_dice_oracle(probs, labels, eps=1e-6):
    """Direct formula: 1 - mean over present classes of per-class soft dice."""
    classes = probs.shape[-1]
    y = np.eye(classes)[labels]
    scores = []
    for c in range(classes):
        p_c, y_c = probs[..., c], y[..., c]
        if p_c.sum() == 0 and y_c.sum() == 0:
            continue
        scores.append((2.0 * (p_c * y_c).sum() + eps) / (p_c.sum() + y_c.sum() + eps))
    return 1.0 - np.mean(scores)


def test_one_hot_round_trip(rng):
    labels = rng.integers(0, 3, size=(5, 5))
    y = one_hot(labels)
    assert y.shape == (5, 5, 3)
    np.testing.assert_array_equal(y.argmax(-1), labels)
    with pytest.raises(ValueError):
        one_hot(np.array([3]))


def test_perfect_prediction_has_near_zero_loss(rng):
    labels = rng.integers(0, 3, size=(8, 8))
    probs = Tensor(one_hot(labels))
    loss = soft_dice_loss(probs, labels).item()
    assert loss < 1e-5


def test_uniform_prediction_matches_hand_value():
    # half-liver image under p = 1/3 everywhere
    labels = np.zeros((4, 4), dtype=np.int64)
    labels[:2] = 1
    probs = Tensor(np.full((4, 4, 3), 1.0 / 3.0))
    loss = soft_dice_loss(probs, labels).item()
    expected = soft_dice_oracle(np.full((4, 4, 3), 1.0 / 3.0), labels)
    # by hand: background and liver each score (2*8/3)/(16/3 + 8) = 0.4;
    # the tumor class carries prediction mass but no truth, scoring ~0,
    # so the loss is 1 - (0.4 + 0.4 + 0)/3
    assert abs(expected - (1.0 - 0.8 / 3.0)) < 1e-6
    assert abs(loss - expected) < 1e-9


def test_loss_matches_oracle_on_random_softmax(rng):
    logits = rng.standard_normal((2, 6, 6, 3))
    e = np.exp(logits - logits.max(-1, keepdims=True))
    probs = e / e.sum(-1, keepdims=True)
    labels = rng.integers(0, 3, size=(2, 6, 6))
    loss = soft_dice_loss(Tensor(probs), labels).item()
    assert abs(loss - soft_dice_oracle(probs, labels)) < 1e-6


def test_loss_bounded_and_monotone_toward_truth(rng):
    labels = rng.integers(0, 3, size=(6, 6))
    target = one_hot(labels).astype(np.float64)
    start = np.full((6, 6, 3), 1.0 / 3.0)
    losses = []
    for t in np.linspace(0.0, 1.0, 5):
        blend = (1 - t) * start + t * target
        losses.append(soft_dice_loss(Tensor(blend), labels).item())
    assert all(0.0 <= v <= 1.0 for v in losses)
    assert all(b < a + 1e-12 for a, b in zip(losses[:-1], losses[1:]))


def test_loss_gradient_against_finite_differences(rng):
    probs = rng.uniform(0.05, 0.95, size=(3, 4, 3))
    labels = rng.integers(0, 3, size=(3, 4))
    err = gradient_check_error(lambda p: soft_dice_loss(p, labels), [probs])
    assert err < 1e-4


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        soft_dice_loss(Tensor(np.zeros((2, 2, 3))), np.zeros((3, 3), dtype=np.int64))


def test_dsc_basics():
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    assert dsc(a, b, 1) == 1.0  # both empty
    a[0, 0] = 1
    assert dsc(a, b, 1) == 0.0
    b[0, 0] = 1
    assert dsc(a, b, 1) == 1.0


def test_dsc_set_count_oracle(rng):
    for _ in range(25):
        a = rng.integers(0, 3, size=(12, 12)).astype(np.uint8)
        b = rng.integers(0, 3, size=(12, 12)).astype(np.uint8)
        for labels in ({1, 2}, {2}):
            p = np.isin(a, list(labels))
            g = np.isin(b, list(labels))
            denom = p.sum() + g.sum()
            expected = 1.0 if denom == 0 else 2.0 * (p & g).sum() / denom
            assert abs(dsc(a, b, labels) - expected) < 1e-12


def test_dsc_symmetry_and_permutation_stability(rng):
    a = rng.integers(0, 3, size=(10, 10)).astype(np.uint8)
    b = rng.integers(0, 3, size=(10, 10)).astype(np.uint8)
    assert dsc(a, b, {1, 2}) == dsc(b, a, {1, 2})
    perm = rng.permutation(100)
    ap = a.ravel()[perm].reshape(10, 10)
    bp = b.ravel()[perm].reshape(10, 10)
    assert abs(dsc(a, b, 2) - dsc(ap, bp, 2)) < 1e-15


def test_dsc_liver_union_counts_tumor_as_liver():
    truth = np.zeros((6, 6), dtype=np.uint8)
    truth[1:5, 1:5] = 1
    pred = truth.copy()
    pred[2:4, 2:4] = 2  # calls part of the liver tumor
    assert dsc(pred, truth, {1, 2}) == 1.0
    assert dsc(pred, truth, {2}) == 0.0


def test_report_averages_cases_and_serializes(tmp_path):
    full = np.ones((4, 4), dtype=np.uint8)
    empty = np.zeros((4, 4), dtype=np.uint8)
    half = full.copy()
    half[:2] = 0
    rep = report([full, half], [full, full])
    # case one scores 1.0, case two scores 2*8/(8+16) = 2/3
    assert abs(rep.liver - (1.0 + 2.0 / 3.0) / 2) < 1e-12
    assert rep.tumor == 1.0  # tumor absent everywhere scores both-empty
    assert rep.n_cases == 2
    path = tmp_path / "report.json"
    rep.to_json(path)
    again = DiceReport.from_json(path)
    assert again.liver == rep.liver and again.tumor == rep.tumor
    parsed = json.loads(path.read_text())
    assert set(parsed) >= {"liver_dsc", "tumor_dsc", "mean_dsc", "n_cases"}
    assert report([empty], [empty]).mean == 1.0


def test_report_reference_drops():
    rep = DiceReport(liver=0.971, tumor=0.852, reference_liver=0.976, reference_tumor=0.891)
    drops = rep.drops
    assert abs(drops[0] - 0.005) < 1e-12
    assert abs(drops[1] - 0.039) < 1e-12
    text = rep.render_text()
    lines = text.splitlines()
    assert len(lines) == 5
    assert "97.1" in text and "0.5" in text and "3.9" in text
    # aligned columns: every data row has the same width
    assert len({len(line) for line in lines[2:]}) == 1


def test_report_rejects_empty_or_mismatched():
    with pytest.raises(ValueError):
        report([], [])
    with pytest.raises(ValueError):
        report([np.zeros((2, 2), dtype=np.uint8)], [])
