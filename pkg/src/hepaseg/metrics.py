"""Overlap metrics: the soft dice training loss and hard DSC reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, tensor_sum

N_CLASSES = 3
LIVER_LABELS = frozenset({1, 2})
TUMOR_LABELS = frozenset({2})


def one_hot(labels: np.ndarray, num_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got [{labels.min()}, {labels.max()}]")
    return np.eye(num_classes, dtype=np.float32)[labels]


def soft_dice_loss(probs: Tensor, labels: np.ndarray, eps: float = 1e-6) -> Tensor:
    """1 minus the mean per-class soft dice overlap.

    ``probs`` carries class probabilities on the trailing axis; ``labels``
    is the integer map of the same leading shape.  Classes absent from
    both prediction mass and ground truth are left out of the mean.
    """
    labels = np.asarray(labels)
    if probs.shape[:-1] != labels.shape:
        raise DimensionError(f"probs {probs.shape} do not align with labels {labels.shape}")
    classes = probs.shape[-1]
    y = one_hot(labels, classes).astype(probs.dtype)
    present = [
        c
        for c in range(classes)
        if y[..., c].sum() > 0 or probs.data[..., c].sum() > 0
    ]
    if not present:
        raise ValueError("no class present in either prediction or ground truth")
    total = None
    for c in present:
        p_c = probs[..., c]
        y_c = Tensor(y[..., c])
        num = tensor_sum(p_c * y_c) * 2.0 + eps
        den = tensor_sum(p_c) + tensor_sum(y_c) + eps
        dice_c = num / den
        total = dice_c if total is None else total + dice_c
    return 1.0 - total * (1.0 / len(present))


def dsc(pred: np.ndarray, truth: np.ndarray, labels) -> float:
    """Hard dice: 2|P and G| / (|P| + |G|); both sets empty scores 1.0.

    ``labels`` may be a single label or a set treated as a union, so the
    liver score can count nested tumor pixels as liver.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    if isinstance(labels, (int, np.integer)):
        labels = {int(labels)}
    p = np.isin(pred, list(labels))
    g = np.isin(truth, list(labels))
    p_count = int(p.sum())
    g_count = int(g.sum())
    if p_count + g_count == 0:
        return 1.0
    inter = int((p & g).sum())
    return 2.0 * inter / (p_count + g_count)


@dataclass
class DiceReport:
    """Mean liver/tumor DSC over cases, with optional reference deltas."""

    liver: float
    tumor: float
    n_cases: int = 0
    reference_liver: float | None = None
    reference_tumor: float | None = None

    @property
    def mean(self) -> float:
        return 0.5 * (self.liver + self.tumor)

    @property
    def drops(self) -> tuple[float, float] | None:
        """Reference minus achieved, per class; None without a reference."""
        if self.reference_liver is None or self.reference_tumor is None:
            return None
        return (self.reference_liver - self.liver, self.reference_tumor - self.tumor)

    def to_dict(self) -> dict:
        out = {
            "liver_dsc": self.liver,
            "tumor_dsc": self.tumor,
            "mean_dsc": self.mean,
            "n_cases": self.n_cases,
        }
        if self.drops is not None:
            out["reference_liver_dsc"] = self.reference_liver
            out["reference_tumor_dsc"] = self.reference_tumor
            out["liver_drop"] = self.drops[0]
            out["tumor_drop"] = self.drops[1]
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_dict(cls, raw: dict) -> "DiceReport":
        return cls(
            liver=raw["liver_dsc"],
            tumor=raw["tumor_dsc"],
            n_cases=raw.get("n_cases", 0),
            reference_liver=raw.get("reference_liver_dsc"),
            reference_tumor=raw.get("reference_tumor_dsc"),
        )

    @classmethod
    def from_json(cls, path) -> "DiceReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def render_text(self) -> str:
        """Fixed-width table; DSC shown as percent, drop = reference - value."""
        header = f"{'class':<8} {'DSC %':>8} {'ref %':>8} {'drop':>8}"
        lines = [header, "-" * len(header)]
        drops = self.drops
        rows = [("liver", self.liver, self.reference_liver), ("tumor", self.tumor, self.reference_tumor)]
        for i, (name, value, ref) in enumerate(rows):
            ref_s = f"{100 * ref:8.1f}" if ref is not None else f"{'-':>8}"
            drop_s = f"{100 * drops[i]:8.1f}" if drops is not None else f"{'-':>8}"
            lines.append(f"{name:<8} {100 * value:8.1f} {ref_s} {drop_s}")
        lines.append(f"{'mean':<8} {100 * self.mean:8.1f} {'-':>8} {'-':>8}")
        return "\n".join(lines)


def report(
    preds: list[np.ndarray],
    truths: list[np.ndarray],
    reference: tuple[float, float] | None = None,
) -> DiceReport:
    """Average per-class DSC over cases (a case may be a slice or a stack)."""
    if len(preds) != len(truths) or not preds:
        raise ValueError(f"need equal nonzero case counts, got {len(preds)} and {len(truths)}")
    liver = float(np.mean([dsc(p, g, LIVER_LABELS) for p, g in zip(preds, truths)]))
    tumor = float(np.mean([dsc(p, g, TUMOR_LABELS) for p, g in zip(preds, truths)]))
    ref_liver, ref_tumor = reference if reference is not None else (None, None)
    return DiceReport(
        liver=liver,
        tumor=tumor,
        n_cases=len(preds),
        reference_liver=ref_liver,
        reference_tumor=ref_tumor,
    )
