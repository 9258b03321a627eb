"""Named parameters, their Adam state, and weight initialization."""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Gaussian init scaled for ReLU fan-in."""
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class _AdamSlot:
    __slots__ = ("m", "v", "step")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.step = 0


class ParamStore:
    """Registry of trainable tensors plus non-trainable buffers.

    Names are unique; first/second Adam moments are created zeroed and
    shape-locked to their parameter.  Buffers (batch-norm running stats)
    ride along for checkpointing but are never updated by the optimizer.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._slots: dict[str, _AdamSlot] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True)
        self._params[name] = t
        self._slots[name] = _AdamSlot(t.shape, t.dtype)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def slot(self, name: str) -> _AdamSlot:
        return self._slots[name]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self._params.values())

    @contextmanager
    def frozen(self):
        """Temporarily drop requires_grad so forward passes skip graph building."""
        for p in self._params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for p in self._params.values():
                p.requires_grad = True


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay_l1: float = 0.0,
    weight_decay_l2: float = 0.0,
) -> None:
    """One bias-corrected Adam update over every parameter in the store.

    L1 decay adds ``sign(w) * l1`` and L2 adds ``2 * l2 * w`` to the raw
    gradient before the moment updates.
    """
    for name, p in store.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient; run backward first")
        if p.grad.shape != p.data.shape:
            raise DimensionError(f"gradient shape {p.grad.shape} != param shape {p.data.shape}")
        g = p.grad
        if weight_decay_l1:
            g = g + weight_decay_l1 * np.sign(p.data)
        if weight_decay_l2:
            g = g + 2.0 * weight_decay_l2 * p.data
        slot = store.slot(name)
        slot.step += 1
        slot.m = beta1 * slot.m + (1.0 - beta1) * g
        slot.v = beta2 * slot.v + (1.0 - beta2) * (g * g)
        m_hat = slot.m / (1.0 - beta1**slot.step)
        v_hat = slot.v / (1.0 - beta2**slot.step)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
