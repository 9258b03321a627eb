"""Parallel atrous (dilated) depthwise branches over the bottleneck map.

Each branch applies a centered 3x3 depthwise kernel at its own dilation
rate (zero-fill same padding), then a pointwise 1x1 that halves the
width, then ReLU.  Branches concatenate in config order (ascending
rates by default), followed by batch normalization and dropout, doubling
the bottleneck width overall.
"""

from __future__ import annotations

import warnings

import numpy as np

from .config import ModelConfig
from .errors import DimensionError
from .optim import ParamStore, glorot_uniform, he_normal
from .tensor import Tensor, concat, conv2d, dropout, mean, power, relu

KERNEL = 3


def init_multiscale_params(
    store: ParamStore, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "ms"
) -> None:
    c = cfg.bottleneck_channels
    half = c // 2
    for rate in cfg.dilations:
        store.add(f"{prefix}.d{rate}.dw", he_normal(rng, (KERNEL, KERNEL, 1, c), KERNEL * KERNEL))
        store.add(f"{prefix}.d{rate}.pw.w", he_normal(rng, (1, 1, c, half), c))
        store.add(f"{prefix}.d{rate}.pw.b", np.zeros(half, dtype=np.float32))
    out_ch = half * len(cfg.dilations)
    store.add(f"{prefix}.bn.gamma", np.ones(out_ch, dtype=np.float32))
    store.add(f"{prefix}.bn.beta", np.zeros(out_ch, dtype=np.float32))
    store.buffers[f"{prefix}.bn.mean"] = np.zeros(out_ch, dtype=np.float32)
    store.buffers[f"{prefix}.bn.var"] = np.ones(out_ch, dtype=np.float32)


def receptive_span(dilation: int, kernel: int = KERNEL) -> int:
    """Pixel extent covered by a dilated kernel: d*(k-1) + 1."""
    return dilation * (kernel - 1) + 1


def atrous_depthwise(x: Tensor, w: Tensor, dilation: int) -> Tensor:
    """Depthwise 3x3 at the given rate; warns when taps outspan the map."""
    if x.ndim != 4:
        raise DimensionError(f"expected (N,H,W,C), got {x.shape}")
    h, width = x.shape[1], x.shape[2]
    if dilation * (KERNEL - 1) >= 2 * min(h, width):
        warnings.warn(
            f"dilation {dilation} spans {receptive_span(dilation)} pixels on a "
            f"{h}x{width} map; border taps all land in padding",
            RuntimeWarning,
            stacklevel=2,
        )
    return conv2d(x, w, stride=1, padding="same", dilation=dilation, groups=x.shape[-1])


def branch_forward(x: Tensor, dw: Tensor, pw_w: Tensor, pw_b: Tensor, dilation: int) -> Tensor:
    out = atrous_depthwise(x, dw, dilation)
    return relu(conv2d(out, pw_w, pw_b, padding="same"))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    buffers: dict,
    prefix: str,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch norm over (N, H, W); running stats decay by momentum."""
    if training:
        mu = mean(x, axis=(0, 1, 2))
        diff = x - mu
        var = mean(diff * diff, axis=(0, 1, 2))
        buffers[f"{prefix}.mean"] = (
            momentum * buffers[f"{prefix}.mean"] + (1.0 - momentum) * mu.data
        ).astype(np.float32)
        buffers[f"{prefix}.var"] = (
            momentum * buffers[f"{prefix}.var"] + (1.0 - momentum) * var.data
        ).astype(np.float32)
    else:
        mu = Tensor(buffers[f"{prefix}.mean"])
        var = Tensor(buffers[f"{prefix}.var"])
        diff = x - mu
    scale = power(var + eps, 0.5)
    return diff / scale * gamma + beta


def msas_branches(x: Tensor, store: ParamStore, cfg: ModelConfig, prefix: str = "ms") -> list[Tensor]:
    return [
        branch_forward(
            x,
            store[f"{prefix}.d{rate}.dw"],
            store[f"{prefix}.d{rate}.pw.w"],
            store[f"{prefix}.d{rate}.pw.b"],
            rate,
        )
        for rate in cfg.dilations
    ]


def msas_forward(
    x: Tensor,
    store: ParamStore,
    cfg: ModelConfig,
    training: bool = False,
    rng=None,
    prefix: str = "ms",
) -> Tensor:
    out = concat(msas_branches(x, store, cfg, prefix), axis=-1)
    out = batch_norm(
        out,
        store[f"{prefix}.bn.gamma"],
        store[f"{prefix}.bn.beta"],
        store.buffers,
        f"{prefix}.bn",
        training,
        cfg.bn_momentum,
        cfg.bn_eps,
    )
    return dropout(out, cfg.dropout, training=training, rng=rng)
