"""Bottleneck attention over flattened feature-map tokens.

The bottleneck map (N, s, s, d) is read as s*s tokens of width d.  Each
token passes a shared linear layer; queries, keys, and values are then
produced by three independent dynamic token mixers (a softmax-gated
mixture of candidate 3-tap depthwise kernels convolved along the token
axis); multi-head scaled dot-product attention and a two-layer
feed-forward close the block.  No residual connections and no positional
encoding anywhere.
"""

from __future__ import annotations

import numpy as np

from .config import ModelConfig
from .errors import DimensionError
from .optim import ParamStore, glorot_uniform
from .tensor import (
    Tensor,
    concat,
    dropout,
    linear,
    matmul,
    mean,
    relu,
    reshape,
    softmax,
    tensor_sum,
    transpose,
    absolute,
)


def init_attention_params(
    store: ParamStore, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "attn"
) -> None:
    d = cfg.bottleneck_channels
    hidden = cfg.ff_expand * d
    m = cfg.kernel_bank
    store.add(f"{prefix}.fc1.w", glorot_uniform(rng, (d, d), d, d))
    store.add(f"{prefix}.fc1.b", np.zeros(d, dtype=np.float32))
    for branch in ("q", "k", "v"):
        # candidate kernels start near the identity tap so the mixer is
        # benign before training shapes it
        bank = np.zeros((m, 3, d), dtype=np.float32)
        bank[:, 1, :] = 1.0
        bank += rng.uniform(-0.1, 0.1, size=bank.shape).astype(np.float32)
        store.add(f"{prefix}.{branch}.bank", bank)
        store.add(f"{prefix}.{branch}.gate.w", glorot_uniform(rng, (d, m), d, m))
        store.add(f"{prefix}.{branch}.gate.b", np.zeros(m, dtype=np.float32))
    store.add(f"{prefix}.fc3.w", glorot_uniform(rng, (d, hidden), d, hidden))
    store.add(f"{prefix}.fc3.b", np.zeros(hidden, dtype=np.float32))
    store.add(f"{prefix}.fc4.w", glorot_uniform(rng, (hidden, d), hidden, d))
    store.add(f"{prefix}.fc4.b", np.zeros(d, dtype=np.float32))


def dynamic_token_conv(t: Tensor, bank: Tensor, gate_w: Tensor, gate_b: Tensor) -> Tensor:
    """Mixture-of-kernels depthwise convolution along the token axis.

    ``t`` is (N, T, d); ``bank`` holds M candidate kernels (M, K, d) with
    odd K.  A softmax gate computed from the token mean picks the
    mixture per sample; the blended kernel slides over tokens with zero
    padding, each channel on its own.
    """
    if t.ndim != 3 or bank.ndim != 3:
        raise DimensionError(f"expected (N,T,d) tokens and (M,K,d) bank, got {t.shape}, {bank.shape}")
    m, k, d = bank.shape
    if k % 2 == 0:
        raise DimensionError(f"kernel extent must be odd, got {k}")
    if t.shape[-1] != d:
        raise DimensionError(f"token width {t.shape[-1]} != bank width {d}")
    n, tokens = t.shape[0], t.shape[1]
    pooled = mean(t, axis=1)                                   # (N, d)
    gate = softmax(linear(pooled, gate_w, gate_b), axis=-1)    # (N, M)
    eff = reshape(matmul(gate, reshape(bank, (m, k * d))), (n, k, d))
    pad = Tensor(np.zeros((n, k // 2, d), dtype=t.dtype))
    padded = concat([pad, t, pad], axis=1)
    out = None
    for ki in range(k):
        term = padded[:, ki : ki + tokens, :] * eff[:, ki : ki + 1, :]
        out = term if out is None else out + term
    return out


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(width)) v over the trailing two axes."""
    if q.shape != k.shape or q.shape != v.shape:
        raise DimensionError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    width = q.shape[-1]
    kt = transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    scores = matmul(q, kt) * (1.0 / np.sqrt(width))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def _split_heads(t: Tensor, heads: int) -> Tensor:
    n, tokens, d = t.shape
    return transpose(reshape(t, (n, tokens, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(t: Tensor) -> Tensor:
    n, heads, tokens, width = t.shape
    return reshape(transpose(t, (0, 2, 1, 3)), (n, tokens, heads * width))


def mhdca(
    t: Tensor,
    store: ParamStore,
    heads: int,
    prefix: str = "attn",
    return_weights: bool = False,
):
    """Multi-head attention whose q/k/v come from dynamic token mixers."""
    d = t.shape[-1]
    if d % heads:
        raise DimensionError(f"heads={heads} must divide token width {d}")
    q, k, v = (
        dynamic_token_conv(
            t,
            store[f"{prefix}.{b}.bank"],
            store[f"{prefix}.{b}.gate.w"],
            store[f"{prefix}.{b}.gate.b"],
        )
        for b in ("q", "k", "v")
    )
    out, weights = scaled_attention(
        _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads), return_weights=True
    )
    merged = _merge_heads(out)
    if return_weights:
        return merged, weights
    return merged


def attention_forward(
    x: Tensor,
    store: ParamStore,
    cfg: ModelConfig,
    training: bool = False,
    rng=None,
    prefix: str = "attn",
) -> Tensor:
    """Full block: tokenize, per-token FC, attention, feed-forward, dropout."""
    if x.ndim != 4:
        raise DimensionError(f"expected a feature map (N,H,W,C), got {x.shape}")
    n, h, w, c = x.shape
    t = reshape(x, (n, h * w, c))
    t = linear(t, store[f"{prefix}.fc1.w"], store[f"{prefix}.fc1.b"])
    t = mhdca(t, store, cfg.heads, prefix=prefix)
    t = relu(linear(t, store[f"{prefix}.fc3.w"], store[f"{prefix}.fc3.b"]))
    t = linear(t, store[f"{prefix}.fc4.w"], store[f"{prefix}.fc4.b"])
    t = dropout(t, cfg.attn_dropout, training=training, rng=rng)
    return reshape(t, (n, h, w, c))


def ff_regularizer(store: ParamStore, cfg: ModelConfig, prefix: str = "attn") -> Tensor:
    """L1 + L2 penalty on the widening feed-forward weights."""
    w = store[f"{prefix}.fc3.w"]
    return tensor_sum(absolute(w)) * cfg.l1 + tensor_sum(w * w) * cfg.l2
