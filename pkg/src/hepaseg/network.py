"""Progressive encoder-decoder segmentation network.

The encoder runs ``stages`` feature blocks (three 3x3 convs with ReLU and
a mid-block dropout), each followed by 2x2 max pooling; filters double
per stage from ``base_filters``.  The bottleneck optionally passes the
attention block and the multi-scale atrous block.  The decoder mirrors
the encoder with 2x2 stride-2 transposed convs, concatenates the
matching encoder skip (skip first, upsampled second), applies a
squeeze-excite channel gate, and runs another feature block.  A 1x1 head
emits three class probabilities per pixel.
"""

from __future__ import annotations

import numpy as np

from .attention import attention_forward, init_attention_params
from .config import ModelConfig
from .errors import DimensionError, StageError
from .multiscale import init_multiscale_params, msas_forward
from .optim import ParamStore, glorot_uniform, he_normal
from .preprocess import SliceImage, Stage
from .tensor import (
    Tensor,
    concat,
    conv2d,
    dropout,
    global_avg_pool,
    linear,
    maxpool2d,
    relu,
    reshape,
    sigmoid,
    softmax,
    transposed_conv2d,
)

N_CLASSES = 3


def _init_conv_stage(store, prefix, rng, c_in, filters):
    store.add(f"{prefix}.conv1.w", he_normal(rng, (3, 3, c_in, filters), 9 * c_in))
    store.add(f"{prefix}.conv1.b", np.zeros(filters, dtype=np.float32))
    for i in (2, 3):
        store.add(f"{prefix}.conv{i}.w", he_normal(rng, (3, 3, filters, filters), 9 * filters))
        store.add(f"{prefix}.conv{i}.b", np.zeros(filters, dtype=np.float32))


def build_params(cfg: ModelConfig, seed: int | None = None) -> ParamStore:
    """Create and initialize every parameter the configured network uses."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParamStore()
    c_in = 1
    for i in range(1, cfg.stages + 1):
        f = cfg.stage_filters(i)
        _init_conv_stage(store, f"enc{i}", rng, c_in, f)
        c_in = f
    if cfg.dca:
        init_attention_params(store, cfg, rng)
    if cfg.msas:
        init_multiscale_params(store, cfg, rng)
    else:
        cb = cfg.bottleneck_channels
        store.add("adapter.w", he_normal(rng, (1, 1, cb, 2 * cb), cb))
        store.add("adapter.b", np.zeros(2 * cb, dtype=np.float32))
    for i in range(cfg.stages, 0, -1):
        f = cfg.stage_filters(i)
        store.add(f"up{i}.w", he_normal(rng, (2, 2, f, 2 * f), 4 * 2 * f))
        if cfg.ccr:
            c = 2 * f
            hidden = c // cfg.reduction
            store.add(f"gate{i}.w1", he_normal(rng, (c, hidden), c))
            store.add(f"gate{i}.b1", np.zeros(hidden, dtype=np.float32))
            store.add(f"gate{i}.w2", glorot_uniform(rng, (hidden, c), hidden, c))
            store.add(f"gate{i}.b2", np.zeros(c, dtype=np.float32))
        _init_conv_stage(store, f"dec{i}", rng, 2 * f, f)
    f1 = cfg.stage_filters(1)
    store.add("head.w", glorot_uniform(rng, (1, 1, f1, N_CLASSES), f1, N_CLASSES))
    store.add("head.b", np.zeros(N_CLASSES, dtype=np.float32))
    return store


def conv_stage_forward(x, store, prefix, training=False, rng=None, rate=0.1):
    out = relu(conv2d(x, store[f"{prefix}.conv1.w"], store[f"{prefix}.conv1.b"]))
    out = relu(conv2d(out, store[f"{prefix}.conv2.w"], store[f"{prefix}.conv2.b"]))
    out = dropout(out, rate, training=training, rng=rng)
    return relu(conv2d(out, store[f"{prefix}.conv3.w"], store[f"{prefix}.conv3.b"]))


def channel_gate(f: Tensor, w1, b1, w2, b2, training=False, rng=None, rate=0.1, return_gates=False):
    """Squeeze-excite: sigmoid gates from pooled channels rescale the map."""
    n, _, _, c = f.shape
    z = global_avg_pool(f)
    hidden = relu(linear(z, w1, b1))
    hidden = dropout(hidden, rate, training=training, rng=rng)
    gates = sigmoid(linear(hidden, w2, b2))
    out = f * reshape(gates, (n, 1, 1, c))
    if return_gates:
        return out, gates
    return out


def encoder_forward(x, store, cfg, training=False, rng=None, trace=None):
    skips = []
    out = x
    for i in range(1, cfg.stages + 1):
        stage_in = out.shape
        out = conv_stage_forward(out, store, f"enc{i}", training, rng, cfg.dropout)
        if trace is not None:
            trace.append((f"encoder{i}.convs", stage_in[1:], out.shape[1:]))
        skips.append(out)
        pooled = maxpool2d(out)
        if trace is not None:
            trace.append((f"encoder{i}.pool", out.shape[1:], pooled.shape[1:]))
        out = pooled
    return skips, out


def decoder_forward(x, skips, store, cfg, training=False, rng=None, trace=None):
    out = x
    for i in range(cfg.stages, 0, -1):
        up = transposed_conv2d(out, store[f"up{i}.w"])
        if trace is not None:
            trace.append((f"decoder{i}.up", out.shape[1:], up.shape[1:]))
        merged = concat([skips[i - 1], up], axis=-1)
        if cfg.ccr:
            merged = channel_gate(
                merged,
                store[f"gate{i}.w1"],
                store[f"gate{i}.b1"],
                store[f"gate{i}.w2"],
                store[f"gate{i}.b2"],
                training,
                rng,
                cfg.gate_dropout,
            )
        out = conv_stage_forward(merged, store, f"dec{i}", training, rng, cfg.dropout)
        if trace is not None:
            # the traced input is the upsampled stream; the skip concat and
            # gate live inside the row
            trace.append((f"decoder{i}.convs", up.shape[1:], out.shape[1:]))
    return out


def forward_batch(x: Tensor, store: ParamStore, cfg: ModelConfig, training=False, rng=None, trace=None) -> Tensor:
    """Probabilities (N, H, W, 3) for a batch of normalized slices (N, H, W, 1)."""
    if x.ndim != 4 or x.shape[-1] != 1:
        raise DimensionError(f"expected (N, H, W, 1), got {x.shape}")
    if x.shape[1] != cfg.input_size or x.shape[2] != cfg.input_size:
        raise DimensionError(f"expected {cfg.input_size}px slices, got {x.shape[1]}x{x.shape[2]}")
    skips, out = encoder_forward(x, store, cfg, training, rng, trace)
    if cfg.dca:
        attended = attention_forward(out, store, cfg, training, rng)
        if trace is not None:
            trace.append(("bottleneck.attention", out.shape[1:], attended.shape[1:]))
        out = attended
    if cfg.msas:
        widened = msas_forward(out, store, cfg, training, rng)
    else:
        widened = conv2d(out, store["adapter.w"], store["adapter.b"])
    if trace is not None:
        trace.append(("bottleneck.multiscale", out.shape[1:], widened.shape[1:]))
    out = decoder_forward(widened, skips, store, cfg, training, rng, trace)
    logits = conv2d(out, store["head.w"], store["head.b"])
    probs = softmax(logits, axis=-1)
    if trace is not None:
        trace.append(("head.classes", out.shape[1:], probs.shape[1:]))
        trace.append(("head.labels", probs.shape[1:], probs.shape[1:3] + (1,)))
    return probs


def model_forward(s: SliceImage, cfg: ModelConfig, store: ParamStore, training=False, rng=None) -> np.ndarray:
    """Per-pixel class probabilities (H, W, 3) for one preprocessed slice."""
    if s.stage is not Stage.NORMALIZED:
        raise StageError(f"model_forward needs a normalized slice, got stage {s.stage.value}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    x = Tensor(s.pixels[None, :, :, None])
    probs = forward_batch(x, store, cfg, training=training, rng=rng)
    return probs.data[0]


def walk_shapes(cfg: ModelConfig, store: ParamStore | None = None) -> list[tuple[str, tuple, tuple]]:
    """Trace one forward pass and report (block, in dims, out dims) rows."""
    if store is None:
        store = build_params(cfg)
    trace: list[tuple[str, tuple, tuple]] = []
    x = Tensor(np.zeros((1, cfg.input_size, cfg.input_size, 1), dtype=np.float32))
    with store.frozen():
        forward_batch(x, store, cfg, trace=trace)
    return trace


def expected_rows(cfg: ModelConfig) -> list[tuple[str, tuple, tuple]]:
    """The architecture table the configured network should realize."""
    rows = []
    size = cfg.input_size
    c_in = 1
    for i in range(1, cfg.stages + 1):
        f = cfg.stage_filters(i)
        rows.append((f"encoder{i}.convs", (size, size, c_in), (size, size, f)))
        rows.append((f"encoder{i}.pool", (size, size, f), (size // 2, size // 2, f)))
        size //= 2
        c_in = f
    cb = cfg.bottleneck_channels
    if cfg.dca:
        rows.append(("bottleneck.attention", (size, size, cb), (size, size, cb)))
    rows.append(("bottleneck.multiscale", (size, size, cb), (size, size, 2 * cb)))
    for i in range(cfg.stages, 0, -1):
        f = cfg.stage_filters(i)
        rows.append((f"decoder{i}.up", (size, size, 2 * f), (2 * size, 2 * size, f)))
        size *= 2
        rows.append((f"decoder{i}.convs", (size, size, f), (size, size, f)))
    rows.append(("head.classes", (size, size, cfg.stage_filters(1)), (size, size, N_CLASSES)))
    rows.append(("head.labels", (size, size, N_CLASSES), (size, size, 1)))
    return rows
