"""Dense tensors with reverse-mode automatic differentiation.

Everything downstream (network blocks, losses, the training loop) is built
from the ops in this module.  Conventions:

* image tensors are channels-last ``(N, H, W, C)``, row-major
* float32 is the working precision; float64 exists for gradient checking
* an op returns a new ``Tensor`` wired to its parents, and ``backward()``
  on a scalar loss accumulates ``grad`` on every tensor that requires it

Tensors are treated as immutable once created; callers that mutate
``data`` in place (the optimizer) must not hold live graphs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _coerce(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data: np.ndarray = _coerce(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Iterable] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(parent) into ``grad`` across the whole graph.

        ``self`` must be scalar.  Repeated calls keep accumulating; callers
        reset with ``zero_grad``.
        """
        if self.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        # Flow gradients through a scratch map, then add the pass's totals
        # onto .grad so that repeated backward() calls accumulate exactly.
        flow: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                held = flow.get(id(parent))
                flow[id(parent)] = pg if held is None else held + pg

    # Operator sugar; every overload routes through the module-level ops.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return mul(self, _as_tensor(-1.0, self.dtype))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other, self.dtype))

    def __getitem__(self, key):
        return getitem(self, key)


def _as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype if dtype is not None else np.float32))


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        return (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))

    return _from_op(out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def backward(g):
        return (a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))

    return _from_op(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        )

    return _from_op(out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def backward(g):
        return (
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        )

    return _from_op(out, (a, b), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data**exponent

    def backward(g):
        return ((a, g * exponent * a.data ** (exponent - 1.0)),)

    return _from_op(out, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    out = np.abs(a.data)

    def backward(g):
        return ((a, g * np.sign(a.data)),)

    return _from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# reductions and shape bookkeeping


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=False)),)

    return _from_op(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def backward(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, a.shape).astype(a.dtype, copy=False)),)

    return _from_op(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(a.shape)),)

    return _from_op(out, (a,), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return ((a, g.transpose(inverse)),)

    return _from_op(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, cuts, axis=axis)
        return list(zip(tensors, pieces))

    return _from_op(out, tensors, backward)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int/ellipsis) indexing; advanced indexing is not wired."""
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return ((a, full),)

    return _from_op(out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands need at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        da = np.matmul(g, b.data.swapaxes(-1, -2))
        db = np.matmul(a.data.swapaxes(-1, -2), g)
        return (
            (a, _unbroadcast(da, a.shape)),
            (b, _unbroadcast(db, b.shape)),
        )

    return _from_op(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map on the trailing axis: ``x @ w + b``."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != {w.shape[0]}")
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


# ---------------------------------------------------------------------------
# activations


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def backward(g):
        return ((a, g * (a.data > 0)),)

    return _from_op(out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    # exp of -|x| only, so large magnitudes cannot overflow
    e = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = out.astype(a.dtype, copy=False)

    def backward(g):
        return ((a, g * out * (1.0 - out)),)

    return _from_op(out, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((a, out * (g - inner)),)

    return _from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# stochastic regularization


def dropout(x: Tensor, p: float, training: bool = False, rng=None) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) so E[out] = x."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    keep = (gen.random(x.shape) >= p).astype(x.dtype)
    scale = keep / np.asarray(1.0 - p, dtype=x.dtype)

    def backward(g):
        return ((x, g * scale),)

    return _from_op(x.data * scale, (x,), backward)


# ---------------------------------------------------------------------------
# spatial ops (N, H, W, C)


def _conv_padding(h: int, w: int, k: int, stride: int, dilation: int, padding: str):
    span = (k - 1) * dilation + 1
    if padding == "same":
        out_h = -(-h // stride)
        out_w = -(-w // stride)
        pad_h = max((out_h - 1) * stride + span - h, 0)
        pad_w = max((out_w - 1) * stride + span - w, 0)
    elif padding == "valid":
        if h < span or w < span:
            raise DimensionError(f"kernel span {span} exceeds input {h}x{w}")
        out_h = (h - span) // stride + 1
        out_w = (w - span) // stride + 1
        pad_h = pad_w = 0
    else:
        raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
    return out_h, out_w, pad_h // 2, pad_h - pad_h // 2, pad_w // 2, pad_w - pad_w // 2


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: str = "same",
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation over (H, W).

    Args:
        x: input ``(N, H, W, Cin)``.
        w: kernel ``(K, K, Cin/groups, Cout)``; K odd unless K == 1.
        b: optional bias ``(Cout,)``.
        padding: ``same`` keeps ceil(H/stride), ``valid`` shrinks.
        dilation: gap between kernel taps.
        groups: channel groups; ``groups == Cin`` with a single input
            channel per group is the depthwise case.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d operands, got {x.shape} and {w.shape}")
    n, h, ww, cin = x.shape
    k1, k2, cin_g, cout = w.shape
    if k1 != k2:
        raise DimensionError(f"conv2d kernel must be square, got {k1}x{k2}")
    if k1 % 2 == 0:
        raise DimensionError(f"conv2d kernel extent must be odd, got {k1}")
    if cin % groups or cout % groups:
        raise DimensionError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise DimensionError(f"kernel expects {cin_g} channels per group, input gives {cin // groups}")
    if not np.isfinite(x.data).all() or not np.isfinite(w.data).all():
        raise NumericError("conv2d received non-finite values")
    k = k1
    out_h, out_w, pt, pb, pl, pr = _conv_padding(h, ww, k, stride, dilation, padding)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)))

    def window(arr, ki, kj):
        return arr[
            :,
            ki * dilation : ki * dilation + (out_h - 1) * stride + 1 : stride,
            kj * dilation : kj * dilation + (out_w - 1) * stride + 1 : stride,
            :,
        ]

    depthwise = groups == cin and cin_g == 1 and cout == cin
    out = np.zeros((n, out_h, out_w, cout), dtype=x.dtype)
    if depthwise:
        for ki in range(k):
            for kj in range(k):
                out += window(xp, ki, kj) * w.data[ki, kj, 0]
    elif groups == 1:
        for ki in range(k):
            for kj in range(k):
                out += window(xp, ki, kj) @ w.data[ki, kj]
    else:
        cg_in, cg_out = cin // groups, cout // groups
        for gi in range(groups):
            xs = slice(gi * cg_in, (gi + 1) * cg_in)
            os = slice(gi * cg_out, (gi + 1) * cg_out)
            for ki in range(k):
                for kj in range(k):
                    out[..., os] += window(xp, ki, kj)[..., xs] @ w.data[ki, kj, :, os]
    if b is not None:
        out = out + b.data

    def backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        if depthwise:
            for ki in range(k):
                for kj in range(k):
                    dw[ki, kj, 0] = (window(xp, ki, kj) * g).sum(axis=(0, 1, 2))
                    window(dxp, ki, kj)[...] += g * w.data[ki, kj, 0]
        elif groups == 1:
            for ki in range(k):
                for kj in range(k):
                    dw[ki, kj] = np.tensordot(window(xp, ki, kj), g, axes=([0, 1, 2], [0, 1, 2]))
                    window(dxp, ki, kj)[...] += g @ w.data[ki, kj].T
        else:
            cg_in, cg_out = cin // groups, cout // groups
            for gi in range(groups):
                xs = slice(gi * cg_in, (gi + 1) * cg_in)
                os = slice(gi * cg_out, (gi + 1) * cg_out)
                gg = g[..., os]
                for ki in range(k):
                    for kj in range(k):
                        dw[ki, kj, :, os] = np.tensordot(
                            window(xp, ki, kj)[..., xs], gg, axes=([0, 1, 2], [0, 1, 2])
                        )
                        window(dxp, ki, kj)[..., xs] += gg @ w.data[ki, kj, :, os].T
        dx = dxp[:, pt : pt + h, pl : pl + ww, :]
        grads = [(x, dx), (w, dw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 1, 2))))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(out, parents, backward)


def transposed_conv2d(x: Tensor, w: Tensor) -> Tensor:
    """2x2 stride-2 transposed convolution (the adjoint of a strided conv).

    ``x`` is ``(N, H, W, Cin)``, ``w`` is ``(2, 2, Cout, Cin)``; output is
    ``(N, 2H, 2W, Cout)``.  With kernel 2 and stride 2 each output pixel
    receives exactly one contribution, so the forward is four strided
    scatters.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"transposed_conv2d expects 4-d operands, got {x.shape}, {w.shape}")
    if w.shape[0] != 2 or w.shape[1] != 2:
        raise DimensionError(f"transposed_conv2d kernel must be 2x2, got {w.shape[:2]}")
    n, h, ww, cin = x.shape
    cout = w.shape[2]
    if w.shape[3] != cin:
        raise DimensionError(f"kernel expects {w.shape[3]} input channels, got {cin}")
    out = np.empty((n, 2 * h, 2 * ww, cout), dtype=x.dtype)
    for ki in range(2):
        for kj in range(2):
            out[:, ki::2, kj::2, :] = x.data @ w.data[ki, kj].T

    def backward(g):
        dx = np.zeros_like(x.data)
        dw = np.zeros_like(w.data)
        for ki in range(2):
            for kj in range(2):
                gs = g[:, ki::2, kj::2, :]
                dx += gs @ w.data[ki, kj]
                dw[ki, kj] = np.tensordot(gs, x.data, axes=([0, 1, 2], [0, 1, 2]))
        return (x, dx), (w, dw)

    return _from_op(out, (x, w), backward)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 stride-2 max pooling; ties route to the first window entry in
    row-major order."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d expects (N, H, W, C), got {x.shape}")
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    windows = (
        x.data.reshape(n, h2, 2, w2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h2, w2, 4, c)
    )
    winners = windows.argmax(axis=3)
    out = np.take_along_axis(windows, winners[:, :, :, None, :], axis=3).squeeze(3)

    def backward(g):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, winners[:, :, :, None, :], g[:, :, :, None, :], axis=3)
        dx = dwin.reshape(n, h2, w2, 2, 2, c).transpose(0, 1, 3, 2, 4, 5).reshape(n, h, w, c)
        return ((x, dx),)

    return _from_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial extent: (N, H, W, C) -> (N, C)."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects (N, H, W, C), got {x.shape}")
    n, h, w, c = x.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g):
        dx = np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).astype(x.dtype, copy=False)
        return ((x, dx),)

    return _from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# gradient checking


def numeric_grad(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued fn, element by element."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = x.copy()
        bumped[idx] = x[idx] + h
        hi = fn(bumped)
        bumped[idx] = x[idx] - h
        lo = fn(bumped)
        grad[idx] = (hi - lo) / (2.0 * h)
        it.iternext()
    return grad


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """Largest elementwise |a-b| relative to magnitude, floored to dodge 0/0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def gradient_check_error(build, arrays, h: float = 1e-5, seed: int = 7) -> float:
    """Worst relative error between autodiff and central differences.

    ``build`` maps input Tensors to an output Tensor; the output is
    reduced to a scalar against fixed random weights so every output
    element influences the check.  Inputs are promoted to float64.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    loss = tensor_sum(out * Tensor(r, dtype=np.float64))
    loss.backward()

    worst = 0.0
    for i, t in enumerate(tensors):
        def scalar(arr, i=i):
            probe = [
                Tensor(arr if j == i else arrays[j], dtype=np.float64)
                for j in range(len(arrays))
            ]
            return float(tensor_sum(build(*probe) * Tensor(r, dtype=np.float64)).data)

        numeric = numeric_grad(scalar, arrays[i], h)
        worst = max(worst, max_rel_error(t.grad, numeric))
    return worst
