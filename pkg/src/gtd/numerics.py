"""fp64 tensors and the handful of differentiable operators the GTAN needs.

Each operator computes its forward value with numpy and, when any input
requires a gradient, records an :class:`OpNode` holding the activations its
vector-Jacobian product needs.  ``Tensor.backward`` walks the recorded graph
in reverse topological order.

Arrays are laid out channel-major, ``(batch, channels, frames)``, for the
convolutions; unbatched ``(channels, frames)`` inputs are accepted as well.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from gtd.errors import NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "OpNode",
    "as_tensor",
    "conv1d_dilated",
    "conv1x1",
    "sigmoid",
    "relu",
    "add",
    "mul",
    "dropout",
    "concat",
    "swap_last",
    "reshape",
    "add_over_frames",
    "mask_frames",
    "sum_tensors",
    "frame_loss",
    "softmax",
    "log_softmax",
    "grad_check",
]


class OpNode:
    __slots__ = ("kind", "inputs", "vjp")

    def __init__(self, kind: str, inputs: tuple, vjp: Callable):
        self.kind = kind
        self.inputs = inputs
        self.vjp = vjp


class Tensor:
    """Immutable float64 array plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, node: OpNode | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node = node

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    shape = dims

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        kind = self.node.kind if self.node is not None else "leaf"
        return f"Tensor(dims={self.dims}, op={kind})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for inp, gi in zip(t.node.inputs, t.node.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if gi.shape != inp.data.shape:
                    raise ShapeError(
                        f"{t.node.kind}: VJP shape {gi.shape} != input {inp.data.shape}"
                    )
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(out: np.ndarray, kind: str, inputs: tuple, vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    out.flags.writeable = False
    needs = any(t.requires_grad for t in inputs)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.requires_grad = needs
    t.node = OpNode(kind, inputs, vjp) if needs else None
    return t


def _as_batched(x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        return x[None]
    if x.ndim == 3:
        return x
    raise ShapeError(f"expected (C, N) or (B, C, N), got {x.shape}")


# -- convolutions ------------------------------------------------------------


def conv1d_dilated(x, weights, bias, dilation: int = 1) -> Tensor:
    """Same-length dilated convolution with centred taps and zero padding.

    ``out[c, n] = bias[c] + sum_{i,k} w[c, i, k] * x[i, n + (k - (K-1)/2) * dilation]``
    """
    x, weights = as_tensor(x), as_tensor(weights)
    bias = as_tensor(bias) if bias is not None else None
    if int(dilation) != dilation or dilation < 1:
        raise ShapeError(f"dilation must be a positive integer, got {dilation}")
    dilation = int(dilation)
    w = weights.data
    if w.ndim != 3:
        raise ShapeError(f"weights must be (C_out, C_in, K), got {w.shape}")
    c_out, c_in, k = w.shape
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")
    unbatched = x.data.ndim == 2
    xb = _as_batched(x.data)
    if xb.shape[1] != c_in:
        raise ShapeError(f"input has {xb.shape[1]} channels, weights expect {c_in}")
    if bias is not None and bias.data.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.data.shape}")

    batch, _, n = xb.shape
    pad = (k - 1) // 2 * dilation
    xp = np.pad(xb, ((0, 0), (0, 0), (pad, pad)))
    cols = np.stack([xp[:, :, j * dilation : j * dilation + n] for j in range(k)], axis=1)
    cols = cols.reshape(batch, k * c_in, n)
    wr = w.transpose(0, 2, 1).reshape(c_out, k * c_in)
    out = wr @ cols
    if bias is not None:
        out += bias.data[:, None]

    def vjp(g):
        g3 = _as_batched(g)
        gw = (g3 @ cols.transpose(0, 2, 1)).sum(axis=0)
        gw = gw.reshape(c_out, k, c_in).transpose(0, 2, 1)
        gcols = (wr.T @ g3).reshape(batch, k, c_in, n)
        gxp = np.zeros((batch, c_in, n + 2 * pad))
        for j in range(k):
            gxp[:, :, j * dilation : j * dilation + n] += gcols[:, j]
        gx = gxp[:, :, pad : pad + n]
        if unbatched:
            gx = gx[0]
        gb = g3.sum(axis=(0, 2)) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weights, bias) if bias is not None else (x, weights)
    return _result(out[0] if unbatched else out, "conv1d_dilated", inputs, vjp)


def conv1x1(x, weights, bias) -> Tensor:
    """Pointwise (kernel 1) convolution; ``weights`` is ``(C_out, C_in)``."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    w = weights.data
    if w.ndim != 2 or x.data.shape[-2] != w.shape[1]:
        raise ShapeError(f"conv1x1: weights {w.shape} vs input {x.data.shape}")
    if bias.data.shape != (w.shape[0],):
        raise ShapeError(f"conv1x1: bias {bias.data.shape} vs {w.shape[0]} outputs")
    xd = x.data
    out = w @ xd + bias.data[:, None]

    def vjp(g):
        gw = g @ np.swapaxes(xd, -1, -2)
        if gw.ndim == 3:
            gw = gw.sum(axis=0)
        gb = g.sum(axis=-1)
        if gb.ndim == 2:
            gb = gb.sum(axis=0)
        return w.T @ g, gw, gb

    return _result(out, "conv1x1", (x, weights, bias), vjp)


# -- pointwise ---------------------------------------------------------------


def _sigmoid(a: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _result(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    return _result(np.where(pos, x.data, 0.0), "relu", (x,), lambda g: (g * pos,))


def _same_shape(kind, a: Tensor, b: Tensor):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _same_shape("add", x, y)
    return _result(x.data + y.data, "add", (x, y), lambda g: (g, g))


def mul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _same_shape("mul", x, y)
    xd, yd = x.data, y.data
    return _result(xd * yd, "mul", (x, y), lambda g: (g * yd, g * xd))


def dropout(x, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout.  Identity (the same tensor) outside training."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


def concat(tensors: Sequence, axis: int = -2) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, "concat", ts, vjp)


def swap_last(x) -> Tensor:
    """Swap the last two axes: channel-major <-> frame-major."""
    x = as_tensor(x)
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _result(out, "swap_last", (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.data.shape
    out = x.data.reshape(shape).copy()
    return _result(out, "reshape", (x,), lambda g: (g.reshape(orig),))


def add_over_frames(x, v) -> Tensor:
    """Broadcast-add a per-channel vector ``v`` (``(B, C)`` or ``(C,)``) to every frame."""
    x, v = as_tensor(x), as_tensor(v)
    if x.data.shape[:-1] != v.data.shape:
        raise ShapeError(f"add_over_frames: {v.data.shape} vs {x.data.shape}")
    return _result(
        x.data + v.data[..., None], "add_over_frames", (x, v), lambda g: (g, g.sum(axis=-1))
    )


def mask_frames(x, mask: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 frame mask broadcastable to ``x``."""
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    return _result(x.data * m, "mask_frames", (x,), lambda g: (g * m,))


def sum_tensors(tensors: Sequence) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    for t in ts[1:]:
        _same_shape("sum_tensors", ts[0], t)
    out = np.sum([t.data for t in ts], axis=0)
    return _result(np.asarray(out, dtype=np.float64), "sum", ts, lambda g: (g,) * len(ts))


# -- losses ------------------------------------------------------------------


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    z = a - a.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    z = a - a.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def frame_loss(scores, target: np.ndarray, weights: np.ndarray, kind: str) -> Tensor:
    """Frame-weighted loss over frame-major scores ``(..., N, C)``.

    Returns ``sum_n weights[n] * l(n)`` where ``l`` is the class-mean squared
    error (``mse``), softmax cross-entropy (``ce``) or class-mean sigmoid
    binary cross-entropy (``bce``).  Callers fold every normalisation into
    ``weights``.
    """
    scores = as_tensor(scores)
    s = scores.data
    y = np.asarray(target, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if y.shape != s.shape or w.shape != s.shape[:-1]:
        raise ShapeError(f"frame_loss: scores {s.shape}, target {y.shape}, weights {w.shape}")
    c = s.shape[-1]
    if kind == "mse":
        diff = s - y
        per_frame = (diff**2).mean(axis=-1)
        grad = w[..., None] * 2.0 * diff / c
    elif kind == "ce":
        logp = log_softmax(s)
        per_frame = -(y * logp).sum(axis=-1)
        grad = w[..., None] * (np.exp(logp) * y.sum(axis=-1, keepdims=True) - y)
    elif kind == "bce":
        per_frame = (np.maximum(s, 0.0) - s * y + np.log1p(np.exp(-np.abs(s)))).mean(axis=-1)
        grad = w[..., None] * (_sigmoid(s) - y) / c
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    out = np.asarray((w * per_frame).sum(), dtype=np.float64)
    return _result(out, f"{kind}_loss", (scores,), lambda g: (g * grad,))


# -- gradient checking ------------------------------------------------------


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    refine: int = 0,
) -> float:
    """Largest relative error between the tape gradient and central differences.

    ``fn`` maps one tensor per entry of ``inputs`` to a scalar tensor.  With
    ``max_coords`` only a random subset of coordinates per input is probed.

    ``refine > 0`` retries a coordinate whose error exceeds 1e-6 with eps
    shrunk tenfold (up to ``refine`` times) and keeps the smallest error.  A
    ReLU kink inside the probe interval then stops registering as a mismatch,
    while a wrong VJP still fails at every step size.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if out.data.size != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    if out.requires_grad:
        out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(a) for t, a in zip(leaves, arrays)]

    def value(args) -> float:
        v = float(fn(*[Tensor(a) for a in args]).data)
        if not np.isfinite(v):
            raise NonFiniteError("function value is not finite")
        return v

    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, a in enumerate(arrays):
        coords = np.arange(a.size)
        if max_coords is not None and a.size > max_coords:
            coords = np.sort(rng.choice(a.size, size=max_coords, replace=False))
        for flat in coords:
            idx = np.unravel_index(flat, a.shape)
            an = analytic[i][idx]
            h, err = eps, np.inf
            for _ in range(refine + 1):
                plus = [x.copy() for x in arrays]
                minus = [x.copy() for x in arrays]
                plus[i][idx] += h
                minus[i][idx] -= h
                fd = (value(plus) - value(minus)) / (2.0 * h)
                err = min(err, abs(an - fd) / max(abs(an), abs(fd), 1e-8))
                if err <= 1e-6:
                    break
                h /= 10.0
            worst = max(worst, err)
    return worst
