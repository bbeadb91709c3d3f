"""Minimal reverse-mode autodiff on float32 numpy buffers.

Every op records its parents and a backward closure on the output tensor;
``backward`` on a scalar loss walks the graph once in reverse topological
order. Broadcasting is restricted to trailing dimensions of add/mul so each
backward rule stays auditable.

Tensors are float32 unless constructed from a float64 array; ops preserve the
incoming dtype. The finite-difference oracle exploits this by probing at
float64, which separates backward-rule bugs from float32 rounding.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording, e.g. for generation inside a training step."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _coerce(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        return arr
    return arr.astype(np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _coerce(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every tensor the scalar loss depends on."""
    if loss.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss._accumulate(np.ones((), dtype=loss.data.dtype))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --------------------------------------------------------------------------
# Elementwise ops with trailing-dimension broadcasting
# --------------------------------------------------------------------------


def _check_trailing(a: Tensor, b: Tensor):
    sa, sb = a.shape, b.shape
    small, large = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if small != large[len(large) - len(small) :]:
        raise ShapeError(f"shapes {sa} and {sb} differ beyond trailing broadcast")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_trailing(a, b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_trailing(a, b)

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), back)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def back(g):
        x._accumulate(g * mask)

    return _make(np.where(mask, x.data, x.data.dtype.type(0)), (x,), back)


def log(x, floor: float = 1e-12) -> Tensor:
    """Natural log with the input clamped at ``floor`` to stay finite."""
    x = _as_tensor(x)
    clamped = np.maximum(x.data, floor)

    def back(g):
        x._accumulate(np.where(x.data > floor, g / clamped, 0.0))

    return _make(np.log(clamped), (x,), back)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def back(g):
        x._accumulate(g * out_data)

    return _make(out_data, (x,), back)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        x._accumulate(out_data * (g - inner))

    return _make(out_data, (x,), back)


# --------------------------------------------------------------------------
# Linear algebra and shape ops
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if b.data.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch dims differ: {a.shape} @ {b.shape}")

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(gb)

    return _make(a.data @ b.data, (a, b), back)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape

    def back(g):
        x._accumulate(g.reshape(old))

    return _make(x.data.reshape(shape), (x,), back)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        x._accumulate(np.ascontiguousarray(g.transpose(inverse)))

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t._accumulate(g[tuple(index)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is None:
        count = x.data.size
        out_data = x.data.mean()

        def back(g):
            x._accumulate(np.full_like(x.data, g / count))

    else:
        count = x.shape[axis]
        out_data = x.data.mean(axis=axis)

        def back(g):
            x._accumulate(np.repeat(np.expand_dims(g / count, axis), count, axis=axis))

    return _make(out_data, (x,), back)


def embedding_lookup(table, ids) -> Tensor:
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError("embedding table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding ids out of range")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(gt)

    return _make(table.data[ids], (table,), back)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError("layer_norm gamma/beta must match the feature width")
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def back(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            term1 = gx.mean(axis=-1, keepdims=True)
            term2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x._accumulate((gx - term1 - xhat * term2) * inv)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back)


# --------------------------------------------------------------------------
# Convolutional ops
# --------------------------------------------------------------------------


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution over (batch, channels, height, width) via im2col."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects x (B,C,H,W) and w (O,C,kh,kw)")
    batch, cin, h, width_ = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: {cin} vs {cin_w}")
    hp, wp = h + 2 * pad, width_ + 2 * pad
    if kh > hp or kw > wp:
        raise ShapeError("kernel larger than padded input")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B, C, ho, wo, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        batch, ho * wo, cin * kh * kw
    )
    wmat = w.data.reshape(cout, -1)
    out_data = (cols @ wmat.T).reshape(batch, ho, wo, cout).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (cout,):
            raise ShapeError("conv2d bias must have one entry per output channel")
        out_data = out_data + b.data[None, :, None, None]
        parents.append(b)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(batch, ho * wo, cout)
        if w.requires_grad:
            gw = g2.reshape(-1, cout).T @ cols.reshape(-1, cin * kh * kw)
            w._accumulate(gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(batch, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros((batch, cin, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += (
                        dcols[:, :, :, :, i, j]
                    )
            x._accumulate(dxp[:, :, pad : pad + h, pad : pad + width_])

    return _make(np.ascontiguousarray(out_data), parents, back)


def avg_pool(x, kernel: int) -> Tensor:
    """Non-overlapping average pooling; spatial dims must divide by kernel."""
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("avg_pool expects (B,C,H,W)")
    batch, c, h, w = x.shape
    if h % kernel or w % kernel:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by kernel {kernel}")
    out_data = x.data.reshape(batch, c, h // kernel, kernel, w // kernel, kernel).mean(
        axis=(3, 5)
    )

    def back(g):
        expanded = np.repeat(np.repeat(g, kernel, axis=2), kernel, axis=3)
        x._accumulate(expanded / (kernel * kernel))

    return _make(out_data, (x,), back)


# --------------------------------------------------------------------------
# Losses and similarity
# --------------------------------------------------------------------------


def cross_entropy(logits, targets, ignore_index: int | None = None, reduction: str = "mean") -> Tensor:
    """Categorical cross entropy from raw logits over the last axis."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim < 2 or targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy got logits {logits.shape}, targets {targets.shape}")
    classes = logits.shape[-1]
    flat = logits.data.reshape(-1, classes)
    tflat = targets.reshape(-1)
    keep = np.ones(tflat.shape, dtype=bool) if ignore_index is None else tflat != ignore_index
    n_kept = int(keep.sum())
    if n_kept == 0:
        raise ShapeError("cross_entropy has no unmasked targets")
    if tflat[keep].min() < 0 or tflat[keep].max() >= classes:
        raise ShapeError("cross_entropy target out of range")
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    picked = logp[np.arange(flat.shape[0]), tflat.clip(0, classes - 1)]
    scale = 1.0 / n_kept if reduction == "mean" else 1.0
    loss = np.asarray(-(picked * keep).sum() * scale, dtype=flat.dtype)

    def back(g):
        probs = np.exp(logp)
        probs[np.arange(flat.shape[0]), tflat.clip(0, classes - 1)] -= 1.0
        probs *= (keep * scale)[:, None] * g
        logits._accumulate(probs.reshape(logits.shape))

    return _make(loss, (logits,), back)


def cosine_similarity(a, b, eps: float = 1e-8) -> Tensor:
    """Cosine of the angle between the last-axis vectors of ``a`` and ``b``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    dot = (a.data * b.data).sum(axis=-1)
    na = np.sqrt((a.data**2).sum(axis=-1))
    nb = np.sqrt((b.data**2).sum(axis=-1))
    denom = np.maximum(na * nb, eps)
    out_data = dot / denom

    def back(g):
        live = na * nb > eps
        if a.requires_grad:
            ga = b.data / denom[..., None] - (out_data / np.maximum(na, eps) ** 2)[..., None] * a.data
            a._accumulate((g * live)[..., None] * ga)
        if b.requires_grad:
            gb = a.data / denom[..., None] - (out_data / np.maximum(nb, eps) ** 2)[..., None] * b.data
            b._accumulate((g * live)[..., None] * gb)

    return _make(out_data, (a, b), back)


# --------------------------------------------------------------------------
# Finite-difference oracle
# --------------------------------------------------------------------------


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    point: np.ndarray,
    eps: float = 1e-3,
    coords: Sequence[int] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be scalar-valued. ``coords`` selects flat indices to probe
    (all of them by default). The probe runs at float64 so rule errors are
    not masked by float32 rounding; relative error uses the symmetric
    denominator ``max(1e-8, |analytic| + |numeric|)``.
    """
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    out = f(x)
    if out.shape != ():
        raise ShapeError("finite_diff_check needs a scalar-valued function")
    if not np.isfinite(out.data):
        raise NumericsError("function value is not finite at the probe point")
    backward(out)
    analytic = x.grad.reshape(-1).copy()

    flat_indices = range(x.data.size) if coords is None else coords
    worst = 0.0
    flat = x.data.reshape(-1)
    for idx in flat_indices:
        original = flat[idx]
        flat[idx] = original + eps
        f_plus = float(f(Tensor(x.data)).data)
        flat[idx] = original - eps
        f_minus = float(f(Tensor(x.data)).data)
        flat[idx] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericsError("function value is not finite near the probe point")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[idx] - numeric) / max(1e-8, abs(analytic[idx]) + abs(numeric))
        worst = max(worst, err)
    return worst
