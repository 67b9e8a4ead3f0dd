"""The fixed primitive-op vocabulary of the gradient tape.

Every function takes/returns ``Tensor`` (plain arrays and scalars are lifted
to constants). A result requires gradients iff any differentiable input
does; otherwise the computation runs as plain numpy with nothing recorded.

min/max subgradients route to the first occurrence along the reduced axis.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.special import erf

from ..errors import DegenerateInputWarning, DimensionError, NumericsError, ParameterError
from .tensor import Tensor, constant

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Enable per-op finiteness validation (slow path for debugging)."""
    global _debug_checks
    _debug_checks = bool(enabled)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _result(data: np.ndarray, parents: tuple, op: str, backward) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    out = Tensor(
        data,
        requires_grad=requires,
        tape=tape,
        parents=parents if requires else (),
        backward=backward if requires else None,
        op=op,
    )
    if requires:
        if tape is None:
            raise NumericsError(f"op {op!r} on trainable tensors outside any tape")
        tape.record(out)
    if _debug_checks:
        out.check_finite(op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _result(data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _result(data, (a, b), "sub", backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _result(data, (a, b), "mul", backward)


def neg(a) -> Tensor:
    a = _lift(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(-g)

    return _result(-a.data, (a,), "neg", backward)


def scale(a, s: float) -> Tensor:
    a = _lift(a)
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _result(a.data * s, (a,), "scale", backward)


def matmul(a, b) -> Tensor:
    """Matrix product with leading-axis broadcasting; 1-D operands promoted."""
    a, b = _lift(a), _lift(b)
    a_vec = a.ndim == 1
    b_vec = b.ndim == 1
    ad = a.data[None, :] if a_vec else a.data
    bd = b.data[:, None] if b_vec else b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    if ad.ndim > 2 and bd.ndim == 2:
        # weight-style product: flatten leading axes into one GEMM
        lead = ad.shape[:-1]
        a2 = ad.reshape(-1, ad.shape[-1])
        data2 = a2 @ bd
        data = data2.reshape(lead + (bd.shape[-1],))

        def backward(g):
            g2 = g.reshape(-1, bd.shape[-1])
            if a.requires_grad:
                a.accumulate_grad((g2 @ bd.T).reshape(ad.shape))
            if b.requires_grad:
                b.accumulate_grad(a2.T @ g2)

        return _result(data, (a, b), "matmul", backward)

    data = np.matmul(ad, bd)
    out_shape = data.shape
    if a_vec:
        data = data[..., 0, :]
    if b_vec:
        data = data[..., 0] if not a_vec else data[..., 0]

    def backward(g):
        gm = g.reshape(out_shape)
        if a.requires_grad:
            ga = np.matmul(gm, np.swapaxes(bd, -1, -2))
            ga = _unbroadcast(ga, ad.shape)
            a.accumulate_grad(ga[0] if a_vec else ga)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(ad, -1, -2), gm)
            gb = _unbroadcast(gb, bd.shape)
            b.accumulate_grad(gb[..., 0] if b_vec else gb)

    return _result(data, (a, b), "matmul", backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _lift(a)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), "reshape", backward)


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    ax = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(ax))

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.transpose(inv))

    return _result(a.data.transpose(ax), (a,), "transpose", backward)


def concat(tensors, axis=0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(sl)])

    return _result(data, tuple(ts), "concat", backward)


def gather_tokens(x, idx) -> Tensor:
    """Select rows along the second-to-last axis.

    x: (..., T, D); idx: int array (n,) shared across leading dims, or
    (..., n) matching them. Output (..., n, D).
    """
    x = _lift(x)
    idx = np.asarray(idx)
    if idx.min() < 0 or idx.max() >= x.shape[-2]:
        raise DimensionError(f"gather index out of range for axis of extent {x.shape[-2]}")
    if idx.ndim == 1:
        data = np.take(x.data, idx, axis=-2)
    else:
        data = np.take_along_axis(x.data, idx[..., None], axis=-2)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        if x.ndim == 2:
            np.add.at(gx, idx, g)
        else:
            lead = int(np.prod(x.shape[:-2]))
            gxf = gx.reshape(lead, x.shape[-2], x.shape[-1])
            gf = g.reshape(lead, -1, x.shape[-1])
            rows = idx.reshape(1, -1) if idx.ndim == 1 else idx.reshape(lead, -1)
            np.add.at(gxf, (np.arange(lead)[:, None], rows), gf)
        x.accumulate_grad(gx)

    return _result(data, (x,), "gather_tokens", backward)


def scatter_tokens(visible, idx, base) -> Tensor:
    """Place ``visible`` rows at ``idx`` (unique) into a copy of ``base``.

    visible: (..., n, D); base: (..., N, D); idx: (n,) or (..., n).
    Slots not listed in idx keep the base value (replace semantics).
    """
    visible, base = _lift(visible), _lift(base)
    idx = np.asarray(idx)
    idx_full = np.broadcast_to(
        idx[..., None] if idx.ndim > 1 else idx[:, None], visible.shape[:-1] + (1,)
    )
    data = base.data.copy()
    np.put_along_axis(data, idx_full, visible.data, axis=-2)

    def backward(g):
        if visible.requires_grad:
            visible.accumulate_grad(np.take_along_axis(g, idx_full, axis=-2))
        if base.requires_grad:
            gb = g.copy()
            np.put_along_axis(gb, idx_full, 0.0, axis=-2)
            base.accumulate_grad(gb)

    return _result(data, (visible, base), "scatter_tokens", backward)


# ---------------------------------------------------------------------------
# normalizations and nonlinearities
# ---------------------------------------------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Standardize the last axis to mean 0 / var 1, then affine gamma/beta."""
    if eps <= 0:
        raise ParameterError(f"layer_norm eps must be > 0, got {eps}")
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta.accumulate_grad(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (dxhat - m1 - xhat * m2))

    return _result(data, (x, gamma, beta), "layer_norm", backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            x.accumulate_grad(data * (g - inner))

    return _result(data, (x,), "softmax", backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return _result(data, (x,), "log_softmax", backward)


def sigmoid(x) -> Tensor:
    x = _lift(x)
    pos = x.data >= 0
    data = np.empty_like(x.data)
    data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * data * (1.0 - data))

    return _result(data, (x,), "sigmoid", backward)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""
    x = _lift(x)
    phi_cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = x.data * phi_cdf

    def backward(g):
        if x.requires_grad:
            pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
            x.accumulate_grad(g * (phi_cdf + x.data * pdf))

    return _result(data, (x,), "gelu", backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_along(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(_expand_reduced(g, x.shape, axis, keepdims).copy())

    return _result(np.asarray(data), (x,), "sum", backward)


def mean_along(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _lift(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.size if axis is None else x.data.size // data.size

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(_expand_reduced(g, x.shape, axis, keepdims) / count)

    return _result(np.asarray(data), (x,), "mean", backward)


def var_along(x, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance along an axis, composed from primitives."""
    centered = sub(x, mean_along(x, axis=axis, keepdims=True))
    return mean_along(mul(centered, centered), axis=axis, keepdims=keepdims)


def _extreme_along(x, axis, op_name, arg_fn, take_fn, keepdims):
    x = _lift(x)
    idx = arg_fn(x.data, axis=axis)
    data = take_fn(x.data, axis=axis)
    if keepdims:
        data = np.expand_dims(data, axis)

    def backward(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(gx, np.expand_dims(idx, axis), gk, axis=axis)
        x.accumulate_grad(gx)

    return _result(data, (x,), op_name, backward)


def max_along(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Max along one axis; gradient routes to the first argmax only."""
    return _extreme_along(x, axis, "max", np.argmax, lambda d, axis: d.max(axis=axis), keepdims)


def min_along(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    return _extreme_along(x, axis, "min", np.argmin, lambda d, axis: d.min(axis=axis), keepdims)


def l2_normalize(x, axis: int = -1) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm; zero slices pass through."""
    x = _lift(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    zero = norm == 0.0
    if np.any(zero):
        warnings.warn("l2_normalize saw a zero vector; returned as zeros", DegenerateInputWarning)
    safe = np.where(zero, 1.0, norm)
    data = x.data / safe

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            gx = (g - data * inner) / safe
            x.accumulate_grad(np.where(zero, 0.0, gx))

    return _result(data, (x,), "l2_normalize", backward)


# ---------------------------------------------------------------------------
# losses (composites and fused kernels)
# ---------------------------------------------------------------------------


def mse(a, b) -> Tensor:
    """Mean squared error over all elements."""
    diff = sub(a, b)
    return mean_along(mul(diff, diff))


def sq_norm(a) -> Tensor:
    """Sum of squared elements (||a||^2)."""
    return sum_along(mul(a, a))


def bce_with_logits(logits, targets, reduction: str = "mean") -> Tensor:
    """Numerically stable binary cross-entropy on logits.

    targets are constants in [0, 1]; reduction is 'mean' or 'sum'.
    """
    if reduction not in ("mean", "sum"):
        raise ParameterError(f"unknown reduction {reduction!r}")
    x = _lift(logits)
    t = np.asarray(targets, dtype=x.data.dtype)
    per = np.maximum(x.data, 0.0) - x.data * t + np.log1p(np.exp(-np.abs(x.data)))
    data = per.mean() if reduction == "mean" else per.sum()
    denom = x.size if reduction == "mean" else 1.0

    def backward(g):
        if x.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-x.data))
            x.accumulate_grad(g * (sig - t) / denom)

    return _result(np.asarray(data), (x,), "bce_with_logits", backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean multi-class negative log-likelihood; labels are class indices."""
    x = _lift(logits)
    labels = np.asarray(labels)
    onehot = np.zeros(x.shape, dtype=x.data.dtype)
    onehot[np.arange(x.shape[0]), labels] = 1.0
    logp = log_softmax(x, axis=-1)
    return scale(sum_along(mul(logp, onehot)), -1.0 / x.shape[0])
