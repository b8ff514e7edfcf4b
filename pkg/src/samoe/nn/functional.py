"""Differentiable layer primitives.

Every function takes and returns :class:`Tensor` objects and registers an
analytic backward rule. Shapes follow the (batch, channels, length)
convention for the 1-D ops.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, NumericError, UsageError
from .tensor import Tensor


def _out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


def _scatter_rows(gcols: np.ndarray, length_padded: int, stride: int) -> np.ndarray:
    """Adjoint of strided window gathering along axis 1: (N, Lout, k, C) -> (N, Lp, C)."""
    n, lout, k, c = gcols.shape
    out = np.zeros((n, length_padded, c))
    span = stride * (lout - 1) + 1
    for j in range(k):
        out[:, j : j + span : stride, :] += gcols[:, :, j, :]
    return out


def _channels_first(fn, x: Tensor, *args, **kwargs) -> Tensor:
    """Run a channels-last op on a (B, C, L) tensor."""
    return fn(x.transpose(0, 2, 1), *args, **kwargs).transpose(0, 2, 1)


# ---------------------------------------------------------------- activations
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _softmax_array(a: np.ndarray, axis: int) -> np.ndarray:
    if not np.isfinite(a).all():
        raise NumericError("softmax input contains non-finite values")
    z = np.exp(a - a.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _softmax_array(x.data, axis)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), bw, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    a = x.data
    if not np.isfinite(a).all():
        raise NumericError("log_softmax input contains non-finite values")
    shifted = a - a.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), bw, "log_softmax")


# --------------------------------------------------------------------- dense
def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight.T + bias``."""
    xd, w = x.data, weight.data
    if w.ndim != 2:
        raise DimensionError(f"linear weight must be 2-D (dout, din), got {w.shape}")
    if xd.shape[-1] != w.shape[1]:
        raise DimensionError(
            f"linear input trailing axis has size {xd.shape[-1]}, weight expects din={w.shape[1]}"
        )
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, w.shape[1])
    out = x2 @ w.T
    parents = (x, weight)
    if bias is not None:
        if bias.shape != (w.shape[0],):
            raise DimensionError(f"linear bias shape {bias.shape} != ({w.shape[0]},)")
        out = out + bias.data
        parents = (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, w.shape[0])
        gx = (g2 @ w).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._make(out.reshape(lead + (w.shape[0],)), parents, bw, "linear")


# ---------------------------------------------------------------- convolution
def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D cross-correlation over the last axis of a (B, Cin, L) tensor."""
    if x.ndim != 3:
        raise DimensionError(f"conv1d input must be (B, Cin, L), got {x.shape}")
    return _channels_first(conv1d_nlc, x, weight, bias, stride=stride, padding=padding)


def conv1d_nlc(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last conv1d: (B, L, Cin) -> (B, Lout, Cout); weight stays (Cout, Cin, k)."""
    xd, w = x.data, weight.data
    if xd.ndim != 3:
        raise DimensionError(f"conv1d input must be (B, L, Cin), got {xd.shape}")
    if w.ndim != 3:
        raise DimensionError(f"conv1d weight must be (Cout, Cin, k), got {w.shape}")
    cout, cin, k = w.shape
    if xd.shape[2] != cin:
        raise DimensionError(f"conv1d channel axis: input has Cin={xd.shape[2]}, weight expects {cin}")
    if k < 1 or stride < 1 or padding < 0:
        raise DimensionError(f"conv1d needs k>=1, stride>=1, padding>=0 (got {k}, {stride}, {padding})")
    b, length, _ = xd.shape
    lout = _out_len(length, k, stride, padding)
    if lout < 1:
        raise DimensionError(f"conv1d length axis: L={length} too short for k={k}, padding={padding}")

    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0))) if padding else xd
    span = stride * (lout - 1) + 1
    cols = np.concatenate([xp[:, j : j + span : stride, :] for j in range(k)], axis=2).reshape(b * lout, k * cin)
    wmat = w.transpose(2, 1, 0).reshape(k * cin, cout)
    out = cols @ wmat
    parents = (x, weight)
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"conv1d bias shape {bias.shape} != ({cout},)")
        out += bias.data
        parents = (x, weight, bias)
    lp = xp.shape[1]

    def bw(g):
        g2 = g.reshape(b * lout, cout)
        gw = (cols.T @ g2).reshape(k, cin, cout).transpose(2, 1, 0) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(b, lout, k, cin)
            gx = _scatter_rows(gcols, lp, stride)[:, padding : padding + length, :]
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._make(out.reshape(b, lout, cout), parents, bw, "conv1d")


# -------------------------------------------------------------------- pooling
def maxpool1d(x: Tensor, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Windowed max over the last axis of (B, C, L); padding acts as -inf, ties go to the lowest index."""
    if x.ndim != 3:
        raise DimensionError(f"maxpool1d input must be (B, C, L), got {x.shape}")
    return _channels_first(maxpool1d_nlc, x, k, stride=stride, padding=padding)


def maxpool1d_nlc(x: Tensor, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    stride = k if stride is None else stride
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"maxpool1d input must be (B, L, C), got {xd.shape}")
    if k < 1 or stride < 1 or padding < 0 or padding > k // 2:
        raise DimensionError(f"maxpool1d needs k>=1, stride>=1, 0<=padding<=k//2 (got {k}, {stride}, {padding})")
    b, length, c = xd.shape
    lout = _out_len(length, k, stride, padding)
    if lout < 1:
        raise DimensionError(f"maxpool1d length axis: L={length} gives output length {lout}")
    xp = np.pad(xd, ((0, 0), (padding, padding), (0, 0)), constant_values=-np.inf) if padding else xd
    span = stride * (lout - 1) + 1
    out = xp[:, 0:span:stride, :].copy()
    idx = np.zeros(out.shape, dtype=np.int8)
    for j in range(1, k):
        cand = xp[:, j : j + span : stride, :]
        better = cand > out  # strict: earlier index wins ties
        out[better] = cand[better]
        idx[better] = j
    lp = xp.shape[1]

    def bw(g):
        gcols = np.stack([g * (idx == j) for j in range(k)], axis=2)
        return (_scatter_rows(gcols, lp, stride)[:, padding : padding + length, :],)

    return Tensor._make(out, (x,), bw, "maxpool1d")


def adaptive_bins(length: int, target: int) -> list[tuple[int, int]]:
    """Bin ``i`` covers indices [floor(i*L/n), ceil((i+1)*L/n))."""
    return [((i * length) // target, -((-(i + 1) * length) // target)) for i in range(target)]


def _bin_matrix(length: int, target: int) -> np.ndarray:
    avg = np.zeros((length, target))
    for i, (lo, hi) in enumerate(adaptive_bins(length, target)):
        avg[lo:hi, i] = 1.0 / (hi - lo)
    return avg


def adaptive_avg_pool1d(x: Tensor, target: int) -> Tensor:
    """Average over adaptive bins of the last axis: (B, C, L) -> (B, C, target)."""
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool1d input must be (B, C, L), got {xd.shape}")
    if target < 1:
        raise DimensionError(f"adaptive_avg_pool1d target must be >= 1, got {target}")
    avg = _bin_matrix(xd.shape[2], target)
    return Tensor._make(xd @ avg, (x,), lambda g: (g @ avg.T,), "adaptive_avg_pool1d")


def adaptive_avg_pool1d_nlc(x: Tensor, target: int) -> Tensor:
    """Channels-last variant: (B, L, C) -> (B, target, C)."""
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"adaptive_avg_pool1d input must be (B, L, C), got {xd.shape}")
    if target < 1:
        raise DimensionError(f"adaptive_avg_pool1d target must be >= 1, got {target}")
    avg = _bin_matrix(xd.shape[1], target)
    out = np.einsum("blc,lt->btc", xd, avg)
    return Tensor._make(out, (x,), lambda g: (np.einsum("btc,lt->blc", g, avg),), "adaptive_avg_pool1d")


# -------------------------------------------------------------- normalization
def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    channels_last: bool = False,
) -> Tensor:
    """Per-channel normalization of a (B, C) or (B, C, L) tensor.

    With ``channels_last`` the channel axis is the final one, e.g. (B, L, C).
    In training mode the statistics are taken over every non-channel axis and
    the running buffers are updated in place (unbiased variance).
    """
    xd = x.data
    if xd.ndim not in (2, 3):
        raise DimensionError(f"batch_norm input must be 2-D or 3-D, got {xd.shape}")
    ch_axis = xd.ndim - 1 if channels_last else 1
    c = xd.shape[ch_axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm affine params must be ({c},), channel axis has {c}")
    axes = tuple(i for i in range(xd.ndim) if i != ch_axis)
    bshape = tuple(c if i == ch_axis else 1 for i in range(xd.ndim))
    m = xd.size // c
    if training:
        if m < 2:
            raise UsageError("batch_norm in training mode needs more than one value per channel")
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
    xhat = (xd - mu.reshape(bshape)) * inv
    gam = gamma.data.reshape(bshape)
    out = gam * xhat + beta.data.reshape(bshape)

    def bw(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            if training:
                coef = gam * inv
                gx = coef * (g - (gb / m).reshape(bshape) - xhat * (gg / m).reshape(bshape))
            else:
                gx = g * (gam * inv)
        return gx, gg, gb

    return Tensor._make(out, (x, gamma, beta), bw, "batch_norm")


# ----------------------------------------------------------------------- loss
def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of ``labels`` under softmax(logits)."""
    z = logits.data
    if z.ndim != 2:
        raise DimensionError(f"cross_entropy logits must be (B, K), got {z.shape}")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    bsz, k = z.shape
    if y.shape[0] != bsz:
        raise DimensionError(f"cross_entropy got {y.shape[0]} labels for batch of {bsz}")
    if bsz == 0:
        raise UsageError("cross_entropy on an empty batch")
    if (y < 0).any() or (y >= k).any():
        raise UsageError(f"cross_entropy labels must lie in [0, {k})")
    if not np.isfinite(z).all():
        raise NumericError("cross_entropy logits contain non-finite values")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    loss = -logp[np.arange(bsz), y].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(bsz), y] -= 1.0
        return (p * (g / bsz),)

    return Tensor._make(np.asarray(loss), (logits,), bw, "cross_entropy")

