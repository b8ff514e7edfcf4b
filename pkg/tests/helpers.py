"""Shared oracles and the finite-difference harness."""

from __future__ import annotations

import numpy as np

from samoe.nn import Tensor, concat, functional as F, stack
from samoe.nn.layers import BiGRU, GRULayer
from samoe.model import TemporalAttention

FD_STEP = 1e-5
FD_TOL = 1e-4


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def gradcheck(fn, arrays, seed: int = 0, h: float = FD_STEP) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``fn`` maps a list of Tensors to one Tensor; the scalar probed is
    ``sum(fn(...) * R)`` for a fixed random ``R``.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(tensors)
    weights = rng.standard_normal(out.shape)
    (out * Tensor(weights)).sum().backward()

    def probe(vals):
        return float((fn([Tensor(v) for v in vals]).data * weights).sum())

    worst = 0.0
    for i, a in enumerate(arrays):
        num = np.zeros_like(a)
        for j in range(a.size):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[i].flat[j] += h
            minus[i].flat[j] -= h
            num.flat[j] = (probe(plus) - probe(minus)) / (2 * h)
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(a)
        worst = max(worst, relative_error(analytic, num))
    return worst


def _bn(channels_last: bool, training: bool):
    def fn(t):
        x, g, b = t
        c = g.shape[0]
        return F.batch_norm(x, g, b, np.zeros(c), np.ones(c), training=training, channels_last=channels_last)

    return fn


def _gru_layer(t):
    xs, wih, whh, bih, bhh = t
    layer = GRULayer(2, 3, np.random.default_rng(0))
    layer.weight_ih, layer.weight_hh, layer.bias_ih, layer.bias_hh = wih, whh, bih, bhh
    return stack(layer(xs, reverse=True))


def _bigru(t):
    (x,) = t
    return BiGRU(3, 2, 2, np.random.default_rng(4))(x)


def _attention(t):
    z, w, b, v = t
    att = TemporalAttention(np.random.default_rng(0), dim=5, hidden=4)
    att.proj_weight, att.proj_bias, att.score = w, b, v
    return att(z)


def primitive_cases():
    """(name, fn, input arrays) for every differentiable primitive."""
    r = np.random.default_rng(1234)

    def n(*shape):
        return r.standard_normal(shape)

    labels = np.array([0, 3, 1, 4])
    return [
        ("add_broadcast", lambda t: t[0] + t[1], [n(3, 4), n(4)]),
        ("mul_broadcast", lambda t: t[0] * t[1], [n(3, 4), n(3, 1)]),
        ("sub_neg", lambda t: t[0] - t[1], [n(2, 3), n(2, 3)]),
        ("matmul", lambda t: t[0] @ t[1], [n(3, 4), n(4, 2)]),
        ("getitem_slice", lambda t: t[0][1:, ::2], [n(3, 5)]),
        ("getitem_fancy", lambda t: t[0][np.array([0, 2, 0])], [n(3, 4)]),
        ("reshape", lambda t: t[0].reshape(6, 2), [n(3, 4)]),
        ("transpose", lambda t: t[0].transpose(2, 0, 1), [n(2, 3, 4)]),
        ("sum_axis", lambda t: t[0].sum(axis=1), [n(3, 4)]),
        ("mean_keepdims", lambda t: t[0].mean(axis=0, keepdims=True), [n(3, 4)]),
        ("concat", lambda t: concat([t[0], t[1]], axis=1), [n(2, 3), n(2, 2)]),
        ("stack", lambda t: stack([t[0], t[1]], axis=0), [n(2, 3), n(2, 3)]),
        ("relu", lambda t: F.relu(t[0]), [n(4, 5)]),
        ("tanh", lambda t: F.tanh(t[0]), [n(4, 5)]),
        ("sigmoid", lambda t: F.sigmoid(t[0] * 10.0), [n(4, 5)]),
        ("softmax", lambda t: F.softmax(t[0], axis=1), [n(3, 6)]),
        ("log_softmax", lambda t: F.log_softmax(t[0], axis=1), [n(3, 6)]),
        ("linear", lambda t: F.linear(t[0], t[1], t[2]), [n(2, 3, 4), n(5, 4), n(5)]),
        ("conv1d", lambda t: F.conv1d(t[0], t[1], t[2], stride=2, padding=1), [n(2, 3, 9), n(4, 3, 3), n(4)]),
        ("conv1d_stem", lambda t: F.conv1d(t[0], t[1], t[2], stride=2, padding=3), [n(1, 2, 12), n(3, 2, 7), n(3)]),
        ("conv1d_nlc", lambda t: F.conv1d_nlc(t[0], t[1], t[2], stride=1, padding=1), [n(2, 6, 3), n(2, 3, 3), n(2)]),
        ("maxpool1d", lambda t: F.maxpool1d(t[0], 3, stride=2, padding=1), [n(2, 3, 9)]),
        ("adaptive_avg_pool1d", lambda t: F.adaptive_avg_pool1d(t[0], 2), [n(2, 3, 5)]),
        ("adaptive_avg_pool1d_nlc", lambda t: F.adaptive_avg_pool1d_nlc(t[0], 3), [n(2, 7, 3)]),
        ("batch_norm_train", _bn(False, True), [n(4, 3, 5), n(3), n(3)]),
        ("batch_norm_train_nlc", _bn(True, True), [n(4, 5, 3), n(3), n(3)]),
        ("batch_norm_eval", _bn(False, False), [n(4, 3, 5), n(3), n(3)]),
        ("cross_entropy", lambda t: F.cross_entropy(t[0], labels), [n(4, 5)]),
        ("gru_layer", _gru_layer, [n(4, 2, 2), n(9, 2), n(9, 3), n(9), n(9)]),
        ("bigru", _bigru, [n(2, 4, 3)]),
        ("temporal_attention", _attention, [n(2, 6, 5), n(4, 5), n(4), n(4)]),
    ]


# ------------------------------------------------------------------ oracles
def conv1d_oracle(x, w, b, stride, padding):
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.zeros((bsz, cin, length + 2 * padding))
    xp[:, :, padding : padding + length] = x
    lout = (length + 2 * padding - k) // stride + 1
    out = np.zeros((bsz, cout, lout))
    for i in range(bsz):
        for o in range(cout):
            for t in range(lout):
                acc = b[o]
                for c in range(cin):
                    for j in range(k):
                        acc += w[o, c, j] * xp[i, c, t * stride + j]
                out[i, o, t] = acc
    return out


def maxpool_oracle(x, k, stride, padding):
    bsz, c, length = x.shape
    lout = (length + 2 * padding - k) // stride + 1
    out = np.empty((bsz, c, lout))
    for t in range(lout):
        lo = t * stride - padding
        window = [x[:, :, p] for p in range(lo, lo + k) if 0 <= p < length]
        out[:, :, t] = np.max(window, axis=0)
    return out


def bin_average_oracle(x, target):
    length = x.shape[-1]
    cols = []
    for i in range(target):
        lo = int(np.floor(i * length / target))
        hi = int(np.ceil((i + 1) * length / target))
        cols.append(x[..., lo:hi].mean(axis=-1))
    return np.stack(cols, axis=-1)


def _sig(v):
    return 1.0 / (1.0 + np.exp(-v))


def gru_oracle(xs, wih, whh, bih, bhh, reverse=False):
    """Step-by-step GRU over time-major ``xs`` (T, B, din); returns states by time index."""
    steps = xs.shape[0]
    hdim = whh.shape[1]
    h = np.zeros((xs.shape[1], hdim))
    out = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        x = xs[t]
        r = _sig(x @ wih[:hdim].T + bih[:hdim] + h @ whh[:hdim].T + bhh[:hdim])
        z = _sig(x @ wih[hdim : 2 * hdim].T + bih[hdim : 2 * hdim] + h @ whh[hdim : 2 * hdim].T + bhh[hdim : 2 * hdim])
        n = np.tanh(x @ wih[2 * hdim :].T + bih[2 * hdim :] + r * (h @ whh[2 * hdim :].T + bhh[2 * hdim :]))
        h = (1 - z) * n + z * h
        out[t] = h
    return out


def attention_oracle(z, w, b, v):
    """Direct loop over time for one batch of (B, T, d)."""
    out = np.zeros((z.shape[0], z.shape[2]))
    alphas = np.zeros(z.shape[:2])
    for i in range(z.shape[0]):
        e = np.array([v @ np.tanh(w @ z[i, t] + b) for t in range(z.shape[1])])
        a = np.exp(e - e.max())
        a /= a.sum()
        alphas[i] = a
        out[i] = sum(a[t] * z[i, t] for t in range(z.shape[1]))
    return out, alphas
