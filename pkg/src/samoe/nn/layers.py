"""Module containers and the layers used by the network."""

from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from ..errors import DimensionError
from . import functional as F
from .tensor import Parameter, Tensor, concat, stack


class Module:
    """Minimal module tree: parameters, buffers, train/eval mode."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, value in vars(self).items():
            if isinstance(value, Module):
                yield key, value

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in self._buffers.items():
            yield prefix + key, value
        for key, child in self.children():
            yield from child.named_buffers(prefix + key + ".")

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.frozen = False

    @property
    def frozen(self) -> bool:
        params = self.parameters()
        return bool(params) and all(p.frozen for p in params)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._items.append(module)

    def children(self):
        for i, m in enumerate(self._items):
            yield str(i), m

    def named_parameters(self, prefix: str = ""):
        for key, child in self.children():
            yield from child.named_parameters(prefix + key + ".")

    def __getitem__(self, i) -> Module:
        return self._items[i]

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(din)
        self.weight = Parameter(_uniform(rng, bound, (dout, din)))
        self.bias = Parameter(_uniform(rng, bound, (dout,)))

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv1d(Module):
    """1-D conv; ``channels_last`` switches the input layout from (B, C, L) to (B, L, C)."""

    def __init__(
        self,
        cin: int,
        cout: int,
        k: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        channels_last: bool = False,
    ):
        super().__init__()
        self.stride, self.padding, self.channels_last = stride, padding, channels_last
        bound = 1.0 / np.sqrt(cin * k)
        self.weight = Parameter(_uniform(rng, bound, (cout, cin, k)))
        self.bias = Parameter(_uniform(rng, bound, (cout,)))

    def forward(self, x: Tensor) -> Tensor:
        conv = F.conv1d_nlc if self.channels_last else F.conv1d
        return conv(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm1d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, channels_last: bool = False):
        super().__init__()
        self.momentum, self.eps, self.channels_last = momentum, eps, channels_last
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_var"] = np.ones(channels)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x,
            self.weight,
            self.bias,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
            channels_last=self.channels_last,
        )


class ConvBlock(Module):
    """Conv1d(k=3, pad=1) -> batch norm -> ReLU, on channels-last (B, L, C) input."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.conv = Conv1d(cin, cout, 3, rng, stride=stride, padding=1, channels_last=True)
        self.norm = BatchNorm1d(cout, channels_last=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.norm(self.conv(x)))


class GRULayer(Module):
    """One direction of one GRU layer (gate order r, z, n)."""

    def __init__(self, din: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)
        self.weight_ih = Parameter(_uniform(rng, bound, (3 * hidden, din)))
        self.weight_hh = Parameter(_uniform(rng, bound, (3 * hidden, hidden)))
        self.bias_ih = Parameter(_uniform(rng, bound, (3 * hidden,)))
        self.bias_hh = Parameter(_uniform(rng, bound, (3 * hidden,)))

    def forward(self, xs: Tensor, reverse: bool = False) -> list[Tensor]:
        """Run over time-major ``xs`` (T, B, din); returns hidden states indexed by time."""
        steps, batch = xs.shape[0], xs.shape[1]
        h_dim = self.hidden
        gx = F.linear(xs, self.weight_ih, self.bias_ih)
        h = Tensor(np.zeros((batch, h_dim)))
        outs: list[Tensor] = [None] * steps
        for t in (range(steps - 1, -1, -1) if reverse else range(steps)):
            gxt = gx[t]
            gh = F.linear(h, self.weight_hh, self.bias_hh)
            rz = F.sigmoid(gxt[:, : 2 * h_dim] + gh[:, : 2 * h_dim])
            r, z = rz[:, :h_dim], rz[:, h_dim:]
            n = F.tanh(gxt[:, 2 * h_dim :] + r * gh[:, 2 * h_dim :])
            h = n + z * (h - n)
            outs[t] = h
        return outs


class BiGRU(Module):
    """Stacked bidirectional GRU returning the top layer's final states.

    Output is ``concat(h_forward[T-1], h_backward[0])`` with shape (B, 2*hidden).
    """

    def __init__(self, din: int, hidden: int, layers: int, rng: np.random.Generator):
        super().__init__()
        self.hidden, self.num_layers = hidden, layers
        self.fwd = ModuleList()
        self.bwd = ModuleList()
        for i in range(layers):
            d = din if i == 0 else 2 * hidden
            self.fwd.append(GRULayer(d, hidden, rng))
            self.bwd.append(GRULayer(d, hidden, rng))

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise DimensionError(f"BiGRU input must be (B, T, din), got {x.shape}")
        if x.shape[1] < 1:
            raise DimensionError("BiGRU needs at least one time step (T axis is empty)")
        seq = x.transpose(1, 0, 2)
        for i, (fwd, bwd) in enumerate(zip(self.fwd, self.bwd)):
            f_out = fwd(seq)
            b_out = bwd(seq, reverse=True)
            if i + 1 < self.num_layers:
                seq = concat([stack(f_out), stack(b_out)], axis=2)
        return concat([f_out[-1], b_out[0]], axis=1)
