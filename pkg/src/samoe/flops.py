"""Analytic inference cost of one sample.

Counts are derived from layer hyperparameters, never from timing. One
multiply-add is two FLOPs. Bias additions, normalization, activations and
pooling are charged per output element as listed in :data:`FORMULAS`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .data.dataset import N_FRAMES, N_SUBCARRIERS, SAMPLE_SHAPE
from .errors import AccountingError, UsageError
from .model import VARIANTS, SamoeModel, SemanticRouter, SharedBackbone, Specialist, TemporalAttention
from .nn.layers import BatchNorm1d, BiGRU, Conv1d, ConvBlock, GRULayer, Linear, Module

FORMULAS = """\
conv1d       2*Cin*k*Cout*Lout + Cout*Lout        (per frame)
batch_norm   2*C*L                                (scale and shift, eval mode)
relu         C*L
maxpool1d    C*Lout
avg pool     C*Lout                               (adaptive and global)
linear       2*din*dout + dout
gru step     2*din*3h + 3h + 2*h*3h + 3h + 10h    (input and recurrent affine maps, gate arithmetic)
residual     d                                    (skip addition per router block)
attention    T*(2*d*dh + dh + dh + 2*dh) + T + 2*T*d   (scores, softmax, weighted sum)
mean context T*d
softmax      N                                    (router probabilities)
adapter      (N-1)*K sum, or N*K + (N-1)*K with learned weights
"""


@dataclass(frozen=True)
class LayerCost:
    component: str
    layer: str
    flops: int


@dataclass
class FlopReport:
    """Per-component counts (FLOPs per sample) and per-variant totals."""

    variant: str
    n_specialists: int
    backbone: int
    router_path: int
    specialist: int
    adapter: int
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def samoe_total(self) -> int:
        return self.backbone + self.router_path + self.specialist

    @property
    def basic_total(self) -> int:
        return self.backbone + self.specialist

    @property
    def memo_total(self) -> int:
        return self.backbone + self.n_specialists * self.specialist + self.adapter

    @property
    def total(self) -> int:
        return {"samoe": self.samoe_total, "basic": self.basic_total, "memo": self.memo_total}[self.variant]

    @property
    def router_share(self) -> float:
        return self.router_path / self.samoe_total

    def mflops(self) -> dict[str, float]:
        return {
            "backbone": self.backbone / 1e6,
            "router_path": self.router_path / 1e6,
            "specialist": self.specialist / 1e6,
            "adapter": self.adapter / 1e6,
            "samoe": self.samoe_total / 1e6,
            "basic": self.basic_total / 1e6,
            "memo": self.memo_total / 1e6,
        }

    def record(self) -> dict:
        return {
            "record": "flops",
            "variant": self.variant,
            "n_specialists": self.n_specialists,
            "unit": "MFLOP/sample",
            "total": self.total / 1e6,
            **self.mflops(),
        }


def conv1d_flops(cin: int, cout: int, k: int, lout: int, bias: bool = True) -> int:
    return 2 * cin * k * cout * lout + (cout * lout if bias else 0)


def linear_flops(din: int, dout: int, bias: bool = True) -> int:
    return 2 * din * dout + (dout if bias else 0)


def gru_step_flops(din: int, hidden: int) -> int:
    return linear_flops(din, 3 * hidden) + linear_flops(hidden, 3 * hidden) + 10 * hidden


def _out_len(length: int, k: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - k) // stride + 1


class _Counter:
    def __init__(self, component: str, layers: list[LayerCost]):
        self.component, self.layers, self.total = component, layers, 0

    def add(self, layer: str, flops: int) -> None:
        self.layers.append(LayerCost(self.component, layer, int(flops)))
        self.total += int(flops)


def _conv_stack(c: _Counter, module: Module, length: int, frames: int, name: str) -> tuple[int, int]:
    """Charge one conv module for ``frames`` frames; returns (channels, length) out."""
    if isinstance(module, ConvBlock):
        ch, length = _conv_stack(c, module.conv, length, frames, name + ".conv")
        _conv_stack(c, module.norm, length, frames, name + ".norm")
        c.add(name + ".relu", frames * ch * length)
        return ch, length
    if isinstance(module, Conv1d):
        cout, cin, k = module.weight.shape
        lout = _out_len(length, k, module.stride, module.padding)
        c.add(name, frames * conv1d_flops(cin, cout, k, lout))
        return cout, lout
    if isinstance(module, BatchNorm1d):
        ch = module.weight.shape[0]
        c.add(name, frames * 2 * ch * length)
        return ch, length
    raise AccountingError(f"no cost rule for layer {name} of type {type(module).__name__}")


def backbone_cost(backbone: SharedBackbone, c: _Counter) -> tuple[int, int]:
    if not isinstance(backbone, SharedBackbone):
        raise AccountingError(f"no cost rule for backbone type {type(backbone).__name__}")
    t = N_FRAMES
    ch, length = _conv_stack(c, backbone.stem, N_SUBCARRIERS, t, "stem")
    _conv_stack(c, backbone.stem_norm, length, t, "stem_norm")
    c.add("stem_relu", t * ch * length)
    length = _out_len(length, 3, 2, 1)
    c.add("stem_maxpool", t * ch * length)
    for i, block in enumerate(backbone.blocks):
        ch, length = _conv_stack(c, block, length, t, f"blocks.{i}")
    return ch, length


def specialist_cost(spec: Specialist, c: _Counter, length: int) -> None:
    if not isinstance(spec, Specialist):
        raise AccountingError(f"no cost rule for specialist type {type(spec).__name__}")
    t = N_FRAMES
    ch = None
    for i, block in enumerate(spec.blocks):
        ch, length = _conv_stack(c, block, length, t, f"blocks.{i}")
    c.add("spatial_pool", t * ch)
    gru = spec.gru
    if not isinstance(gru, BiGRU):
        raise AccountingError(f"no cost rule for sequence model {type(gru).__name__}")
    for i, (fwd, bwd) in enumerate(zip(gru.fwd, gru.bwd)):
        for tag, cell in (("fwd", fwd), ("bwd", bwd)):
            if not isinstance(cell, GRULayer):
                raise AccountingError(f"no cost rule for recurrent cell {type(cell).__name__}")
            din = cell.weight_ih.shape[1]
            c.add(f"gru.{tag}.{i}", t * gru_step_flops(din, cell.hidden))
    dout, din = spec.head.weight.shape
    c.add("head", linear_flops(din, dout))


def router_path_cost(model: SamoeModel, c: _Counter, channels: int, length: int, n: int) -> None:
    t = N_FRAMES
    c.add("global_pool", t * channels)
    att = model.attention
    if model.context_mode == "attention" and att is not None:
        if not isinstance(att, TemporalAttention):
            raise AccountingError(f"no cost rule for attention type {type(att).__name__}")
        dh, d = att.proj_weight.shape
        scores = t * (linear_flops(d, dh) + dh + 2 * dh)
        c.add("attention", scores + t + 2 * t * d)
    else:
        c.add("mean_context", t * channels)
    router = model.router
    if not isinstance(router, SemanticRouter):
        raise AccountingError(f"no cost rule for router type {type(router).__name__}")
    c.add("router.inp", _linear_cost(router.inp))
    for i, block in enumerate(router.blocks):
        dout = block.weight.shape[0]
        c.add(f"router.blocks.{i}", _linear_cost(block) + 2 * dout)
    c.add("router.head", linear_flops(router.head.weight.shape[1], n))
    c.add("router.softmax", n)


def _linear_cost(layer: Linear) -> int:
    if not isinstance(layer, Linear):
        raise AccountingError(f"no cost rule for layer type {type(layer).__name__}")
    dout, din = layer.weight.shape
    return linear_flops(din, dout)


def adapter_cost(n: int, n_classes: int, learned: bool) -> int:
    return (n - 1) * n_classes + (n * n_classes if learned else 0)


def count_flops(model: SamoeModel, variant: str | None = None, n: int | None = None) -> FlopReport:
    """Analytic per-sample cost of ``model`` as if it held ``n`` specialists.

    The router is charged as for a ``samoe`` model of the same architecture
    even when ``model`` has none, so the three variant totals are comparable.
    """
    variant = model.variant if variant is None else variant
    if variant not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    n = model.n_specialists if n is None else int(n)
    if n < 1:
        raise UsageError(f"specialist count must be >= 1, got {n}")
    layers: list[LayerCost] = []
    bb = _Counter("backbone", layers)
    channels, length = backbone_cost(model.backbone, bb)
    sp = _Counter("specialist", layers)
    specialist_cost(model.specialists[0], sp, length)
    rp = _Counter("router_path", layers)
    probe = model if model.router is not None else _reference_router(model)
    router_path_cost(probe, rp, channels, length, n)
    n_classes = model.specialists[0].head.weight.shape[0]
    adapter = adapter_cost(n, n_classes, model.memo_adapter == "learned")
    layers.append(LayerCost("adapter", "logit_sum", adapter))
    return FlopReport(variant, n, bb.total, rp.total, sp.total, adapter, layers)


_REFERENCE_CACHE: dict[tuple, SamoeModel] = {}


def _reference_router(model: SamoeModel) -> SamoeModel:
    key = (model.context_mode, model.attention_hidden)
    if key not in _REFERENCE_CACHE:
        _REFERENCE_CACHE[key] = SamoeModel(
            "samoe", seed=0, context_mode=model.context_mode, attention_hidden=model.attention_hidden
        )
    return _REFERENCE_CACHE[key]


def affine_fit_residual(ns, totals) -> float:
    """Largest deviation of ``totals`` from the line through the first and last point, in exact arithmetic."""
    ns, totals = [int(n) for n in ns], [int(t) for t in totals]
    if len(ns) < 3:
        return 0.0
    slope = Fraction(totals[-1] - totals[0], ns[-1] - ns[0])
    return float(max(abs(t - totals[0] - slope * (n - ns[0])) for n, t in zip(ns, totals)))


def formula_sheet() -> str:
    shape = "x".join(map(str, SAMPLE_SHAPE))
    return f"FLOPs per sample, input {shape}, multiply-add = 2\n" + FORMULAS
