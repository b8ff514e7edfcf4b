"""Network graph: shared backbone, temporal attention, router, specialists.

Specialist ids are 1-based in every public return value (``k* = 1..N``);
``model.specialists[k - 1]`` is specialist ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data.dataset import N_CLASSES, SAMPLE_SHAPE
from .errors import DimensionError, UsageError
from .nn import functional as F
from .nn.layers import BatchNorm1d, BiGRU, Conv1d, ConvBlock, Linear, Module, ModuleList
from .nn.tensor import Parameter, Tensor, concat, no_grad

FEATURE_DIM = 256
BACKBONE_CHANNELS = (64, 96, 144, 256)
SPECIALIST_CHANNELS = (128, 96, 64)
GRU_HIDDEN = 128
GRU_LAYERS = 2
ROUTER_BLOCKS = 3

# seed-sequence tags: every component draws from its own stream
_INIT_BACKBONE, _INIT_SPECIALIST, _INIT_ATTENTION, _INIT_ROUTER, _INIT_ROUTER_ROW, _INIT_ADAPTER = range(1, 7)


def component_rng(seed: int, step: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, tag]))


def _as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class SharedBackbone(Module):
    """Per-frame 1-D conv stack over subcarriers: (B, C, T, S) -> (B, T, 256, 29)."""

    def __init__(self, rng: np.random.Generator, in_channels: int = SAMPLE_SHAPE[0]):
        super().__init__()
        self.stem = Conv1d(in_channels, BACKBONE_CHANNELS[0], 7, rng, stride=2, padding=3, channels_last=True)
        self.stem_norm = BatchNorm1d(BACKBONE_CHANNELS[0], channels_last=True)
        self.blocks = ModuleList()
        cin = BACKBONE_CHANNELS[0]
        for cout in BACKBONE_CHANNELS:
            self.blocks.append(ConvBlock(cin, cout, rng, stride=1))
            cin = cout

    def features(self, x, trace: list | None = None) -> Tensor:
        """Channels-last features (B, T, L, 256); the layout used for training."""
        x = _as_input(x)
        if x.ndim != 4 or x.shape[1:] != SAMPLE_SHAPE:
            raise DimensionError(f"backbone input must be (B, {', '.join(map(str, SAMPLE_SHAPE))}), got {x.shape}")
        b, c, t, s = x.shape
        _record(trace, "input", x.shape[1:])
        _record(trace, "reshape", (t, c, s))
        h = x.transpose(0, 2, 3, 1).reshape(b * t, s, c)
        h = F.maxpool1d_nlc(F.relu(self.stem_norm(self.stem(h))), 3, stride=2, padding=1)
        _record(trace, "stem", (t, h.shape[2], h.shape[1]))
        for i, block in enumerate(self.blocks):
            h = block(h)
            _record(trace, f"block{i + 1}", (t, h.shape[2], h.shape[1]))
        return h.reshape(b, t, h.shape[1], h.shape[2])

    def forward(self, x, trace: list | None = None) -> Tensor:
        """Z with shape (B, T, 256, 29)."""
        return self.features(x, trace).transpose(0, 1, 3, 2)


def _record(trace, name, shape) -> None:
    if trace is not None:
        trace.append((name, tuple(shape)))


class TemporalAttention(Module):
    """Additive attention over time.

    Each frame gets the score ``score . tanh(proj_weight z_t + proj_bias)``; the
    context is the softmax-weighted sum of the frames.
    """

    def __init__(self, rng: np.random.Generator, dim: int = FEATURE_DIM, hidden: int = 128):
        super().__init__()
        bound = 1.0 / np.sqrt(dim)
        self.proj_weight = Parameter(rng.uniform(-bound, bound, (hidden, dim)))
        self.proj_bias = Parameter(rng.uniform(-bound, bound, (hidden,)))
        self.score = Parameter(rng.uniform(-1.0 / np.sqrt(hidden), 1.0 / np.sqrt(hidden), (hidden,)))

    def weights(self, z: Tensor) -> Tensor:
        """Attention weights over frames, shape (B, T)."""
        scores = F.linear(F.tanh(F.linear(z, self.proj_weight, self.proj_bias)), self.score.reshape(1, -1))
        return F.softmax(scores.reshape(z.shape[0], z.shape[1]), axis=1)

    def forward(self, z: Tensor) -> Tensor:
        w = self.weights(z)
        return (w.reshape(z.shape[0], z.shape[1], 1) * z).sum(axis=1)


class SemanticRouter(Module):
    """Residual gating network: input projection, residual ReLU blocks, linear head to N."""

    def __init__(self, rng: np.random.Generator, n_out: int = 1, dim: int = FEATURE_DIM, blocks: int = ROUTER_BLOCKS):
        super().__init__()
        self.inp = Linear(dim, dim, rng)
        self.blocks = ModuleList([Linear(dim, dim, rng) for _ in range(blocks)])
        self.head = Linear(dim, n_out, rng)

    @property
    def n_out(self) -> int:
        return self.head.weight.shape[0]

    def forward(self, c: Tensor) -> Tensor:
        h = self.inp(c)
        for block in self.blocks:
            h = h + F.relu(block(h))
        return self.head(h)

    def widen(self, rng: np.random.Generator) -> None:
        """Add one output row; existing rows are kept bit-for-bit."""
        w, b = self.head.weight, self.head.bias
        bound = 1.0 / np.sqrt(w.shape[1])
        new_w = np.vstack([w.data, rng.uniform(-bound, bound, (1, w.shape[1]))])
        new_b = np.concatenate([b.data, rng.uniform(-bound, bound, 1)])
        frozen = w.frozen
        self.head.weight = Parameter(new_w, name=w.name)
        self.head.bias = Parameter(new_b, name=b.name)
        self.head.weight.frozen = self.head.bias.frozen = frozen


class Specialist(Module):
    """Strided conv blocks, spatial pooling, Bi-GRU over frames, class head."""

    def __init__(self, rng: np.random.Generator, n_classes: int = N_CLASSES):
        super().__init__()
        self.blocks = ModuleList()
        cin = FEATURE_DIM
        for cout in SPECIALIST_CHANNELS:
            self.blocks.append(ConvBlock(cin, cout, rng, stride=2))
            cin = cout
        self.gru = BiGRU(cin, GRU_HIDDEN, GRU_LAYERS, rng)
        self.head = Linear(2 * GRU_HIDDEN, n_classes, rng)

    def forward(self, z, trace: list | None = None) -> Tensor:
        """Logits (B, K) from Z laid out as (B, T, 256, L)."""
        z = _as_input(z)
        if z.ndim != 4 or z.shape[2] != FEATURE_DIM:
            raise DimensionError(f"specialist input must be (B, T, {FEATURE_DIM}, L), got {z.shape}")
        return self.from_features(z.transpose(0, 1, 3, 2), trace)

    def from_features(self, f, trace: list | None = None) -> Tensor:
        """Logits from channels-last features (B, T, L, 256)."""
        f = _as_input(f)
        if f.ndim != 4 or f.shape[3] != FEATURE_DIM:
            raise DimensionError(f"specialist features must be (B, T, L, {FEATURE_DIM}), got {f.shape}")
        b, t, length, c = f.shape
        h = f.reshape(b * t, length, c)
        for i, block in enumerate(self.blocks):
            h = block(h)
            _record(trace, f"specialist_block{i + 5}", (t, h.shape[2], h.shape[1]))
        h = F.adaptive_avg_pool1d_nlc(h, 1).reshape(b, t, h.shape[2])
        _record(trace, "spatial_pool", h.shape[1:])
        h = self.gru(h)
        _record(trace, "bigru", h.shape[1:])
        logits = self.head(h)
        _record(trace, "head", logits.shape[1:])
        return logits


@dataclass
class Prediction:
    classes: np.ndarray
    specialist_ids: np.ndarray
    probs: np.ndarray


@dataclass
class ExecutionTrace:
    """Which specialists ran, and on how many samples, since the last reset."""

    calls: list[tuple[int, int]] = field(default_factory=list)

    def reset(self) -> None:
        self.calls.clear()

    def samples_per_specialist(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for k, n in self.calls:
            out[k] = out.get(k, 0) + n
        return out


VARIANTS = ("samoe", "basic", "memo")
CONTEXT_MODES = ("attention", "mean")
MEMO_ADAPTERS = ("sum", "learned")


class SamoeModel(Module):
    """Backbone plus a growable list of specialists.

    ``variant`` selects the inference path: ``samoe`` routes each sample to
    one specialist, ``memo`` sums the logits of all specialists, ``basic``
    keeps exactly one specialist and no router.
    """

    def __init__(
        self,
        variant: str = "samoe",
        seed: int = 0,
        context_mode: str = "attention",
        memo_adapter: str = "sum",
        attention_hidden: int = 128,
        n_classes: int = N_CLASSES,
    ):
        super().__init__()
        if variant not in VARIANTS:
            raise UsageError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if context_mode not in CONTEXT_MODES:
            raise UsageError(f"unknown context mode {context_mode!r}; expected one of {CONTEXT_MODES}")
        if memo_adapter not in MEMO_ADAPTERS:
            raise UsageError(f"unknown memo adapter {memo_adapter!r}; expected one of {MEMO_ADAPTERS}")
        self.variant = variant
        self.seed = seed
        self.context_mode = context_mode
        self.memo_adapter = memo_adapter
        self.attention_hidden = attention_hidden
        self.n_classes = n_classes
        self.backbone_trained = False
        self.domain_ids: list[int] = []
        self.trace = ExecutionTrace()

        self.backbone = SharedBackbone(component_rng(seed, 0, _INIT_BACKBONE))
        self.specialists = ModuleList([Specialist(component_rng(seed, 1, _INIT_SPECIALIST), n_classes)])
        self.attention = None
        self.router = None
        self.adapter_weights = None
        if variant == "samoe":
            if context_mode == "attention":
                self.attention = TemporalAttention(component_rng(seed, 0, _INIT_ATTENTION), hidden=attention_hidden)
            self.router = SemanticRouter(component_rng(seed, 1, _INIT_ROUTER), n_out=1)
        if variant == "memo" and memo_adapter == "learned":
            self.adapter_weights = Parameter(np.ones(1))
        self.assign_names()

    # ---------------------------------------------------------------- plumbing
    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    @property
    def n_specialists(self) -> int:
        return len(self.specialists)

    def config(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "context_mode": self.context_mode,
            "memo_adapter": self.memo_adapter,
            "attention_hidden": self.attention_hidden,
            "n_classes": self.n_classes,
            "n_specialists": self.n_specialists,
            "backbone_trained": self.backbone_trained,
            "domain_ids": list(self.domain_ids),
        }

    def components(self) -> dict[str, list[Parameter]]:
        """Parameter groups by role, used for freeze and gradient audits."""
        groups = {"backbone": self.backbone.parameters()}
        if self.attention is not None:
            groups["attention"] = self.attention.parameters()
        if self.router is not None:
            groups["router"] = self.router.parameters()
        for i, s in enumerate(self.specialists):
            groups[f"specialist{i + 1}"] = s.parameters()
        if self.adapter_weights is not None:
            groups["adapter"] = [self.adapter_weights]
        return groups

    def add_specialist(self) -> int:
        """Append a fresh specialist (and a fresh router output row); returns its id."""
        if not self.backbone_trained:
            raise UsageError("add_specialist() before initial domain training")
        if self.variant == "basic":
            raise UsageError("the basic model keeps exactly one specialist")
        k = self.n_specialists + 1
        self.specialists.append(Specialist(component_rng(self.seed, k, _INIT_SPECIALIST), self.n_classes))
        if self.router is not None:
            self.router.widen(component_rng(self.seed, k, _INIT_ROUTER_ROW))
        if self.adapter_weights is not None:
            frozen = self.adapter_weights.frozen
            self.adapter_weights = Parameter(np.append(self.adapter_weights.data, 1.0))
            self.adapter_weights.frozen = frozen
        self.assign_names()
        return k

    # ----------------------------------------------------------------- forward
    def backbone_forward(self, x, trace: list | None = None) -> Tensor:
        return self.backbone(x, trace=trace)

    @staticmethod
    def pool_features(z: Tensor) -> Tensor:
        """Global average over the length axis: (B, T, 256, L) -> (B, T, 256)."""
        return z.mean(axis=3)

    def context(self, pooled: Tensor) -> Tensor:
        if self.context_mode == "mean" or self.attention is None:
            return pooled.mean(axis=1)
        return self.attention(pooled)

    def router_logits(self, pooled: Tensor) -> Tensor:
        if self.router is None:
            raise UsageError(f"the {self.variant} variant has no router")
        return self.router(self.context(pooled))

    def route(self, context) -> tuple[np.ndarray, np.ndarray]:
        """Router probabilities (B, N) and 1-based argmax specialist ids for a batch of context vectors."""
        if self.router is None:
            raise UsageError(f"the {self.variant} variant has no router")
        if self.router.n_out < 1:
            raise UsageError("router has no outputs")
        logits = self.router(_as_input(context))
        probs = F.softmax(logits, axis=1).data
        return probs, np.argmax(logits.data, axis=1) + 1

    def specialist_forward(self, k: int, z) -> Tensor:
        if not 1 <= k <= self.n_specialists:
            raise UsageError(f"specialist {k} does not exist (N = {self.n_specialists})")
        self.trace.calls.append((k, int(z.shape[0])))
        return self.specialists[k - 1](z)

    def memo_logits(self, z) -> Tensor:
        per = [self.specialist_forward(k, z) for k in range(1, self.n_specialists + 1)]
        if self.adapter_weights is None:
            out = per[0]
            for extra in per[1:]:
                out = out + extra
            return out
        stacked = concat([p.reshape(1, *p.shape) for p in per], axis=0)
        return (stacked * self.adapter_weights.reshape(-1, 1, 1)).sum(axis=0)

    # --------------------------------------------------------------- inference
    def _require_trained(self) -> None:
        if not self.backbone_trained:
            raise UsageError("model has no trained specialist yet")

    def predict(self, x, batch_size: int = 64) -> Prediction:
        """Route each sample and run only its selected specialist."""
        self._require_trained()
        self.eval()
        classes, ids, probs = [], [], []
        with no_grad():
            for lo in range(0, len(x), batch_size):
                z = self.backbone_forward(x[lo : lo + batch_size])
                if self.router is None:
                    p = np.ones((z.shape[0], 1))
                    k = np.ones(z.shape[0], dtype=np.int64)
                else:
                    p, k = self.route(self.context(self.pool_features(z)))
                y = np.empty(z.shape[0], dtype=np.int64)
                for spec_id in np.unique(k):
                    rows = np.flatnonzero(k == spec_id)
                    logits = self.specialist_forward(int(spec_id), Tensor(z.data[rows]))
                    y[rows] = np.argmax(logits.data, axis=1)
                classes.append(y)
                ids.append(k)
                probs.append(p)
        return Prediction(np.concatenate(classes), np.concatenate(ids), np.concatenate(probs))

    def predict_with(self, x, specialist_ids, batch_size: int = 64) -> np.ndarray:
        """Classify with forced specialist choices (1-based ids, one per sample)."""
        self._require_trained()
        self.eval()
        specialist_ids = np.asarray(specialist_ids)
        out = np.empty(len(x), dtype=np.int64)
        with no_grad():
            for lo in range(0, len(x), batch_size):
                z = self.backbone_forward(x[lo : lo + batch_size])
                k = specialist_ids[lo : lo + batch_size]
                for spec_id in np.unique(k):
                    rows = np.flatnonzero(k == spec_id)
                    logits = self.specialist_forward(int(spec_id), Tensor(z.data[rows]))
                    out[lo + rows] = np.argmax(logits.data, axis=1)
        return out

    def memo_predict(self, x, batch_size: int = 64) -> np.ndarray:
        """Aggregate the logits of every specialist and take the argmax."""
        self._require_trained()
        self.eval()
        out = []
        with no_grad():
            for lo in range(0, len(x), batch_size):
                z = self.backbone_forward(x[lo : lo + batch_size])
                out.append(np.argmax(self.memo_logits(z).data, axis=1))
        return np.concatenate(out)

    def classify(self, x, batch_size: int = 64) -> np.ndarray:
        """Class predictions along this model's own inference path."""
        if self.variant == "memo":
            return self.memo_predict(x, batch_size)
        return self.predict(x, batch_size).classes

    def shape_ladder(self, x) -> list[tuple[str, tuple]]:
        """Per-sample output shape of every stage for a probe batch."""
        trace: list = []
        self.eval()
        with no_grad():
            z = self.backbone_forward(x, trace=trace)
            pooled = self.pool_features(z)
            trace.append(("global_pool", pooled.shape[1:]))
            if self.router is not None:
                c = self.context(pooled)
                trace.append(("context", c.shape[1:]))
                trace.append(("router", self.router(c).shape[1:]))
            self.specialists[0](z, trace=trace)
        return trace


def basic_cl_model(seed: int = 0, n_classes: int = N_CLASSES) -> SamoeModel:
    """Backbone plus one specialist, no router; every parameter stays trainable."""
    return SamoeModel(variant="basic", seed=seed, n_classes=n_classes)
