"""Decoupled continual training.

A learning step on domain ``s`` runs in phases, each with its own optimizer
and its own designated trainable set:

* ``initial`` (s = 1): backbone and specialist 1 on the domain's training split;
  backbone, attention and specialist 1 are frozen afterwards.
* ``incremental`` (s >= 2): a fresh specialist on features of the frozen backbone.
* ``router``: the router alone, on the current domain plus the replay buffer.
* ``basic``: the single-model baseline, every parameter trainable.
* ``adapter``: optional learned logit weights of the aggregate baseline.

Every phase records which parameters received a gradient so the freeze
contract can be audited after the fact.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.dataset import DomainDataset
from .data.replay import ReplayBuffer, router_training_set
from .errors import ContractError, UsageError
from .eval import AccuracyReport, evaluate, router_accuracy
from .model import _INIT_ROUTER, _INIT_ROUTER_ROW, SamoeModel, SemanticRouter, component_rng
from .nn import AdamW, Tensor, functional as F, no_grad
from .nn.layers import ModuleList

log = logging.getLogger(__name__)

PHASES = ("initial", "incremental", "router", "basic", "adapter")
_PHASE_TAG = {name: 0x51 + i for i, name in enumerate(PHASES)}

Recorder = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    specialist_epochs: int = 35
    router_epochs: int = 20
    batch_size: int = 64
    lr: float = 3e-4
    rho: float = 0.05
    seed: int = 0
    domain_order: tuple[int, ...] | None = None
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.specialist_epochs < 0 or self.router_epochs < 0:
            raise UsageError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise UsageError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.rho <= 1.0:
            raise UsageError(f"rho must lie in [0, 1], got {self.rho}")
        if self.weight_decay < 0:
            raise UsageError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.domain_order is not None:
            order = tuple(int(d) for d in self.domain_order)
            if len(set(order)) != len(order):
                raise UsageError(f"duplicate domain ids in domain_order {order}")
            object.__setattr__(self, "domain_order", order)


@dataclass
class EpochRecord:
    step: int
    domain: int
    phase: str
    epoch: int
    loss: float
    val_acc: float | None

    def record(self) -> dict:
        return {"record": "epoch", **asdict(self)}


@dataclass
class LearningStepReport:
    step: int
    domain: int
    epochs: list[EpochRecord] = field(default_factory=list)
    val_acc: float | None = None
    router_acc: float | None = None
    seconds: float = 0.0
    grad_params: dict[str, list[str]] = field(default_factory=dict)

    def losses(self, phase: str | None = None) -> list[float]:
        return [e.loss for e in self.epochs if phase is None or e.phase == phase]

    def merge(self, other: "LearningStepReport") -> None:
        self.epochs.extend(other.epochs)
        self.grad_params.update(other.grad_params)
        self.seconds += other.seconds
        if other.val_acc is not None:
            self.val_acc = other.val_acc
        if other.router_acc is not None:
            self.router_acc = other.router_acc

    def record(self) -> dict:
        return {
            "record": "step",
            "step": self.step,
            "domain": self.domain,
            "val_acc": self.val_acc,
            "router_acc": self.router_acc,
        }


@dataclass
class DomainSplits:
    train: DomainDataset
    val: DomainDataset
    test: DomainDataset

    @property
    def domain(self) -> int:
        return self.train.domain


@dataclass
class SequenceReport:
    variant: str
    model: SamoeModel
    steps: list[LearningStepReport]
    accuracy: list[AccuracyReport]
    buffer: ReplayBuffer | None

    @property
    def final(self) -> AccuracyReport:
        return self.accuracy[-1]

    def summary(self) -> dict:
        f = self.final
        return {
            "record": "summary",
            "variant": self.variant,
            "n_specialists": self.model.n_specialists,
            "domains": list(self.model.domain_ids),
            "final_balanced_acc": f.balanced,
            "per_domain_acc": {str(k): v for k, v in f.per_domain.items()},
            "router_acc": f.router,
            "new_acc": [a.new for a in self.accuracy],
            "avg_past_acc": [a.avg_past for a in self.accuracy],
        }


# ------------------------------------------------------------------ helpers
def _phase_rng(cfg: TrainConfig, step: int, phase: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, step, _PHASE_TAG[phase]]))


def _emit(recorder: Recorder | None, rec: dict) -> None:
    if recorder is not None:
        recorder(rec)


def _fit(
    model: SamoeModel,
    params,
    n: int,
    loss_fn: Callable[[np.ndarray], Tensor],
    epochs: int,
    cfg: TrainConfig,
    rng: np.random.Generator,
    report: LearningStepReport,
    phase: str,
    val_fn: Callable[[], float] | None = None,
    recorder: Recorder | None = None,
) -> None:
    """Shuffled mini-batch AdamW over ``n`` items; ``loss_fn(idx)`` builds the batch loss."""
    params = list(params)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    everything = list(model.named_parameters())
    touched: set[str] = set()
    for epoch in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            model.zero_grad()
            loss = loss_fn(idx)
            loss.backward()
            touched.update(name for name, p in everything if p.grad is not None)
            opt.step()
            total += loss.item() * len(idx)
        val = val_fn() if val_fn is not None else None
        rec = EpochRecord(report.step, report.domain, phase, epoch, total / n, val)
        report.epochs.append(rec)
        _emit(recorder, rec.record())
        log.info("step %d %s epoch %d loss %.4f val %s", report.step, phase, epoch, rec.loss, val)
    model.zero_grad()
    designated = {p.name for p in params}
    stray = touched - designated
    if stray:
        raise ContractError(f"{phase} phase sent gradients to non-designated parameters: {sorted(stray)[:5]}")
    report.grad_params[phase] = sorted(touched)


def _batches(n: int, size: int):
    for lo in range(0, n, size):
        yield slice(lo, min(n, lo + size))


def backbone_features(model: SamoeModel, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Channels-last features (n, T, L, 256) of the frozen backbone, eval mode."""
    model.backbone.eval()
    out = None
    with no_grad():
        for sl in _batches(len(x), batch_size):
            f = model.backbone.features(x[sl]).data
            if out is None:
                out = np.empty((len(x),) + f.shape[1:])
            out[sl] = f
    return out


def pooled_features(model: SamoeModel, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Length-averaged backbone output (n, T, 256), the router's input."""
    model.backbone.eval()
    out = np.empty((len(x), x.shape[2], model.backbone.blocks[-1].conv.weight.shape[0]))
    with no_grad():
        for sl in _batches(len(x), batch_size):
            out[sl] = model.pool_features(model.backbone_forward(x[sl])).data
    return out


def _specialist_accuracy(model: SamoeModel, k: int, feats: np.ndarray, labels: np.ndarray, bs: int) -> float:
    spec = model.specialists[k - 1]
    was_training = spec.training
    spec.eval()
    hits = 0
    with no_grad():
        for sl in _batches(len(feats), bs):
            hits += int((np.argmax(spec.from_features(Tensor(feats[sl])).data, axis=1) == labels[sl]).sum())
    spec.train(was_training)
    return hits / len(feats)


def _check_nonempty(d: DomainDataset, what: str) -> None:
    if len(d) == 0:
        raise UsageError(f"{what}: empty dataset for domain {d.domain}")


# ------------------------------------------------------------------- phases
def train_initial(
    model: SamoeModel,
    train: DomainDataset,
    cfg: TrainConfig,
    val: DomainDataset | None = None,
    recorder: Recorder | None = None,
) -> LearningStepReport:
    """Jointly fit backbone and specialist 1, then freeze them together with the attention pooling.

    Attention does not feed the classification loss, so it keeps its seeded
    values; the router later reads a fixed context.
    """
    if model.backbone_trained:
        raise UsageError("train_initial() on a model that is already trained")
    _check_nonempty(train, "train_initial")
    t0 = time.perf_counter()
    report = LearningStepReport(1, train.domain)
    spec = model.specialists[0]
    params = model.backbone.parameters() + spec.parameters()
    x, y = train.x, train.labels

    def loss_fn(idx):
        return F.cross_entropy(spec.from_features(model.backbone.features(x[idx])), y[idx])

    val_fn = None
    if val is not None and len(val):

        def val_fn():
            model.eval()
            feats = backbone_features(model, val.x, cfg.batch_size)
            acc = _specialist_accuracy(model, 1, feats, val.labels, cfg.batch_size)
            model.backbone.train()
            spec.train()
            return acc

    model.train()
    _fit(model, params, len(train), loss_fn, cfg.specialist_epochs, cfg, _phase_rng(cfg, 1, "initial"), report,
         "initial", val_fn, recorder)
    model.eval()
    model.backbone.freeze()
    if model.attention is not None:
        model.attention.freeze()
    spec.freeze()
    model.backbone_trained = True
    model.domain_ids.append(train.domain)
    if report.epochs:
        report.val_acc = report.epochs[-1].val_acc
    report.seconds = time.perf_counter() - t0
    return report


def train_incremental(
    model: SamoeModel,
    train: DomainDataset,
    cfg: TrainConfig,
    val: DomainDataset | None = None,
    recorder: Recorder | None = None,
) -> LearningStepReport:
    """Add a specialist for ``train.domain`` and fit only it on frozen backbone features."""
    if not model.backbone_trained or not model.backbone.frozen:
        raise ContractError("incremental training needs a trained, frozen backbone")
    if train.domain in model.domain_ids:
        raise UsageError(f"domain {train.domain} was already learned")
    _check_nonempty(train, "train_incremental")
    t0 = time.perf_counter()
    k = model.add_specialist()
    report = LearningStepReport(k, train.domain)
    spec = model.specialists[k - 1]
    feats = backbone_features(model, train.x, cfg.batch_size)
    y = train.labels
    vfeats = backbone_features(model, val.x, cfg.batch_size) if val is not None and len(val) else None

    def loss_fn(idx):
        return F.cross_entropy(spec.from_features(Tensor(feats[idx])), y[idx])

    val_fn = None if vfeats is None else (lambda: _specialist_accuracy(model, k, vfeats, val.labels, cfg.batch_size))
    model.eval()
    spec.train()
    _fit(model, spec.parameters(), len(train), loss_fn, cfg.specialist_epochs, cfg, _phase_rng(cfg, k, "incremental"),
         report, "incremental", val_fn, recorder)
    spec.eval()
    spec.freeze()
    model.domain_ids.append(train.domain)
    if report.epochs:
        report.val_acc = report.epochs[-1].val_acc
    report.seconds = time.perf_counter() - t0
    return report


def router_targets(model: SamoeModel, domains) -> np.ndarray:
    """1-based specialist index of each domain id, by arrival order."""
    lookup = {d: i + 1 for i, d in enumerate(model.domain_ids)}
    try:
        return np.array([lookup[int(d)] for d in domains], dtype=np.int64)
    except KeyError as exc:
        raise UsageError(f"domain {exc.args[0]} has no specialist") from exc


def update_router(
    model: SamoeModel,
    train: DomainDataset,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    eval_sets: Sequence[DomainDataset] = (),
    recorder: Recorder | None = None,
    step: int | None = None,
) -> LearningStepReport:
    """Fit the router on ``train`` plus the buffer, then add ``train`` to the buffer.

    ``eval_sets`` (held-out data of the domains seen so far) only feed the
    reported routing accuracy.
    """
    if model.router is None:
        raise UsageError(f"the {model.variant} variant has no router")
    if train.domain not in model.domain_ids:
        raise ContractError(f"no specialist trained for domain {train.domain}")
    k = model.domain_ids.index(train.domain) + 1
    if not model.specialists[k - 1].frozen:
        raise ContractError(f"specialist {k} must be trained and frozen before the router update")
    if model.router.n_out != model.n_specialists:
        raise ContractError("router width differs from the specialist count")
    if model.attention is not None and not all(p.frozen for p in model.attention.parameters()):
        raise ContractError("attention must be frozen before the router update")
    t0 = time.perf_counter()
    step = k if step is None else step
    report = LearningStepReport(step, train.domain)
    pairs = router_training_set(buffer, train)
    x = np.stack([s.x for s, _ in pairs])
    targets = router_targets(model, [d for _, d in pairs]) - 1
    pooled = pooled_features(model, x, cfg.batch_size)
    with no_grad():
        ctx = model.context(Tensor(pooled)).data

    def loss_fn(idx):
        return F.cross_entropy(model.router(Tensor(ctx[idx])), targets[idx])

    _fit(model, model.router.parameters(), len(pairs), loss_fn, cfg.router_epochs, cfg, _phase_rng(cfg, step, "router"), report,
         "router", None, recorder)
    buffer.update(train)
    if eval_sets:
        report.router_acc = router_accuracy(model, eval_sets).accuracy
    report.seconds = time.perf_counter() - t0
    return report


def train_basic(
    model: SamoeModel,
    train: DomainDataset,
    cfg: TrainConfig,
    val: DomainDataset | None = None,
    recorder: Recorder | None = None,
) -> LearningStepReport:
    """Continue training the single model on one new domain, nothing frozen."""
    if model.variant != "basic":
        raise UsageError("train_basic() needs the basic variant")
    _check_nonempty(train, "train_basic")
    if train.domain in model.domain_ids:
        raise UsageError(f"domain {train.domain} was already learned")
    t0 = time.perf_counter()
    step = len(model.domain_ids) + 1
    report = LearningStepReport(step, train.domain)
    spec = model.specialists[0]
    x, y = train.x, train.labels

    def loss_fn(idx):
        return F.cross_entropy(spec.from_features(model.backbone.features(x[idx])), y[idx])

    val_fn = None
    if val is not None and len(val):

        def val_fn():
            acc = _specialist_accuracy(model, 1, backbone_features(model, val.x, cfg.batch_size), val.labels,
                                       cfg.batch_size)
            model.train()
            return acc

    model.train()
    _fit(model, model.parameters(), len(train), loss_fn, cfg.specialist_epochs, cfg, _phase_rng(cfg, step, "basic"),
         report, "basic", val_fn, recorder)
    model.eval()
    model.backbone_trained = True
    model.domain_ids.append(train.domain)
    if report.epochs:
        report.val_acc = report.epochs[-1].val_acc
    report.seconds = time.perf_counter() - t0
    return report


def update_adapter(
    model: SamoeModel,
    train: DomainDataset,
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    recorder: Recorder | None = None,
) -> LearningStepReport:
    """Fit the per-specialist logit weights on ``train`` plus the buffer, then add ``train`` to the buffer."""
    if model.adapter_weights is None:
        raise UsageError("model has no learned adapter")
    t0 = time.perf_counter()
    step = model.n_specialists
    report = LearningStepReport(step, train.domain)
    pairs = router_training_set(buffer, train)
    x = np.stack([s.x for s, _ in pairs])
    y = np.array([s.label for s, _ in pairs], dtype=np.int64)
    feats = backbone_features(model, x, cfg.batch_size)
    model.eval()
    with no_grad():
        per = np.stack([
            np.concatenate([s.from_features(Tensor(feats[sl])).data for sl in _batches(len(x), cfg.batch_size)])
            for s in model.specialists
        ])  # (N, n, K)
    w = model.adapter_weights
    w.frozen = False

    def loss_fn(idx):
        return F.cross_entropy((Tensor(per[:, idx]) * w.reshape(-1, 1, 1)).sum(axis=0), y[idx])

    _fit(model, [w], len(pairs), loss_fn, cfg.router_epochs, cfg, _phase_rng(cfg, step, "adapter"), report,
         "adapter", None, recorder)
    w.frozen = True
    buffer.update(train)
    report.seconds = time.perf_counter() - t0
    return report


# ----------------------------------------------------------------- sequence
def order_domains(splits: Sequence[DomainSplits], order: Sequence[int] | None) -> list[DomainSplits]:
    ids = [s.domain for s in splits]
    if len(set(ids)) != len(ids):
        raise UsageError(f"duplicate domain ids {ids}")
    if order is None:
        return list(splits)
    by_id = {s.domain: s for s in splits}
    missing = [d for d in order if d not in by_id]
    if missing:
        raise UsageError(f"domain_order names unknown domains {missing}")
    return [by_id[d] for d in order]


def run_sequence(
    splits: Sequence[DomainSplits],
    cfg: TrainConfig,
    variant: str = "samoe",
    recorder: Recorder | None = None,
    context_mode: str = "attention",
    memo_adapter: str = "sum",
    on_step: Callable[[SamoeModel, LearningStepReport], None] | None = None,
) -> SequenceReport:
    """Train one variant across the domain sequence and evaluate after every step."""
    splits = order_domains(splits, cfg.domain_order)
    if not splits:
        raise UsageError("run_sequence() needs at least one domain")
    model = SamoeModel(variant=variant, seed=cfg.seed, context_mode=context_mode, memo_adapter=memo_adapter)
    buffer = ReplayBuffer(cfg.rho, seed=cfg.seed) if variant != "basic" else None
    steps: list[LearningStepReport] = []
    accuracy: list[AccuracyReport] = []
    for s, sp in enumerate(splits, start=1):
        if variant == "basic":
            report = train_basic(model, sp.train, cfg, sp.val, recorder)
        else:
            if s == 1:
                report = train_initial(model, sp.train, cfg, sp.val, recorder)
            else:
                report = train_incremental(model, sp.train, cfg, sp.val, recorder)
            if variant == "samoe":
                seen_val = [x.val for x in splits[:s] if len(x.val)]
                report.merge(update_router(model, sp.train, buffer, cfg, seen_val, recorder, step=s))
            elif model.adapter_weights is not None:
                report.merge(update_adapter(model, sp.train, buffer, cfg, recorder))
            else:
                buffer.update(sp.train)
        acc = evaluate(model, [x.test for x in splits[:s]], seed=cfg.seed)
        steps.append(report)
        accuracy.append(acc)
        _emit(recorder, {**report.record(), **acc.step_record()})
        log.info("step %d domain %d done in %.1fs", s, sp.domain, report.seconds)
        if on_step is not None:
            on_step(model, report)
    result = SequenceReport(variant, model, steps, accuracy, buffer)
    _emit(recorder, result.summary())
    return result


# --------------------------------------------------------------- ablations
def reset_router(model: SamoeModel) -> None:
    """Restore a single-output router to its seeded initial values."""
    if model.variant != "samoe":
        raise UsageError("only the samoe variant has a router")
    model.router = SemanticRouter(component_rng(model.seed, 1, _INIT_ROUTER), n_out=1)
    model.assign_names()


def replay_router(
    model: SamoeModel,
    trains: Sequence[DomainDataset],
    cfg: TrainConfig,
    eval_sets: Sequence[DomainDataset] = (),
    recorder: Recorder | None = None,
) -> tuple[ReplayBuffer, list[LearningStepReport]]:
    """Redo only the router updates of a finished run under ``cfg`` (e.g. another rho).

    Backbone, attention and specialists are reused as they are; the router
    restarts from its seeded initial values and is widened exactly as in the
    original run, so replaying the original ``cfg`` reproduces it.
    """
    trains = list(trains)
    if [d.domain for d in trains] != model.domain_ids:
        raise UsageError("replay_router() needs the training splits in the original arrival order")
    reset_router(model)
    buffer = ReplayBuffer(cfg.rho, seed=cfg.seed)
    reports = []
    for s, train in enumerate(trains, start=1):
        if s > 1:
            model.router.widen(component_rng(model.seed, s, _INIT_ROUTER_ROW))
            model.assign_names()
        seen = [e for e in eval_sets if e.domain in model.domain_ids[:s]]
        reports.append(_router_step(model, train, buffer, cfg, seen, recorder, s))
    return buffer, reports


def _router_step(model, train, buffer, cfg, eval_sets, recorder, s) -> LearningStepReport:
    # the router must see exactly the specialists that existed at step s
    n_now = model.router.n_out
    full_ids = model.domain_ids
    model.domain_ids = full_ids[:n_now]
    hidden = model.specialists
    try:
        model.specialists = ModuleList(list(hidden)[:n_now])
        return update_router(model, train, buffer, cfg, eval_sets, recorder, step=s)
    finally:
        model.specialists = hidden
        model.domain_ids = full_ids
