"""Accuracy metrics: per-domain, past/new, balanced pooled, routing."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .data.dataset import N_CLASSES, DomainDataset
from .data.replay import balanced_sample
from .errors import UsageError
from .model import SamoeModel


@dataclass
class AccuracyReport:
    """Accuracies after a learning step; domains listed in arrival order."""

    per_domain: dict[int, float]
    avg_past: float | None
    new: float
    balanced: float
    router: float | None = None

    def step_record(self) -> dict:
        return {
            "per_domain_acc": {str(k): v for k, v in self.per_domain.items()},
            "avg_past_acc": self.avg_past,
            "new_acc": self.new,
            "balanced_acc": self.balanced,
            "router_test_acc": self.router,
        }


@dataclass
class RouterReport:
    accuracy: float
    confusion: np.ndarray  # rows: true specialist, cols: chosen specialist
    latest_share: float


def balanced_indices(sets: Sequence[DomainDataset], seed: int = 0) -> list[np.ndarray]:
    """Per-set indices with equal counts per domain and per-class counts within one of each other."""
    if not sets:
        raise UsageError("no test sets given")
    n = min(len(d) for d in sets)
    out = []
    for d in sets:
        if len(d) == n and _class_spread(d.labels) <= 1:
            out.append(np.arange(n))
        else:
            rng = np.random.default_rng(np.random.SeedSequence([seed, d.domain, 0xBA1]))
            out.append(np.asarray(balanced_sample(d, n, rng), dtype=np.int64))
    return out


def _class_spread(labels: np.ndarray) -> int:
    counts = np.bincount(labels, minlength=N_CLASSES)
    return int(counts.max() - counts.min())


def _check_sets(model: SamoeModel, sets: Sequence[DomainDataset]) -> None:
    if not sets:
        raise UsageError("evaluation needs at least one test split")
    for d in sets:
        if len(d) == 0:
            raise UsageError(f"test split for domain {d.domain} is empty")
        if d.domain not in model.domain_ids:
            raise UsageError(f"domain {d.domain} has not been learned by this model")


def _truth_ids(model: SamoeModel, d: DomainDataset) -> np.ndarray:
    return np.full(len(d), model.domain_ids.index(d.domain) + 1, dtype=np.int64)


def evaluate(model: SamoeModel, sets: Sequence[DomainDataset], seed: int = 0, variant: str | None = None) -> AccuracyReport:
    """Accuracy of ``model`` on held-out splits of the domains seen so far.

    ``sets`` follow the arrival order; the last one is the newest domain.
    """
    _check_sets(model, sets)
    variant = model.variant if variant is None else variant
    preds, routes = [], []
    for d in sets:
        if variant == "memo":
            preds.append(model.memo_predict(d.x))
            routes.append(None)
        else:
            p = model.predict(d.x)
            preds.append(p.classes)
            routes.append(p.specialist_ids)
    per_domain = {d.domain: float((y == d.labels).mean()) for d, y in zip(sets, preds)}
    accs = list(per_domain.values())
    avg_past = float(np.mean(accs[:-1])) if len(accs) > 1 else None
    picks = balanced_indices(sets, seed)
    hits = sum(int((y[i] == d.labels[i]).sum()) for d, y, i in zip(sets, preds, picks))
    balanced = hits / sum(len(i) for i in picks)
    router = None
    if variant == "samoe" and model.router is not None:
        ok = sum(int((r[i] == _truth_ids(model, d)[i]).sum()) for d, r, i in zip(sets, routes, picks))
        router = ok / sum(len(i) for i in picks)
    return AccuracyReport(per_domain, avg_past, accs[-1], balanced, router)


def router_accuracy(model: SamoeModel, sets: Sequence[DomainDataset], seed: int = 0) -> RouterReport:
    """Fraction of balanced held-out samples routed to their own domain's specialist."""
    _check_sets(model, sets)
    picks = balanced_indices(sets, seed)
    n = model.router.n_out if model.router is not None else 1
    confusion = np.zeros((n, n), dtype=np.int64)
    for d, idx in zip(sets, picks):
        chosen = model.predict(d.x[idx]).specialist_ids
        np.add.at(confusion, (_truth_ids(model, d)[idx] - 1, chosen - 1), 1)
    total = confusion.sum()
    return RouterReport(
        accuracy=float(np.trace(confusion) / total),
        confusion=confusion,
        latest_share=float(confusion[:, -1].sum() / total),
    )


def oracle_routing_gap(model: SamoeModel, sets: Sequence[DomainDataset], seed: int = 0) -> float:
    """Balanced accuracy with ground-truth routing minus balanced accuracy with learned routing."""
    _check_sets(model, sets)
    picks = balanced_indices(sets, seed)
    forced = learned = total = 0
    for d, idx in zip(sets, picks):
        x, y = d.x[idx], d.labels[idx]
        forced += int((model.predict_with(x, _truth_ids(model, d)[idx]) == y).sum())
        learned += int((model.predict(x).classes == y).sum())
        total += len(idx)
    return (forced - learned) / total
