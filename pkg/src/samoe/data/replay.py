"""Class-balanced replay cache used only for router calibration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from .dataset import N_CLASSES, CsiSample, DomainDataset


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def balanced_sample(d: DomainDataset, n: int, rng: np.random.Generator) -> list[int]:
    """Pick ``n`` indices of ``d`` whose per-class counts differ by at most one.

    Classes that receive the extra sample are chosen at random; a class
    that runs out of samples hands its quota to the others.
    """
    if n > len(d):
        raise UsageError(f"cannot draw {n} samples from a dataset of {len(d)}")
    by_class = [list(rng.permutation(np.flatnonzero(d.labels == y))) for y in range(N_CLASSES)]
    quota = np.zeros(N_CLASSES, dtype=int)
    order = rng.permutation(N_CLASSES)
    remaining = n
    while remaining:
        progressed = False
        for y in order:
            if remaining and quota[y] < len(by_class[y]):
                quota[y] += 1
                remaining -= 1
                progressed = True
        if not progressed:  # pragma: no cover - guarded by n <= len(d)
            break
    picked = [i for y in range(N_CLASSES) for i in by_class[y][: quota[y]]]
    return sorted(int(i) for i in picked)


@dataclass
class ReplayBuffer:
    """Fraction ``rho`` of every past domain's training split.

    Entries are ``(sample, domain_id)``; the domain id is the router target.
    """

    rho: float
    seed: int = 0
    entries: list[tuple[CsiSample, int]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise UsageError(f"rho must lie in [0, 1], got {self.rho}")
        self._domains: list[int] = []

    @property
    def domains(self) -> list[int]:
        return list(self._domains)

    def __len__(self) -> int:
        return len(self.entries)

    def domain_counts(self) -> dict[int, int]:
        counts = {d: 0 for d in self._domains}
        for _, d in self.entries:
            counts[d] += 1
        return counts

    def update(self, d: DomainDataset) -> int:
        """Add ``round(rho * |d|)`` class-balanced samples of ``d``; returns the count added."""
        if d.domain in self._domains:
            raise UsageError(f"domain {d.domain} is already in the replay buffer")
        n = round_half_up(self.rho * len(d))
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, d.domain, 0xB0FF]))
        idx = balanced_sample(d, n, rng) if n else []
        self.entries.extend((d.samples[i], d.domain) for i in idx)
        self._domains.append(d.domain)
        return n


def buffer_update(b: ReplayBuffer, d: DomainDataset) -> int:
    return b.update(d)


def router_training_set(b: ReplayBuffer, current: DomainDataset) -> list[tuple[CsiSample, int]]:
    """Current-domain samples labelled with their domain, plus every buffer entry."""
    if current.domain in b.domains:
        raise UsageError(f"domain {current.domain} is already in the replay buffer")
    return [(s, current.domain) for s in current.samples] + list(b.entries)
