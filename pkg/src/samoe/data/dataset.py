"""CSI samples, per-domain datasets and stratified splitting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import SplitError, UsageError

N_CHANNELS = 3  # Ntx x Nrx antenna pairs
N_FRAMES = 10
N_SUBCARRIERS = 114
N_CLASSES = 27
SAMPLE_SHAPE = (N_CHANNELS, N_FRAMES, N_SUBCARRIERS)


@dataclass(frozen=True)
class CsiSample:
    """One activity window: float32 amplitudes of shape (C, T, S)."""

    x: np.ndarray
    label: int
    domain: int

    def __post_init__(self):
        if self.x.shape != SAMPLE_SHAPE:
            raise UsageError(f"CSI sample must have shape {SAMPLE_SHAPE}, got {self.x.shape}")
        if not 0 <= self.label < N_CLASSES:
            raise UsageError(f"label {self.label} outside [0, {N_CLASSES})")
        if self.domain < 1:
            raise UsageError(f"domain id must be >= 1, got {self.domain}")


@dataclass
class DomainDataset:
    domain: int
    samples: list[CsiSample]
    split: str = "full"
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for s in self.samples:
            if s.domain != self.domain:
                raise UsageError(f"sample from domain {s.domain} in dataset for domain {self.domain}")

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.split == other.split
            and self.seed == other.seed
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.x, other.x)
        )

    @property
    def x(self) -> np.ndarray:
        """Stacked inputs, (n, C, T, S) float32."""
        if "x" not in self._cache:
            if self.samples:
                self._cache["x"] = np.stack([s.x for s in self.samples])
            else:
                self._cache["x"] = np.zeros((0,) + SAMPLE_SHAPE, dtype=np.float32)
        return self._cache["x"]

    @property
    def labels(self) -> np.ndarray:
        if "y" not in self._cache:
            self._cache["y"] = np.array([s.label for s in self.samples], dtype=np.int64)
        return self._cache["y"]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES)

    def subset(self, indices, split: str | None = None) -> "DomainDataset":
        return DomainDataset(
            self.domain, [self.samples[i] for i in indices], split or self.split, self.seed
        )


def split(d: DomainDataset, val_frac: float, test_frac: float, seed: int):
    """Class-stratified train/val/test split.

    Per class with ``n`` samples, ``round(n * val_frac)`` go to validation and
    ``round(n * test_frac)`` to test (each at least one), the rest to train.
    """
    if not (0 < val_frac < 1 and 0 < test_frac < 1) or val_frac + test_frac >= 1:
        raise SplitError(f"need fractions in (0, 1) summing below 1, got {val_frac} + {test_frac}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, d.domain]))
    labels = d.labels
    parts: dict[str, list[int]] = {"train": [], "val": [], "test": []}
    for y in range(N_CLASSES):
        idx = np.flatnonzero(labels == y)
        if len(idx) == 0:
            continue
        if len(idx) < 3:
            raise SplitError(f"class {y} in domain {d.domain} has {len(idx)} samples; need at least 3")
        idx = rng.permutation(idx)
        n_val = max(1, int(np.floor(len(idx) * val_frac + 0.5)))
        n_test = max(1, int(np.floor(len(idx) * test_frac + 0.5)))
        if n_val + n_test >= len(idx):
            raise SplitError(f"class {y} in domain {d.domain} leaves no training samples")
        parts["val"].extend(idx[:n_val])
        parts["test"].extend(idx[n_val : n_val + n_test])
        parts["train"].extend(idx[n_val + n_test :])
    out = tuple(d.subset(sorted(parts[name]), split=name) for name in ("train", "val", "test"))
    missing = np.flatnonzero(out[0].class_counts() == 0)
    if len(missing):
        raise SplitError(f"train split of domain {d.domain} lacks classes {missing.tolist()}")
    return out
