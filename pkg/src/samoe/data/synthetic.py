"""Synthetic multipath CSI domains.

Each domain is a room: a fixed set of static propagation paths plus one
human-reflected path whose gain and path-length trajectory follow a
per-activity motion template. The channel frequency response on subcarrier
``k`` at frame ``t`` for antenna pair ``c`` is

    H = sum_p g_p exp(-j 2 pi f_k tau_p) exp(j pi c sin(theta_p))
        + a_y(t) exp(-j 2 pi f_k (tau_h + d_y(t) / c0)) exp(j pi c sin(theta_h))

and the emitted sample is ``|H| + noise`` clipped at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import SpecError
from .dataset import N_CHANNELS, N_CLASSES, N_FRAMES, N_SUBCARRIERS, CsiSample, DomainDataset

SPEED_OF_LIGHT = 299_792_458.0
CARRIER_HZ = 5.32e9
SUBCARRIER_SPACING_HZ = 312.5e3

_SUB_OFFSETS = (np.arange(N_SUBCARRIERS) - (N_SUBCARRIERS - 1) / 2) * SUBCARRIER_SPACING_HZ
_FREQS = CARRIER_HZ + _SUB_OFFSETS
_FRAME_PHASE = 2 * np.pi * np.arange(N_FRAMES) / N_FRAMES


@dataclass(frozen=True, eq=False)
class SyntheticDomainSpec:
    """Geometry and activity templates of one synthetic room.

    Arrays with a leading ``paths`` axis describe static paths; arrays with a
    leading ``N_CLASSES`` axis are motion templates, one row per activity
    (two displacement harmonics and one gain harmonic).
    """

    domain: int
    seed: int
    delays_ns: np.ndarray
    gains: np.ndarray
    path_phases: np.ndarray
    angles: np.ndarray
    human_delay_ns: float
    human_angle: float
    motion_amp_cm: np.ndarray
    motion_freq: np.ndarray
    motion_phase: np.ndarray
    gain_base: np.ndarray
    gain_depth: np.ndarray
    gain_freq: np.ndarray
    gain_phase: np.ndarray
    noise: float = 0.02
    jitter: float = 0.04

    @property
    def paths(self) -> int:
        return len(self.delays_ns)

    @classmethod
    def from_seed(cls, domain: int, seed: int, paths: int = 6, noise: float = 0.02, jitter: float = 0.04):
        """Draw a room and its activity templates from ``(seed, domain)``."""
        if paths < 2:
            raise SpecError(f"multipath needs at least 2 paths, got {paths}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, domain, 0x5EED]))
        delays = np.sort(rng.uniform(5.0, 160.0, paths))
        # strongest path first, exponential power decay with delay
        gains = np.exp(-(delays - delays[0]) / 60.0) * rng.uniform(0.6, 1.0, paths)
        gains = gains / np.sqrt((gains**2).sum())
        return cls(
            domain=domain,
            seed=seed,
            delays_ns=delays,
            gains=gains,
            path_phases=rng.uniform(0, 2 * np.pi, paths),
            angles=rng.uniform(-np.pi / 2, np.pi / 2, paths),
            human_delay_ns=float(rng.uniform(20.0, 80.0)),
            human_angle=float(rng.uniform(-np.pi / 2, np.pi / 2)),
            motion_amp_cm=rng.uniform(0.5, 3.0, (N_CLASSES, 2)),
            motion_freq=rng.uniform(0.3, 2.5, (N_CLASSES, 2)),
            motion_phase=rng.uniform(0, 2 * np.pi, (N_CLASSES, 2)),
            gain_base=rng.uniform(0.25, 0.6, N_CLASSES),
            gain_depth=rng.uniform(0.0, 0.6, N_CLASSES),
            gain_freq=rng.uniform(0.3, 2.5, N_CLASSES),
            gain_phase=rng.uniform(0, 2 * np.pi, N_CLASSES),
            noise=noise,
            jitter=jitter,
        )

    def with_delays(self, delays_ns) -> "SyntheticDomainSpec":
        return replace(self, delays_ns=np.asarray(delays_ns, dtype=np.float64))

    def validate(self) -> None:
        if self.paths < 2:
            raise SpecError(f"multipath needs at least 2 paths, got {self.paths}")
        if self.noise < 0:
            raise SpecError(f"noise level must be >= 0, got {self.noise}")
        if self.jitter < 0:
            raise SpecError(f"jitter must be >= 0, got {self.jitter}")
        for name in ("gains", "path_phases", "angles"):
            if len(getattr(self, name)) != self.paths:
                raise SpecError(f"{name} must have one entry per path")


def _steering(angle) -> np.ndarray:
    """Half-wavelength array phase for each antenna pair, shape (C, ...)."""
    return np.exp(1j * np.pi * np.arange(N_CHANNELS).reshape((-1,) + (1,) * np.ndim(angle)) * np.sin(angle))


def static_response(spec: SyntheticDomainSpec) -> np.ndarray:
    """Complex static CFR, shape (C, S)."""
    per_path = (
        spec.gains[:, None]
        * np.exp(1j * spec.path_phases)[:, None]
        * np.exp(-2j * np.pi * _FREQS[None, :] * spec.delays_ns[:, None] * 1e-9)
    )  # (P, S)
    steer = _steering(spec.angles)  # (C, P)
    return steer @ per_path


def _human_response(spec: SyntheticDomainSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    """Complex activity-path CFR for one sample, shape (C, T, S)."""
    j = spec.jitter
    ph = spec.motion_phase[label] + rng.normal(0.0, j, 2)
    amp = spec.motion_amp_cm[label] * (1.0 + rng.normal(0.0, j / 3, 2))
    disp_cm = (amp[:, None] * np.sin(spec.motion_freq[label][:, None] * _FRAME_PHASE + ph[:, None])).sum(0)
    g_ph = spec.gain_phase[label] + rng.normal(0.0, j)
    gain = spec.gain_base[label] * (1.0 + spec.gain_depth[label] * np.sin(spec.gain_freq[label] * _FRAME_PHASE + g_ph))
    delay_s = spec.human_delay_ns * 1e-9 + disp_cm[:, None] * 1e-2 / SPEED_OF_LIGHT  # (T, 1)
    path = gain[:, None] * np.exp(-2j * np.pi * _FREQS[None, :] * delay_s)  # (T, S)
    return _steering(spec.human_angle)[:, None, None] * path[None]


def generate_domain(spec: SyntheticDomainSpec, n_per_class: int) -> DomainDataset:
    """Draw ``n_per_class`` samples for every activity class of one domain.

    Deterministic in ``(spec, n_per_class)``; samples are ordered class-major.
    """
    spec.validate()
    if n_per_class < 1:
        raise SpecError(f"n_per_class must be >= 1, got {n_per_class}")
    static = static_response(spec)[:, None, :]  # (C, 1, S)
    samples = []
    for y in range(N_CLASSES):
        for i in range(n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, spec.domain, y, i]))
            h = static + _human_response(spec, y, rng)
            amp = np.abs(h) + rng.normal(0.0, spec.noise, h.shape) if spec.noise > 0 else np.abs(h)
            samples.append(CsiSample(np.clip(amp, 0.0, None).astype(np.float32), y, spec.domain))
    return DomainDataset(spec.domain, samples, split="full", seed=spec.seed)


def separation_stats(a: DomainDataset, b: DomainDataset) -> tuple[np.ndarray, float]:
    """Cross-domain class-mean distances and the within-domain spread.

    Returns per-class L2 distances between class-mean tensors of ``a`` and
    ``b`` and the larger of the two domains' within-class RMS L2 deviation
    from the class mean.
    """
    dists = np.zeros(N_CLASSES)
    spreads = []
    for d in (a, b):
        dev2 = []
        for y in range(N_CLASSES):
            xs = d.x[d.labels == y].astype(np.float64).reshape(-1, np.prod(d.x.shape[1:]))
            dev2.append(((xs - xs.mean(0)) ** 2).sum(1))
        spreads.append(float(np.sqrt(np.concatenate(dev2).mean())))
    for y in range(N_CLASSES):
        ma = a.x[a.labels == y].astype(np.float64).mean(0)
        mb = b.x[b.labels == y].astype(np.float64).mean(0)
        dists[y] = np.linalg.norm(ma - mb)
    return dists, max(spreads)
