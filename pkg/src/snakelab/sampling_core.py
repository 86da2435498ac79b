"""Grid configuration and the low-level samplers everything else builds on."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError, NotAbsorbed
from .streams import RandomStream, new_stream  # noqa: F401  (re-exported)

__all__ = [
    "GridConfig",
    "PointSet",
    "new_stream",
    "RandomStream",
    "sample_excursion_lifetime",
    "sample_stable_jumps",
    "sample_brownian_label_refresh",
    "JUMP_DENSITY_COEFF",
    "jump_tail_mass",
]

# density coefficient of the branching jump measure c * z^(-5/2) dz
JUMP_DENSITY_COEFF = math.sqrt(3.0 / (2.0 * math.pi))

DEFAULT_STEP_CAP = 20_000_000


@dataclass(frozen=True)
class GridConfig:
    """Lattice scales for tree and label discretisation.

    One lattice step moves the lifetime by ``delta`` and consumes ``delta**2``
    of traversal time; label increments per lifetime step have standard
    deviation ``sqrt(delta)``, so label variance accrues at unit rate per unit
    of lifetime.
    """

    delta: float = 0.01

    def __post_init__(self):
        if not (self.delta > 0.0) or not math.isfinite(self.delta):
            raise ConfigurationError(f"delta must be positive, got {self.delta}")

    @property
    def time_step(self) -> float:
        return self.delta * self.delta

    @property
    def label_sigma(self) -> float:
        return math.sqrt(self.delta)


@dataclass
class PointSet:
    """Marked point sample on [0, horizon): jump times and sizes."""

    times: np.ndarray
    marks: np.ndarray
    horizon: float
    cutoff: float
    rate_scale: float

    def __post_init__(self):
        if self.times.shape != self.marks.shape:
            raise ConfigurationError("times and marks must align")


def jump_tail_mass(cutoff: float, rate_scale: float = 1.0) -> float:
    """Total intensity of jumps with size >= cutoff."""
    if cutoff <= 0:
        raise DomainError("cutoff must be positive")
    return rate_scale * JUMP_DENSITY_COEFF * (2.0 / 3.0) * cutoff ** -1.5


def sample_excursion_lifetime(
    stream: RandomStream,
    cfg: GridConfig,
    threshold: float,
    step_cap: int = DEFAULT_STEP_CAP,
) -> np.ndarray:
    """Lifetime path of one excursion conditioned to exceed ``threshold``.

    Sampled as a lattice walk via a first-passage decomposition: tilted ascent
    to the threshold height, then a free walk to absorption.  Under the
    excursion normalisation, the event sampled here carries total mass
    1 / (2 * threshold).

    Returns lifetimes as floats (multiples of ``cfg.delta``), starting and
    ending at zero.
    """
    m = _threshold_steps(cfg, threshold)
    heights, complete = _kernels.sample_excursion_heights(
        stream.key64("lifetime-walk"), m, step_cap
    )
    if not complete:
        raise NotAbsorbed(step_cap * cfg.time_step, "excursion exceeded step cap")
    return heights.astype(np.float64) * cfg.delta


def _threshold_steps(cfg: GridConfig, threshold: float) -> int:
    if threshold < cfg.delta:
        raise ConfigurationError(
            f"threshold {threshold} is below grid resolution delta={cfg.delta}"
        )
    return int(round(threshold / cfg.delta))


def sample_stable_jumps(
    stream: RandomStream,
    rate_scale: float,
    cutoff: float,
    horizon: float,
) -> PointSet:
    """Poisson sample of the jump measure above ``cutoff`` on [0, horizon).

    Sizes follow the normalised tail by inverse transform, z = cutoff *
    u^(-2/3); times are uniform.  Jumps below the cutoff are not represented
    here (callers model them with a matched-variance Gaussian).
    """
    if cutoff <= 0 or not math.isfinite(cutoff):
        raise DomainError("cutoff must be positive and finite")
    if horizon <= 0 or not math.isfinite(horizon):
        raise DomainError("horizon must be positive and finite")
    if rate_scale <= 0:
        raise DomainError("rate_scale must be positive")
    gen = stream.generator("stable-jumps")
    n = gen.poisson(jump_tail_mass(cutoff, rate_scale) * horizon)
    times = np.sort(gen.uniform(0.0, horizon, size=n))
    u = gen.random(n)
    marks = cutoff * u ** (-2.0 / 3.0)
    return PointSet(times, marks, horizon, cutoff, rate_scale)


def sample_brownian_label_refresh(
    stream: RandomStream,
    cfg: GridConfig,
    lifetimes: np.ndarray,
    x0: float = 0.0,
) -> np.ndarray:
    """Fresh tip labels conditionally on a fixed lifetime path.

    The conditional law of the tips given the lifetimes is Gaussian with
    covariance min-lifetime-between; stacking one independent increment per
    up-step realises it exactly on the lattice.
    """
    heights = _heights_from_lifetimes(cfg, lifetimes)
    max_h = int(heights.max())
    return _kernels.fill_tips(
        heights, stream.key64("label-refresh"), x0, cfg.label_sigma, max_h
    )


def _heights_from_lifetimes(cfg: GridConfig, lifetimes: np.ndarray) -> np.ndarray:
    heights = np.asarray(np.round(np.asarray(lifetimes) / cfg.delta), dtype=np.int32)
    back = heights.astype(np.float64) * cfg.delta
    if not np.allclose(back, lifetimes, atol=1e-9 * max(1.0, cfg.delta)):
        raise ConfigurationError("lifetimes are not aligned to the delta grid")
    if heights[0] != 0 or heights[-1] != 0 or heights.min() < 0:
        raise ConfigurationError("lifetime path must start and end at zero")
    if np.abs(np.diff(heights)).max(initial=1) != 1:
        raise ConfigurationError("lifetime path must move one grid unit per step")
    return heights
