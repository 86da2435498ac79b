"""Bin-matched comparison of level states and their conditional futures.

The state of an occupation profile cut at a level is the pair (density,
level derivative) read off with box kernels.  This module builds datasets
of such states together with feature vectors of the profile above the cut
(densities at fixed offsets plus the total mass), draws matched
continuation-kernel futures from the same states, and compares the two
populations bin by bin with permutation energy tests.  The same engine
runs the homogeneity comparison across two cut levels and the population
variant sourced from branching-cloud draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import continuation, snake, stats
from .errors import ConfigurationError, DomainError
from .sampling_core import DEFAULT_STEP_CAP, GridConfig
from .streams import RandomStream

__all__ = [
    "DEFAULT_OFFSETS",
    "LevelDataset",
    "MarkovReport",
    "StateBins",
    "assign_bins",
    "build_kernel_dataset",
    "build_level_dataset",
    "build_sbm_level_dataset",
    "homogeneity_test",
    "markov_property_test",
]

DEFAULT_OFFSETS = (0.1, 0.25, 0.5)


@dataclass
class LevelDataset:
    """States and future features of occupation profiles cut at one level.

    Row i of ``states`` holds (density, level derivative) at the cut;
    ``futures`` holds the density at ``level + offsets`` followed by the
    total occupation above the cut.  ``past`` is the density one
    ``past_offset`` below the cut (zero for sources without a past, e.g.
    kernel draws) and ``exit_mass`` the collar boundary reading at the cut
    where the builder computes one.
    """

    level: float
    states: np.ndarray
    futures: np.ndarray
    past: np.ndarray
    exit_mass: np.ndarray
    offsets: tuple[float, ...]
    bandwidth: float
    deriv_bandwidth: float
    past_offset: float
    source: str = "snake"

    def __len__(self) -> int:
        return len(self.states)

    def validate(self) -> None:
        n = len(self.states)
        if self.states.shape != (n, 2):
            raise ConfigurationError("states must be an (n, 2) array")
        if self.futures.shape != (n, len(self.offsets) + 1):
            raise ConfigurationError("futures must align with offsets")
        if len(self.past) != n or len(self.exit_mass) != n:
            raise ConfigurationError("past and exit_mass must align with states")
        if self.source not in ("snake", "kernel", "sbm"):
            raise ConfigurationError("unknown dataset source")


@dataclass(frozen=True)
class StateBins:
    """Marginal-quantile rectangle bins over the state plane."""

    ell_edges: np.ndarray
    slope_edges: np.ndarray

    @property
    def n_ell(self) -> int:
        return len(self.ell_edges) - 1

    @property
    def n_slope(self) -> int:
        return len(self.slope_edges) - 1

    @property
    def n_bins(self) -> int:
        return self.n_ell * self.n_slope

    def label(self, states: np.ndarray) -> np.ndarray:
        """Bin index of each state row; outside rows clip to edge bins."""
        i = np.searchsorted(self.ell_edges[1:-1], states[:, 0], side="right")
        j = np.searchsorted(self.slope_edges[1:-1], states[:, 1], side="right")
        return i * self.n_slope + j

    def ell_label(self, states: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.ell_edges[1:-1], states[:, 0], side="right")


def assign_bins(states: np.ndarray, n_ell: int = 4, n_slope: int = 4) -> StateBins:
    """Quantile edges of the state sample, marginal per coordinate."""
    if len(states) < 2 * max(n_ell, n_slope):
        raise DomainError("too few states for the requested bins")
    _, ell_edges = stats.quantile_bins(states[:, 0], n_ell)
    _, slope_edges = stats.quantile_bins(states[:, 1], n_slope)
    return StateBins(ell_edges, slope_edges)


def _profile_features(
    occ,
    level: float,
    offsets: tuple[float, ...],
    bandwidth: float,
) -> np.ndarray:
    """Feature map shared by every source: densities above the cut, then
    the total mass above it.  ``occ(lo, hi)`` returns occupation in [lo, hi)."""
    out = np.empty(len(offsets) + 1)
    for k, x in enumerate(offsets):
        out[k] = occ(level + x - bandwidth, level + x + bandwidth) / (2 * bandwidth)
    out[-1] = occ(level, math.inf)
    return out


def build_level_dataset(
    stream: RandomStream,
    cfg: GridConfig,
    h: float,
    n_conditioned: int,
    threshold: float = 0.05,
    bandwidth: float = 0.05,
    deriv_bandwidth: float | None = None,
    offsets: tuple[float, ...] = DEFAULT_OFFSETS,
    past_offset: float = 0.2,
    with_exit: bool = False,
    step_cap: int = DEFAULT_STEP_CAP,
) -> LevelDataset:
    """Dataset of tree draws reaching past level ``h``.

    Draws ``n_conditioned`` excursions conditioned on lifetime sup above
    ``threshold`` and keeps those whose occupation density at ``h`` is
    positive.  The collar exit reading at ``h`` is an extra pass per kept
    draw, so it is opt-in.
    """
    if h <= 0:
        raise ConfigurationError("cut level must be positive")
    if deriv_bandwidth is None:
        deriv_bandwidth = 2.0 * bandwidth
    states, futures, past, zhat = [], [], [], []
    for i in range(n_conditioned):
        s = snake.sample_snake(stream.split(i), cfg, threshold, step_cap=step_cap)
        if s.wstar_refined <= h:
            continue
        ell, ldot = snake.level_statistics(s, h, bandwidth, deriv_bandwidth)
        if ell <= 0.0:
            continue
        occ = lambda lo, hi: snake.occupation_between(s, lo, hi)
        states.append((ell, ldot))
        futures.append(_profile_features(occ, h, offsets, bandwidth))
        past.append(occ(h - past_offset - bandwidth, h - past_offset + bandwidth)
                    / (2 * bandwidth))
        zhat.append(snake.truncate(s, h).exit_measure if with_exit else 0.0)
    return LevelDataset(
        h,
        np.asarray(states, dtype=np.float64).reshape(-1, 2),
        np.asarray(futures, dtype=np.float64).reshape(-1, len(offsets) + 1),
        np.asarray(past, dtype=np.float64),
        np.asarray(zhat, dtype=np.float64),
        tuple(offsets),
        bandwidth,
        deriv_bandwidth,
        past_offset,
        "snake",
    )


def build_sbm_level_dataset(
    stream: RandomStream,
    cfg: GridConfig,
    n_draws: int,
    alpha: float,
    h: float,
    eps_pop: float = 0.02,
    bandwidth: float = 0.05,
    deriv_bandwidth: float | None = None,
    offsets: tuple[float, ...] = DEFAULT_OFFSETS,
    past_offset: float = 0.2,
    step_cap: int = DEFAULT_STEP_CAP,
) -> LevelDataset:
    """Dataset of branching-cloud occupation draws cut at level ``h``.

    Each draw pools the atoms of one cloud started from mass ``alpha``;
    readings sum per-atom occupations, so the cut level must sit clear of
    the sub-threshold truncation zone around the origin (a few multiples
    of sqrt(eps_pop))."""
    from . import sbm as sbm_mod

    if h <= 2.0 * math.sqrt(eps_pop):
        raise ConfigurationError(
            "cut level sits inside the population-truncation zone"
        )
    if deriv_bandwidth is None:
        deriv_bandwidth = 2.0 * bandwidth
    b2 = deriv_bandwidth
    states, futures, past = [], [], []
    for i in range(n_draws):
        draw = sbm_mod.sample_sbm_occupation(
            stream.split(i), alpha, cfg, eps_pop=eps_pop,
            step_cap=step_cap, keep_atoms=True,
        )
        atoms = draw.atoms or []

        def occ(lo: float, hi: float) -> float:
            return sum(snake.occupation_between(a, lo, hi) for a in atoms)

        ell = occ(h - bandwidth, h + bandwidth) / (2 * bandwidth)
        if ell <= 0.0:
            continue
        ldot = (occ(h, h + b2) - occ(h - b2, h)) / (b2 * b2)
        states.append((ell, ldot))
        futures.append(_profile_features(occ, h, offsets, bandwidth))
        past.append(occ(h - past_offset - bandwidth, h - past_offset + bandwidth)
                    / (2 * bandwidth))
    n = len(states)
    return LevelDataset(
        h,
        np.asarray(states, dtype=np.float64).reshape(-1, 2),
        np.asarray(futures, dtype=np.float64).reshape(-1, len(offsets) + 1),
        np.asarray(past, dtype=np.float64),
        np.zeros(n),
        tuple(offsets),
        bandwidth,
        deriv_bandwidth,
        past_offset,
        "sbm",
    )


def build_kernel_dataset(
    stream: RandomStream,
    source: LevelDataset,
    table: continuation.ExcursionTable,
    bins: StateBins,
    per_bin: int = 100,
    min_bin: int = 50,
    jump_floor: float | None = None,
    endpoint_tol: float | None = None,
) -> LevelDataset:
    """Continuation-kernel futures drawn from states matched to ``source``.

    Within each populated state bin, up to ``per_bin`` source rows are
    chosen (without replacement) and one continuation is drawn from each
    row's state, so the kernel rows inherit the within-bin state
    distribution of the source rows they answer."""
    labels = bins.label(source.states)
    chosen: list[int] = []
    gen = stream.generator("bin-subsample")
    for b in range(bins.n_bins):
        idx = np.flatnonzero(labels == b)
        if len(idx) < min_bin:
            continue
        take = min(per_bin, len(idx))
        chosen.extend(gen.choice(idx, size=take, replace=False))
    chosen_arr = np.asarray(sorted(chosen), dtype=np.int64)
    futures = np.empty((len(chosen_arr), len(source.offsets) + 1))
    for row, i in enumerate(chosen_arr):
        ell, ldot = source.states[i]
        state = continuation.ContinuationState(float(ell), 0.5 * float(ldot))
        sample = continuation.sample_continuation(
            stream.split(int(i)), state, table,
            jump_floor=jump_floor, endpoint_tol=endpoint_tol,
        )
        occ = lambda lo, hi: (
            sample.time_above(max(lo - source.level, 0.0))
            - (sample.time_above(hi - source.level) if hi != math.inf else 0.0)
        )
        futures[row] = _profile_features(occ, source.level, source.offsets,
                                         source.bandwidth)
    n = len(chosen_arr)
    return LevelDataset(
        source.level,
        source.states[chosen_arr],
        futures,
        np.zeros(n),
        np.zeros(n),
        source.offsets,
        source.bandwidth,
        source.deriv_bandwidth,
        source.past_offset,
        "kernel",
    )


@dataclass
class MarkovReport:
    """Bin-by-bin outcome of one matched-future comparison.

    ``bin_tests`` rows are (bin index, n_first, n_second, p value); the
    probe and control lists follow the same shape.  ``inconclusive`` is set
    when fewer than a quarter of the bins could be tested."""

    level: float
    n_bins: int
    bin_tests: list[dict[str, Any]] = field(default_factory=list)
    past_tests: list[dict[str, Any]] = field(default_factory=list)
    control_tests: list[dict[str, Any]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    p_threshold: float = 0.01

    @property
    def inconclusive(self) -> bool:
        return len(self.bin_tests) < max(1, self.n_bins // 4)

    def _fraction_above(self, rows: list[dict[str, Any]]) -> float:
        if not rows:
            return math.nan
        p = np.array([r["p"] for r in rows])
        return float(np.mean(p > self.p_threshold))

    @property
    def match_fraction(self) -> float:
        """Fraction of tested bins where the futures are indistinguishable."""
        return self._fraction_above(self.bin_tests)

    @property
    def past_fraction(self) -> float:
        return self._fraction_above(self.past_tests)

    @property
    def control_reject_fraction(self) -> float:
        if not self.control_tests:
            return math.nan
        p = np.array([r["p"] for r in self.control_tests])
        return float(np.mean(p < self.p_threshold))

    def to_dict(self) -> dict[str, Any]:
        return {
            "level": self.level,
            "n_bins": self.n_bins,
            "inconclusive": self.inconclusive,
            "match_fraction": self.match_fraction,
            "past_fraction": self.past_fraction,
            "control_reject_fraction": self.control_reject_fraction,
            "bin_tests": self.bin_tests,
            "past_tests": self.past_tests,
            "control_tests": self.control_tests,
            "warnings": self.warnings,
        }


def _standardized(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pooled = np.vstack([a, b])
    mu = pooled.mean(axis=0)
    sd = pooled.std(axis=0)
    sd[sd == 0] = 1.0
    return (a - mu) / sd, (b - mu) / sd


def _binned_energy(
    bins: StateBins,
    first: LevelDataset,
    second: LevelDataset,
    stream: RandomStream,
    min_bin: int,
    n_perm: int,
) -> tuple[list[dict[str, Any]], list[str]]:
    la, lb = bins.label(first.states), bins.label(second.states)
    rows: list[dict[str, Any]] = []
    warnings: list[str] = []
    for b in range(bins.n_bins):
        ia, ib = np.flatnonzero(la == b), np.flatnonzero(lb == b)
        if len(ia) < min_bin or len(ib) < min_bin:
            warnings.append(
                f"bin {b}: skipped with {len(ia)}/{len(ib)} rows (need {min_bin})"
            )
            continue
        fa, fb = _standardized(first.futures[ia], second.futures[ib])
        out = stats.energy_two_sample(fa, fb, stream.split(b), n_perm=n_perm)
        rows.append({"bin": b, "n_first": len(ia), "n_second": len(ib),
                     "p": out.pvalue})
    return rows, warnings


def markov_property_test(
    snake_ds: LevelDataset,
    kernel_ds: LevelDataset,
    stream: RandomStream,
    bins: StateBins | None = None,
    p_threshold: float = 0.01,
    min_bin: int = 50,
    n_perm: int = 200,
) -> MarkovReport:
    """Three-part conditional-law comparison at one cut level.

    (1) Within each state bin, the source futures are tested against the
    matched kernel futures.  (2) Within each bin the source futures are
    split by the past reading; a real Markov family shows no difference.
    (3) Conditioning on the density alone and splitting by the sign of the
    derivative must separate the futures; this control guards against the
    comparison being too weak to reject anything.
    """
    if snake_ds.offsets != kernel_ds.offsets:
        raise ConfigurationError("datasets carry different feature maps")
    if bins is None:
        bins = assign_bins(snake_ds.states)
    report = MarkovReport(snake_ds.level, bins.n_bins, p_threshold=p_threshold)
    report.bin_tests, report.warnings = _binned_energy(
        bins, snake_ds, kernel_ds, stream.split(1), min_bin, n_perm
    )

    labels = bins.label(snake_ds.states)
    for b in range(bins.n_bins):
        idx = np.flatnonzero(labels == b)
        if len(idx) < 2 * min_bin:
            continue
        cut = np.median(snake_ds.past[idx])
        lo, hi = idx[snake_ds.past[idx] <= cut], idx[snake_ds.past[idx] > cut]
        if len(lo) < min_bin or len(hi) < min_bin:
            report.warnings.append(f"bin {b}: past split too uneven")
            continue
        fa, fb = _standardized(snake_ds.futures[lo], snake_ds.futures[hi])
        out = stats.energy_two_sample(fa, fb, stream.split(1000 + b), n_perm=n_perm)
        report.past_tests.append(
            {"bin": b, "n_first": len(lo), "n_second": len(hi), "p": out.pvalue}
        )

    ell_labels = bins.ell_label(snake_ds.states)
    for b in range(bins.n_ell):
        idx = np.flatnonzero(ell_labels == b)
        neg = idx[snake_ds.states[idx, 1] < 0]
        pos = idx[snake_ds.states[idx, 1] >= 0]
        if len(neg) < min_bin or len(pos) < min_bin:
            report.warnings.append(f"density bin {b}: sign split too uneven")
            continue
        fa, fb = _standardized(snake_ds.futures[neg], snake_ds.futures[pos])
        out = stats.energy_two_sample(fa, fb, stream.split(2000 + b), n_perm=n_perm)
        report.control_tests.append(
            {"bin": b, "n_first": len(neg), "n_second": len(pos), "p": out.pvalue}
        )
    return report


def homogeneity_test(
    first: LevelDataset,
    second: LevelDataset,
    stream: RandomStream,
    n_ell: int = 4,
    n_slope: int = 4,
    p_threshold: float = 0.01,
    min_bin: int = 50,
    n_perm: int = 200,
) -> MarkovReport:
    """Matched-bin comparison of source futures across two cut levels.

    Bins come from the pooled states so both levels use the same edges;
    a level-homogeneous family shows indistinguishable futures bin by bin.
    """
    if first.offsets != second.offsets:
        raise ConfigurationError("datasets carry different feature maps")
    pooled = np.vstack([first.states, second.states])
    bins = assign_bins(pooled, n_ell, n_slope)
    report = MarkovReport(first.level, bins.n_bins, p_threshold=p_threshold)
    report.bin_tests, report.warnings = _binned_energy(
        bins, first, second, stream.split(1), min_bin, n_perm
    )
    return report
