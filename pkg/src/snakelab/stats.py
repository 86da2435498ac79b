"""Statistical comparison utilities shared by the verification checks.

Thin, deterministic layers over scipy for the classical tests plus a
permutation energy-distance test for multivariate two-sample comparisons.
Everything that draws randomness takes an explicit stream so reruns agree
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import _kernels
from .errors import ConfigurationError, DomainError
from .streams import RandomStream

__all__ = [
    "ks_two_sample",
    "energy_two_sample",
    "survival_slope",
    "log_density_slope",
    "holm_adjust",
    "quantile_bins",
    "tail_exponent_fit",
    "TestOutcome",
]


@dataclass(frozen=True)
class TestOutcome:
    """Statistic and p-value of one two-sample comparison."""

    statistic: float
    pvalue: float
    n_first: int
    n_second: int

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.pvalue < alpha


def ks_two_sample(first, second) -> TestOutcome:
    """Two-sided Kolmogorov-Smirnov comparison of two scalar samples."""
    a = np.asarray(first, dtype=np.float64).ravel()
    b = np.asarray(second, dtype=np.float64).ravel()
    if len(a) < 2 or len(b) < 2:
        raise DomainError("need at least two points per sample")
    res = sps.ks_2samp(a, b, method="auto")
    return TestOutcome(float(res.statistic), float(res.pvalue), len(a), len(b))


def energy_two_sample(
    first,
    second,
    stream: RandomStream,
    n_perm: int = 200,
    max_points: int = 1024,
) -> TestOutcome:
    """Permutation energy-distance test between two multivariate samples.

    Rows are observations.  When a sample exceeds ``max_points`` rows a
    deterministic subsample is drawn, keeping the two group sizes
    proportional; the pooled pairwise distance matrix is then shuffled
    ``n_perm`` times.  The p-value uses the add-one permutation convention,
    so its smallest attainable value is 1 / (n_perm + 1).
    """
    a = np.atleast_2d(np.asarray(first, dtype=np.float64))
    b = np.atleast_2d(np.asarray(second, dtype=np.float64))
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ConfigurationError("samples must be 2-d with matching columns")
    if len(a) < 4 or len(b) < 4:
        raise DomainError("need at least four points per sample")
    if n_perm < 20:
        raise ConfigurationError("need at least 20 permutations")
    gen = stream.generator("energy-perm")
    if len(a) + len(b) > max_points:
        frac = max_points / (len(a) + len(b))
        ka = max(4, int(len(a) * frac))
        kb = max(4, int(len(b) * frac))
        a = a[gen.choice(len(a), size=ka, replace=False)]
        b = b[gen.choice(len(b), size=kb, replace=False)]
    pool = np.concatenate([a, b], axis=0)
    k = len(pool)
    # pooled pairwise Euclidean distances
    sq = np.sum(pool * pool, axis=1)
    gram = pool @ pool.T
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    np.clip(d2, 0.0, None, out=d2)
    dist = np.sqrt(d2)

    perms = np.empty((n_perm + 1, k), dtype=np.int64)
    perms[0] = np.arange(k)
    for p in range(1, n_perm + 1):
        perms[p] = gen.permutation(k)
    stats = _kernels.energy_permutation(dist, len(a), perms)
    observed = stats[0]
    p = (1.0 + np.sum(stats[1:] >= observed)) / (n_perm + 1.0)
    return TestOutcome(float(observed), float(p), len(a), len(b))


def survival_slope(values, q_lo: float = 0.8, q_hi: float = 0.99) -> float:
    """Log-log slope of the empirical survival function between quantiles.

    A power tail P(V > v) ~ v^s fit over [q_lo, q_hi]; the returned slope is
    negative for decaying tails.
    """
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if len(v) < 50:
        raise DomainError("need at least 50 points for a tail fit")
    if not (0 < q_lo < q_hi < 1):
        raise ConfigurationError("quantiles must satisfy 0 < lo < hi < 1")
    n = len(v)
    surv = 1.0 - (np.arange(1, n + 1) - 0.5) / n
    i0, i1 = int(q_lo * n), int(q_hi * n)
    window = slice(i0, max(i1, i0 + 10))
    x = np.log(v[window])
    y = np.log(surv[window])
    if np.any(~np.isfinite(x)):
        raise DomainError("tail window contains nonpositive values")
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def log_density_slope(
    values, lo: float, hi: float, bins: int = 12
) -> float:
    """Log-log slope of a histogram density over the window [lo, hi].

    Uses geometrically spaced bins; empty bins are dropped from the fit.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if not (0 < lo < hi):
        raise ConfigurationError("window must satisfy 0 < lo < hi")
    if bins < 4:
        raise ConfigurationError("need at least four bins")
    edges = np.geomspace(lo, hi, bins + 1)
    counts, _ = np.histogram(v, bins=edges)
    widths = np.diff(edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    dens = counts / widths
    keep = counts > 0
    if keep.sum() < 4:
        raise DomainError("too few occupied bins in the fit window")
    slope = np.polyfit(np.log(centers[keep]), np.log(dens[keep]), 1)[0]
    return float(slope)


def _window_slope(v: np.ndarray, lo: float, hi: float, mode: str, bins: int) -> float:
    if mode == "density":
        return log_density_slope(v, lo, hi, bins=bins)
    w = np.sort(v[(v > lo) & (v <= hi)])
    n_all = len(v)
    if len(w) < 10:
        raise DomainError("too few points in the CCDF window")
    rank_above = n_all - np.searchsorted(np.sort(v), w, side="right")
    surv = (rank_above + 0.5) / n_all
    if len(w) > 2000:
        pick = np.linspace(0, len(w) - 1, 2000).astype(np.int64)
        w, surv = w[pick], surv[pick]
    return float(np.polyfit(np.log(w), np.log(surv), 1)[0])


def tail_exponent_fit(
    samples,
    lo: float,
    hi: float,
    mode: str = "density",
    bins: int = 12,
    n_boot: int = 200,
    stream: RandomStream | None = None,
) -> tuple[float, float]:
    """Power-law slope of a sample over a window, with a bootstrap stderr.

    ``mode`` selects the curve being fit in log-log coordinates: the
    histogram density over geometric bins, or the empirical survival
    function (CCDF) at the in-window points.  The standard error comes
    from refitting ``n_boot`` full resamples of the data.

    Raises
    ------
    DomainError
        Fewer than 1000 samples inside the window, or degenerate
        (near-constant) data that leaves too few occupied bins.
    """
    v = np.asarray(samples, dtype=np.float64).ravel()
    if mode not in ("density", "ccdf"):
        raise ConfigurationError("mode must be 'density' or 'ccdf'")
    if not (0 < lo < hi):
        raise ConfigurationError("window must satisfy 0 < lo < hi")
    if n_boot < 10:
        raise ConfigurationError("need at least 10 bootstrap resamples")
    in_window = int(np.count_nonzero((v > lo) & (v <= hi)))
    if in_window < 1000:
        raise DomainError(
            f"need at least 1000 samples in the window, found {in_window}"
        )
    if np.ptp(v) == 0.0:
        raise DomainError("constant data has no tail exponent")
    slope = _window_slope(v, lo, hi, mode, bins)
    gen = (stream or RandomStream(0)).generator("tail-boot")
    reps = np.empty(n_boot)
    for b in range(n_boot):
        draw = v[gen.integers(0, len(v), size=len(v))]
        try:
            reps[b] = _window_slope(draw, lo, hi, mode, bins)
        except DomainError:
            reps[b] = np.nan
    good = reps[np.isfinite(reps)]
    if len(good) < n_boot // 2:
        raise DomainError("bootstrap refits collapsed; data too sparse")
    return slope, float(np.std(good))


def holm_adjust(pvalues) -> np.ndarray:
    """Holm step-down adjustment; returns monotone adjusted p-values."""
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    if len(p) == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise DomainError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p)
    adj = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, (m - rank) * p[idx])
        adj[idx] = min(1.0, running)
    return adj


def quantile_bins(values, n_bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Labels and edges of equal-count bins of a scalar sample.

    Returns ``(labels, edges)`` with labels in 0..n_bins-1; ties at edges go
    to the lower bin.  Degenerate edges (heavy ties) raise.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if n_bins < 1:
        raise ConfigurationError("need at least one bin")
    if len(v) < 2 * n_bins:
        raise DomainError("too few points for the requested bins")
    edges = np.quantile(v, np.linspace(0, 1, n_bins + 1))
    if np.any(np.diff(edges) <= 0):
        raise DomainError("degenerate quantile edges; reduce the bin count")
    labels = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_bins - 1)
    return labels.astype(np.int64), edges
