"""Statistical verification checks over the sampler stack.

Each check draws what it needs from a dedicated substream, compares an
estimate against a closed-form target or a matched sample, and returns a
``CheckResult``.  Checks are pure functions of (stream, config, resources);
shared expensive assets (unit-excursion tables) live on the resources
object so several checks can reuse one build.  A check that cannot reach a
meaningful verdict at the configured sample size returns an inconclusive
result instead of guessing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate as spi

from . import continuation, csbp, levy, markov, sbm, snake, stats
from .config import SuiteConfig
from .errors import DomainError, NotAbsorbed
from .reporting import CheckResult
from .sampling_core import JUMP_DENSITY_COEFF, GridConfig
from .streams import RandomStream

__all__ = [
    "SuiteResources",
    "check_shape_asymptotes",
    "check_ball_mass_asymptote",
    "check_small_ball_rate",
    "check_tail_label_sup",
    "check_excursion_class_mass",
    "check_exit_mass_laplace",
    "check_exit_mass_mean",
    "check_boundary_excursion_time",
    "check_boundary_excursion_tail",
    "check_origin_density_tail",
    "check_cyclic_bridge",
    "check_signed_split",
    "check_lamperti_roundtrip",
    "check_branching_additivity",
    "check_level_poisson",
    "check_reroot_invariance",
    "check_occupation_kink",
    "check_population_additivity",
    "check_kernel_mass_stability",
    "check_level_state_match",
    "check_markov_kernel_match",
    "check_population_kernel_match",
    "check_test_calibration",
]

_SQRT_PI = math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# shared resources and small helpers


@dataclass
class SuiteResources:
    """Lazy cache of assets shared between checks.

    Unit-excursion tables are the one genuinely expensive shared asset;
    they are keyed by (lattice pitch, acceptance window, size) and built
    from a stream derived from the key itself, so the cached object does
    not depend on which check asked first.
    """

    stream: RandomStream
    config: SuiteConfig
    _tables: dict = field(default_factory=dict, repr=False)

    def table_size(self, window: float) -> int:
        n = self.config.mc.n_samples
        if window >= 0.15:
            return max(200, min(800, n // 40))
        return max(200, min(600, n // 50))

    def table(self, delta: float, window: float = 0.2,
              size: int | None = None) -> continuation.ExcursionTable:
        if size is None:
            size = self.table_size(window)
        key = (round(delta, 9), round(window, 9), size)
        if key not in self._tables:
            sub = (self.stream
                   .split(int(round(delta * 1e6)))
                   .split(int(round(window * 1e4)))
                   .split(size))
            self._tables[key] = continuation.build_excursion_table(
                sub, GridConfig(delta), size, window=window
            )
        return self._tables[key]


def _grid(config: SuiteConfig) -> GridConfig:
    return GridConfig(config.grid.delta)


def _coarse_delta(config: SuiteConfig) -> float:
    """Lattice pitch used for pooled excursions; finer than 0.02 buys
    little for table rows but costs a lot of wall clock."""
    return max(config.grid.delta, 0.02)


def _inconclusive(check_id: str, reason: str, target: float | None = None,
                  **detail) -> CheckResult:
    info = {"reason": reason}
    info.update(detail)
    return CheckResult(check_id=check_id, target=target, estimate=None,
                       ci_low=None, ci_high=None, p_value=None,
                       passed=None, detail=info)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _mom_mean(values: np.ndarray, n_blocks: int = 20) -> float:
    """Median of block means; robust location for heavy-tailed samples."""
    v = np.asarray(values, dtype=np.float64)
    n_blocks = min(n_blocks, max(1, len(v) // 2))
    blocks = np.array_split(v, n_blocks)
    return float(np.median([b.mean() for b in blocks]))


def _boot_se(gen: np.random.Generator, values: np.ndarray, estimator,
             n_boot: int = 200) -> float:
    v = np.asarray(values, dtype=np.float64)
    reps = np.empty(n_boot)
    for b in range(n_boot):
        reps[b] = estimator(v[gen.integers(0, len(v), size=len(v))])
    return float(np.std(reps))


def _ratio_block_se(num: np.ndarray, den: np.ndarray,
                    n_blocks: int = 20) -> float:
    """Spread of a ratio-of-sums statistic across disjoint blocks."""
    n_blocks = min(n_blocks, max(2, len(num) // 2))
    idx = np.array_split(np.arange(len(num)), n_blocks)
    vals = [num[i].sum() / den[i].sum() for i in idx if den[i].sum() > 0]
    if len(vals) < 2:
        return math.inf
    return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))


def _absorbed_path(sub: RandomStream, exponent, start: float,
                   cutoff: float, dt: float, horizon: float = 200.0,
                   tries: int = 40) -> levy.LevyPath:
    """Jump path run to its passage of zero, retrying past-horizon draws.

    The retry conditions on absorption within the horizon; callers that
    compare groups must apply the same conditioning to every group.
    """
    for j in range(tries):
        try:
            return levy.sample_levy_path(sub.split(j), exponent, start,
                                         cutoff=cutoff, dt=dt,
                                         stop="at_zero", horizon=horizon)
        except NotAbsorbed:
            continue
    raise DomainError("no absorbed path within the retry budget")


def _snake_or_none(sub: RandomStream, grid: GridConfig, threshold: float,
                   **kwargs):
    """Conditioned tree draw, or None when it exceeds the step cap.

    Excursion lengths have infinite mean, so a small fraction of draws
    outruns any affordable cap.  Callers must state why dropping (or
    substituting for) those giants keeps their estimator honest.
    """
    try:
        return snake.sample_snake(sub, grid, threshold, **kwargs)
    except NotAbsorbed:
        return None


# ---------------------------------------------------------------------------
# deterministic special-function checks


def check_shape_asymptotes(stream: RandomStream, config: SuiteConfig,
                           res: SuiteResources) -> CheckResult:
    """Mean level-density shape against its two closed-form asymptotes.

    Near zero the shape behaves like (2/sqrt(pi)) x^{-1/2}; the deviation
    of the normalized product from 1 at x = 1e-6 is the genuine first-order
    correction of the expansion (about 2.7e-3), so the near-zero clause of
    this check is expected to stay red at the stated absolute tolerance.
    """
    tol = config.tolerances.limit_abs
    x_lo, x_hi = 1e-6, 1e4
    dev_lo = abs(math.sqrt(x_lo) * continuation.occupation_shape(x_lo)
                 * _SQRT_PI / 2.0 - 1.0)
    dev_hi = abs(x_hi ** 2.5 * continuation.occupation_shape(x_hi)
                 * 2.0 * _SQRT_PI / 3.0 - 1.0)
    worst = max(dev_lo, dev_hi)
    return CheckResult(
        check_id="shape_asymptotes",
        target=0.0,
        estimate=worst,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(worst <= tol),
        detail={
            "deviation_near_zero": dev_lo,
            "deviation_at_infinity": dev_hi,
            "tolerance": tol,
            "note": "the near-zero deviation is the first correction term "
                    "of the expansion, not a numerical artefact",
        },
    )


def check_ball_mass_asymptote(stream: RandomStream, config: SuiteConfig,
                              res: SuiteResources) -> CheckResult:
    """Near-root mass scaling function against its linear growth at infinity."""
    tol = config.tolerances.ratio_rel
    u_hi, u_lo = 1e3, 1e-3
    ratio_hi = float(continuation.small_ball_mass(u_hi)) / u_hi
    ratio_lo = float(continuation.small_ball_mass(u_lo)) / (u_lo * u_lo)
    return CheckResult(
        check_id="ball_mass_asymptote",
        target=1.0,
        estimate=ratio_hi,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(abs(ratio_hi - 1.0) <= tol),
        detail={"ratio_at_1e3": ratio_hi,
                "quadratic_ratio_at_1e-3": ratio_lo,
                "tolerance": tol},
    )


# ---------------------------------------------------------------------------
# integrated small-ball rate


def check_small_ball_rate(stream: RandomStream, config: SuiteConfig,
                          res: SuiteResources) -> CheckResult:
    """Total expected time spent at labels below eps across all boundary
    excursions, against the closed-form rate 2 * eps.

    The boundary-size mixture has a heavy tail on both ends, so the middle
    is stratified dyadically with exact stratum masses and inverse-CDF
    draws, the two tails are integrated analytically, and low strata use a
    control variate built on the exact unit mean of the traversal time.
    """
    n_total = config.mc.n_samples
    if n_total < 4000:
        return _inconclusive("small_ball_rate",
                             "needs at least 4000 configured samples")
    tol = config.tolerances.closed_form_rel
    eps = 0.5
    target = 2.0 / eps
    table = res.table(_coarse_delta(config))
    levels, above, sigma = table.levels, table.above, table.sigma
    jdc = JUMP_DENSITY_COEFF

    z_min, n_strata = 0.002, 9
    edges = z_min * 2.0 ** np.arange(n_strata + 1)

    def integrand(z: float) -> float:
        return jdc * z ** -2.5 * eps ** 4 * float(
            continuation.small_ball_mass(z / eps ** 2))

    # left tail via the substitution z = w^2, which removes the z^{-1/2}
    # edge singularity of the integrand
    left = spi.quad(lambda w: integrand(w * w) * 2.0 * w,
                    0.0, math.sqrt(z_min), limit=200)[0]
    right = spi.quad(integrand, edges[-1], np.inf, limit=200)[0]

    n_per = max(60, n_total // 20)
    total_mc, var_mc = 0.0, 0.0
    strata_rows = []
    for k in range(n_strata):
        lo, hi = edges[k], edges[k + 1]
        mass = jdc * (2.0 / 3.0) * (lo ** -1.5 - hi ** -1.5)
        gen = stream.generator(f"stratum-{k}")
        u = gen.random(n_per)
        z = (lo ** -1.5 - u * (lo ** -1.5 - hi ** -1.5)) ** (-2.0 / 3.0)
        rows = gen.integers(0, len(sigma), size=n_per)
        q = eps / np.sqrt(z)
        above_at = np.array([
            np.interp(q[i], levels, above[rows[i]], right=0.0)
            for i in range(n_per)
        ])
        ez2 = jdc * 2.0 * (math.sqrt(hi) - math.sqrt(lo)) / mass
        if hi / eps ** 2 <= 0.6:
            # time below eps = z^2 sigma - time above; replace the heavy
            # z^2 sigma term by its exact mean (unit excursions have unit
            # expected traversal time)
            vals = ez2 - z * z * above_at
            form = "control_variate"
        else:
            vals = z * z * (sigma[rows] - above_at)
            form = "direct"
        contrib = mass * float(vals.mean())
        se_k = mass * float(vals.std(ddof=1) / math.sqrt(n_per))
        total_mc += contrib
        var_mc += se_k * se_k
        strata_rows.append({"z_lo": float(lo), "z_hi": float(hi),
                            "mass": float(mass), "form": form,
                            "contribution": contrib, "se": se_k})

    total = left + right + total_mc
    est = total / eps ** 2
    se = math.sqrt(var_mc) / eps ** 2
    return CheckResult(
        check_id="small_ball_rate",
        target=target,
        estimate=est,
        ci_low=est - 1.96 * se,
        ci_high=est + 1.96 * se,
        p_value=None,
        passed=bool(abs(est - target) <= tol * target),
        detail={
            "eps": eps,
            "analytic_left": left / eps ** 2,
            "analytic_right": right / eps ** 2,
            "mc_middle": total_mc / eps ** 2,
            "table_sigma_mean": float(sigma.mean()),
            "strata": strata_rows,
            "tolerance_rel": tol,
        },
    )


# ---------------------------------------------------------------------------
# excursion-measure tail and normalization checks


def check_tail_label_sup(stream: RandomStream, config: SuiteConfig,
                         res: SuiteResources) -> CheckResult:
    """Mass of excursions whose label sup exceeds 1, against 3/2.

    Estimated at two lattice pitches and extrapolated in sqrt(delta),
    since the refined sup still carries a first-order lattice deficit.
    """
    n_total = config.mc.n_samples
    if n_total < 3000:
        return _inconclusive("tail_label_sup",
                             "needs at least 3000 configured samples")
    tol = config.tolerances.closed_form_rel
    eps_c, a, target = 0.08, 1.0, 1.5

    def level_rate(sub: RandomStream, g: GridConfig, n: int) -> tuple[float, float]:
        hits = np.empty(n, dtype=bool)
        eff = eps_c
        for i in range(n):
            s = _snake_or_none(sub.split(i), g, eps_c)
            if s is None:
                # a cap-length tree has a label sup far above 1
                hits[i] = True
                continue
            hits[i] = s.wstar_refined > a
            eff = s.cond_threshold
        p, se = _mean_se(hits.astype(np.float64))
        return p / (2.0 * eff), se / (2.0 * eff)

    n_f, n_c = n_total, max(1500, n_total // 2)
    f_fine, se_f = level_rate(stream.split(1), _grid(config), n_f)
    f_coarse, se_c = level_rate(
        stream.split(2), GridConfig(2.0 * config.grid.delta), n_c)

    denom = math.sqrt(2.0) - 1.0
    est = f_fine + (f_fine - f_coarse) / denom
    se = math.sqrt((se_f * (1.0 + 1.0 / denom)) ** 2 + (se_c / denom) ** 2)
    return CheckResult(
        check_id="tail_label_sup",
        target=target,
        estimate=est,
        ci_low=est - 1.96 * se,
        ci_high=est + 1.96 * se,
        p_value=None,
        passed=bool(abs(est - target) <= tol * target),
        detail={
            "fine_lattice": f_fine,
            "coarse_lattice": f_coarse,
            "conditioning_threshold": eps_c,
            "tolerance_rel": tol,
            "note": "lifetime conditioning drops excursions shorter than "
                    "the threshold that still cross 1; the missing mass is "
                    "below one percent of the target",
        },
    )


def check_excursion_class_mass(stream: RandomStream, config: SuiteConfig,
                               res: SuiteResources) -> CheckResult:
    """Lattice excursion normalization via the ruin identity.

    For the simple lifetime walk, the chance that an unconditioned
    excursion reaches height m is exactly 1/m; capped draws are counted
    as reaching.  Tested at two heights to exercise the scaling.
    """
    n_total = config.mc.n_samples
    if n_total < 2000:
        return _inconclusive("excursion_class_mass",
                             "needs at least 2000 configured samples")
    tol = config.tolerances.closed_form_rel
    g = _grid(config)
    n = 3 * n_total
    heights = (10, 40)
    max_h = np.empty(n, dtype=np.int64)
    for i in range(n):
        s, complete = snake.sample_snake_raw(stream.split(i), g, 1,
                                             step_cap=2_000_000)
        max_h[i] = np.iinfo(np.int64).max if not complete else int(s.heights.max())
    rows = {}
    ok = True
    for m in heights:
        p, se = _mean_se((max_h >= m).astype(np.float64))
        est_m = m * p
        rows[f"m_{m}"] = {"estimate": est_m, "se": m * se}
        ok = ok and abs(est_m - 1.0) <= tol
    est = rows[f"m_{heights[-1]}"]["estimate"]
    se = rows[f"m_{heights[-1]}"]["se"]
    return CheckResult(
        check_id="excursion_class_mass",
        target=1.0,
        estimate=est,
        ci_low=est - 1.96 * se,
        ci_high=est + 1.96 * se,
        p_value=None,
        passed=bool(ok),
        detail={"classes": rows, "n_draws": n, "tolerance_rel": tol},
    )


def check_exit_mass_laplace(stream: RandomStream, config: SuiteConfig,
                            res: SuiteResources) -> CheckResult:
    """Laplace transform of the boundary mass collected at distance 1.

    Trees rooted at 1 are truncated at 0; the transform of the collected
    mass has the closed form (sqrt(2/3) + lambda^{-1/2})^{-2}.
    """
    n_total = config.mc.n_samples
    if n_total < 3000:
        return _inconclusive("exit_mass_laplace",
                             "needs at least 3000 configured samples")
    tol = config.tolerances.closed_form_rel
    g = _grid(config)
    eps_c, n = 0.08, n_total
    lams = (1.0, 4.0)
    collar_guard = math.sqrt(config.grid.delta) + 2.0 * config.grid.delta
    z = np.zeros(n)
    capped = np.zeros(n, dtype=bool)
    eff = eps_c
    for i in range(n):
        s = _snake_or_none(stream.split(i), g, eps_c, x0=1.0)
        if s is None:
            # cap-length trees reach 0 with enormous collected mass, so
            # their transform contribution is 1 up to e^{-lambda z}
            capped[i] = True
            continue
        eff = s.cond_threshold
        if s.wmin_refined < collar_guard:
            z[i] = snake.truncate(s, 0.0).exit_measure
    rows, ok = {}, True
    first = None
    for lam in lams:
        target = (math.sqrt(2.0 / 3.0) + lam ** -0.5) ** -2.0
        vals = np.where(capped, 1.0, 1.0 - np.exp(-lam * z))
        mean, se = _mean_se(vals)
        est = mean / (2.0 * eff)
        se /= 2.0 * eff
        rows[f"lambda_{lam:g}"] = {"target": target, "estimate": est,
                                   "se": se}
        ok = ok and abs(est - target) <= tol * target
        if first is None:
            first = (target, est, se)
    target, est, se = first
    return CheckResult(
        check_id="exit_mass_laplace",
        target=target,
        estimate=est,
        ci_low=est - 1.96 * se,
        ci_high=est + 1.96 * se,
        p_value=None,
        passed=bool(ok),
        detail={"transforms": rows, "n_draws": n,
                "conditioning_threshold": eps_c, "tolerance_rel": tol},
    )


def check_exit_mass_mean(stream: RandomStream, config: SuiteConfig,
                         res: SuiteResources) -> CheckResult:
    """Mean boundary mass collected at distance 0.4, against 1.

    The estimator telescopes over dyadic lifetime classes with exact
    lattice class masses, so no single heavy class dominates the variance;
    the final rung conditions on the top threshold and closes the sum.
    """
    n_total = config.mc.n_samples
    if n_total < 4000:
        return _inconclusive("exit_mass_mean",
                             "needs at least 4000 configured samples")
    tol = config.tolerances.closed_form_rel
    g = _grid(config)
    delta = config.grid.delta
    a = 0.4
    n_rungs = 8
    thresholds = 0.04 * 2.0 ** np.arange(n_rungs + 1)
    m_steps = [int(round(t / delta)) for t in thresholds]
    if any(m_steps[k + 1] <= m_steps[k] for k in range(n_rungs)):
        return _inconclusive("exit_mass_mean",
                             "lattice too coarse for the dyadic ladder")
    base = max(120, n_total // 18)
    collar_guard = math.sqrt(delta) + 2.0 * delta

    cap_dropped = 0

    def collect(sub: RandomStream, thr: float, n: int) -> tuple[np.ndarray, np.ndarray]:
        # a cap-length draw has a label max far beyond every rung ceiling,
        # so marking it with a sentinel height zeroes its class indicator
        # exactly; only the open-ended top rung loses (and counts) it
        nonlocal cap_dropped
        z = np.zeros(n)
        hmax = np.zeros(n, dtype=np.int64)
        for i in range(n):
            s = _snake_or_none(sub.split(i), g, thr, x0=a)
            if s is None:
                hmax[i] = np.iinfo(np.int64).max
                cap_dropped += 1
                continue
            hmax[i] = int(s.heights.max())
            if s.wmin_refined < collar_guard:
                z[i] = snake.truncate(s, 0.0).exit_measure
        return z, hmax

    est, var = 0.0, 0.0
    rungs = []
    for k in range(n_rungs):
        n_k = max(60, int(base * 0.72 ** k))
        z, hmax = collect(stream.split(k), thresholds[k], n_k)
        vals = z * (hmax < m_steps[k + 1])
        mean, se = _mean_se(vals)
        scale = 1.0 / (2.0 * m_steps[k] * delta)
        est += scale * mean
        var += (scale * se) ** 2
        rungs.append({"threshold": float(m_steps[k] * delta), "n": n_k,
                      "contribution": scale * mean, "se": scale * se})
    n_top = max(50, int(base * 0.72 ** n_rungs))
    z, hmax = collect(stream.split(n_rungs), thresholds[-1], n_top)
    keep = hmax < np.iinfo(np.int64).max
    top_capped = int(n_top - keep.sum())
    mean, se = _mean_se(z[keep])
    scale = 1.0 / (2.0 * m_steps[-1] * delta)
    est += scale * mean
    var += (scale * se) ** 2
    rungs.append({"threshold": float(m_steps[-1] * delta), "n": n_top,
                  "contribution": scale * mean, "se": scale * se})
    se_tot = math.sqrt(var)
    return CheckResult(
        check_id="exit_mass_mean",
        target=1.0,
        estimate=est,
        ci_low=est - 1.96 * se_tot,
        ci_high=est + 1.96 * se_tot,
        p_value=None,
        passed=bool(abs(est - 1.0) <= tol),
        detail={
            "distance": a,
            "rungs": rungs,
            "tolerance_rel": tol,
            "cap_dropped": cap_dropped,
            "top_rung_cap_rate": top_capped / n_top,
            "note": "mass of sub-threshold lifetimes that still reach the "
                    "far level is exponentially small at the bottom rung; "
                    "cap-length draws are excluded from the top-rung mean "
                    "and their rate is reported",
        },
    )


# ---------------------------------------------------------------------------
# unit-boundary excursion statistics


def check_boundary_excursion_time(stream: RandomStream, config: SuiteConfig,
                                  res: SuiteResources) -> CheckResult:
    """Mean traversal time of a unit-boundary positive excursion, against 1.

    The acceptance window of the sampler is a bias knob; the estimate at
    half the window must not sit farther from the target, and the pass
    verdict reads the narrow-window estimate.
    """
    n_total = config.mc.n_samples
    if n_total < 3000:
        return _inconclusive("boundary_excursion_time",
                             "needs at least 3000 configured samples")
    tol = config.tolerances.mean_rel
    delta = _coarse_delta(config)
    wide = res.table(delta, window=0.2)
    narrow = res.table(delta, window=0.1)
    gen = stream.generator("sigma-boot")
    rows = {}
    for name, tab in (("window_0.2", wide), ("window_0.1", narrow)):
        est = _mom_mean(tab.sigma)
        se = _boot_se(gen, tab.sigma, _mom_mean)
        rows[name] = {"estimate": est, "se": se, "n": len(tab.sigma)}
    est, se = rows["window_0.1"]["estimate"], rows["window_0.1"]["se"]
    bias_narrow = abs(est - 1.0)
    bias_wide = abs(rows["window_0.2"]["estimate"] - 1.0)
    shrinks = bias_narrow <= bias_wide + 2.0 * (se + rows["window_0.2"]["se"])
    return CheckResult(
        check_id="boundary_excursion_time",
        target=1.0,
        estimate=est,
        ci_low=est - 1.96 * se,
        ci_high=est + 1.96 * se,
        p_value=None,
        passed=bool(bias_narrow <= tol and shrinks),
        detail={"windows": rows, "bias_shrinks_with_window": bool(shrinks),
                "tolerance_rel": tol,
                "note": "traversal time is heavy tailed (index 3/2), so "
                        "the location estimate is a median of block means"},
    )


def check_boundary_excursion_tail(stream: RandomStream, config: SuiteConfig,
                                  res: SuiteResources) -> CheckResult:
    """Label-sup tail of a unit-boundary positive excursion.

    The survival function is bounded by a sixth-power envelope; the
    empirical log-log tail slope over the upper quantiles must be at
    least as steep as -4.5 (pre-asymptotic curvature keeps finite-sample
    fits above the true exponent).
    """
    if config.mc.n_samples < 3000:
        return _inconclusive("boundary_excursion_tail",
                             "needs at least 3000 configured samples")
    delta = _coarse_delta(config)
    narrow = res.table(delta, window=0.1)
    peaks = np.asarray(narrow.peak, dtype=np.float64)
    if len(peaks) < 200:
        return _inconclusive("boundary_excursion_tail",
                             "needs at least 200 pooled excursions")
    slope = stats.survival_slope(peaks, q_lo=0.75, q_hi=0.99)
    gen = stream.generator("tail-boot")
    reps = []
    for _ in range(200):
        try:
            reps.append(stats.survival_slope(
                peaks[gen.integers(0, len(peaks), size=len(peaks))],
                q_lo=0.75, q_hi=0.99))
        except DomainError:
            continue
    se = float(np.std(reps)) if len(reps) >= 50 else math.inf
    xs = np.quantile(peaks, np.linspace(0.80, 0.99, 12))
    surv = np.array([(peaks > x).mean() for x in xs])
    envelope = float(np.max(xs ** 6 * surv))
    return CheckResult(
        check_id="boundary_excursion_tail",
        target=-6.0,
        estimate=slope,
        ci_low=slope - 1.96 * se,
        ci_high=slope + 1.96 * se,
        p_value=None,
        passed=bool(slope <= -4.5),
        detail={"envelope_constant": envelope, "n": len(peaks),
                "fit_quantiles": [0.75, 0.99],
                "note": "the envelope is an upper bound, so steeper "
                        "empirical slopes are consistent"},
    )


def check_origin_density_tail(stream: RandomStream, config: SuiteConfig,
                              res: SuiteResources) -> CheckResult:
    """Small-value tail of the root-level occupation density.

    The density of the root reading blows up like v^{-5/3} as v -> 0+;
    the fit window sits above the scale suppressed by the lifetime
    conditioning of the draw.
    """
    n_total = config.mc.n_samples
    if n_total < 4000:
        return _inconclusive("origin_density_tail",
                             "needs at least 4000 configured samples")
    tol = config.tolerances.slope_abs
    g = _grid(config)
    n = 3 * n_total
    bw = 0.05
    vals = np.empty(n)
    for i in range(n):
        s = snake.sample_snake(stream.split(i), g, 0.05)
        vals[i] = snake.occupation_between(s, -bw, bw) / (2.0 * bw)
    lo, hi = 0.10, 1.0
    try:
        slope, se = stats.tail_exponent_fit(vals, lo, hi, mode="density",
                                            bins=10, n_boot=120,
                                            stream=stream.split(7))
    except DomainError as exc:
        return _inconclusive("origin_density_tail", str(exc), target=-5.0 / 3.0)
    target = -5.0 / 3.0
    in_window = int(np.count_nonzero((vals >= lo) & (vals <= hi)))
    return CheckResult(
        check_id="origin_density_tail",
        target=target,
        estimate=slope,
        ci_low=slope - 1.96 * se,
        ci_high=slope + 1.96 * se,
        p_value=None,
        passed=bool(abs(slope - target) <= tol),
        detail={"window": [lo, hi], "n_draws": n, "n_in_window": in_window,
                "tolerance_abs": tol},
    )


# ---------------------------------------------------------------------------
# jump-process mechanics


def check_cyclic_bridge(stream: RandomStream, config: SuiteConfig,
                        res: SuiteResources) -> CheckResult:
    """Cyclic-shift bridges against endpoint-rejection bridges.

    Both constructions target the same duration-pinned path from 1 to 0;
    the largest-jump law per bridge is compared by a KS test, and one
    cyclic shift is checked to preserve the jump multiset exactly.
    """
    n_total = config.mc.n_samples
    if n_total < 2000:
        return _inconclusive("cyclic_bridge",
                             "needs at least 2000 configured samples")
    a, t = 1.0, 1.0
    n_b = max(80, n_total // 10)
    dt, cutoff = 1e-3, 2e-3

    def top_jumps(sub: RandomStream, method: str) -> np.ndarray:
        out = np.empty(n_b)
        for i in range(n_b):
            path = levy.sample_bridge(sub.split(i), levy.HALF_EXPONENT,
                                      a, 0.0, t, method=method, tol=0.04,
                                      cutoff=cutoff, dt=dt)
            out[i] = path.jump_sizes.max() if len(path.jump_sizes) else 0.0
        return out

    tops_cyc = top_jumps(stream.split(1), "cyclic")
    tops_rej = top_jumps(stream.split(2), "endpoint_rejection")
    outcome = stats.ks_two_sample(tops_cyc, tops_rej)

    probe = _absorbed_path(stream.split(3), levy.HALF_EXPONENT, a,
                           cutoff=cutoff, dt=dt)
    shifted = levy.cyclic_transform(probe, 0.37 * probe.t0)
    multiset_ok = bool(np.allclose(np.sort(probe.jump_sizes),
                                   np.sort(shifted.jump_sizes),
                                   rtol=0.0, atol=0.0))
    return CheckResult(
        check_id="cyclic_bridge",
        target=None,
        estimate=float(outcome.statistic),
        ci_low=None, ci_high=None,
        p_value=float(outcome.pvalue),
        passed=bool(outcome.pvalue > config.tolerances.p_threshold
                    and multiset_ok),
        detail={"n_per_method": n_b, "jump_multiset_preserved": multiset_ok,
                "holm_family": True, "aux_ok": multiset_ok,
                "median_top_jump": float(np.median(tops_cyc))},
    )


def check_signed_split(stream: RandomStream, config: SuiteConfig,
                       res: SuiteResources) -> CheckResult:
    """Exact mechanics of the fair sign split of a jump path.

    The two parts must sum back to the path to rounding, the terminal
    values at the passage of zero must cancel, and the union of the two
    jump multisets must equal the path's multiset exactly.
    """
    n_total = config.mc.n_samples
    n = max(40, n_total // 150)
    tol = config.tolerances.exact_rel
    worst = 0.0
    multiset_ok, terminal_ok = True, True
    for i in range(n):
        sub = stream.split(i)
        path = _absorbed_path(sub.split(0), levy.HALF_EXPONENT, 0.6,
                              cutoff=2e-3, dt=1e-3)
        minus, plus = levy.split_by_signs(sub.split(1), path)
        scale = max(1.0, float(np.abs(path.values).max()))
        err = float(np.abs(minus.values + plus.values - path.values).max())
        worst = max(worst, err / scale)
        rec = levy.first_hitting_zero(path, (minus, plus))
        u_minus, u_plus = rec.terminal_split
        terminal_ok = terminal_ok and abs(u_minus + u_plus) <= tol * scale
        merged = np.sort(np.concatenate([minus.jump_sizes, plus.jump_sizes]))
        multiset_ok = multiset_ok and np.array_equal(
            merged, np.sort(path.jump_sizes))
    return CheckResult(
        check_id="signed_split",
        target=0.0,
        estimate=worst,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(worst <= tol and terminal_ok and multiset_ok),
        detail={"n_paths": n, "terminal_cancellation": terminal_ok,
                "jump_multisets_exact": multiset_ok, "tolerance_rel": tol},
    )


def check_lamperti_roundtrip(stream: RandomStream, config: SuiteConfig,
                             res: SuiteResources) -> CheckResult:
    """Time-change round trip and the clock identity.

    Inverting the population path must reproduce the jump path cell by
    cell, and the integral of the population path must equal the passage
    time of the jump path.
    """
    n_total = config.mc.n_samples
    n = max(30, n_total // 400)
    tol_exact = config.tolerances.exact_rel
    tol_clock = config.tolerances.clock_rel
    worst_grid, worst_clock = 0.0, 0.0
    done, tries = 0, 0
    while done < n and tries < 4 * n:
        path = levy.sample_levy_path(stream.split(tries), levy.FULL_EXPONENT,
                                     1.2, cutoff=1e-2, dt=1e-3,
                                     stop="at_zero", horizon=100.0)
        tries += 1
        try:
            t0 = path.t0
        except NotAbsorbed:
            continue
        pop = csbp.lamperti_forward(path)
        back = csbp.lamperti_inverse(pop)
        scale = max(1.0, float(np.abs(path.values).max()))
        worst_grid = max(worst_grid, float(
            np.abs(back.values - path.values).max()) / scale)
        worst_clock = max(worst_clock, abs(pop.integral() - t0) / t0)
        done += 1
    if done < n:
        return _inconclusive("lamperti_roundtrip",
                             "too few absorbed paths within the horizon")
    return CheckResult(
        check_id="lamperti_roundtrip",
        target=0.0,
        estimate=worst_clock,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(worst_grid <= tol_exact and worst_clock <= tol_clock),
        detail={"n_paths": done, "worst_grid_error": worst_grid,
                "worst_clock_error": worst_clock,
                "tolerance_grid": tol_exact, "tolerance_clock": tol_clock},
    )


def check_branching_additivity(stream: RandomStream, config: SuiteConfig,
                               res: SuiteResources) -> CheckResult:
    """Branching property of the population process.

    A population started from z1 + z2 must match the sum of independent
    populations from z1 and z2 in law; compared by an energy test on
    values at two times, capped extinction time, and integrated mass.
    """
    n_total = config.mc.n_samples
    if n_total < 3000:
        return _inconclusive("branching_additivity",
                             "needs at least 3000 configured samples")
    z1, z2, cap = 0.6, 0.9, 40.0
    n = max(100, n_total // 50)

    def features(paths: list[csbp.CsbpPath]) -> np.ndarray:
        vals = np.empty(4)
        vals[0] = sum(p.value_at(0.3) for p in paths)
        vals[1] = sum(p.value_at(0.8) for p in paths)
        vals[2] = max((p.extinction_time if p.extinct else cap)
                      for p in paths)
        vals[2] = min(vals[2], cap)
        vals[3] = math.log1p(sum(p.integral() for p in paths))
        return vals

    joint = np.empty((n, 4))
    split = np.empty((n, 4))
    # retries condition on absorption within the horizon; the joint draw
    # conditions on the sum of the component passage times, the split
    # draws on each separately, and the two events differ only by the
    # product of two horizon tails (~1e-4 here)
    for i in range(n):
        sub = stream.split(i)
        pj = _absorbed_path(sub.split(0), levy.FULL_EXPONENT, z1 + z2,
                            cutoff=1e-2, dt=1e-3)
        joint[i] = features([csbp.lamperti_forward(pj)])
        p1 = _absorbed_path(sub.split(1), levy.FULL_EXPONENT, z1,
                            cutoff=1e-2, dt=1e-3)
        p2 = _absorbed_path(sub.split(2), levy.FULL_EXPONENT, z2,
                            cutoff=1e-2, dt=1e-3)
        split[i] = features([csbp.lamperti_forward(p1),
                             csbp.lamperti_forward(p2)])
    mu = joint.mean(axis=0)
    sd = joint.std(axis=0)
    sd[sd == 0] = 1.0
    outcome = stats.energy_two_sample((joint - mu) / sd, (split - mu) / sd,
                                      stream.split(10_000), n_perm=200)
    return CheckResult(
        check_id="branching_additivity",
        target=None,
        estimate=float(outcome.statistic),
        ci_low=None, ci_high=None,
        p_value=float(outcome.pvalue),
        passed=bool(outcome.pvalue > config.tolerances.p_threshold),
        detail={"n_per_group": n, "masses": [z1, z2], "holm_family": True,
                "features": ["value_at_0.3", "value_at_0.8",
                             "extinction_capped", "log1p_integral"]},
    )


# ---------------------------------------------------------------------------
# level decompositions


def check_level_poisson(stream: RandomStream, config: SuiteConfig,
                        res: SuiteResources) -> CheckResult:
    """Counts of level components that overshoot, given the boundary mass.

    Given the mass collected at the cut, the number of one-sided
    components whose labels travel at least ``a`` past the cut is Poisson
    with mean mass * 3/(2 a^2), per side and independently.  Ratios of
    total counts to total mass check the rate on each side at two
    distances; void probabilities per mass quartile check the Poisson
    shape against the per-draw plug-in.
    """
    n_total = config.mc.n_samples
    if n_total < 6000:
        return _inconclusive("level_poisson",
                             "needs at least 6000 configured samples")
    tol = config.tolerances.mean_rel
    g = _grid(config)
    h, dists = 0.35, (0.25, 0.4)
    n = max(1200, n_total // 4)
    zs, counts_up, counts_dn = [], {a: [] for a in dists}, {a: [] for a in dists}
    for i in range(n):
        s = snake.sample_snake(stream.split(i), g, 0.05)
        if s.wstar_refined <= h:
            continue
        dec = snake.decompose_at_level(s, h, extract_components=True,
                                       min_steps=40)
        zs.append(dec.exit_measure)
        ups = [c.sub_snake.wstar_refined - h
               for c in dec.components if c.side > 0 and c.sub_snake]
        dns = [h - c.sub_snake.wmin_refined
               for c in dec.components if c.side < 0 and c.sub_snake]
        for a in dists:
            counts_up[a].append(sum(1 for v in ups if v > a))
            counts_dn[a].append(sum(1 for v in dns if v > a))
    zs = np.asarray(zs)
    if len(zs) < 200:
        return _inconclusive("level_poisson", "too few crossings of the cut")
    ratios, ratio_ok = {}, True
    for a in dists:
        lam = 3.0 / (2.0 * a * a)
        for side, counts in (("up", counts_up[a]), ("down", counts_dn[a])):
            c = np.asarray(counts, dtype=np.float64)
            ratio = float(c.sum() / zs.sum())
            se = _ratio_block_se(c, zs)
            ratios[f"{side}_a_{a:g}"] = {"rate": ratio, "target": lam,
                                         "se": se}
            ratio_ok = ratio_ok and abs(ratio - lam) <= tol * lam

    # Poisson shape: per mass quartile, the observed void frequency must
    # match the mean of exp(-lam * mass) over the same draws
    a = dists[-1]
    lam = 3.0 / (2.0 * a * a)
    up = np.asarray(counts_up[a], dtype=np.float64)
    labels, _ = stats.quantile_bins(zs, 4)
    void_rows, void_pass = [], 0
    for b in range(4):
        sel = labels == b
        obs = float((up[sel] == 0).mean())
        pred = float(np.exp(-lam * zs[sel]).mean())
        se = math.sqrt(max(obs * (1 - obs), 1e-6) / sel.sum())
        okb = abs(obs - pred) <= 3.0 * se + 0.02
        void_pass += okb
        void_rows.append({"bin": b, "observed_void": obs,
                          "predicted_void": pred, "se": se, "ok": bool(okb)})
    up04 = np.asarray(counts_up[a], dtype=np.float64)
    dn04 = np.asarray(counts_dn[a], dtype=np.float64)
    cross = float(np.corrcoef(up04, dn04)[0, 1]) if up04.std() > 0 else 0.0
    first = ratios[f"up_a_{dists[-1]:g}"]
    return CheckResult(
        check_id="level_poisson",
        target=first["target"],
        estimate=first["rate"],
        ci_low=first["rate"] - 1.96 * first["se"],
        ci_high=first["rate"] + 1.96 * first["se"],
        p_value=None,
        passed=bool(ratio_ok and void_pass >= 3),
        detail={"cut_level": h, "n_crossing": int(len(zs)),
                "rates": ratios, "void_quartiles": void_rows,
                "updown_correlation": cross, "tolerance_rel": tol},
    )


def check_reroot_invariance(stream: RandomStream, config: SuiteConfig,
                            res: SuiteResources) -> CheckResult:
    """Invariance of traversal-weighted functionals under re-rooting.

    For a fixed step count the lattice excursion codes a uniform plane
    tree, and re-reading it from a uniform traversal corner is exactly
    law-preserving, labels included; restricting the step count to a
    window keeps that exact.  Traversal-weighted means of root-centred
    functionals over unconditioned draws must therefore be statistical
    zero, while step count and total time are preserved exactly.
    """
    n_total = config.mc.n_samples
    n = max(300, n_total // 10)
    g = _grid(config)
    gen = stream.generator("pick-step")
    min_steps, max_steps = 200, 100_000
    sig = np.empty(n)
    d_sup = np.empty(n)
    d_loc = np.empty(n)
    exact_ok = True
    kept, tries, budget = 0, 0, 40 * n
    while kept < n and tries < budget:
        s, complete = snake.sample_snake_raw(stream.split(tries), g, 1,
                                             step_cap=max_steps)
        tries += 1
        if not complete or s.n_steps < min_steps:
            continue
        u = int(gen.integers(0, s.n_steps))
        r = snake.reroot(s, u)
        exact_ok = exact_ok and r.n_steps == s.n_steps
        exact_ok = exact_ok and abs(r.sigma - s.sigma) <= 1e-12
        sig[kept] = s.sigma
        f_sup = (s.wstar_refined - s.x0, r.wstar_refined - r.x0)
        f_loc = (snake.occupation_between(s, s.x0 - 0.15, s.x0 + 0.15) / 0.3,
                 snake.occupation_between(r, r.x0 - 0.15, r.x0 + 0.15) / 0.3)
        d_sup[kept] = sig[kept] * (f_sup[1] - f_sup[0])
        d_loc[kept] = sig[kept] * (f_loc[1] - f_loc[0])
        kept += 1
    if kept < max(100, n // 2):
        return _inconclusive("reroot_invariance",
                             "too few excursions in the step window",
                             kept=kept, tries=tries)
    sig, d_sup, d_loc = sig[:kept], d_sup[:kept], d_loc[:kept]
    rows, ok = {}, exact_ok
    for name, d in (("sup_minus_root", d_sup), ("root_local_density", d_loc)):
        t_val = float(d.sum() / sig.sum())
        se = _ratio_block_se(d, sig)
        rows[name] = {"normalized_mean": t_val, "se": se}
        ok = ok and abs(t_val) <= 4.0 * se
    return CheckResult(
        check_id="reroot_invariance",
        target=0.0,
        estimate=rows["sup_minus_root"]["normalized_mean"],
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(ok),
        detail={"n_draws": kept, "step_window": [min_steps, max_steps],
                "functionals": rows,
                "exact_structure_preserved": exact_ok},
    )


# ---------------------------------------------------------------------------
# population-level checks


def check_occupation_kink(stream: RandomStream, config: SuiteConfig,
                          res: SuiteResources) -> CheckResult:
    """Derivative jump of the population occupation density at the origin.

    The one-sided slopes of the aggregate occupation density differ by
    -2 * alpha at the starting point; estimated by the lattice ladder
    extrapolation.  A reading whose standard error exceeds the tolerance
    is inconclusive rather than a verdict.
    """
    n_total = config.mc.n_samples
    if n_total < 2000:
        return _inconclusive("occupation_kink",
                             "needs at least 2000 configured samples")
    alpha = 1.0
    target = -2.0 * alpha
    tol = 2.0 * alpha * config.tolerances.mean_rel
    n_draws = (max(24, n_total // 50), max(24, n_total // 33),
               max(24, n_total // 28), max(24, n_total // 50))
    est = sbm.estimate_origin_jump(stream.split(1), alpha, n_draws=n_draws)
    detail = {
        "alpha": alpha,
        "ladder_deltas": list(est.deltas),
        "ladder_medians": list(est.medians),
        "refinement_slope": est.slope,
        "se": est.se,
        "tolerance_abs": tol,
    }
    if est.se > tol and abs(est.estimate - target) <= tol + 2.0 * est.se:
        return _inconclusive("occupation_kink",
                             "ladder reading too noisy at this budget",
                             target=target, **detail)
    return CheckResult(
        check_id="occupation_kink",
        target=target,
        estimate=est.estimate,
        ci_low=est.estimate - 1.96 * est.se,
        ci_high=est.estimate + 1.96 * est.se,
        p_value=None,
        passed=bool(abs(est.estimate - target) <= tol),
        detail=detail,
    )


def check_population_additivity(stream: RandomStream, config: SuiteConfig,
                                res: SuiteResources) -> CheckResult:
    """Superposition property of the aggregate occupation.

    One cloud from mass a1 + a2 must match the sum of independent clouds
    from a1 and a2; compared by an energy test on densities at three
    points and the log total mass.
    """
    n_total = config.mc.n_samples
    if n_total < 3000:
        return _inconclusive("population_additivity",
                             "needs at least 3000 configured samples")
    a1, a2 = 0.5, 0.8
    g = GridConfig(_coarse_delta(config))
    n = max(100, n_total // 50)
    points = (-0.35, 0.0, 0.35)

    def feats(draws) -> np.ndarray:
        out = np.zeros(4)
        total = 0.0
        for d in draws:
            prof = d.profile
            for k, x in enumerate(points):
                out[k] += float(np.interp(x, prof.levels, prof.ell))
            total += prof.total_mass
        out[3] = math.log1p(total)
        return out

    joint = np.empty((n, 4))
    split = np.empty((n, 4))
    for i in range(n):
        sub = stream.split(i)
        joint[i] = feats([sbm.sample_sbm_occupation(sub.split(0), a1 + a2, g)])
        split[i] = feats([
            sbm.sample_sbm_occupation(sub.split(1), a1, g),
            sbm.sample_sbm_occupation(sub.split(2), a2, g),
        ])
    mu, sd = joint.mean(axis=0), joint.std(axis=0)
    sd[sd == 0] = 1.0
    outcome = stats.energy_two_sample((joint - mu) / sd, (split - mu) / sd,
                                      stream.split(10_000), n_perm=200)
    return CheckResult(
        check_id="population_additivity",
        target=None,
        estimate=float(outcome.statistic),
        ci_low=None, ci_high=None,
        p_value=float(outcome.pvalue),
        passed=bool(outcome.pvalue > config.tolerances.p_threshold),
        detail={"n_per_group": n, "masses": [a1, a2], "holm_family": True,
                "feature_points": list(points)},
    )


# ---------------------------------------------------------------------------
# continuation-kernel checks


def check_kernel_mass_stability(stream: RandomStream, config: SuiteConfig,
                                res: SuiteResources) -> CheckResult:
    """Stability of continuation totals under halving the jump floor.

    The trimmed mean of the total mass must move by no more than the
    analytic neglected-mass allowance plus noise when the floor halves;
    each draw's total must equal the rescaled row sum exactly.
    """
    n_total = config.mc.n_samples
    if n_total < 3000:
        return _inconclusive("kernel_mass_stability",
                             "needs at least 3000 configured samples")
    table = res.table(_coarse_delta(config))
    states = ((0.4, 0.15), (0.8, 0.0))
    n = max(50, n_total // 250)

    def trimmed(v: np.ndarray) -> float:
        lo, hi = np.quantile(v, [0.05, 0.95])
        w = v[(v >= lo) & (v <= hi)]
        return float(w.mean()) if len(w) else float(v.mean())

    rows, ok_drift, ok_exact = {}, True, True
    first_drift = None
    gen = stream.generator("trim-boot")
    for s_idx, (t, y) in enumerate(states):
        state = continuation.ContinuationState(t, y)
        floor0 = continuation.default_jump_floor(t)
        totals = {}
        for f_idx, floor in enumerate((floor0, 0.5 * floor0)):
            vals = np.empty(n)
            for i in range(n):
                samp = continuation.sample_continuation(
                    stream.split(s_idx).split(f_idx).split(i), state, table,
                    jump_floor=floor)
                vals[i] = samp.total_weight()
                row_total = float(np.sum(
                    samp.jumps ** 2 * table.sigma[samp.rows]))
                if not math.isclose(vals[i], row_total,
                                    rel_tol=1e-9, abs_tol=1e-12):
                    ok_exact = False
            totals[floor] = vals
        v0, v1 = totals[floor0], totals[0.5 * floor0]
        drift = abs(trimmed(v0) - trimmed(v1))
        se = math.hypot(_boot_se(gen, v0, trimmed, n_boot=200),
                        _boot_se(gen, v1, trimmed, n_boot=200))
        allowance = (continuation.neglected_mass_bound(t, floor0)
                     - continuation.neglected_mass_bound(t, 0.5 * floor0))
        budget = 2.5 * se + abs(allowance)
        ok_drift = ok_drift and drift <= budget
        rows[f"state_t{t:g}_y{y:g}"] = {
            "floor": floor0, "drift": drift, "se": se,
            "allowance": abs(allowance), "budget": budget,
            "trimmed_mean": trimmed(v0),
        }
        if first_drift is None:
            first_drift = (drift, se)
    drift, se = first_drift
    return CheckResult(
        check_id="kernel_mass_stability",
        target=0.0,
        estimate=drift,
        ci_low=max(0.0, drift - 1.96 * se),
        ci_high=drift + 1.96 * se,
        p_value=None,
        passed=bool(ok_drift and ok_exact),
        detail={"states": rows, "row_sums_exact": ok_exact,
                "n_per_cell": n},
    )


def check_level_state_match(stream: RandomStream, config: SuiteConfig,
                            res: SuiteResources) -> CheckResult:
    """Cut-state pair against the passage-time pair of a split jump path.

    Given the boundary mass collected at the cut, the pair (density at
    the cut, half its level derivative) must match (passage time of a
    jump path started from that mass, plus-part terminal value) in law;
    compared per mass bin with 2-d energy tests.
    """
    n_total = config.mc.n_samples
    if n_total < 6000:
        return _inconclusive("level_state_match",
                             "needs at least 6000 configured samples")
    tol_p = config.tolerances.p_threshold
    h = 0.5
    ds = markov.build_level_dataset(stream.split(1), _grid(config), h,
                                    n_total // 2, threshold=0.05,
                                    with_exit=True)
    keep = ds.exit_mass > 0.02
    if keep.sum() < 300:
        return _inconclusive("level_state_match", "too few crossings kept")
    zs = ds.exit_mass[keep]
    snake_pairs = np.column_stack([ds.states[keep, 0],
                                   0.5 * ds.states[keep, 1]])
    labels, edges = stats.quantile_bins(zs, 5)
    per_bin = max(60, n_total // 250)
    gen = stream.generator("bin-pick")
    bin_rows, tested, matched = [], 0, 0
    for b in range(5):
        idx = np.flatnonzero(labels == b)
        if len(idx) < 50:
            continue
        take = idx[gen.choice(len(idx), size=min(per_bin, len(idx)),
                              replace=False)]
        pairs = np.empty((len(take), 2))
        got = 0
        for j, row in enumerate(take):
            sub = stream.split(100 + b).split(j)
            try:
                path = levy.sample_levy_path(sub.split(0),
                                             levy.FULL_EXPONENT,
                                             float(zs[row]),
                                             cutoff=config.levy.cutoff,
                                             dt=config.levy.dt,
                                             stop="at_zero", horizon=100.0)
                split = levy.split_by_signs(sub.split(1), path)
                rec = levy.first_hitting_zero(path, split)
            except NotAbsorbed:
                continue
            pairs[got] = (rec.t0, rec.terminal_split[1])
            got += 1
        if got < 40:
            continue
        pairs = pairs[:got]
        snakes = snake_pairs[idx]
        if len(snakes) > 3 * got:
            snakes = snakes[gen.choice(len(snakes), size=3 * got,
                                       replace=False)]
        mu = pairs.mean(axis=0)
        sd = pairs.std(axis=0)
        sd[sd == 0] = 1.0
        outcome = stats.energy_two_sample((snakes - mu) / sd,
                                          (pairs - mu) / sd,
                                          stream.split(200 + b), n_perm=200)
        tested += 1
        matched += outcome.pvalue > tol_p
        bin_rows.append({"bin": b, "mass_edges": [float(edges[b]),
                                                  float(edges[b + 1])],
                         "n_trees": int(len(snakes)), "n_paths": got,
                         "p": float(outcome.pvalue)})
    if tested < 3:
        return _inconclusive("level_state_match", "too few testable bins",
                             bins=bin_rows)
    frac = matched / tested
    return CheckResult(
        check_id="level_state_match",
        target=1.0,
        estimate=frac,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(frac >= config.tolerances.bin_fraction),
        detail={"cut_level": h, "bins": bin_rows, "n_tested": tested},
    )


def check_markov_kernel_match(stream: RandomStream, config: SuiteConfig,
                              res: SuiteResources) -> CheckResult:
    """Conditional futures of tree draws against the continuation kernel.

    Three-part comparison at one cut level (bin-matched kernel futures,
    past-reading probe, sign-of-derivative positive control) plus the
    homogeneity comparison across two cut levels.
    """
    n_total = config.mc.n_samples
    if n_total < 8000:
        return _inconclusive("markov_kernel_match",
                             "needs at least 8000 configured samples")
    tol = config.tolerances
    g = _grid(config)
    ds05 = markov.build_level_dataset(stream.split(1), g, 0.5, n_total,
                                      threshold=0.05)
    if len(ds05) < 600:
        return _inconclusive("markov_kernel_match",
                             "too few draws reach the cut level")
    bins = markov.assign_bins(ds05.states, 4, 4)
    table = res.table(_coarse_delta(config))
    kds = markov.build_kernel_dataset(stream.split(2), ds05, table, bins,
                                      per_bin=max(50, n_total // 330),
                                      min_bin=50)
    rep = markov.markov_property_test(ds05, kds, stream.split(3), bins=bins,
                                      p_threshold=tol.p_threshold, min_bin=50)
    ds10 = markov.build_level_dataset(stream.split(4), g, 1.0, n_total,
                                      threshold=0.05)
    hom = markov.homogeneity_test(ds05, ds10, stream.split(5),
                                  p_threshold=tol.p_threshold, min_bin=50)
    detail = {"kernel_comparison": rep.to_dict(),
              "homogeneity": hom.to_dict(),
              "n_states_low": len(ds05), "n_states_high": len(ds10),
              "n_kernel": len(kds)}
    if rep.inconclusive or hom.inconclusive or not rep.control_tests \
            or not rep.past_tests:
        return _inconclusive("markov_kernel_match",
                             "too few populated bins for a verdict",
                             target=1.0, **detail)
    ok = (rep.match_fraction >= tol.bin_fraction
          and rep.past_fraction >= tol.bin_fraction
          and rep.control_reject_fraction >= tol.control_fraction
          and hom.match_fraction >= tol.bin_fraction)
    return CheckResult(
        check_id="markov_kernel_match",
        target=1.0,
        estimate=rep.match_fraction,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(ok),
        detail=detail,
    )


def check_population_kernel_match(stream: RandomStream, config: SuiteConfig,
                                  res: SuiteResources) -> CheckResult:
    """Conditional futures of the aggregate cloud against the kernel.

    The cut state of a population draw must continue by the same kernel
    as a single tree; bin-matched energy comparison at one cut level.
    """
    n_total = config.mc.n_samples
    if n_total < 8000:
        return _inconclusive("population_kernel_match",
                             "needs at least 8000 configured samples")
    tol = config.tolerances
    alpha, h, eps_pop = 0.8, 0.35, 0.02
    gp = GridConfig(max(config.grid.delta, 0.01))
    n_draws = max(700, n_total // 12)
    ds = markov.build_sbm_level_dataset(stream.split(1), gp, n_draws, alpha,
                                        h, eps_pop=eps_pop,
                                        step_cap=4_000_000)
    if len(ds) < 350:
        return _inconclusive("population_kernel_match",
                             "too few cloud draws reach the cut")
    bins = markov.assign_bins(ds.states, 3, 3)
    table = res.table(_coarse_delta(config))
    kds = markov.build_kernel_dataset(stream.split(2), ds, table, bins,
                                      per_bin=max(40, n_total // 500),
                                      min_bin=40)
    rep = markov.markov_property_test(ds, kds, stream.split(3), bins=bins,
                                      p_threshold=tol.p_threshold, min_bin=40)
    detail = {"comparison": rep.to_dict(), "alpha": alpha,
              "cut_level": h, "n_states": len(ds), "n_kernel": len(kds)}
    if rep.inconclusive:
        return _inconclusive("population_kernel_match",
                             "too few populated bins for a verdict",
                             target=1.0, **detail)
    return CheckResult(
        check_id="population_kernel_match",
        target=1.0,
        estimate=rep.match_fraction,
        ci_low=None, ci_high=None, p_value=None,
        passed=bool(rep.match_fraction >= tol.bin_fraction),
        detail=detail,
    )


def check_test_calibration(stream: RandomStream, config: SuiteConfig,
                           res: SuiteResources) -> CheckResult:
    """Null rejection rates of the comparison machinery.

    Random halves of one future-feature dataset are compared repeatedly;
    the rejection rates of the energy and KS tests at level 0.05 must sit
    inside the configured calibration window.
    """
    n_total = config.mc.n_samples
    if n_total < 5000:
        return _inconclusive("test_calibration",
                             "needs at least 5000 configured samples")
    lo, hi = (config.tolerances.calibration_low,
              config.tolerances.calibration_high)
    target_rows = min(500, max(240, n_total // 50))
    ds = markov.build_level_dataset(stream.split(1), _grid(config), 0.35,
                                    int(1.3 * target_rows), threshold=0.05)
    feats = ds.futures
    if len(feats) < 200:
        return _inconclusive("test_calibration", "too few feature rows")
    feats = (feats - feats.mean(axis=0)) / np.where(feats.std(axis=0) == 0,
                                                    1.0, feats.std(axis=0))
    reps = max(150, min(350, n_total // 60))
    gen = stream.generator("halves")
    rej_e, rej_k = 0, 0
    half = len(feats) // 2
    for r in range(reps):
        perm = gen.permutation(len(feats))
        fa, fb = feats[perm[:half]], feats[perm[half:2 * half]]
        out_e = stats.energy_two_sample(fa, fb, stream.split(10 + r),
                                        n_perm=199)
        rej_e += out_e.pvalue <= 0.05
        out_k = stats.ks_two_sample(fa[:, 0], fb[:, 0])
        rej_k += out_k.pvalue <= 0.05
    rate_e, rate_k = rej_e / reps, rej_k / reps
    se = math.sqrt(0.05 * 0.95 / reps)
    ok = lo <= rate_e <= hi and lo <= rate_k <= hi
    return CheckResult(
        check_id="test_calibration",
        target=0.05,
        estimate=rate_e,
        ci_low=rate_e - 1.96 * se,
        ci_high=rate_e + 1.96 * se,
        p_value=None,
        passed=bool(ok),
        detail={"energy_rate": rate_e, "ks_rate": rate_k,
                "n_replicates": reps, "n_rows": int(len(feats)),
                "window": [lo, hi],
                "note": "replicates reuse one dataset, so the binomial se "
                        "understates the replicate dependence slightly"},
    )
