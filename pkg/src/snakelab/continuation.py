"""Forward continuation of level occupation statistics.

Cutting a random tree's occupation measure at a level leaves two numbers at
the interface: the occupation density there and half its level derivative.
Everything above the level depends on the past only through that pair, and
the transition has an explicit sampling form: run a stable bridge at half
the branching rate from 0 to the half-derivative over a duration equal to
the density, then hang an independent positive excursion on every jump of
the bridge, rescaled so its boundary mass equals the jump size.  The summed
occupation measures of those excursions are the continuation.

The module also carries the closed-form shape functions the statistical
checks lean on: the single-level mean density shape, its tail integral, and
the small-ball mass function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import levy, snake
from .errors import ConfigurationError, DomainError
from .sampling_core import JUMP_DENSITY_COEFF, GridConfig
from .streams import RandomStream

__all__ = [
    "occupation_shape",
    "shape_tail_integral",
    "small_ball_mass",
    "mean_level_density",
    "mean_time_above",
    "ContinuationState",
    "MeasureSample",
    "ExcursionTable",
    "build_excursion_table",
    "neglected_mass_bound",
    "default_jump_floor",
    "sample_continuation",
    "continue_profile",
]

_SQRT_PI = math.sqrt(math.pi)

# Where the closed form for the shape function hands over to its divergent
# asymptotic series.  At the crossover the direct form has lost ~8 digits to
# cancellation while the series is good to ~9, so both sides agree to ~1e-8
# relative; beyond it the series only improves.
_SERIES_SWITCH = 400.0

# Coefficients of the large-x expansion  (2/sqrt(pi)) * sum c_k x^{-(5+2k)/2},
# from repeated integration by parts of the complementary error function.
_SERIES_COEFFS = (
    3.0 / 4.0,
    -15.0 / 4.0,
    315.0 / 16.0,
    -945.0 / 8.0,
    51975.0 / 64.0,
    -405405.0 / 64.0,
)

# Same expansion integrated against sqrt(y) from c to infinity:
# (2/sqrt(pi)) * sum (c_k / (k+1)) c^{-(k+1)}.
_TAIL_COEFFS = tuple(c / (k + 1.0) for k, c in enumerate(_SERIES_COEFFS))


def occupation_shape(x):
    """Shape function of the single-level mean occupation density.

    Defined for positive arguments; decays like (3/(2 sqrt(pi))) x^{-5/2}
    at infinity and blows up like (2/sqrt(pi)) x^{-1/2} at zero.  Scalar in,
    scalar out; arrays map elementwise.

    Parameters
    ----------
    x : float or array_like
        Strictly positive evaluation points.

    Returns
    -------
    float or numpy.ndarray

    Raises
    ------
    DomainError
        If any evaluation point is not strictly positive.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.size == 0:
        return arr.copy()
    if np.any(~(arr > 0.0)):
        raise DomainError("shape function argument must be positive")
    out = np.empty_like(arr)
    direct = arr < _SERIES_SWITCH
    if np.any(direct):
        v = arr[direct]
        r = np.sqrt(v)
        # erfcx(s) = exp(s^2) erfc(s) keeps the subtraction finite at any size
        out[direct] = (2.0 / _SQRT_PI) * (r + 1.0 / r) - 2.0 * (v + 1.5) * special.erfcx(r)
    if np.any(~direct):
        v = arr[~direct]
        acc = np.zeros_like(v)
        for k, c in enumerate(_SERIES_COEFFS):
            acc += c * v ** (-(5.0 + 2.0 * k) / 2.0)
        out[~direct] = (2.0 / _SQRT_PI) * acc
    if np.isscalar(x) or arr.ndim == 0:
        return float(out)
    return out


def shape_tail_integral(c: float) -> float:
    """Integral of sqrt(y) times the shape function over (c, infinity).

    Adaptive quadrature up to the series crossover plus the closed-form
    remainder beyond it; relative accuracy around 1e-9.  The integrand tends
    to 2/sqrt(pi) at zero, so c = 0 is allowed and returns 1/sqrt(pi).
    """
    if c < 0:
        raise DomainError("lower limit must be nonnegative")
    tail = (2.0 / _SQRT_PI) * sum(
        a * _SERIES_SWITCH ** (-(k + 1.0)) for k, a in enumerate(_TAIL_COEFFS)
    )
    if c >= _SERIES_SWITCH:
        return (2.0 / _SQRT_PI) * sum(
            a * c ** (-(k + 1.0)) for k, a in enumerate(_TAIL_COEFFS)
        )

    def integrand(y: float) -> float:
        if y <= 0.0:
            return 2.0 / _SQRT_PI
        return math.sqrt(y) * occupation_shape(y)

    val, _ = integrate.quad(
        integrand, c, _SERIES_SWITCH, epsabs=0.0, epsrel=1e-10, limit=400
    )
    return val + tail


def small_ball_mass(u):
    """Expected occupation mass near the root level, as a scaling function.

    For a positive excursion with boundary size z, the expected traversal
    time spent at labels below eps equals eps^4 times this function of
    z / eps^2.  Grows like u^2 at zero and like u - 5/3 at infinity.

    Parameters
    ----------
    u : float or array_like
        Strictly positive arguments.

    Returns
    -------
    float or numpy.ndarray
    """
    arr = np.asarray(u, dtype=np.float64)
    if arr.size == 0:
        return arr.copy()
    if np.any(~(arr > 0.0)):
        raise DomainError("small-ball argument must be positive")
    flat = arr.ravel()
    vals = np.array([_SQRT_PI * v * v * shape_tail_integral(1.5 * v) for v in flat])
    if np.isscalar(u) or arr.ndim == 0:
        return float(vals[0])
    return vals.reshape(arr.shape)


def mean_level_density(z: float, x):
    """Mean occupation density at height x per unit total mass.

    For a positive excursion with boundary size z the expected occupation
    density at height x is z^2 times this value; it integrates to one over
    x in (0, infinity).
    """
    if z <= 0:
        raise DomainError("boundary size must be positive")
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0.0)):
        raise DomainError("height must be positive")
    val = (
        2.0
        * (1.5**1.5)
        * _SQRT_PI
        * z**1.5
        * arr**-4.0
        * occupation_shape(1.5 * z / arr**2)
    )
    if np.isscalar(x) or arr.ndim == 0:
        return float(val)
    return val


def mean_time_above(z: float, x: float) -> float:
    """Expected traversal time above height x per positive excursion.

    Closed form z^2 - x^4 f(z / x^2) with f the small-ball mass function;
    equals z^2 at x = 0.
    """
    if z <= 0:
        raise DomainError("boundary size must be positive")
    if x < 0:
        raise DomainError("height must be nonnegative")
    if x == 0.0:
        return z * z
    return z * z - x**4 * small_ball_mass(z / x**2)


@dataclass(frozen=True)
class ContinuationState:
    """Interface data of an occupation measure cut at a level.

    Attributes
    ----------
    occupation : float
        Occupation density at the cut level.  Nonnegative; zero forces the
        continuation to be empty.
    slope_half : float
        Half the level derivative of the occupation density.  Must vanish
        when ``occupation`` does.
    """

    occupation: float
    slope_half: float

    def __post_init__(self):
        if not math.isfinite(self.occupation) or not math.isfinite(self.slope_half):
            raise DomainError("state entries must be finite")
        if self.occupation < 0:
            raise DomainError("occupation density cannot be negative")
        if self.occupation == 0 and self.slope_half != 0:
            raise DomainError("zero occupation forces a zero slope")


@dataclass
class MeasureSample:
    """One continuation draw, stored as weighted atoms on a level grid.

    Atom j sits at ``locations[j]`` and carries occupation mass
    ``weights[j]``; the atoms tile the cells of ``resolution`` (the final
    atom absorbs everything above the grid top).  ``jumps`` records the
    bridge jump sizes actually used, largest first, and ``neglected_mass``
    is a first-order bound on the expected occupation dropped with the
    jumps below the floor.
    """

    locations: np.ndarray
    weights: np.ndarray
    resolution: np.ndarray
    provenance: str
    jumps: np.ndarray
    neglected_mass: float
    max_label: float = 0.0
    rows: np.ndarray | None = field(default=None, repr=False)
    _above: np.ndarray | None = field(default=None, repr=False, compare=False)

    def total_weight(self) -> float:
        return float(self.weights.sum())

    def time_above(self, x: float) -> float:
        """Occupation mass at heights above x (linear within a grid cell)."""
        if len(self.weights) == 0:
            return 0.0
        if x > self.resolution[-1]:
            return 0.0
        if self._above is None:
            # atom j covers [resolution[j], resolution[j+1]); the last one is
            # a point mass at the grid top
            self._above = np.cumsum(self.weights[::-1])[::-1]
        return float(np.interp(x, self.resolution, self._above))

    def validate(self) -> None:
        if len(self.locations) != len(self.weights):
            raise ConfigurationError("locations and weights must align")
        if len(self.weights) and self.weights.min() < -1e-12:
            raise ConfigurationError("weights must be nonnegative")
        if not np.isfinite(self.weights.sum()):
            raise ConfigurationError("total weight must be finite")
        if self.provenance not in ("snake", "kernel", "sbm"):
            raise ConfigurationError("unknown provenance tag")
        if len(self.jumps) > 1 and np.any(np.diff(self.jumps) > 0):
            raise ConfigurationError("jumps must be nonincreasing")


@dataclass
class ExcursionTable:
    """Compact reusable summaries of unit-boundary positive excursions.

    Row i stores the traversal time member i spends above each entry of
    ``levels``.  A continuation draw rescales rows instead of trajectories:
    a jump of size eta turns row i into the curve
    eta^2 * above[i](x / sqrt(eta)), which is exact for the lattice scaling.
    """

    levels: np.ndarray
    above: np.ndarray
    sigma: np.ndarray
    peak: np.ndarray
    delta: float

    def __len__(self) -> int:
        return self.above.shape[0]

    def validate(self) -> None:
        if self.above.shape != (len(self.sigma), len(self.levels)):
            raise ConfigurationError("table shapes disagree")
        if np.any(np.diff(self.levels) <= 0) or self.levels[0] != 0.0:
            raise ConfigurationError("levels must increase from zero")
        if np.any(np.diff(self.above, axis=1) > 1e-12):
            raise ConfigurationError("above-level curves must be nonincreasing")


def _default_levels() -> np.ndarray:
    # dense near zero where profiles are read off, geometric further out
    return np.concatenate(
        [np.linspace(0.0, 1.5, 61), np.geomspace(1.6, 15.0, 28)]
    )


def build_excursion_table(
    stream: RandomStream,
    cfg: GridConfig,
    size: int,
    levels: np.ndarray | None = None,
    **pool_kwargs,
) -> ExcursionTable:
    """Draw ``size`` unit-boundary excursions and tabulate their occupations.

    Extra keyword arguments are forwarded to the positive-excursion sampler
    (window, eps_base, step_cap, ...).
    """
    if size < 1:
        raise ConfigurationError("table needs at least one row")
    if levels is None:
        levels = _default_levels()
    levels = np.asarray(levels, dtype=np.float64)
    above = np.empty((size, len(levels)))
    sigma = np.empty(size)
    peak = np.empty(size)
    for i in range(size):
        exc = snake.sample_positive_excursion(stream.split(i), cfg, 1.0, **pool_kwargs)
        st = exc.sorted_tips()
        above[i] = (len(st) - np.searchsorted(st, levels, side="right")) * exc.time_step
        sigma[i] = exc.sigma
        peak[i] = exc.wstar
    return ExcursionTable(levels, above, sigma, peak, cfg.delta)


def neglected_mass_bound(duration: float, floor: float) -> float:
    """First-order bound on expected mass carried by jumps below the floor.

    Jumps of size eta below the floor arrive along the bridge at the
    half-rate intensity and contribute expected occupation eta^2 apiece, so
    integrating size^2 against the intensity up to the floor gives
    duration * sqrt(3/(2 pi)) * sqrt(floor).  Bridge conditioning perturbs
    the small-jump intensity only at second order and is ignored.
    """
    if duration < 0 or floor < 0:
        raise DomainError("duration and floor must be nonnegative")
    return duration * JUMP_DENSITY_COEFF * math.sqrt(floor)


def default_jump_floor(duration: float) -> float:
    """Floor under which bridge jumps are dropped rather than decorated.

    Scales like duration^{2/3} so the per-draw jump count stays flat; the
    constant keeps the neglected-mass bound near one percent of the typical
    total mass at moderate durations while keeping draws affordable.
    """
    if duration <= 0:
        return 1e-3
    return float(np.clip(2e-4 * duration ** (2.0 / 3.0), 1e-6, 1e-3))


def sample_continuation(
    stream: RandomStream,
    state: ContinuationState,
    table: ExcursionTable,
    jump_floor: float | None = None,
    endpoint_tol: float | None = None,
    grid: np.ndarray | None = None,
    batch: int = 256,
    max_batches: int = 6400,
) -> MeasureSample:
    """Draw one continuation measure from the interface state.

    Bridge jumps above the floor are decorated with independent rescaled
    rows of ``table``; the summed occupation comes back binned on ``grid``
    (built adaptively when omitted).  A zero-occupation state returns the
    empty measure.

    Raises
    ------
    DomainError
        If the state is invalid (negative occupation, or zero occupation
        with a nonzero slope; both already rejected by the state type).
    SamplingTooHard
        If the bridge endpoint window accepts nothing within budget.
    """
    t = state.occupation
    y = state.slope_half
    if t == 0.0:
        empty = np.empty(0)
        return MeasureSample(
            empty,
            empty.copy(),
            np.zeros(1),
            "kernel",
            empty.copy(),
            0.0,
            0.0,
            np.empty(0, dtype=np.int64),
        )
    if jump_floor is None:
        jump_floor = default_jump_floor(t)
    if jump_floor <= 0:
        raise ConfigurationError("jump floor must be positive")
    if endpoint_tol is None:
        # constant relative to the bridge spread (c t)^{2/3} so the endpoint
        # acceptance rate does not collapse at small durations
        endpoint_tol = max(
            1e-3, 0.04 * (levy.HALF_EXPONENT.coefficient * t) ** (2.0 / 3.0)
        )

    jumps = levy.sample_bridge_jumps(
        stream.split(1),
        levy.HALF_EXPONENT,
        t,
        y,
        tol=endpoint_tol,
        cutoff=jump_floor,
        batch=batch,
        max_batches=max_batches,
    )
    neglected = neglected_mass_bound(t, jump_floor)

    gen = stream.split(2).generator("row-assign")
    rows = gen.integers(0, len(table), size=len(jumps))

    if grid is None:
        if len(jumps):
            top = float(np.max(np.sqrt(jumps) * table.peak[rows]))
        else:
            top = 0.0
        width = max(0.02, top / 160.0)
        grid = np.arange(0.0, max(top + 2 * width, 10 * width), width)
    grid = np.asarray(grid, dtype=np.float64)
    if len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ConfigurationError("grid must increase from zero")

    above = np.zeros(len(grid))
    max_label = 0.0
    if len(jumps):
        jumps = np.asarray(jumps, dtype=np.float64)
        roots = np.sqrt(jumps)
        max_label = float(np.max(roots * table.peak[rows]))
        # group jumps by assigned row so each group is one vectorised interp
        order = np.argsort(rows, kind="stable")
        srows, setas, sroots = rows[order], jumps[order], roots[order]
        cuts = np.flatnonzero(np.diff(srows)) + 1
        starts = np.concatenate(([0], cuts))
        stops = np.concatenate((cuts, [len(srows)]))
        step = max(1, int(4e6 // max(len(grid), 1)))
        for a, b in zip(starts, stops):
            row = table.above[srows[a]]
            for c in range(a, b, step):
                d = min(c + step, b)
                q = np.multiply.outer(1.0 / sroots[c:d], grid)
                vals = np.interp(
                    q.ravel(), table.levels, row, right=0.0
                ).reshape(q.shape)
                above += (setas[c:d] ** 2) @ vals

    weights = np.empty(len(grid))
    weights[:-1] = above[:-1] - above[1:]
    weights[-1] = above[-1]
    np.clip(weights, 0.0, None, out=weights)
    locations = np.empty(len(grid))
    locations[:-1] = 0.5 * (grid[:-1] + grid[1:])
    locations[-1] = grid[-1]
    desc = np.argsort(-np.asarray(jumps, dtype=np.float64), kind="stable")
    return MeasureSample(
        locations,
        weights,
        grid,
        "kernel",
        np.asarray(jumps, dtype=np.float64)[desc],
        neglected,
        max_label,
        rows[desc] if len(desc) else rows,
    )


def continue_profile(
    stream: RandomStream,
    state: ContinuationState,
    table: ExcursionTable,
    bandwidth: float = 0.025,
    top: float | None = None,
    **kwargs,
) -> snake.LocalTimeProfile:
    """Draw a continuation and return its occupation density curves.

    The atoms already carry cell masses, so the density is exact binning
    rebinned at ``bandwidth`` resolution; the derivative channel is the
    centred difference of neighbouring cells with a forward difference as
    the one-sided variant.  Near the cut level the mean profile starts at
    the state's occupation with slope twice its half-derivative.
    """
    if bandwidth <= 0:
        raise ConfigurationError("bandwidth must be positive")
    sample = sample_continuation(stream, state, table, **kwargs)
    if top is None:
        top = max(float(sample.max_label) + 2 * bandwidth, 10 * bandwidth)
    edges = np.arange(0.0, top + bandwidth, bandwidth)
    cum = np.array([sample.time_above(e) for e in edges])
    centers = 0.5 * (edges[:-1] + edges[1:])
    ell = (cum[:-1] - cum[1:]) / bandwidth
    ell_dot = np.gradient(ell, centers) if len(ell) > 1 else np.zeros_like(ell)
    one_sided = np.empty_like(ell)
    if len(ell) > 1:
        one_sided[:-1] = (ell[1:] - ell[:-1]) / bandwidth
        one_sided[-1] = one_sided[-2]
    else:
        one_sided[:] = 0.0
    return snake.LocalTimeProfile(
        centers,
        ell,
        ell_dot,
        one_sided,
        bandwidth / 2.0,
        bandwidth,
        sample.total_weight(),
    )
