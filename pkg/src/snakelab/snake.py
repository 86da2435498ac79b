"""Tree-indexed label paths: sampling, local times, truncation, re-rooting,
level decompositions, positive excursions, and ball volumes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, DomainError, NotAbsorbed, SamplingTooHard
from .sampling_core import DEFAULT_STEP_CAP, GridConfig
from .streams import RandomStream

__all__ = [
    "SnakeTrajectory",
    "LocalTimeProfile",
    "ComponentSummary",
    "LevelDecomposition",
    "TruncationResult",
    "BallVolumeProfile",
    "sample_snake",
    "sample_snake_raw",
    "local_time_profile",
    "occupation_between",
    "level_statistics",
    "truncate",
    "reroot",
    "decompose_at_level",
    "sample_positive_excursion",
    "PositiveExcursionPool",
    "ball_volume_profile",
]


@dataclass
class SnakeTrajectory:
    """Discrete snake: a lattice lifetime walk plus the tip label at each step.

    ``heights`` are lifetimes in units of ``delta`` (so consecutive entries
    differ by exactly one); each step carries ``delta**2`` of traversal time.
    ``tips`` holds the label of the tree point visited at each step.  The full
    label path of a step is recoverable by stacking tip increments of the
    up-steps below it, which every operation here does in one sweep.
    """

    delta: float
    x0: float
    heights: np.ndarray
    tips: np.ndarray
    cond_threshold: float | None = None
    boundary_size: float | None = None
    _sorted: np.ndarray | None = field(default=None, repr=False, compare=False)
    _extremes: tuple[float, float] | None = field(
        default=None, repr=False, compare=False
    )

    @property
    def n_steps(self) -> int:
        return len(self.heights) - 1

    @property
    def time_step(self) -> float:
        return self.delta * self.delta

    @property
    def sigma(self) -> float:
        return self.n_steps * self.time_step

    @property
    def wstar(self) -> float:
        return float(self.tips.max())

    @property
    def wmin(self) -> float:
        return float(self.tips.min())

    def _refined(self) -> tuple[float, float]:
        if self._extremes is None:
            mx, mn = _kernels.refined_extrema(
                self.heights, self.tips, self.x0, self.delta,
                int(self.heights.max()),
            )
            self._extremes = (float(mx), float(mn))
        return self._extremes

    @property
    def wstar_refined(self) -> float:
        """Max label including within-edge bridge refinements.

        Lattice tips understate path maxima by the fluctuation inside each
        segment; this adds an inverse-transform bridge maximum per tree edge
        (deterministic per trajectory), removing the O(sqrt(delta)) bias.
        """
        return self._refined()[0]

    @property
    def wmin_refined(self) -> float:
        return self._refined()[1]

    def sorted_tips(self) -> np.ndarray:
        # tips of steps 0..n-1, each weighted by one time quantum
        if self._sorted is None:
            self._sorted = np.sort(self.tips[:-1])
        return self._sorted

    def validate(self) -> None:
        h = self.heights
        if h[0] != 0 or h[-1] != 0 or h.min() < 0:
            raise ConfigurationError("heights must start and end at zero")
        if len(h) > 1 and np.abs(np.diff(h)).max() != 1:
            raise ConfigurationError("heights must move one unit per step")
        if len(self.tips) != len(h):
            raise ConfigurationError("tips and heights must align")


@dataclass
class LocalTimeProfile:
    """Occupation density and its level derivative on a uniform level grid."""

    levels: np.ndarray
    ell: np.ndarray
    ell_dot: np.ndarray
    ell_dot_onesided: np.ndarray
    bandwidth: float
    deriv_bandwidth: float
    total_mass: float

    def ell_at(self, x: float) -> float:
        return float(np.interp(x, self.levels, self.ell))

    def ell_dot_at(self, x: float) -> float:
        return float(np.interp(x, self.levels, self.ell_dot))


@dataclass
class ComponentSummary:
    side: int
    steps: int
    sigma: float
    boundary_size: float
    max_tip: float
    min_tip: float
    debut: int
    sub_snake: SnakeTrajectory | None = None


@dataclass
class LevelDecomposition:
    level: float
    collar: float
    exit_measure: float
    root: ComponentSummary
    components: list[ComponentSummary]


@dataclass
class TruncationResult:
    trajectory: SnakeTrajectory
    exit_measure: float
    away_steps: np.ndarray
    away_max: np.ndarray
    away_min: np.ndarray
    away_side: np.ndarray


@dataclass
class BallVolumeProfile:
    radii: np.ndarray
    volumes: np.ndarray
    anchor: float  # minimal label; volumes are measured from the point realising it


def default_collar(cfg_or_delta) -> float:
    delta = cfg_or_delta.delta if isinstance(cfg_or_delta, GridConfig) else cfg_or_delta
    return math.sqrt(delta)


def sample_snake_raw(
    stream: RandomStream,
    cfg: GridConfig,
    threshold_steps: int,
    x0: float = 0.0,
    step_cap: int = DEFAULT_STEP_CAP,
) -> tuple[SnakeTrajectory, bool]:
    """One conditioned snake, not retried: returns (snake, complete).

    ``complete`` is False when the lifetime walk hit ``step_cap``; the partial
    snake is still returned so tail studies can use what was achieved.
    """
    if threshold_steps < 1:
        raise ConfigurationError("threshold_steps must be >= 1")
    heights, complete = _kernels.sample_excursion_heights(
        stream.key64("lifetime-walk"), threshold_steps, step_cap
    )
    max_h = int(heights.max())
    tips = _kernels.fill_tips(
        heights, stream.key64("labels"), x0, cfg.label_sigma, max_h
    )
    snake = SnakeTrajectory(
        cfg.delta, x0, heights, tips, cond_threshold=threshold_steps * cfg.delta
    )
    return snake, complete


def sample_snake(
    stream: RandomStream,
    cfg: GridConfig,
    threshold: float,
    x0: float = 0.0,
    wstar_above: float | None = None,
    step_cap: int = DEFAULT_STEP_CAP,
    max_tries: int = 10_000,
    acceptance_floor: float = 1e-4,
) -> SnakeTrajectory:
    """Snake conditioned on lifetime sup > threshold (and optionally on the
    max label exceeding ``wstar_above``, by rejection).

    The sampled event carries mass 1/(2 * effective threshold) under the
    excursion normalisation, where the effective threshold is ``threshold``
    rounded to the lifetime grid (exposed as ``cond_threshold``).
    """
    if threshold < cfg.delta:
        raise ConfigurationError(
            f"threshold {threshold} is below grid resolution delta={cfg.delta}"
        )
    m = int(round(threshold / cfg.delta))
    tries = 0
    while True:
        snake, complete = sample_snake_raw(stream.split(tries), cfg, m, x0, step_cap)
        tries += 1
        if not complete:
            raise NotAbsorbed(step_cap * cfg.time_step, "excursion exceeded step cap")
        if wstar_above is None or snake.wstar_refined > wstar_above:
            return snake
        if tries >= max_tries:
            raise SamplingTooHard(
                "label-max conditioning accepted nothing",
                {"tries": tries, "wstar_above": wstar_above},
            )
        if tries >= 200 and 1.0 / tries < acceptance_floor:
            raise SamplingTooHard(
                "label-max conditioning acceptance below floor",
                {"tries": tries, "floor": acceptance_floor},
            )


def occupation_between(snake: SnakeTrajectory, lo: float, hi: float) -> float:
    """Traversal time spent at labels in [lo, hi)."""
    st = snake.sorted_tips()
    i = np.searchsorted(st, lo, side="left")
    j = np.searchsorted(st, hi, side="left")
    return float(j - i) * snake.time_step


def local_time_profile(
    snake: SnakeTrajectory,
    levels: np.ndarray | None = None,
    bandwidth: float | None = None,
    deriv_bandwidth: float | None = None,
) -> LocalTimeProfile:
    """Kernel estimate of the occupation density over a level grid.

    ``ell`` uses a centred box kernel of half-width ``bandwidth``; the
    derivative uses the symmetric difference of exact occupations over
    ``deriv_bandwidth``-wide flanks (second-order accurate), with the
    one-sided variant emitted as a cross-check channel.
    """
    if bandwidth is None:
        bandwidth = default_collar(snake.delta)
    if deriv_bandwidth is None:
        deriv_bandwidth = 2.0 * bandwidth
    if bandwidth <= 0 or deriv_bandwidth <= 0:
        raise ConfigurationError("bandwidths must be positive")
    if levels is None:
        lo = snake.wmin - 2 * bandwidth
        hi = snake.wstar + 2 * bandwidth
        levels = np.arange(lo, hi + bandwidth, bandwidth)
    levels = np.asarray(levels, dtype=np.float64)

    st = snake.sorted_tips()
    dt = snake.time_step

    def occ(edges_lo, edges_hi):
        i = np.searchsorted(st, edges_lo, side="left")
        j = np.searchsorted(st, edges_hi, side="left")
        return (j - i) * dt

    ell = occ(levels - bandwidth, levels + bandwidth) / (2.0 * bandwidth)
    b2 = deriv_bandwidth
    above = occ(levels, levels + b2)
    below = occ(levels - b2, levels)
    ell_dot = (above - below) / (b2 * b2)
    one_sided = 2.0 * (above - b2 * ell) / (b2 * b2)
    return LocalTimeProfile(
        levels, ell, ell_dot, one_sided, bandwidth, b2, snake.sigma
    )


def level_statistics(
    snake: SnakeTrajectory,
    h: float,
    bandwidth: float | None = None,
    deriv_bandwidth: float | None = None,
) -> tuple[float, float]:
    """(density, density derivative) of the occupation measure at level h."""
    if bandwidth is None:
        bandwidth = default_collar(snake.delta)
    if deriv_bandwidth is None:
        deriv_bandwidth = 2.0 * bandwidth
    ell = occupation_between(snake, h - bandwidth, h + bandwidth) / (2 * bandwidth)
    b2 = deriv_bandwidth
    above = occupation_between(snake, h, h + b2)
    below = occupation_between(snake, h - b2, h)
    return ell, (above - below) / (b2 * b2)


def _extract(heights, tips, mask, rebase_to):
    """Sub-walk of the masked steps, collapsed so the walk stays one-per-step.

    Adjacent selected steps at equal height are revisits of one tree point
    split by a removed subtree; the revisit is dropped.
    """
    idx = np.flatnonzero(mask)
    h = heights[idx]
    t = tips[idx]
    keep = np.empty(len(h), dtype=bool)
    keep[0] = True
    np.not_equal(h[1:], h[:-1], out=keep[1:])
    h = h[keep] - rebase_to
    t = t[keep]
    return h.astype(np.int32), t


def _run_level_pass(snake: SnakeTrajectory, y: float, collar: float):
    if collar <= 0:
        raise ConfigurationError("collar must be positive")
    if y == snake.x0:
        raise DomainError("level coincides with the root label")
    max_h = int(snake.heights.max())
    return _kernels.level_pass(
        snake.heights, snake.tips, snake.x0, y, collar, snake.delta, max_h
    )


def truncate(
    snake: SnakeTrajectory, y: float, collar: float | None = None
) -> TruncationResult:
    """Stop every label path at its first passage through level ``y``.

    Keeps exactly the steps whose stacked path has not crossed ``y``; the
    removed steps fall into maximal runs, one per subtree hanging off the
    level, summarised in the ``away_*`` arrays.  ``exit_measure`` is the
    collar estimate (time within ``collar`` of ``y`` on kept steps) / collar^2.
    """
    if collar is None:
        collar = default_collar(snake.delta)
    out = _run_level_pass(snake, y, collar)
    kept = out[0]
    root_collar = out[4]
    run_steps, run_max, run_min, run_side = out[11], out[12], out[13], out[14]
    h, t = _extract(snake.heights, snake.tips, kept.astype(bool), 0)
    traj = SnakeTrajectory(snake.delta, snake.x0, h, t)
    z = root_collar * snake.time_step / (collar * collar)
    return TruncationResult(
        traj,
        z,
        run_steps.astype(np.int64),
        run_max,
        run_min,
        run_side,
    )


def decompose_at_level(
    snake: SnakeTrajectory,
    h: float,
    collar: float | None = None,
    extract_components: bool = False,
    min_steps: int = 0,
) -> LevelDecomposition:
    """Split the snake at label level ``h`` into the root-side part and the
    subtrees grafted where label paths pass the level.

    Each component collects the steps sharing their most recent passage of
    ``h``; boundary sizes use the one-sided collar estimate on the component's
    side.  Component step counts partition the snake's steps exactly.
    """
    if collar is None:
        collar = default_collar(snake.delta)
    out = _run_level_pass(snake, h, collar)
    (
        kept,
        comp_of,
        _run_of,
        root_steps,
        root_collar,
        comp_side,
        comp_steps,
        comp_collar,
        comp_max,
        comp_min,
        comp_debut,
        *_rest,
    ) = out
    dt = snake.time_step
    c2 = collar * collar
    root = ComponentSummary(
        side=int(comp_side[0]),
        steps=int(root_steps),
        sigma=root_steps * dt,
        boundary_size=root_collar * dt / c2,
        max_tip=float(comp_max[0]),
        min_tip=float(comp_min[0]),
        debut=0,
    )
    if extract_components:
        hh, tt = _extract(snake.heights, snake.tips, kept.astype(bool), 0)
        root.sub_snake = SnakeTrajectory(snake.delta, snake.x0, hh, tt)
    comps: list[ComponentSummary] = []
    for cid in range(1, len(comp_steps)):
        if comp_steps[cid] < max(min_steps, 1):
            continue
        comp = ComponentSummary(
            side=int(comp_side[cid]),
            steps=int(comp_steps[cid]),
            sigma=comp_steps[cid] * dt,
            boundary_size=comp_collar[cid] * dt / c2,
            max_tip=float(comp_max[cid]),
            min_tip=float(comp_min[cid]),
            debut=int(comp_debut[cid]),
        )
        if extract_components:
            mask = comp_of == cid
            base = snake.heights[comp_debut[cid]]
            hh, tt = _extract(snake.heights, snake.tips, mask, base)
            comp.sub_snake = SnakeTrajectory(snake.delta, float(tt[0]), hh, tt)
        comps.append(comp)
    z = root.boundary_size
    return LevelDecomposition(h, collar, z, root, comps)


def reroot(
    snake: SnakeTrajectory, step: int, shift_labels: bool = True
) -> SnakeTrajectory:
    """Re-read the same labelled tree from the tree point visited at ``step``.

    The new lifetime at cyclic offset s is the tree distance from the new
    root to the point visited at step+s; labels are carried over unchanged
    (minus the new root's label when ``shift_labels``).
    """
    n = snake.n_steps
    if not (0 <= step <= n):
        raise DomainError("step outside trajectory")
    if n == 0 or step == 0 or step == n:
        out = SnakeTrajectory(
            snake.delta,
            0.0 if shift_labels else snake.x0,
            snake.heights.copy(),
            snake.tips - snake.x0 if shift_labels else snake.tips.copy(),
        )
        return out
    h = snake.heights.astype(np.int64)
    k = step
    # forward arc: offsets 0 .. n-k  (indices k .. n)
    fwd = h[k:]
    fwd_min = np.minimum.accumulate(fwd)
    new_fwd = h[k] + fwd - 2 * fwd_min
    # wrapped arc: offsets n-k+1 .. n map to indices 1 .. k,
    # distance uses the plain interval [index, k]
    back = h[: k + 1]
    back_min = np.minimum.accumulate(back[::-1])[::-1]
    new_back = h[k] + back - 2 * back_min
    heights = np.concatenate([new_fwd, new_back[1:]]).astype(np.int32)
    tips = np.concatenate([snake.tips[k:], snake.tips[1 : k + 1]])
    x0 = snake.tips[k]
    if shift_labels:
        tips = tips - x0
        x0 = 0.0
    return SnakeTrajectory(snake.delta, float(x0), heights, tips)


def rescale(snake: SnakeTrajectory, factor: float) -> SnakeTrajectory:
    """Exact scaling: lifetimes x factor, labels x sqrt(factor), time x factor^2.

    The lattice carries the scaling in its step size, so heights stay integer
    and every derived quantity picks the rescaled grid up automatically.
    """
    if factor <= 0:
        raise DomainError("scale factor must be positive")
    root = math.sqrt(factor)
    out = SnakeTrajectory(
        snake.delta * factor,
        snake.x0 * root,
        snake.heights,
        snake.tips * root,
        boundary_size=None
        if snake.boundary_size is None
        else snake.boundary_size * factor,
    )
    return out


def sample_positive_excursion(
    stream: RandomStream,
    cfg: GridConfig,
    boundary_size: float = 1.0,
    window: float = 0.2,
    eps_base: float = 0.2,
    proposal_threshold: float = 0.1,
    collar: float | None = None,
    step_cap: int = 4_000_000,
    max_tries: int = 200_000,
    acceptance_floor: float = 1e-4,
) -> SnakeTrajectory:
    """Positive label excursion with prescribed boundary size.

    Proposals are snakes from a root slightly above zero, stopped at their
    first passage of zero; a proposal is accepted when its boundary-size
    estimate lands in [1-window, 1+window], then rescaled exactly so the
    boundary size equals ``boundary_size``.  The window width and the root
    offset are the two bias knobs; both shrink the approximation error as
    they go to zero at the price of acceptance.
    """
    if boundary_size <= 0:
        raise DomainError("boundary_size must be positive")
    if not (0 < window < 1):
        raise ConfigurationError("window must be in (0, 1)")
    if collar is None:
        collar = default_collar(cfg.delta)
    m = int(round(proposal_threshold / cfg.delta))
    if m < 1:
        raise ConfigurationError("proposal_threshold is below the lifetime grid")
    lo, hi = 1.0 - window, 1.0 + window
    for tries in range(max_tries):
        sub = stream.split(tries)
        snake, complete = sample_snake_raw(sub, cfg, m, x0=eps_base, step_cap=step_cap)
        if not complete:
            continue
        res = truncate(snake, 0.0, collar)
        z_hat = res.exit_measure
        if lo <= z_hat <= hi:
            factor = boundary_size / z_hat
            out = rescale(res.trajectory, factor)
            out.boundary_size = boundary_size
            return out
        # bail once zero accepts is a > 3-sigma surprise under the floor rate
        if tries + 1 >= 2000 and (tries + 1) * acceptance_floor >= 3.0:
            raise SamplingTooHard(
                "boundary-size window accepted nothing",
                {"tries": tries + 1, "window": window, "eps_base": eps_base},
            )
    raise SamplingTooHard(
        "boundary-size window accepted nothing",
        {"tries": max_tries, "window": window, "eps_base": eps_base},
    )


class PositiveExcursionPool:
    """Reusable collection of unit-boundary positive excursions.

    Drawing rescales a pooled excursion exactly to the requested boundary
    size.  Reuse across draws trades a little dependence for a large constant
    factor in speed; size the pool to keep expected reuse low.
    """

    def __init__(
        self,
        stream: RandomStream,
        cfg: GridConfig,
        size: int,
        **kwargs,
    ):
        if size < 1:
            raise ConfigurationError("pool size must be >= 1")
        self.cfg = cfg
        self.samples = [
            sample_positive_excursion(stream.split(i), cfg, 1.0, **kwargs)
            for i in range(size)
        ]

    def __len__(self) -> int:
        return len(self.samples)

    def draw(self, stream: RandomStream, boundary_size: float) -> SnakeTrajectory:
        gen = stream.generator("pool-draw")
        base = self.samples[int(gen.integers(len(self.samples)))]
        out = rescale(base, boundary_size / base.boundary_size)
        out.boundary_size = boundary_size
        return out


def ball_volume_profile(
    snake: SnakeTrajectory, radii: np.ndarray
) -> BallVolumeProfile:
    """Occupation mass within tree-metric distance r of the minimal-label point.

    The distance from the minimising point to a point with label v is
    v - min, so the volume at radius r is the occupation of labels below
    min + r; its first two level derivatives reproduce the occupation density
    and its slope, shifted by the minimum.
    """
    radii = np.asarray(radii, dtype=np.float64)
    if (radii < 0).any():
        raise DomainError("radii must be nonnegative")
    st = snake.sorted_tips()
    m = st[0]
    counts = np.searchsorted(st, m + radii, side="left")
    return BallVolumeProfile(radii, counts * snake.time_step, float(m))
