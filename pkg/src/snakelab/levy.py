"""Spectrally positive stable-3/2 paths: grid simulation, first passage of
zero, cyclic shifts, bridges, and the half-rate sign split."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (
    ConfigurationError,
    DomainError,
    NotAbsorbed,
    SamplingTooHard,
    StateError,
)
from .sampling_core import JUMP_DENSITY_COEFF, jump_tail_mass
from .streams import RandomStream

__all__ = [
    "LevyExponent",
    "FULL_EXPONENT",
    "HALF_EXPONENT",
    "LevyPath",
    "HittingRecord",
    "sample_levy_path",
    "sample_free_increments",
    "first_hitting_zero",
    "cyclic_transform",
    "sample_bridge",
    "sample_bridge_jumps",
    "split_by_signs",
    "hitting_laplace",
]

_FULL_COEFF = math.sqrt(8.0 / 3.0)


@dataclass(frozen=True)
class LevyExponent:
    """Laplace exponent c * lam**1.5 of a centred spectrally positive stable
    process, tied to a jump measure rate_scale * C * z**-2.5 dz.

    ``E[exp(-lam (U_t - U_0))] = exp(t c lam**1.5)`` with c = rate_scale *
    sqrt(8/3); the two admitted instances are the unit-rate process and its
    half-rate thinning (each sign class of an even split).
    """

    coefficient: float = _FULL_COEFF
    rate_scale: float = 1.0

    def __post_init__(self):
        if self.rate_scale <= 0:
            raise ConfigurationError("rate_scale must be positive")
        if abs(self.coefficient - self.rate_scale * _FULL_COEFF) > 1e-12:
            raise ConfigurationError(
                "coefficient and rate_scale disagree: need "
                "coefficient = rate_scale * sqrt(8/3)"
            )

    def psi(self, lam: float) -> float:
        """Laplace exponent at lam >= 0."""
        return self.coefficient * lam**1.5

    def half(self) -> "LevyExponent":
        return LevyExponent(0.5 * self.coefficient, 0.5 * self.rate_scale)

    def jump_rate(self, cutoff: float) -> float:
        """Intensity of represented jumps (size >= cutoff) per unit time."""
        return jump_tail_mass(cutoff, self.rate_scale)

    def proxy_variance_rate(self, cutoff: float, tilt: float = 0.0) -> float:
        """Variance per unit time of the sub-cutoff jump proxy."""
        if tilt > 0:
            raw = math.sqrt(math.pi / tilt) * math.erf(math.sqrt(tilt * cutoff))
        else:
            raw = 2.0 * math.sqrt(cutoff)
        return self.rate_scale * JUMP_DENSITY_COEFF * raw

    def drift_rate(self, cutoff: float, tilt: float = 0.0) -> float:
        """Deterministic drift per unit time making the construction centred
        (or, when tilted, giving the exponentially weighted law)."""
        if tilt > 0:
            tc = tilt * cutoff
            m1 = JUMP_DENSITY_COEFF * (
                2.0 * math.exp(-tc) / math.sqrt(cutoff)
                - 2.0 * math.sqrt(math.pi * tilt) * special.erfc(math.sqrt(tc))
            )
            extra = math.sqrt(6.0 * tilt)
            return -self.rate_scale * (m1 + extra)
        return -self.rate_scale * JUMP_DENSITY_COEFF * 2.0 / math.sqrt(cutoff)

    def mean_rate(self, tilt: float) -> float:
        """Mean drift per unit time of the tilted process: -1.5 c sqrt(tilt)."""
        return -1.5 * self.coefficient * math.sqrt(tilt)


FULL_EXPONENT = LevyExponent()
HALF_EXPONENT = FULL_EXPONENT.half()


def hitting_laplace(exponent: LevyExponent, start: float, q: float) -> float:
    """E[exp(-q T0)] for the first passage of zero from ``start``.

    First passage (downward, continuous) is a 2/3-stable subordinator in the
    starting level, so the transform is exp(-start (q/c)**(2/3)).
    """
    if start < 0 or q < 0:
        raise DomainError("start and q must be nonnegative")
    return math.exp(-start * (q / exponent.coefficient) ** (2.0 / 3.0))


@dataclass
class LevyPath:
    """Grid path with an explicit big-jump record.

    ``values[i]`` holds the state at ``times[i]``; jumps within a grid cell
    are applied at the cell's right endpoint.  ``kind`` is one of ``free``
    (simulated to a horizon), ``stopped`` (terminated at the first passage of
    zero, final point exactly (t0, 0)), or ``bridge`` (endpoint-conditioned).
    Jump signs start unassigned; ``split_by_signs`` assigns them once.
    """

    exponent: LevyExponent
    start: float
    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    cutoff: float
    dt: float
    kind: str = "free"
    tilt: float = 0.0
    endpoint_tol: float | None = None
    jump_signs: np.ndarray | None = field(default=None, repr=False)

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    @property
    def t0(self) -> float:
        if self.kind != "stopped":
            raise StateError("t0 is defined for paths stopped at zero")
        return float(self.times[-1])

    def n_points(self) -> int:
        return len(self.times)

    def sorted_jumps(self) -> np.ndarray:
        """Jump sizes in nonincreasing order."""
        return np.sort(self.jump_sizes)[::-1]

    def value_at(self, t: float) -> float:
        """Piecewise-linear read of the grid path."""
        return float(np.interp(t, self.times, self.values))

    def validate(self) -> None:
        if len(self.times) != len(self.values):
            raise ConfigurationError("times and values must align")
        if len(self.times) > 1 and (np.diff(self.times) <= 0).any():
            raise ConfigurationError("times must increase")
        if len(self.jump_times) != len(self.jump_sizes):
            raise ConfigurationError("jump record must align")
        if len(self.jump_sizes) and self.jump_sizes.min() <= 0:
            raise ConfigurationError("jump sizes must be positive")


@dataclass
class HittingRecord:
    """First passage of zero: the time and, when a sign split is supplied,
    the terminal values of the two half-rate parts (which sum to zero)."""

    t0: float
    terminal_split: tuple[float, float] | None = None


def _draw_jumps(
    gen: np.random.Generator,
    exponent: LevyExponent,
    cutoff: float,
    horizon: float,
    tilt: float,
) -> tuple[np.ndarray, np.ndarray]:
    lam = exponent.jump_rate(cutoff) * horizon
    n = int(gen.poisson(lam))
    times = gen.uniform(0.0, horizon, size=n)
    sizes = cutoff * gen.random(n) ** (-2.0 / 3.0)
    if tilt > 0 and n:
        keep = gen.random(n) < np.exp(-tilt * sizes)
        times, sizes = times[keep], sizes[keep]
    order = np.argsort(times)
    return times[order], sizes[order]


def sample_free_increments(
    stream: RandomStream,
    exponent: LevyExponent,
    t: float,
    n: int,
    cutoff: float = 1e-3,
    tilt: float = 0.0,
) -> np.ndarray:
    """``n`` independent draws of U_t - U_0 without building grid paths.

    The increment is (sum of represented jumps) + Gaussian proxy + drift;
    useful for transform checks at scale.
    """
    if t <= 0:
        raise DomainError("t must be positive")
    gen = stream.generator("free-increments")
    lam = exponent.jump_rate(cutoff) * t
    chunk = max(1, min(n, int(2e7 / max(lam, 1.0))))
    sd = math.sqrt(exponent.proxy_variance_rate(cutoff, tilt) * t)
    drift = exponent.drift_rate(cutoff, tilt) * t
    out = np.empty(n)
    for lo in range(0, n, chunk):
        m = min(chunk, n - lo)
        counts = gen.poisson(lam, size=m)
        total = int(counts.sum())
        sizes = cutoff * gen.random(total) ** (-2.0 / 3.0)
        if tilt > 0 and total:
            sizes = sizes * (gen.random(total) < np.exp(-tilt * sizes))
        jump_sums = np.zeros(m)
        np.add.at(jump_sums, np.repeat(np.arange(m), counts), sizes)
        out[lo : lo + m] = jump_sums + gen.normal(0.0, sd, size=m) + drift
    return out


_BLOCK = 16384


def sample_levy_path(
    stream: RandomStream,
    exponent: LevyExponent,
    start: float,
    cutoff: float = 1e-3,
    dt: float = 1e-4,
    stop: str = "at_zero",
    horizon: float = 200.0,
    tilt: float = 0.0,
) -> LevyPath:
    """Simulate the process from ``start`` on a uniform grid.

    Jumps of size >= cutoff are placed exactly (Poisson); smaller ones enter
    through a Gaussian proxy per step with the matched truncated second
    moment, plus the compensating drift.  ``stop="at_zero"`` terminates at
    the first passage of zero, testing each cell's diffusive part with the
    Gaussian-bridge dip probability exp(-2ab/(v dt)) so sub-cell crossings
    are not missed, and appends the exact point (t0, 0); if the path has not
    crossed by ``horizon`` a NotAbsorbed error carries the horizon.
    ``stop="horizon"`` returns the free path on [0, horizon].
    """
    if start < 0:
        raise DomainError("start must be nonnegative")
    if stop not in ("at_zero", "horizon"):
        raise ConfigurationError("stop must be at_zero or horizon")
    if dt <= 0 or cutoff <= 0 or horizon <= 0:
        raise ConfigurationError("dt, cutoff, horizon must be positive")
    if stop == "at_zero" and start == 0.0:
        z = np.zeros(1)
        return LevyPath(
            exponent, 0.0, z, z.copy(), z[:0], z[:0], cutoff, dt,
            kind="stopped", tilt=tilt,
        )

    gen = stream.generator("levy-path")
    v_dt = exponent.proxy_variance_rate(cutoff, tilt) * dt
    sd = math.sqrt(v_dt)
    drift = exponent.drift_rate(cutoff, tilt) * dt
    n_total = int(math.ceil(horizon / dt))

    vals = [np.array([start])]
    jts: list[np.ndarray] = []
    jss: list[np.ndarray] = []
    level = start
    done = 0
    while done < n_total:
        block = min(_BLOCK, n_total - done)
        span = block * dt
        jt, js = _draw_jumps(gen, exponent, cutoff, span, tilt)
        steps = gen.normal(drift, sd, size=block)
        cell_jump = np.zeros(block)
        if len(js):
            idx = np.minimum((jt / dt).astype(np.int64), block - 1)
            np.add.at(steps, idx, js)
            np.add.at(cell_jump, idx, js)
        path = level + np.cumsum(steps)
        if stop == "at_zero":
            # a cell can cross zero even when both grid endpoints stay
            # positive; test the diffusive part (endpoint before the cell's
            # jumps) with the Gaussian-bridge dip probability
            prev = np.empty_like(path)
            prev[0] = level
            prev[1:] = path[:-1]
            bt = path - cell_jump
            arg = 2.0 * prev * bt / v_dt
            crossed = bt <= 0.0
            look = ~crossed & (arg >= 0.0) & (arg < 41.0)
            if look.any():
                u = gen.random(block)
                crossed |= look & (u < np.exp(-np.where(look, arg, 41.0)))
            if crossed.any():
                k = int(np.argmax(crossed))
                a = prev[k]
                if bt[k] <= 0.0:
                    frac = max(a / (a - bt[k]), 1e-9)
                else:
                    frac = a / (a + bt[k])
                t0 = (done + k + frac) * dt
                vals.append(path[:k])
                keep = jt <= (k + frac) * dt
                jts.append(jt[keep] + done * dt)
                jss.append(js[keep])
                times = np.arange(done + k + 1, dtype=np.float64) * dt
                times = np.append(times, t0)
                values = np.concatenate(vals)
                values = np.append(values, 0.0)
                return LevyPath(
                    exponent,
                    start,
                    times,
                    values,
                    np.concatenate(jts) if jts else jt[:0],
                    np.concatenate(jss) if jss else js[:0],
                    cutoff,
                    dt,
                    kind="stopped",
                    tilt=tilt,
                )
        vals.append(path)
        jts.append(jt + done * dt)
        jss.append(js)
        level = path[-1]
        done += block

    if stop == "at_zero":
        raise NotAbsorbed(horizon, "no passage of zero within horizon")
    times = np.arange(n_total + 1, dtype=np.float64) * dt
    return LevyPath(
        exponent,
        start,
        times,
        np.concatenate(vals),
        np.concatenate(jts) if jts else np.zeros(0),
        np.concatenate(jss) if jss else np.zeros(0),
        cutoff,
        dt,
        kind="free",
        tilt=tilt,
    )


def first_hitting_zero(
    path: LevyPath,
    split: tuple[LevyPath, LevyPath] | None = None,
) -> HittingRecord:
    """Interpolated first passage of zero, with the terminal sign-split pair
    when the caller supplies one."""
    if path.kind == "stopped":
        t0 = path.t0
    else:
        below = path.values <= 0.0
        if not below.any():
            raise NotAbsorbed(path.duration, "path never reaches zero")
        k = int(np.argmax(below))
        if k == 0:
            t0 = float(path.times[0])
        else:
            a, b = path.values[k - 1], path.values[k]
            t0 = float(
                path.times[k - 1]
                + (path.times[k] - path.times[k - 1]) * a / (a - b)
            )
    ends = None
    if split is not None:
        up, upp = split
        ends = (up.value_at(t0), upp.value_at(t0))
    return HittingRecord(t0, ends)


def cyclic_transform(path: LevyPath, r: float) -> LevyPath:
    """Swap the path segments before and after time ``r`` (mod t0).

    The output runs from ``start`` to 0 over the same duration, with the jump
    multiset preserved exactly; with r uniform this realises the
    absorbed path conditioned on its duration as a duration-pinned bridge.
    ``r`` is snapped down to the simulation grid.
    """
    if path.kind != "stopped":
        raise StateError("cyclic transform needs a path stopped at zero")
    t0 = path.t0
    if not (0.0 <= r <= t0):
        raise DomainError("shift time outside [0, t0]")
    k = int(np.searchsorted(path.times, r, side="right")) - 1
    if k <= 0 or path.n_points() <= 2:
        return path
    tk = path.times[k]
    uk = path.values[k]
    a = path.start
    times = np.concatenate(
        [path.times[k:] - tk, t0 - tk + path.times[1 : k + 1]]
    )
    values = np.concatenate(
        [path.values[k:] - uk + a, path.values[1 : k + 1] - uk]
    )
    late = path.jump_times > tk
    jt = np.concatenate(
        [path.jump_times[late] - tk, path.jump_times[~late] + (t0 - tk)]
    )
    js = np.concatenate([path.jump_sizes[late], path.jump_sizes[~late]])
    order = np.argsort(jt)
    signs = path.jump_signs
    if signs is not None:
        signs = np.concatenate([signs[late], signs[~late]])[order]
    return LevyPath(
        path.exponent,
        a,
        times,
        values,
        jt[order],
        js[order],
        path.cutoff,
        path.dt,
        kind="bridge",
        tilt=path.tilt,
        jump_signs=signs,
    )


def sample_bridge(
    stream: RandomStream,
    exponent: LevyExponent,
    a: float,
    b: float,
    t: float,
    method: str = "endpoint_rejection",
    tol: float = 0.05,
    cutoff: float = 1e-3,
    dt: float = 1e-4,
    max_tries: int = 100_000,
    acceptance_floor: float = 1e-5,
    use_tilt: bool = True,
) -> LevyPath:
    """Path from a to (approximately) b over duration t.

    ``cyclic``: absorbed paths from ``a`` are accepted when their passage
    time lands within ``tol`` of ``t`` and cyclically shifted at a uniform
    time (valid only for b = 0, a > 0).  ``endpoint_rejection``: free paths
    on [0, t] accepted when |U_t - b| <= tol, importance-corrected under a
    downward exponential tilt when that helps.  The achieved tolerance is
    recorded on the output for bias accounting.
    """
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    if t <= 0:
        raise DomainError("duration must be positive")
    if method == "cyclic":
        if b != 0.0 or a <= 0:
            raise DomainError("cyclic bridges need a > 0, b = 0")
        for tries in range(max_tries):
            sub = stream.split(tries)
            try:
                path = sample_levy_path(
                    sub, exponent, a, cutoff, dt, "at_zero", horizon=t + tol
                )
            except NotAbsorbed:
                continue
            if abs(path.t0 - t) <= tol:
                r = float(sub.generator("shift").uniform(0.0, path.t0))
                out = cyclic_transform(path, r)
                out.endpoint_tol = tol
                return out
            if tries + 1 >= 1000 and (tries + 1) * acceptance_floor >= 3.0:
                break
        raise SamplingTooHard(
            "duration window accepted nothing",
            {"t": t, "tol": tol, "tries": max_tries},
        )
    if method != "endpoint_rejection":
        raise ConfigurationError("method must be cyclic or endpoint_rejection")

    tilt = 0.0
    if use_tilt and b < a:
        tilt = ((a - b) / (1.5 * exponent.coefficient * t)) ** 2
    target = b - a
    for tries in range(max_tries):
        sub = stream.split(tries)
        path = sample_levy_path(
            sub, exponent, 0.0, cutoff, dt, "horizon", horizon=t, tilt=tilt
        )
        end = float(path.values[-1])
        if abs(end - target) <= tol:
            if tilt > 0:
                w = math.exp(tilt * (end - (target + tol)))
                if sub.generator("weight").random() > w:
                    continue
            path.start = a
            path.values = path.values + a
            path.kind = "bridge"
            path.endpoint_tol = tol
            path.tilt = 0.0  # importance correction undoes the tilt
            return path
        if tries + 1 >= 1000 and (tries + 1) * acceptance_floor >= 3.0:
            break
    raise SamplingTooHard(
        "endpoint window accepted nothing",
        {"a": a, "b": b, "t": t, "tol": tol},
    )


def sample_bridge_jumps(
    stream: RandomStream,
    exponent: LevyExponent,
    t: float,
    y: float,
    tol: float = 0.02,
    cutoff: float = 1e-3,
    batch: int = 256,
    max_batches: int = 6400,
    use_tilt: bool = True,
) -> np.ndarray:
    """Jump sizes (nonincreasing) of one endpoint-conditioned path 0 -> y.

    Endpoint rejection without grids: a candidate's endpoint is the jump sum
    plus the Gaussian proxy plus drift, so only the jump record is kept.
    A downward tilt with importance correction keeps acceptance workable for
    y well below the mean path.
    """
    if t <= 0:
        raise DomainError("duration must be positive")
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    tilt = 0.0
    if use_tilt and y < 0:
        tilt = (y / (1.5 * exponent.coefficient * t)) ** 2
    lam = exponent.jump_rate(cutoff) * t
    # keep each batch near 2e7 expected jump draws
    shrink = max(1, int(math.ceil(batch * lam / 2e7))) if lam > 0 else 1
    batch = max(1, batch // shrink)
    max_batches = max_batches * shrink
    sd = math.sqrt(exponent.proxy_variance_rate(cutoff, tilt) * t)
    drift = exponent.drift_rate(cutoff, tilt) * t
    for b in range(max_batches):
        gen = stream.split(b).generator("bridge-jumps")
        counts = gen.poisson(lam, size=batch)
        total = int(counts.sum())
        owner = np.repeat(np.arange(batch), counts)
        sizes = cutoff * gen.random(total) ** (-2.0 / 3.0)
        if tilt > 0 and total:
            sizes = sizes * (gen.random(total) < np.exp(-tilt * sizes))
        sums = np.zeros(batch)
        np.add.at(sums, owner, sizes)
        ends = sums + gen.normal(0.0, sd, size=batch) + drift
        ok = np.abs(ends - y) <= tol
        if tilt > 0:
            ok &= gen.random(batch) <= np.exp(tilt * (ends - (y + tol)))
        hits = np.flatnonzero(ok)
        if len(hits):
            pick = int(hits[0])
            js = sizes[(owner == pick) & (sizes > 0)]
            return np.sort(js)[::-1]
    raise SamplingTooHard(
        "endpoint window accepted nothing",
        {"t": t, "y": y, "tol": tol, "batches": max_batches},
    )


def split_by_signs(
    stream: RandomStream, path: LevyPath
) -> tuple[LevyPath, LevyPath]:
    """Assign independent fair signs to the jumps and separate the path.

    The minus part keeps the start and the -1 jumps; the plus part starts at
    zero and keeps the +1 jumps.  Each carries half the jump rate, half the
    drift, and an independent half of the Gaussian proxy, and the two add
    back to the input path bit-exactly (the plus part is constructed as the
    complement).  Signs can be assigned once per path.
    """
    if path.jump_signs is not None:
        raise StateError("jump signs were already assigned")
    gen = stream.generator("jump-signs")
    n = len(path.jump_sizes)
    signs = np.where(gen.random(n) < 0.5, -1, 1).astype(np.int8)
    path.jump_signs = signs

    steps = np.diff(path.times)
    d_step = path.exponent.drift_rate(path.cutoff, path.tilt) * steps
    minus_sums = np.zeros(len(steps))
    all_sums = np.zeros(len(steps))
    if n:
        # jump in (times[i], times[i+1]] belongs to grid cell i
        idx = np.minimum(
            np.searchsorted(path.times[1:], path.jump_times, side="left"),
            len(steps) - 1,
        )
        np.add.at(all_sums, idx, path.jump_sizes)
        np.add.at(minus_sums, idx[signs < 0], path.jump_sizes[signs < 0])
    gaussians = np.diff(path.values) - all_sums - d_step
    eta_sd = np.sqrt(
        path.exponent.proxy_variance_rate(path.cutoff, path.tilt) * steps
    ) * 0.5
    eta = gen.normal(0.0, 1.0, size=len(steps)) * eta_sd
    minus_inc = minus_sums + 0.5 * d_step + 0.5 * gaussians + eta

    half = path.exponent.half()
    mvals = np.empty_like(path.values)
    mvals[0] = path.start
    np.cumsum(minus_inc, out=mvals[1:])
    mvals[1:] += path.start
    pvals = path.values - mvals

    mneg = signs < 0
    minus = LevyPath(
        half, path.start, path.times.copy(), mvals,
        path.jump_times[mneg], path.jump_sizes[mneg], path.cutoff, path.dt,
        kind=path.kind, tilt=path.tilt,
        jump_signs=np.full(int(mneg.sum()), -1, np.int8),
    )
    plus = LevyPath(
        half, 0.0, path.times.copy(), pvals,
        path.jump_times[~mneg], path.jump_sizes[~mneg], path.cutoff, path.dt,
        kind=path.kind, tilt=path.tilt,
        jump_signs=np.full(int((~mneg).sum()), 1, np.int8),
    )
    return minus, plus
