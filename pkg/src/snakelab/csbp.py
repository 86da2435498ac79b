"""Continuous-state branching built from stable paths by the Lamperti time
change, with the inverse change and total-mass bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, NotAbsorbed, StateError
from .levy import FULL_EXPONENT, LevyExponent, LevyPath, sample_levy_path
from .streams import RandomStream

__all__ = [
    "CsbpPath",
    "lamperti_forward",
    "lamperti_inverse",
    "csbp_excursion_total",
    "extinction_cdf",
]


@dataclass
class CsbpPath:
    """Branching path on its event grid.

    ``grid`` holds the branching-time coordinates r_i (nonuniform: the image
    of the driving path's grid), ``values`` the population sizes.  When the
    population dies out the final point is (extinction_time, 0) exactly and
    ``extinct`` is True; a path cut off by the driving horizon carries
    ``extinct=False`` and ``extinction_time=None``.  The total mass
    ``integral()`` equals the driving path's passage time by construction.
    """

    initial: float
    grid: np.ndarray
    values: np.ndarray
    extinction_time: float | None
    extinct: bool
    exponent: LevyExponent = FULL_EXPONENT

    def integral(self) -> float:
        """Total mass integral(X_r dr), via the exact per-cell rule."""
        return float(np.sum(_cells_t_from_r(self.grid, self.values)))

    def value_at(self, r: float) -> float:
        return float(np.interp(r, self.grid, self.values))

    def validate(self) -> None:
        if len(self.grid) != len(self.values):
            raise ConfigurationError("grid and values must align")
        if len(self.grid) > 1 and (np.diff(self.grid) <= 0).any():
            raise ConfigurationError("grid must increase")
        if self.extinct and self.values[-1] != 0.0:
            raise ConfigurationError("extinct path must end at zero")


def _cells_r_from_t(dt: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Per-cell branching durations for a population linear in t from lo to
    hi: dt * log(hi / lo) / (hi - lo), with the equal-endpoint limit dt/lo."""
    diff = hi - lo
    near = np.abs(diff) < 1e-12 * np.maximum(lo, hi)
    safe = np.where(near, 1.0, diff)
    out = np.where(
        near, dt / np.where(lo > 0, lo, 1.0), dt * np.log(hi / lo) / safe
    )
    return out


def _cells_t_from_r(grid: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Inverse of the cell rule: driving-time spent in each branching cell.

    Interior cells use the log-mean dr * (hi - lo) / log(hi / lo); a final
    cell ending at zero uses the 2/3-power extinction model, under which the
    driving time is dr * lo / 3.
    """
    if len(grid) < 2:
        return np.zeros(0)
    dr = np.diff(grid)
    lo = values[:-1]
    hi = values[1:]
    diff = hi - lo
    regular = (hi > 0) & (lo > 0) & (np.abs(diff) >= 1e-12 * np.maximum(lo, hi))
    ratio = np.where(regular, np.where(lo > 0, hi, 1.0), 1.0)
    ratio = np.divide(ratio, lo, out=np.ones_like(lo), where=regular)
    logr = np.log(ratio)
    out = np.where(
        regular, dr * diff / np.where(logr == 0.0, 1.0, logr), dr * lo
    )
    # terminal extinction cell: X ~ lo * (1 - s/dr)**(2/3) gives t = dr*lo/3
    out = np.where(hi > 0, out, dr * lo / 3.0)
    return out


def lamperti_forward(path: LevyPath, min_population: float = 0.0) -> CsbpPath:
    """Time-change a driving path into its branching counterpart.

    The branching clock runs at speed 1/U, so cell i of the driving grid
    contributes dt * log(U_{i+1}/U_i) / (U_{i+1} - U_i) of branching time
    (the exact integral for a linear cell).  A stopped path yields an extinct
    branching path whose final cell uses the 2/3-power descent model, giving
    the closed-form tail contribution 3 * dt_last / U_last.
    """
    if path.kind == "bridge":
        raise StateError("bridges have no branching counterpart here")
    if len(path.values) == 1:
        # trivially absorbed at the start
        z = np.zeros(1)
        return CsbpPath(path.start, z, z.copy(), 0.0, True, path.exponent)
    if (path.values[:-1] <= min_population).any():
        raise DomainError("population must stay positive before the end")
    if path.kind == "free" and path.values[-1] <= min_population:
        raise DomainError("free input crossed zero; stop it at zero instead")
    dt = np.diff(path.times)
    lo = path.values[:-1]
    hi = path.values[1:]
    if path.kind == "stopped":
        cells = _cells_r_from_t(dt[:-1], lo[:-1], hi[:-1])
        tail = 3.0 * dt[-1] / lo[-1]
        grid = np.empty(len(path.times))
        grid[0] = 0.0
        np.cumsum(cells, out=grid[1:-1])
        grid[-1] = grid[-2] + tail
        return CsbpPath(
            path.start, grid, path.values.copy(), float(grid[-1]), True,
            path.exponent,
        )
    cells = _cells_r_from_t(dt, lo, hi)
    grid = np.empty(len(path.times))
    grid[0] = 0.0
    np.cumsum(cells, out=grid[1:])
    return CsbpPath(
        path.start, grid, path.values.copy(), None, False, path.exponent
    )


def lamperti_inverse(csbp: CsbpPath) -> LevyPath:
    """Undo the time change: rebuild the driving path on its own grid.

    Exact inverse of ``lamperti_forward`` cell by cell, so a round trip
    reproduces times to rounding error.  Constant-zero input maps to the
    trivial path.
    """
    if len(csbp.grid) <= 1 or (csbp.values == 0.0).all():
        zeros = np.zeros(1)
        return LevyPath(
            csbp.exponent, 0.0, zeros, zeros.copy(), zeros[:0], zeros[:0],
            math.nan, math.nan, kind="stopped",
        )
    cells = _cells_t_from_r(csbp.grid, csbp.values)
    times = np.empty(len(csbp.grid))
    times[0] = 0.0
    np.cumsum(cells, out=times[1:])
    kind = "stopped" if csbp.extinct else "free"
    return LevyPath(
        csbp.exponent, csbp.initial, times, csbp.values.copy(),
        np.zeros(0), np.zeros(0), math.nan, math.nan, kind=kind,
    )


def csbp_excursion_total(
    z: float,
    stream: RandomStream,
    cutoff: float = 1e-2,
    dt: float = 1e-3,
    horizon: float = 200.0,
    exponent: LevyExponent = FULL_EXPONENT,
) -> tuple[float, float]:
    """(total mass, extinction time) of one branching excursion from ``z``.

    The total mass is the driving path's passage time, so it scales like
    z**1.5; extinction obeys P[ext <= r] = exp(-1.5 z / r**2) at unit rate.
    ``z = 0`` returns (0, 0); a run hitting the horizon raises NotAbsorbed.
    """
    if z < 0:
        raise DomainError("initial mass must be nonnegative")
    if z == 0.0:
        return 0.0, 0.0
    path = sample_levy_path(
        stream, exponent, z, cutoff, dt, "at_zero", horizon=horizon
    )
    branching = lamperti_forward(path)
    return path.t0, float(branching.extinction_time)


def extinction_cdf(z: float, r: float, exponent: LevyExponent = FULL_EXPONENT) -> float:
    """P[extinction time <= r] from initial mass z.

    The extinction probability solves the flow v' = -psi(v) from infinity,
    v(r) = 4 / (c r)**2, giving exp(-z v(r)).
    """
    if r <= 0:
        return 0.0
    v = 4.0 / (exponent.coefficient * r) ** 2
    return math.exp(-z * v)
