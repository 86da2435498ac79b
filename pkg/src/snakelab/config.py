"""Run configuration for the verification harness.

A :class:`SuiteConfig` gathers every knob the identity suite and the CLI
consume, grouped in small frozen sections.  Configs round-trip through
nested dicts / JSON so a report can echo the exact configuration it ran
under; unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigurationError

__all__ = [
    "GridSection",
    "KernelSection",
    "LevySection",
    "MonteCarloSection",
    "SuiteConfig",
    "ToleranceSection",
    "load_config",
]


@dataclass(frozen=True)
class GridSection:
    """Tree-walk discretisation.

    delta : lattice pitch of the contour walk; one step lasts delta**2.
    """

    delta: float = 0.01


@dataclass(frozen=True)
class MonteCarloSection:
    """Sampling effort.

    n_samples : base sample count; individual checks scale it down by
        fixed per-check factors so one knob moves the whole suite.
    """

    n_samples: int = 20000


@dataclass(frozen=True)
class LevySection:
    """Driving-path discretisation.

    cutoff : smallest jump simulated individually; smaller jumps enter
        through the compensated drift.
    dt : time step of the path grid.
    """

    cutoff: float = 1e-3
    dt: float = 1e-4


@dataclass(frozen=True)
class KernelSection:
    """Continuation-kernel truncation.

    eta_min : smallest bridge jump decorated with an excursion; ``None``
        selects the duration-scaled default policy.
    """

    eta_min: float | None = None


@dataclass(frozen=True)
class ToleranceSection:
    """Pass thresholds, named by the kind of comparison they guard.

    limit_abs : absolute deviation allowed in the shape-function limits.
    ratio_rel : relative error allowed on the large-argument mass ratio.
    exact_rel : relative error treated as exact (conservation identities).
    clock_rel : relative error on time-change clock identities.
    closed_form_rel : relative error against closed-form constants.
    mean_rel : relative error on first-moment identities.
    slope_abs : absolute error on fitted log-log slopes.
    p_threshold : per-test rejection level for distributional checks.
    bin_fraction : fraction of populated bins that must clear p_threshold.
    control_fraction : fraction of bins the positive control must reject in.
    calibration_low / calibration_high : acceptable null rejection-rate
        window at nominal level 0.05.
    """

    limit_abs: float = 1e-3
    ratio_rel: float = 1e-2
    exact_rel: float = 1e-10
    clock_rel: float = 1e-4
    closed_form_rel: float = 0.05
    mean_rel: float = 0.10
    slope_abs: float = 0.10
    p_threshold: float = 0.01
    bin_fraction: float = 0.90
    control_fraction: float = 0.50
    calibration_low: float = 0.02
    calibration_high: float = 0.09


def _section_from_dict(cls, raw: dict[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    extra = set(raw) - names
    if extra:
        raise ConfigurationError(f"unknown key(s) in {where}: {sorted(extra)}")
    return cls(**raw)


@dataclass(frozen=True)
class SuiteConfig:
    """Complete harness configuration, JSON round-trippable."""

    grid: GridSection = field(default_factory=GridSection)
    mc: MonteCarloSection = field(default_factory=MonteCarloSection)
    levy: LevySection = field(default_factory=LevySection)
    kernel: KernelSection = field(default_factory=KernelSection)
    tolerances: ToleranceSection = field(default_factory=ToleranceSection)

    def validate(self) -> None:
        if self.grid.delta <= 0:
            raise ConfigurationError("grid.delta must be positive")
        if self.mc.n_samples < 1:
            raise ConfigurationError("mc.n_samples must be at least 1")
        if self.levy.cutoff <= 0 or self.levy.dt <= 0:
            raise ConfigurationError("levy.cutoff and levy.dt must be positive")
        if self.kernel.eta_min is not None and self.kernel.eta_min <= 0:
            raise ConfigurationError("kernel.eta_min must be positive when set")
        t = self.tolerances
        for name in (
            "limit_abs",
            "ratio_rel",
            "exact_rel",
            "clock_rel",
            "closed_form_rel",
            "mean_rel",
            "slope_abs",
        ):
            if getattr(t, name) <= 0:
                raise ConfigurationError(f"tolerances.{name} must be positive")
        if not 0 < t.p_threshold < 1:
            raise ConfigurationError("tolerances.p_threshold must be in (0, 1)")
        if not 0 < t.bin_fraction <= 1 or not 0 < t.control_fraction <= 1:
            raise ConfigurationError("bin/control fractions must be in (0, 1]")
        if not 0 < t.calibration_low < t.calibration_high < 1:
            raise ConfigurationError("calibration window must be ordered in (0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SuiteConfig:
        sections = {
            "grid": GridSection,
            "mc": MonteCarloSection,
            "levy": LevySection,
            "kernel": KernelSection,
            "tolerances": ToleranceSection,
        }
        extra = set(raw) - set(sections)
        if extra:
            raise ConfigurationError(f"unknown config section(s): {sorted(extra)}")
        kwargs = {}
        for name, section_cls in sections.items():
            if name in raw:
                part = raw[name]
                if not isinstance(part, dict):
                    raise ConfigurationError(f"section {name!r} must be a mapping")
                kwargs[name] = _section_from_dict(section_cls, part, name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def load_config(path: str | Path | None) -> SuiteConfig:
    """Read a config file; ``None`` returns the defaults."""
    if path is None:
        cfg = SuiteConfig()
        cfg.validate()
        return cfg
    p = Path(path)
    if not p.exists():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    return SuiteConfig.from_dict(raw)
