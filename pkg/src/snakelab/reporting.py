"""Result containers for the identity suite and their JSON serialization.

A report serializes with every volatile quantity (wall-clock timestamp and
per-check runtimes) isolated in the single ``volatile`` field, so two runs
with the same seed and config produce byte-identical JSON outside that
field.  ``stable_bytes`` strips it for direct comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigurationError

__all__ = ["CheckResult", "SuiteReport"]


def _json_safe(value: Any) -> Any:
    """Recursively coerce numpy scalars/arrays and non-finite floats."""
    import numpy as np

    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class CheckResult:
    """Outcome of one identity check.

    ``passed`` is ternary: True, False, or None for an inconclusive run
    (not enough data at the configured scale to decide either way).
    ``p_value`` is set only for checks whose verdict is a single
    distributional test; such checks join the suite's Holm family.
    """

    check_id: str
    target: float
    estimate: float
    ci_low: float
    ci_high: float
    p_value: float | None
    passed: bool | None
    runtime_s: float = 0.0
    detail: dict[str, Any] = field(default_factory=dict)

    @property
    def status(self) -> str:
        if self.passed is None:
            return "inconclusive"
        return "pass" if self.passed else "fail"

    def row(self) -> dict[str, Any]:
        """Stable (runtime-free) serialization of this check."""
        return _json_safe(
            {
                "id": self.check_id,
                "target": self.target,
                "estimate": self.estimate,
                "ci_low": self.ci_low,
                "ci_high": self.ci_high,
                "p_value": self.p_value,
                "pass": self.passed,
                "status": self.status,
                "detail": self.detail,
            }
        )


@dataclass
class SuiteReport:
    """Aggregated suite outcome with a config echo.

    ``volatile`` carries the timestamp and the per-check runtimes; it is
    the only field allowed to differ between reruns of the same
    (seed, config) pair.
    """

    suite: str
    seed: int
    config: dict[str, Any]
    checks: list[CheckResult] = field(default_factory=list)
    generated_at: str = ""

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.checks if c.passed is False)

    @property
    def n_inconclusive(self) -> int:
        return sum(1 for c in self.checks if c.passed is None)

    @property
    def all_passed(self) -> bool:
        return bool(self.checks) and all(c.passed is True for c in self.checks)

    @property
    def exit_status(self) -> int:
        """0 when every check passed; 1 on any failure or inconclusive."""
        return 0 if self.all_passed else 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "seed": self.seed,
            "config_echo": _json_safe(self.config),
            "checks": [c.row() for c in self.checks],
            "summary": {
                "n_checks": len(self.checks),
                "n_failed": self.n_failed,
                "n_inconclusive": self.n_inconclusive,
                "exit_status": self.exit_status,
            },
            "volatile": {
                "generated_at": self.generated_at,
                "runtime_s": {c.check_id: round(c.runtime_s, 3) for c in self.checks},
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def stable_bytes(self) -> bytes:
        """Serialization with the volatile field removed; reruns of the same
        seed and config must agree on these bytes exactly."""
        d = self.to_dict()
        d.pop("volatile")
        return json.dumps(d, indent=2, sort_keys=True).encode("utf-8")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SuiteReport:
        try:
            checks = [
                CheckResult(
                    check_id=r["id"],
                    target=r["target"],
                    estimate=r["estimate"],
                    ci_low=r["ci_low"],
                    ci_high=r["ci_high"],
                    p_value=r["p_value"],
                    passed=r["pass"],
                    runtime_s=float(
                        raw.get("volatile", {}).get("runtime_s", {}).get(r["id"], 0.0)
                    ),
                    detail=r.get("detail", {}),
                )
                for r in raw["checks"]
            ]
            return cls(
                suite=raw["suite"],
                seed=raw["seed"],
                config=raw["config_echo"],
                checks=checks,
                generated_at=raw.get("volatile", {}).get("generated_at", ""),
            )
        except KeyError as exc:
            raise ConfigurationError(f"malformed report: missing {exc}") from exc
