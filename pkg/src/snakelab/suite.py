"""Registry and runner for the verification suite.

The registry fixes a canonical order; each check draws from a substream
keyed by its registry position, so adding randomness to one check never
shifts another's draws, and running a subset reproduces exactly the
results the full suite would produce for those ids.
"""

from __future__ import annotations

import time

from . import checks, stats
from .config import SuiteConfig
from .errors import ConfigurationError
from .reporting import SuiteReport
from .streams import new_stream

__all__ = ["REGISTRY", "registry_ids", "run_identity_suite"]

REGISTRY = {
    "shape_asymptotes": checks.check_shape_asymptotes,
    "ball_mass_asymptote": checks.check_ball_mass_asymptote,
    "small_ball_rate": checks.check_small_ball_rate,
    "tail_label_sup": checks.check_tail_label_sup,
    "excursion_class_mass": checks.check_excursion_class_mass,
    "exit_mass_laplace": checks.check_exit_mass_laplace,
    "exit_mass_mean": checks.check_exit_mass_mean,
    "boundary_excursion_time": checks.check_boundary_excursion_time,
    "boundary_excursion_tail": checks.check_boundary_excursion_tail,
    "origin_density_tail": checks.check_origin_density_tail,
    "cyclic_bridge": checks.check_cyclic_bridge,
    "signed_split": checks.check_signed_split,
    "lamperti_roundtrip": checks.check_lamperti_roundtrip,
    "branching_additivity": checks.check_branching_additivity,
    "level_poisson": checks.check_level_poisson,
    "reroot_invariance": checks.check_reroot_invariance,
    "occupation_kink": checks.check_occupation_kink,
    "population_additivity": checks.check_population_additivity,
    "kernel_mass_stability": checks.check_kernel_mass_stability,
    "level_state_match": checks.check_level_state_match,
    "markov_kernel_match": checks.check_markov_kernel_match,
    "population_kernel_match": checks.check_population_kernel_match,
    "test_calibration": checks.check_test_calibration,
}


def registry_ids() -> list[str]:
    """Canonical check order."""
    return list(REGISTRY)


def _apply_holm(results, config: SuiteConfig) -> None:
    """Family-wise adjustment over the single-p-value checks.

    Only checks that flag themselves as family members participate;
    their verdicts are recomputed from the adjusted p-value and any
    exact side conditions they recorded.
    """
    fam = [r for r in results
           if r.p_value is not None and r.detail.get("holm_family")]
    if not fam:
        return
    adjusted = stats.holm_adjust([r.p_value for r in fam])
    thr = config.tolerances.p_threshold
    for r, p_adj in zip(fam, adjusted):
        r.detail["p_holm"] = float(p_adj)
        r.passed = bool(p_adj > thr and r.detail.get("aux_ok", True))


def run_identity_suite(config: SuiteConfig, seed: int,
                       ids: list[str] | None = None,
                       progress=None) -> SuiteReport:
    """Run the selected checks and assemble a report.

    ``ids`` restricts the run to a subset (canonical order is kept);
    unknown ids raise.  ``progress`` is an optional callable receiving
    (check id, result) after each check, for live logging.
    """
    config.validate()
    if ids is None:
        selected = list(REGISTRY)
    else:
        unknown = sorted(set(ids) - set(REGISTRY))
        if unknown:
            raise ConfigurationError(
                f"unknown check ids: {', '.join(unknown)}; "
                f"known ids: {', '.join(REGISTRY)}")
        wanted = set(ids)
        selected = [name for name in REGISTRY if name in wanted]
    root = new_stream(seed)
    resources = checks.SuiteResources(root.split(999), config)
    index = {name: k for k, name in enumerate(REGISTRY)}
    results = []
    for name in selected:
        t0 = time.perf_counter()
        result = REGISTRY[name](root.split(index[name]), config, resources)
        result.runtime_s = time.perf_counter() - t0
        results.append(result)
        if progress is not None:
            progress(name, result)
    _apply_holm(results, config)
    return SuiteReport(suite="identity", seed=seed, config=config.to_dict(),
                       checks=results)
