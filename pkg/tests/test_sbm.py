"""Tests for the branching-cloud total occupation module."""

from __future__ import annotations

import numpy as np
import pytest

from snakelab import sbm
from snakelab.errors import ConfigurationError, DomainError
from snakelab.sampling_core import GridConfig
from snakelab.streams import RandomStream

CFG = GridConfig(delta=0.03)


class TestOccupationSampling:
    def test_atom_count_rate(self):
        s = RandomStream(21)
        counts = [
            sbm.sample_sbm_occupation(s.split(i), 1.0, CFG, eps_pop=0.09).n_atoms
            for i in range(60)
        ]
        lam = 1.0 / (2 * 0.09)
        se = np.sqrt(lam / len(counts))
        assert abs(np.mean(counts) - lam) < 4 * se

    def test_zero_mass(self):
        occ = sbm.sample_sbm_occupation(RandomStream(1).split(0), 0.0, CFG)
        assert occ.n_atoms == 0
        assert occ.profile.total_mass == 0.0
        assert occ.origin_jump() == 0.0
        occ.validate()

    def test_validation(self):
        with pytest.raises(DomainError):
            sbm.sample_sbm_occupation(RandomStream(1).split(0), -1.0, CFG)
        with pytest.raises(ConfigurationError):
            sbm.sample_sbm_occupation(
                RandomStream(1).split(0), 1.0, CFG, eps_pop=0.001
            )

    def test_deterministic(self):
        one = sbm.sample_sbm_occupation(RandomStream(5).split(3), 0.8, CFG)
        two = sbm.sample_sbm_occupation(RandomStream(5).split(3), 0.8, CFG)
        np.testing.assert_array_equal(one.profile.ell, two.profile.ell)
        assert one.ldot_left == two.ldot_left

    def test_profile_is_sum_of_atoms(self):
        occ = sbm.sample_sbm_occupation(
            RandomStream(9).split(0), 1.0, CFG, eps_pop=0.09, keep_atoms=True
        )
        if occ.n_atoms == 0:
            pytest.skip("empty draw")
        prof2, left, right = sbm.occupation_profile_from_atoms(
            occ.atoms, grid=occ.profile.levels, bandwidth=occ.profile.bandwidth
        )
        np.testing.assert_allclose(occ.profile.ell, prof2.ell, rtol=1e-12)
        assert occ.ldot_left == left and occ.ldot_right == right

    def test_origin_jump_sign_and_scale(self):
        # pathwise the one-sided slopes differ by -2 alpha; a single coarse
        # resolution underreads the kink on a delta**(1/3) law, so a coarse
        # median can only be bracketed loosely around the partial reading
        s = RandomStream(33)
        jumps = [
            sbm.sample_sbm_occupation(
                s.split(i), 1.0, CFG, eps_pop=CFG.delta, bandwidth=0.05
            ).origin_jump()
            for i in range(80)
        ]
        med = np.median(jumps)
        assert -2.5 < med < -0.3

    def test_empty_atom_profile(self):
        prof, left, right = sbm.occupation_profile_from_atoms([])
        assert prof.total_mass == 0.0
        assert left == right == 0.0


class TestRefinementCoupling:
    def test_threshold_thinning_is_additive(self):
        # atoms above the coarser threshold plus the dropped band rebuild the
        # fine profile exactly
        occ = sbm.sample_sbm_occupation(
            RandomStream(44).split(0), 1.0, CFG, eps_pop=0.06, keep_atoms=True
        )
        if occ.n_atoms == 0:
            pytest.skip("empty draw")
        grid = occ.profile.levels
        bw = occ.profile.bandwidth
        kept = [a for a in occ.atoms if a.heights.max() * a.delta > 0.12]
        dropped = [a for a in occ.atoms if a.heights.max() * a.delta <= 0.12]
        fine = occ.profile.ell
        coarse = sbm.occupation_profile_from_atoms(kept, grid, bw)[0].ell
        band = sbm.occupation_profile_from_atoms(dropped, grid, bw)[0].ell
        np.testing.assert_allclose(coarse + band, fine, atol=1e-12)

    def test_refinement_stabilises_away_from_origin(self):
        # the band dropped between eps and eps/2 lives near the origin
        s = RandomStream(45)
        gaps = []
        for i in range(12):
            occ = sbm.sample_sbm_occupation(
                s.split(i), 1.0, CFG, eps_pop=0.06, keep_atoms=True
            )
            if occ.n_atoms == 0:
                continue
            grid = occ.profile.levels
            kept = [a for a in occ.atoms if a.heights.max() * a.delta > 0.12]
            coarse = sbm.occupation_profile_from_atoms(
                kept, grid, occ.profile.bandwidth
            )[0].ell
            far = np.abs(grid) > 0.45
            if far.any():
                gaps.append(np.max(np.abs(occ.profile.ell - coarse)[far]))
        assert gaps, "all draws empty"
        assert np.median(gaps) < 0.75


class TestOriginJumpEstimate:
    def test_structure_and_determinism(self):
        est = sbm.estimate_origin_jump(
            RandomStream(71), 1.0, deltas=(0.04, 0.02, 0.01), n_draws=(30, 30, 30)
        )
        est.validate()
        assert est.se > 0 and np.all(est.spreads > 0)
        assert len(est.medians) == 3
        again = sbm.estimate_origin_jump(
            RandomStream(71), 1.0, deltas=(0.04, 0.02, 0.01), n_draws=(30, 30, 30)
        )
        assert again.estimate == est.estimate
        assert np.array_equal(again.medians, est.medians)

    def test_extrapolated_jump_bracket(self):
        # coarse, fast ladder: the extrapolation overshoots every raw median
        # toward -2 alpha; full certification runs in the acceptance suite
        est = sbm.estimate_origin_jump(
            RandomStream(72),
            1.0,
            deltas=(0.02, 0.01, 0.005),
            n_draws=(200, 200, 200),
        )
        assert -3.4 < est.estimate < -0.8
        assert np.all(est.medians < 0)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            sbm.estimate_origin_jump(
                RandomStream(0), 1.0, deltas=(0.02, 0.01), n_draws=(8, 8)
            )
        with pytest.raises(ConfigurationError):
            sbm.estimate_origin_jump(
                RandomStream(0), 1.0, deltas=(0.04, 0.02, 0.01), n_draws=(8, 8)
            )
        with pytest.raises(ConfigurationError):
            sbm.estimate_origin_jump(
                RandomStream(0),
                1.0,
                deltas=(0.04, 0.02, 0.01),
                n_draws=(8, 8, 4),
            )


class TestExitStatistics:
    def test_unreachable_level_is_empty(self):
        ex = sbm.sample_exit_statistics(
            RandomStream(7).split(0), 1.0, CFG, h=80.0, eps_pop=0.09
        )
        assert len(ex.boundary_sizes) == 0
        assert ex.total_boundary() == 0.0
        assert ex.density_at_level == 0.0

    def test_structure(self):
        for i in range(8):
            ex = sbm.sample_exit_statistics(
                RandomStream(8).split(i), 1.0, CFG, h=0.3, eps_pop=0.09
            )
            if len(ex.boundary_sizes):
                break
        assert len(ex.boundary_sizes) > 0
        assert np.all(np.diff(ex.boundary_sizes) <= 0)
        assert ex.boundary_sizes.min() >= 0.01
        assert ex.density_at_zero >= 0.0

    def test_floor_monotone(self):
        lo = sbm.sample_exit_statistics(
            RandomStream(8).split(2), 1.0, CFG, h=0.3, eps_pop=0.09, size_floor=0.01
        )
        hi = sbm.sample_exit_statistics(
            RandomStream(8).split(2), 1.0, CFG, h=0.3, eps_pop=0.09, size_floor=0.1
        )
        assert len(hi.boundary_sizes) <= len(lo.boundary_sizes)
        assert hi.total_boundary() <= lo.total_boundary() + 1e-12

    def test_validation(self):
        with pytest.raises(DomainError):
            sbm.sample_exit_statistics(RandomStream(1).split(0), 1.0, CFG, h=0.0)
        with pytest.raises(ConfigurationError):
            sbm.sample_exit_statistics(
                RandomStream(1).split(0), 1.0, CFG, h=0.5, size_floor=0.0
            )
