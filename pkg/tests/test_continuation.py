"""Tests for the continuation kernel and its shape functions."""

from __future__ import annotations

import math

import numpy as np
import pytest

from snakelab import continuation as cont
from snakelab.errors import ConfigurationError, DomainError
from snakelab.sampling_core import GridConfig
from snakelab.streams import RandomStream

# 30-digit reference values generated once with mpmath (scaled complementary
# error function evaluated through hyperu, adaptive quadrature with dynamic
# precision for the tail integrals)
SHAPE_ORACLE = {
    0.04: 3.37579154759979669963701899685,
    0.3: 0.546901519961066069064572235315,
    1.0: 0.118840453411990125738566083791,
    5.0: 0.00751719953014609192087364805085,
    50.0: 4.35353037100234041424929956044e-5,
    399.0: 2.62832368971310736182033509712e-7,
    401.0: 2.59583410619515244168784288108e-7,
    10000.0: 8.45861455150423911338635942505e-11,
}
BALL_ORACLE = {
    0.25: 0.0442348163859067060373989480091,
    1.0: 0.430208350590885040153936418379,
    4.0: 2.91007922042021362358257227528,
    30.0: 28.4513876845930243901963570237,
    1000.0: 998.337210598148884595686928741,
}
SQRT_PI = math.sqrt(math.pi)


class TestShapeFunction:
    def test_oracle_values(self):
        for x, want in SHAPE_ORACLE.items():
            got = cont.occupation_shape(x)
            assert got == pytest.approx(want, rel=1e-7), x

    def test_high_precision_at_one(self):
        assert cont.occupation_shape(1.0) == pytest.approx(
            0.118840453411990125738566083791, rel=1e-10, abs=0.0
        )

    def test_vectorised(self):
        xs = np.array([0.3, 1.0, 10000.0])
        got = cont.occupation_shape(xs)
        assert got.shape == (3,)
        assert got[0] == pytest.approx(SHAPE_ORACLE[0.3], rel=1e-9)
        assert got[2] == pytest.approx(SHAPE_ORACLE[10000.0], rel=1e-9)

    def test_switchover_is_smooth(self):
        # the series-side value at the handover sits between the two direct
        # oracle values bracketing it (the function is decreasing there)
        mid = cont.occupation_shape(400.0)
        assert SHAPE_ORACLE[401.0] < mid < SHAPE_ORACLE[399.0]

    def test_limits(self):
        # sqrt(x) * shape -> 2/sqrt(pi) at zero, x^{5/2} * shape -> 3/(2 sqrt(pi))
        assert math.sqrt(1e-4) * cont.occupation_shape(1e-4) == pytest.approx(
            2 / SQRT_PI, rel=0.03
        )
        assert 1e4**2.5 * cont.occupation_shape(1e4) == pytest.approx(
            3 / (2 * SQRT_PI), rel=1e-3
        )

    def test_domain(self):
        with pytest.raises(DomainError):
            cont.occupation_shape(0.0)
        with pytest.raises(DomainError):
            cont.occupation_shape(-1.0)
        with pytest.raises(DomainError):
            cont.occupation_shape(np.array([1.0, -2.0]))


class TestTailIntegralAndBall:
    def test_total_integral(self):
        assert cont.shape_tail_integral(0.0) == pytest.approx(1 / SQRT_PI, rel=1e-8)

    def test_tail_matches_quadrature_split(self):
        # additivity across an interior point exercises both branches
        whole = cont.shape_tail_integral(1.0)
        upper = cont.shape_tail_integral(500.0)
        assert upper < whole
        assert cont.shape_tail_integral(450.0) > upper

    def test_ball_oracle(self):
        for u, want in BALL_ORACLE.items():
            assert cont.small_ball_mass(u) == pytest.approx(want, rel=1e-8), u

    def test_ball_linear_growth(self):
        assert abs(cont.small_ball_mass(1000.0) / 1000.0 - 1) < 1e-2

    def test_ball_vectorised(self):
        out = cont.small_ball_mass(np.array([1.0, 4.0]))
        assert out[1] == pytest.approx(BALL_ORACLE[4.0], rel=1e-8)

    def test_domain(self):
        with pytest.raises(DomainError):
            cont.small_ball_mass(0.0)
        with pytest.raises(DomainError):
            cont.shape_tail_integral(-0.5)


class TestMeanLevelDensity:
    def test_normalisation(self):
        xs = np.geomspace(1e-3, 80.0, 6000)
        total = np.trapezoid(cont.mean_level_density(1.0, xs), xs)
        assert total == pytest.approx(1.0, abs=2e-3)

    def test_scaling_relation(self):
        # sqrt(lam) * p_{lam z}(sqrt(lam) x) == p_z(x), exactly
        lam, z, x = 2.0, 1.3, 0.7
        lhs = math.sqrt(lam) * cont.mean_level_density(lam * z, math.sqrt(lam) * x)
        rhs = cont.mean_level_density(z, x)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_time_above_closed_form(self):
        assert cont.mean_time_above(1.0, 0.0) == 1.0
        assert cont.mean_time_above(1.0, 0.5) == pytest.approx(
            1.0 - 0.5**4 * BALL_ORACLE[4.0], rel=1e-9
        )
        # agrees with direct quadrature of the density
        xs = np.linspace(1e-5, 0.8, 4000)
        below = np.trapezoid(cont.mean_level_density(1.0, xs), xs)
        assert cont.mean_time_above(1.0, 0.8) == pytest.approx(1 - below, abs=2e-4)

    def test_domain(self):
        with pytest.raises(DomainError):
            cont.mean_level_density(0.0, 1.0)
        with pytest.raises(DomainError):
            cont.mean_level_density(1.0, -0.1)
        with pytest.raises(DomainError):
            cont.mean_time_above(1.0, -0.1)


class TestState:
    def test_valid(self):
        st = cont.ContinuationState(0.4, -0.2)
        assert st.occupation == 0.4
        cont.ContinuationState(0.0, 0.0)

    def test_rejects_bad_states(self):
        with pytest.raises(DomainError):
            cont.ContinuationState(-0.1, 0.0)
        with pytest.raises(DomainError):
            cont.ContinuationState(0.0, 0.3)
        with pytest.raises(DomainError):
            cont.ContinuationState(float("nan"), 0.0)


class TestMeasureSample:
    def _manual(self):
        grid = np.array([0.0, 0.5, 1.0])
        return cont.MeasureSample(
            locations=np.array([0.25, 0.75, 1.0]),
            weights=np.array([0.2, 0.3, 0.1]),
            resolution=grid,
            provenance="kernel",
            jumps=np.array([0.4, 0.1]),
            neglected_mass=0.01,
        )

    def test_time_above(self):
        ms = self._manual()
        assert ms.total_weight() == pytest.approx(0.6)
        assert ms.time_above(0.0) == pytest.approx(0.6)
        assert ms.time_above(0.25) == pytest.approx(0.5)  # half of cell one gone
        assert ms.time_above(0.5) == pytest.approx(0.4)
        assert ms.time_above(1.0) == pytest.approx(0.1)
        assert ms.time_above(1.5) == 0.0
        ms.validate()

    def test_validate_rejects(self):
        ms = self._manual()
        ms.weights = np.array([0.2, -0.3, 0.1])
        with pytest.raises(ConfigurationError):
            ms.validate()
        ms = self._manual()
        ms.jumps = np.array([0.1, 0.4])
        with pytest.raises(ConfigurationError):
            ms.validate()
        ms = self._manual()
        ms.provenance = "mystery"
        with pytest.raises(ConfigurationError):
            ms.validate()


class TestFloorPolicy:
    def test_bound_formula(self):
        t, floor = 0.7, 4e-4
        want = t * math.sqrt(3 / (2 * math.pi)) * math.sqrt(floor)
        assert cont.neglected_mass_bound(t, floor) == pytest.approx(want, rel=1e-12)
        with pytest.raises(DomainError):
            cont.neglected_mass_bound(-1.0, floor)

    def test_default_floor(self):
        assert cont.default_jump_floor(0.3) < cont.default_jump_floor(3.0)
        assert cont.default_jump_floor(1e9) == 1e-3
        assert cont.default_jump_floor(1e-12) >= 1e-6


@pytest.fixture(scope="module")
def table():
    cfg = GridConfig(delta=0.04)
    return cont.build_excursion_table(RandomStream(4242).split(0), cfg, 150)


class TestExcursionTable:
    def test_structure(self, table):
        table.validate()
        assert len(table) == 150
        # level zero holds the full traversal time of each member
        np.testing.assert_allclose(table.above[:, 0], table.sigma, rtol=1e-12)
        assert np.all(table.peak > 0)

    def test_mean_curve_matches_closed_form(self, table):
        # the member-level distribution has a very heavy tail, so the sample
        # standard error is only trustworthy at moderate heights; further out
        # a missing rare giant biases mean and spread downward together
        for x in (0.3, 0.8):
            emp = np.interp(x, table.levels, table.above.mean(axis=0))
            se = np.interp(x, table.levels, table.above.std(axis=0)) / math.sqrt(
                len(table)
            )
            want = cont.mean_time_above(1.0, x)
            assert abs(emp - want) < 4 * se + 0.02, x
        # loose order-of-magnitude sanity in the tail-dominated region
        far = np.interp(1.5, table.levels, table.above.mean(axis=0))
        assert 0.05 < far < 1.2

    def test_rejects_empty(self):
        with pytest.raises(ConfigurationError):
            cont.build_excursion_table(
                RandomStream(1).split(0), GridConfig(delta=0.04), 0
            )


class TestSampleContinuation:
    def test_empty_state(self, table):
        ms = cont.sample_continuation(
            RandomStream(7).split(0), cont.ContinuationState(0.0, 0.0), table
        )
        assert ms.total_weight() == 0.0
        assert len(ms.jumps) == 0
        assert ms.neglected_mass == 0.0

    def test_mass_identity(self, table):
        # total weight equals the exact sum of scaled member masses
        st = cont.ContinuationState(0.3, -0.2)
        ms = cont.sample_continuation(
            RandomStream(7).split(1), st, table, jump_floor=5e-4
        )
        ms.validate()
        want = float(np.sum(ms.jumps**2 * table.sigma[ms.rows]))
        assert ms.total_weight() == pytest.approx(want, rel=1e-9)
        assert ms.time_above(0.0) == pytest.approx(ms.total_weight(), rel=1e-12)
        assert ms.max_label == pytest.approx(
            float(np.max(np.sqrt(ms.jumps) * table.peak[ms.rows])), rel=1e-12
        )

    def test_jumps_sorted_and_floored(self, table):
        ms = cont.sample_continuation(
            RandomStream(7).split(2),
            cont.ContinuationState(0.4, 0.1),
            table,
            jump_floor=5e-4,
        )
        assert np.all(np.diff(ms.jumps) <= 0)
        assert ms.jumps.min() >= 5e-4
        assert ms.neglected_mass == pytest.approx(
            cont.neglected_mass_bound(0.4, 5e-4), rel=1e-12
        )

    def test_conditional_mean_mass(self, table):
        # given the jumps, expected total is sum eta^2 times the table mean
        s = RandomStream(7)
        st = cont.ContinuationState(0.3, -0.1)
        ratios = []
        for i in range(40):
            ms = cont.sample_continuation(s.split(10 + i), st, table, jump_floor=5e-4)
            ratios.append(ms.total_weight() / np.sum(ms.jumps**2))
        se = np.std(ratios, ddof=1) / math.sqrt(len(ratios))
        assert abs(np.mean(ratios) - table.sigma.mean()) < 4 * se + 0.05

    def test_time_above_monotone(self, table):
        ms = cont.sample_continuation(
            RandomStream(7).split(3),
            cont.ContinuationState(0.3, 0.0),
            table,
            jump_floor=5e-4,
        )
        xs = np.linspace(0, ms.resolution[-1], 40)
        vals = [ms.time_above(x) for x in xs]
        assert np.all(np.diff(vals) <= 1e-12)

    def test_grid_validation(self, table):
        st = cont.ContinuationState(0.2, 0.0)
        with pytest.raises(ConfigurationError):
            cont.sample_continuation(
                RandomStream(7).split(4), st, table, grid=np.array([0.1, 0.5])
            )
        with pytest.raises(ConfigurationError):
            cont.sample_continuation(
                RandomStream(7).split(4), st, table, jump_floor=-1.0
            )


class TestContinueProfile:
    def test_trivial_state(self, table):
        prof = cont.continue_profile(
            RandomStream(8).split(0), cont.ContinuationState(0.0, 0.0), table
        )
        assert prof.total_mass == 0.0
        assert np.all(prof.ell == 0.0)

    def test_mean_profile_recovers_state(self, table):
        # average density near the cut approaches the occupation value with
        # slope twice the half-derivative
        s = RandomStream(8)
        st = cont.ContinuationState(0.3, -0.2)
        curves = []
        for i in range(80):
            prof = cont.continue_profile(
                s.split(10 + i), st, table, bandwidth=0.05, top=1.0, jump_floor=5e-4
            )
            curves.append(prof.ell)
        levels = prof.levels
        mean = np.mean(curves, axis=0)
        win = (levels >= 0.1) & (levels <= 0.5)
        design = np.vstack([np.ones(win.sum()), levels[win]]).T
        coef, *_ = np.linalg.lstsq(design, mean[win], rcond=None)
        assert coef[0] == pytest.approx(0.3, abs=0.12)
        assert coef[1] == pytest.approx(-0.4, abs=0.30)

    def test_total_mass_passthrough(self, table):
        st = cont.ContinuationState(0.25, 0.0)
        prof = cont.continue_profile(
            RandomStream(8).split(1), st, table, bandwidth=0.04, jump_floor=5e-4
        )
        assert prof.total_mass > 0
        # binned masses sum back to the total up to the above-top atom
        binned = np.sum(prof.ell) * prof.deriv_bandwidth
        assert binned <= prof.total_mass + 1e-12

    def test_bad_bandwidth(self, table):
        with pytest.raises(ConfigurationError):
            cont.continue_profile(
                RandomStream(8).split(2),
                cont.ContinuationState(0.1, 0.0),
                table,
                bandwidth=0.0,
            )
