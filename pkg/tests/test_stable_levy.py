"""Checks for the stable path module: exponent algebra against direct
quadrature, passage-time transforms, cyclic shifts, bridges, sign splits."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from snakelab import levy
from snakelab.errors import (
    ConfigurationError,
    DomainError,
    NotAbsorbed,
    SamplingTooHard,
    StateError,
)
from snakelab.sampling_core import JUMP_DENSITY_COEFF
from snakelab.streams import new_stream


def _collect_t0(stream, n, start=1.0, cutoff=1e-2, dt=1e-3, horizon=40.0,
                exponent=levy.FULL_EXPONENT):
    """Passage times from ``start``; unabsorbed runs reported as +inf."""
    out = np.full(n, np.inf)
    for i in range(n):
        try:
            p = levy.sample_levy_path(
                stream.split(i), exponent, start, cutoff, dt,
                "at_zero", horizon=horizon,
            )
        except NotAbsorbed:
            continue
        out[i] = p.t0
    return out


class TestExponent:
    def test_constants(self):
        assert levy.FULL_EXPONENT.coefficient == pytest.approx(
            math.sqrt(8.0 / 3.0), rel=1e-15
        )
        assert levy.HALF_EXPONENT.coefficient == pytest.approx(
            0.5 * math.sqrt(8.0 / 3.0), rel=1e-15
        )
        assert levy.HALF_EXPONENT.rate_scale == 0.5
        assert levy.FULL_EXPONENT.half() == levy.HALF_EXPONENT

    def test_mismatched_rate_rejected(self):
        with pytest.raises(ConfigurationError):
            levy.LevyExponent(coefficient=1.0, rate_scale=1.0)
        with pytest.raises(ConfigurationError):
            levy.LevyExponent(rate_scale=-1.0)

    @pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
    def test_psi_matches_jump_measure_quadrature(self, lam):
        # psi(lam) must equal the compensated-exponential integral of the
        # jump density rate * C * z**-2.5 on (0, inf)
        dens = lambda z: (
            levy.FULL_EXPONENT.rate_scale * JUMP_DENSITY_COEFF * z**-2.5
        )

        def compensated_exp(x):
            # exp(-x) - 1 + x without cancellation for tiny x
            if x < 1e-4:
                return x * x / 2.0 - x**3 / 6.0 + x**4 / 24.0
            return math.exp(-x) - 1.0 + x

        # substitute z = u * u on (0, 1] to remove the z**-0.5 singularity
        g = lambda u: compensated_exp(lam * u * u) * dens(u * u) * 2.0 * u
        val, _ = integrate.quad(g, 0.0, 1.0, limit=200)
        # integrate z > 1 with the compensator split to keep quad happy
        v2a, _ = integrate.quad(
            lambda z: (math.exp(-lam * z) - 1.0) * dens(z), 1.0, np.inf
        )
        v2b, _ = integrate.quad(lambda z: lam * z * dens(z), 1.0, np.inf)
        total = val + v2a + v2b
        assert total == pytest.approx(levy.FULL_EXPONENT.psi(lam), rel=1e-7)

    def test_truncated_moments_match_quadrature(self):
        c, theta = 1e-2, 3.0
        dens = lambda z: JUMP_DENSITY_COEFF * z**-2.5
        var_plain, _ = integrate.quad(lambda z: z * z * dens(z), 0.0, c)
        assert levy.FULL_EXPONENT.proxy_variance_rate(c) == pytest.approx(
            var_plain, rel=1e-9
        )
        var_tilt, _ = integrate.quad(
            lambda z: z * z * math.exp(-theta * z) * dens(z), 0.0, c
        )
        assert levy.FULL_EXPONENT.proxy_variance_rate(c, theta) == pytest.approx(
            var_tilt, rel=1e-9
        )
        m1_tail, _ = integrate.quad(
            lambda z: z * math.exp(-theta * z) * dens(z), c, np.inf
        )
        # tilted drift = -(tempered tail mean + 1.5 * coeff * sqrt(theta))
        want = -(m1_tail + 1.5 * levy.FULL_EXPONENT.coefficient * math.sqrt(theta))
        assert levy.FULL_EXPONENT.drift_rate(c, theta) == pytest.approx(
            want, rel=1e-9
        )

    def test_jump_rate_is_tail_mass(self):
        c = 1e-3
        tail, _ = integrate.quad(
            lambda z: JUMP_DENSITY_COEFF * z**-2.5, c, np.inf
        )
        assert levy.FULL_EXPONENT.jump_rate(c) == pytest.approx(tail, rel=1e-9)


class TestFreeIncrements:
    def test_laplace_transform(self):
        # E[exp(-lam U_t)] = exp(t psi(lam))
        t, lam = 0.5, 1.0
        x = levy.sample_free_increments(
            new_stream(201), levy.FULL_EXPONENT, t, 60_000, cutoff=1e-2
        )
        w = np.exp(-lam * x)
        target = math.exp(t * levy.FULL_EXPONENT.psi(lam))
        se = w.std() / math.sqrt(len(w))
        assert abs(w.mean() - target) < max(4.0 * se, 0.02 * target)

    def test_half_rate_laplace(self):
        t, lam = 0.5, 1.0
        x = levy.sample_free_increments(
            new_stream(202), levy.HALF_EXPONENT, t, 40_000, cutoff=1e-2
        )
        w = np.exp(-lam * x)
        target = math.exp(t * levy.HALF_EXPONENT.psi(lam))
        se = w.std() / math.sqrt(len(w))
        assert abs(w.mean() - target) < max(4.0 * se, 0.02 * target)

    def test_tilted_mean(self):
        t, theta = 0.5, 4.0
        x = levy.sample_free_increments(
            new_stream(203), levy.FULL_EXPONENT, t, 40_000, cutoff=1e-2,
            tilt=theta,
        )
        want = levy.FULL_EXPONENT.mean_rate(theta) * t
        se = x.std() / math.sqrt(len(x))
        assert abs(x.mean() - want) < 5.0 * se


class TestStoppedPaths:
    def test_structure(self):
        p = levy.sample_levy_path(
            new_stream(210), levy.FULL_EXPONENT, 1.0, 1e-2, 1e-3,
            "at_zero", horizon=60.0,
        )
        p.validate()
        assert p.kind == "stopped"
        assert p.values[-1] == 0.0
        assert p.values[0] == 1.0
        assert p.t0 == p.times[-1]
        assert (p.jump_sizes > 0).all()
        assert (np.diff(p.jump_times) >= 0).all()
        assert p.jump_times.max() <= p.t0 + 1e-12

    def test_start_zero_is_trivial(self):
        p = levy.sample_levy_path(
            new_stream(211), levy.FULL_EXPONENT, 0.0, 1e-2, 1e-3, "at_zero"
        )
        assert p.t0 == 0.0
        assert len(p.jump_sizes) == 0

    def test_not_absorbed_carries_horizon(self):
        with pytest.raises(NotAbsorbed) as ei:
            levy.sample_levy_path(
                new_stream(212), levy.FULL_EXPONENT, 5.0, 1e-2, 1e-3,
                "at_zero", horizon=0.05,
            )
        assert ei.value.horizon == 0.05

    def test_horizon_stop_is_free(self):
        p = levy.sample_levy_path(
            new_stream(213), levy.FULL_EXPONENT, 1.0, 1e-2, 1e-3,
            "horizon", horizon=0.5,
        )
        assert p.kind == "free"
        assert p.duration == pytest.approx(0.5, abs=1e-9)
        with pytest.raises(StateError):
            _ = p.t0

    def test_bad_args(self):
        with pytest.raises(DomainError):
            levy.sample_levy_path(
                new_stream(214), levy.FULL_EXPONENT, -1.0, 1e-2, 1e-3
            )
        with pytest.raises(ConfigurationError):
            levy.sample_levy_path(
                new_stream(215), levy.FULL_EXPONENT, 1.0, 1e-2, 1e-3,
                stop="sideways",
            )

    def test_jump_cell_convention(self):
        # with a huge cutoff each represented jump dwarfs the per-cell
        # Gaussian sd, so re-binning jumps by (times[i], times[i+1]] must
        # reproduce the increments to within a tight Gaussian envelope
        p = levy.sample_levy_path(
            new_stream(216), levy.FULL_EXPONENT, 10.0, 0.5, 1e-3,
            "at_zero", horizon=400.0,
        )
        steps = np.diff(p.times)
        sums = np.zeros(len(steps))
        if len(p.jump_sizes):
            idx = np.minimum(
                np.searchsorted(p.times[1:], p.jump_times, side="left"),
                len(steps) - 1,
            )
            np.add.at(sums, idx, p.jump_sizes)
        resid = (
            np.diff(p.values)
            - sums
            - levy.FULL_EXPONENT.drift_rate(0.5) * steps
        )
        sd = math.sqrt(levy.FULL_EXPONENT.proxy_variance_rate(0.5) * 1e-3)
        assert len(p.jump_sizes) >= 1
        assert np.abs(resid[:-1]).max() < 8.0 * sd  # last cell is partial


class TestHitting:
    def test_laplace_of_passage_time(self):
        # first passage from a is a 2/3-stable subordinator in a:
        # E[exp(-q T0)] = exp(-a (q / c)**(2/3))
        n = 2500
        t0 = _collect_t0(new_stream(220), n)
        for q in (1.0, 2.0):
            w = np.where(np.isfinite(t0), np.exp(-q * np.where(np.isfinite(t0), t0, 0.0)), 0.0)
            target = levy.hitting_laplace(levy.FULL_EXPONENT, 1.0, q)
            se = w.std() / math.sqrt(n)
            assert abs(w.mean() - target) < 4.0 * se + 0.01

    def test_scaling_equivariance(self):
        # passage from 4z with grid scaled by (time x8, cutoff x4) has
        # exactly the law of 8 x passage from z
        n = 1200
        big = _collect_t0(
            new_stream(221), n, start=4.0, cutoff=4e-2, dt=8e-3, horizon=160.0
        )
        small = _collect_t0(
            new_stream(222), n, start=1.0, cutoff=1e-2, dt=1e-3, horizon=20.0
        )
        a = big[np.isfinite(big)]
        b = 8.0 * small[np.isfinite(small)]
        p = stats.ks_2samp(a, b).pvalue
        assert p > 0.005

    def test_record_from_free_path(self):
        p = levy.sample_levy_path(
            new_stream(223), levy.FULL_EXPONENT, 0.3, 1e-2, 1e-3,
            "horizon", horizon=20.0,
        )
        rec = levy.first_hitting_zero(p)
        assert 0.0 < rec.t0 < 20.0
        assert p.value_at(rec.t0) == pytest.approx(0.0, abs=1e-9)

    def test_never_hits_raises(self):
        p = levy.sample_levy_path(
            new_stream(224), levy.FULL_EXPONENT, 50.0, 1e-2, 1e-3,
            "horizon", horizon=0.1,
        )
        with pytest.raises(NotAbsorbed):
            levy.first_hitting_zero(p)


class TestCyclicTransform:
    def _stopped(self, seed=230):
        return levy.sample_levy_path(
            new_stream(seed), levy.FULL_EXPONENT, 1.0, 1e-2, 1e-3,
            "at_zero", horizon=60.0,
        )

    def test_preserves_multiset_and_endpoints(self):
        p = self._stopped()
        q = levy.cyclic_transform(p, 0.37 * p.t0)
        q.validate()
        assert q.kind == "bridge"
        assert q.values[0] == pytest.approx(1.0, abs=1e-12)
        assert q.values[-1] == pytest.approx(0.0, abs=1e-12)
        assert q.duration == pytest.approx(p.t0, rel=1e-12)
        assert np.array_equal(np.sort(q.jump_sizes), np.sort(p.jump_sizes))

    def test_zero_shift_is_identity(self):
        p = self._stopped(231)
        q = levy.cyclic_transform(p, 0.0)
        assert np.array_equal(q.values, p.values)
        assert np.array_equal(q.times, p.times)

    def test_shift_outside_duration_rejected(self):
        p = self._stopped(232)
        with pytest.raises(DomainError):
            levy.cyclic_transform(p, p.t0 * 1.5)
        with pytest.raises(DomainError):
            levy.cyclic_transform(p, -0.1)

    def test_requires_stopped_path(self):
        f = levy.sample_levy_path(
            new_stream(233), levy.FULL_EXPONENT, 1.0, 1e-2, 1e-3,
            "horizon", horizon=0.2,
        )
        with pytest.raises(StateError):
            levy.cyclic_transform(f, 0.1)

    def test_matches_rejection_bridge_law(self):
        # shifted absorbed paths conditioned on duration = endpoint bridge:
        # compare the largest-jump law at matched duration
        t, tol, n = 0.7, 0.07, 120
        s = new_stream(234)
        cyc, rej = [], []
        for i in range(n):
            b = levy.sample_bridge(
                s.split(i), levy.FULL_EXPONENT, 1.0, 0.0, t,
                method="cyclic", tol=tol, cutoff=1e-2, dt=1e-3,
            )
            cyc.append(b.sorted_jumps()[0])
            r = levy.sample_bridge(
                s.split(10_000 + i), levy.FULL_EXPONENT, 1.0, 0.0, t,
                method="endpoint_rejection", tol=tol, cutoff=1e-2, dt=1e-3,
            )
            rej.append(r.sorted_jumps()[0])
        p = stats.ks_2samp(cyc, rej).pvalue
        assert p > 0.005


class TestBridges:
    def test_cyclic_duration_window(self):
        b = levy.sample_bridge(
            new_stream(240), levy.FULL_EXPONENT, 1.0, 0.0, 1.0,
            method="cyclic", tol=0.1, cutoff=1e-2, dt=1e-3,
        )
        assert abs(b.duration - 1.0) <= 0.1
        assert b.endpoint_tol == 0.1

    def test_rejection_endpoint_window(self):
        b = levy.sample_bridge(
            new_stream(241), levy.FULL_EXPONENT, 1.0, 0.5, 0.3,
            method="endpoint_rejection", tol=0.05, cutoff=1e-2, dt=1e-3,
        )
        assert b.values[0] == pytest.approx(1.0, abs=1e-12)
        assert abs(b.values[-1] - 0.5) <= 0.05 + 1e-12
        assert b.kind == "bridge"

    def test_upward_bridge(self):
        b = levy.sample_bridge(
            new_stream(242), levy.FULL_EXPONENT, 0.0, 0.8, 0.3,
            method="endpoint_rejection", tol=0.05, cutoff=1e-2, dt=1e-3,
        )
        assert abs(b.values[-1] - 0.8) <= 0.05 + 1e-12

    def test_bad_args(self):
        s = new_stream(243)
        with pytest.raises(ConfigurationError):
            levy.sample_bridge(s, levy.FULL_EXPONENT, 1.0, 0.0, 1.0, tol=0.0)
        with pytest.raises(DomainError):
            levy.sample_bridge(
                s, levy.FULL_EXPONENT, 1.0, 0.5, 1.0, method="cyclic"
            )
        with pytest.raises(DomainError):
            levy.sample_bridge(s, levy.FULL_EXPONENT, 1.0, 0.0, -1.0)
        with pytest.raises(ConfigurationError):
            levy.sample_bridge(
                s, levy.FULL_EXPONENT, 1.0, 0.0, 1.0, method="middle_out"
            )

    def test_starved_window_raises(self):
        with pytest.raises(SamplingTooHard):
            levy.sample_bridge(
                new_stream(244), levy.FULL_EXPONENT, 9.0, 0.0, 1e-4,
                method="cyclic", tol=1e-6, cutoff=1e-2, dt=1e-3,
                max_tries=500, acceptance_floor=0.5,
            )

    def test_tilt_leaves_conditional_law_invariant(self):
        # the downward tilt plus importance correction must not change the
        # accepted-path law; compare midpoint values with tilt on and off
        t, n = 0.3, 220
        s = new_stream(245)
        tilted, plain = [], []
        for i in range(n):
            bt = levy.sample_bridge(
                s.split(i), levy.FULL_EXPONENT, 1.0, 0.2, t,
                method="endpoint_rejection", tol=0.06, cutoff=1e-2,
                dt=1e-3, use_tilt=True,
            )
            tilted.append(bt.value_at(t / 2))
            bp = levy.sample_bridge(
                s.split(5_000 + i), levy.FULL_EXPONENT, 1.0, 0.2, t,
                method="endpoint_rejection", tol=0.06, cutoff=1e-2,
                dt=1e-3, use_tilt=False,
            )
            plain.append(bp.value_at(t / 2))
        assert stats.ks_2samp(tilted, plain).pvalue > 0.005

    def test_jumps_only_bridge(self):
        js = levy.sample_bridge_jumps(
            new_stream(246), levy.FULL_EXPONENT, 0.3, -0.4, tol=0.02
        )
        assert (np.diff(js) <= 0).all()
        assert js.min() > 0
        assert js.max() < 50.0

    def test_jumps_only_matches_grid_bridge(self):
        # two independent constructions of the same conditional law
        t, y, tol, n = 0.25, -0.3, 0.05, 150
        s = new_stream(247)
        a = [
            levy.sample_bridge_jumps(
                s.split(i), levy.FULL_EXPONENT, t, y, tol=tol, cutoff=1e-3
            )[0]
            for i in range(n)
        ]
        b = []
        for i in range(n):
            g = levy.sample_bridge(
                s.split(20_000 + i), levy.FULL_EXPONENT, 0.0, y, t,
                method="endpoint_rejection", tol=tol, cutoff=1e-3, dt=1e-3,
            )
            b.append(g.sorted_jumps()[0])
        assert stats.ks_2samp(a, b).pvalue > 0.005


class TestSignSplit:
    def _stopped(self, seed):
        return levy.sample_levy_path(
            new_stream(seed), levy.FULL_EXPONENT, 1.0, 1e-2, 1e-3,
            "at_zero", horizon=60.0,
        )

    def test_sum_identity_exact(self):
        p = self._stopped(250)
        mn, pl = levy.split_by_signs(new_stream(251), p)
        scale = max(1.0, np.abs(p.values).max())
        assert np.abs(mn.values + pl.values - p.values).max() / scale < 1e-10
        assert mn.values[0] == p.values[0]
        assert pl.values[0] == 0.0

    def test_terminal_values_opposite(self):
        p = self._stopped(252)
        mn, pl = levy.split_by_signs(new_stream(253), p)
        assert mn.values[-1] == pytest.approx(-pl.values[-1], abs=1e-12)
        rec = levy.first_hitting_zero(p, split=(mn, pl))
        assert rec.terminal_split[0] == pytest.approx(mn.values[-1], abs=1e-12)
        assert rec.terminal_split[0] + rec.terminal_split[1] == pytest.approx(
            0.0, abs=1e-12
        )

    def test_jump_multiset_partition(self):
        p = self._stopped(254)
        mn, pl = levy.split_by_signs(new_stream(255), p)
        merged = np.sort(np.concatenate([mn.jump_sizes, pl.jump_sizes]))
        assert np.array_equal(merged, np.sort(p.jump_sizes))
        assert len(mn.jump_sizes) + len(pl.jump_sizes) == len(p.jump_sizes)
        assert mn.exponent == levy.HALF_EXPONENT
        assert pl.exponent == levy.HALF_EXPONENT

    def test_signs_assigned_once(self):
        p = self._stopped(256)
        levy.split_by_signs(new_stream(257), p)
        assert p.jump_signs is not None
        with pytest.raises(StateError):
            levy.split_by_signs(new_stream(258), p)

    def test_plus_part_has_half_rate_law(self):
        # terminal and midpoint transforms of the +1 part on free paths:
        # E[exp(-lam U''_s)] = exp(s * psi_half(lam))
        t, lam, n = 0.5, 1.0, 1500
        s = new_stream(259)
        end, mid = np.empty(n), np.empty(n)
        for i in range(n):
            p = levy.sample_levy_path(
                s.split(i), levy.FULL_EXPONENT, 0.0, 1e-2, 1e-3,
                "horizon", horizon=t,
            )
            _, pl = levy.split_by_signs(s.split(100_000 + i), p)
            end[i] = pl.values[-1]
            mid[i] = pl.value_at(t / 2)
        for s_, xs in ((t, end), (t / 2, mid)):
            w = np.exp(-lam * xs)
            target = math.exp(s_ * levy.HALF_EXPONENT.psi(lam))
            se = w.std() / math.sqrt(n)
            assert abs(w.mean() - target) < 4.0 * se + 0.02 * target
