"""Checks for the branching module: the time change against hand-computed
cells, round trips, total-mass bookkeeping, extinction and additivity laws."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from snakelab import csbp, levy
from snakelab.errors import DomainError, NotAbsorbed, StateError
from snakelab.streams import new_stream


def _stopped(seed, start=1.0, cutoff=1e-2, dt=1e-3, horizon=60.0):
    return levy.sample_levy_path(
        new_stream(seed), levy.FULL_EXPONENT, start, cutoff, dt,
        "at_zero", horizon=horizon,
    )


def _manual_path(times, values, kind="stopped"):
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    return levy.LevyPath(
        levy.FULL_EXPONENT, float(v[0]), t, v, np.zeros(0), np.zeros(0),
        1e-2, float(t[1] - t[0]), kind=kind,
    )


class TestForward:
    def test_hand_example(self):
        # linear cell 2 -> 1 over dt=1: dr = ln 2; extinction cell 1 -> 0
        # over dt=1 under the 2/3-power model: dr = 3
        path = _manual_path([0.0, 1.0, 2.0], [2.0, 1.0, 0.0])
        b = csbp.lamperti_forward(path)
        assert b.grid[0] == 0.0
        assert b.grid[1] == pytest.approx(math.log(2.0), rel=1e-12)
        assert b.grid[2] == pytest.approx(math.log(2.0) + 3.0, rel=1e-12)
        assert b.extinct
        assert b.extinction_time == pytest.approx(math.log(2.0) + 3.0)
        assert b.integral() == pytest.approx(2.0, rel=1e-12)
        b.validate()

    def test_total_mass_equals_passage_time(self):
        for seed in range(40):
            p = _stopped(400 + seed)
            b = csbp.lamperti_forward(p)
            assert b.integral() == pytest.approx(p.t0, rel=1e-9)

    def test_bridge_rejected(self):
        p = _stopped(440)
        q = levy.cyclic_transform(p, 0.5 * p.t0)
        with pytest.raises(StateError):
            csbp.lamperti_forward(q)

    def test_free_path_crossing_rejected(self):
        path = _manual_path([0.0, 1.0, 2.0], [1.0, -0.5, 0.2], kind="free")
        with pytest.raises(DomainError):
            csbp.lamperti_forward(path)

    def test_interior_zero_rejected(self):
        path = _manual_path([0.0, 1.0, 2.0, 3.0], [1.0, 0.0, 1.0, 0.0])
        with pytest.raises(DomainError):
            csbp.lamperti_forward(path)

    def test_free_path_keeps_running(self):
        p = levy.sample_levy_path(
            new_stream(441), levy.FULL_EXPONENT, 5.0, 1e-2, 1e-3,
            "horizon", horizon=0.2,
        )
        b = csbp.lamperti_forward(p)
        assert not b.extinct
        assert b.extinction_time is None
        assert (np.diff(b.grid) > 0).all()


class TestInverse:
    def test_round_trip_exact(self):
        done = 0
        for seed in range(25):
            try:
                p = _stopped(450 + seed)
            except NotAbsorbed:
                continue
            b = csbp.lamperti_forward(p)
            back = csbp.lamperti_inverse(b)
            assert back.kind == "stopped"
            assert np.array_equal(back.values, p.values)
            assert np.abs(back.times - p.times).max() <= 1e-9 * max(1.0, p.t0)
            done += 1
        assert done >= 20

    def test_round_trip_sup_bound(self):
        # the coarse published bound: sup gap below 5 dt**(1/3)
        dt = 1e-3
        bound = 5.0 * dt ** (1.0 / 3.0)
        ok = done = 0
        for seed in range(40):
            try:
                p = _stopped(520 + seed, dt=dt)
            except NotAbsorbed:
                continue
            back = csbp.lamperti_inverse(csbp.lamperti_forward(p))
            grid = np.linspace(0.0, p.t0, 200)
            gap = max(
                abs(back.value_at(t) - p.value_at(t)) for t in grid
            )
            ok += gap <= bound
            done += 1
            if done == 30:
                break
        assert done == 30
        assert ok >= 29

    def test_constant_zero_maps_to_trivial(self):
        flat = csbp.CsbpPath(
            0.0, np.array([0.0, 1.0, 2.0]), np.zeros(3), None, False
        )
        p = csbp.lamperti_inverse(flat)
        assert p.kind == "stopped"
        assert len(p.values) == 1 and p.values[0] == 0.0

    def test_single_jump_values_preserved(self):
        path = _manual_path([0.0, 1.0, 1.5, 2.0], [1.0, 2.3, 0.4, 0.0])
        b = csbp.lamperti_forward(path)
        back = csbp.lamperti_inverse(b)
        assert np.array_equal(back.values, path.values)
        assert np.abs(back.times - path.times).max() < 1e-12

    def test_free_round_trip(self):
        p = levy.sample_levy_path(
            new_stream(482), levy.FULL_EXPONENT, 5.0, 1e-2, 1e-3,
            "horizon", horizon=0.2,
        )
        back = csbp.lamperti_inverse(csbp.lamperti_forward(p))
        assert back.kind == "free"
        assert np.abs(back.times - p.times).max() < 1e-10


class TestExcursionTotals:
    def test_zero_initial(self):
        assert csbp.csbp_excursion_total(0.0, new_stream(500)) == (0.0, 0.0)

    def test_negative_initial(self):
        with pytest.raises(DomainError):
            csbp.csbp_excursion_total(-1.0, new_stream(501))

    def test_horizon_miss_propagates(self):
        with pytest.raises(NotAbsorbed):
            csbp.csbp_excursion_total(
                50.0, new_stream(502), horizon=0.05
            )

    def test_extinction_cdf_closed_form(self):
        # P[ext <= r] = exp(-1.5 z / r**2) at unit rate
        n, miss = 1500, 0
        s = new_stream(503)
        exts = []
        for i in range(n):
            try:
                _, ext = csbp.csbp_excursion_total(1.0, s.split(i), horizon=60.0)
            except NotAbsorbed:
                miss += 1
                continue
            exts.append(ext)
        exts = np.array(exts)
        assert miss < 0.05 * n
        for r in (1.0, 2.0, 4.0):
            want = csbp.extinction_cdf(1.0, r)
            got = (exts <= r).sum() / n
            se = math.sqrt(want * (1.0 - want) / n)
            assert abs(got - want) < 4.0 * se + 0.012

    def test_total_mass_scaling(self):
        # mass z**1.5 scaling, with the grid scaled along: exact equality
        n = 700
        s = new_stream(504)
        big, small = [], []
        for i in range(n):
            try:
                tb, _ = csbp.csbp_excursion_total(
                    4.0, s.split(i), cutoff=4e-2, dt=8e-3, horizon=160.0
                )
                big.append(tb)
            except NotAbsorbed:
                pass
            try:
                ts, _ = csbp.csbp_excursion_total(
                    1.0, s.split(10_000 + i), cutoff=1e-2, dt=1e-3,
                    horizon=20.0,
                )
                small.append(ts)
            except NotAbsorbed:
                pass
        p = stats.ks_2samp(np.array(big), 8.0 * np.array(small)).pvalue
        assert p > 0.005

    def test_passage_additivity(self):
        # branching: total mass from 2 = sum of two independent copies from 1
        n, cap = 800, 60.0
        s = new_stream(505)
        two, pairs = [], []
        for i in range(n):
            try:
                t2, _ = csbp.csbp_excursion_total(2.0, s.split(i), horizon=cap)
                if t2 <= cap:
                    two.append(t2)
            except NotAbsorbed:
                pass
            try:
                ta, _ = csbp.csbp_excursion_total(
                    1.0, s.split(20_000 + i), horizon=cap
                )
                tb, _ = csbp.csbp_excursion_total(
                    1.0, s.split(40_000 + i), horizon=cap
                )
                if ta + tb <= cap:
                    pairs.append(ta + tb)
            except NotAbsorbed:
                pass
        p = stats.ks_2samp(np.array(two), np.array(pairs)).pvalue
        assert p > 0.005


class TestClosedForms:
    def test_extinction_cdf_edge_cases(self):
        assert csbp.extinction_cdf(1.0, 0.0) == 0.0
        assert csbp.extinction_cdf(0.0, 5.0) == 1.0
        assert csbp.extinction_cdf(1.0, 1e9) == pytest.approx(1.0, abs=1e-12)

    def test_extinction_cdf_scaling(self):
        # doubling mass = quartering... r -> r / sqrt(z) collapse
        z, r = 3.0, 2.0
        assert csbp.extinction_cdf(z, r) == pytest.approx(
            csbp.extinction_cdf(1.0, r / math.sqrt(z)), rel=1e-12
        )
