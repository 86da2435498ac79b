"""Tests for the statistical comparison utilities."""

from __future__ import annotations

import numpy as np
import pytest

from snakelab import stats
from snakelab.errors import ConfigurationError, DomainError
from snakelab.streams import RandomStream


class TestKs:
    def test_same_distribution(self):
        gen = np.random.default_rng(1)
        out = stats.ks_two_sample(gen.normal(size=400), gen.normal(size=400))
        assert out.pvalue > 0.01
        assert not out.rejects(0.01)

    def test_detects_shift(self):
        gen = np.random.default_rng(2)
        out = stats.ks_two_sample(
            gen.normal(size=400), gen.normal(size=400) + 0.6
        )
        assert out.pvalue < 1e-6
        assert out.rejects()

    def test_rejects_tiny_input(self):
        with pytest.raises(DomainError):
            stats.ks_two_sample([1.0], [1.0, 2.0])


class TestEnergy:
    def test_null_uniformity(self):
        # p-values under the null should not pile up at the bottom
        gen = np.random.default_rng(3)
        s = RandomStream(3)
        ps = []
        for i in range(40):
            a = gen.normal(size=(60, 2))
            b = gen.normal(size=(60, 2))
            ps.append(stats.energy_two_sample(a, b, s.split(i), n_perm=99).pvalue)
        ps = np.array(ps)
        assert (ps < 0.05).mean() < 0.25
        assert np.median(ps) > 0.2

    def test_detects_mean_shift(self):
        gen = np.random.default_rng(4)
        s = RandomStream(4)
        a = gen.normal(size=(150, 2))
        b = gen.normal(size=(150, 2)) + np.array([0.7, 0.0])
        out = stats.energy_two_sample(a, b, s.split(0), n_perm=199)
        assert out.pvalue <= 0.01

    def test_detects_variance_change(self):
        gen = np.random.default_rng(5)
        s = RandomStream(5)
        a = gen.normal(size=(200, 1))
        b = 2.2 * gen.normal(size=(200, 1))
        out = stats.energy_two_sample(a, b, s.split(0), n_perm=199)
        assert out.pvalue <= 0.01

    def test_subsampling_path(self):
        gen = np.random.default_rng(6)
        s = RandomStream(6)
        a = gen.normal(size=(900, 1))
        b = gen.normal(size=(900, 1))
        out = stats.energy_two_sample(a, b, s.split(0), n_perm=99, max_points=300)
        assert out.n_first + out.n_second <= 300
        assert out.pvalue > 0.01

    def test_deterministic(self):
        gen = np.random.default_rng(7)
        a = gen.normal(size=(80, 2))
        b = gen.normal(size=(80, 2))
        one = stats.energy_two_sample(a, b, RandomStream(9).split(1), n_perm=99)
        two = stats.energy_two_sample(a, b, RandomStream(9).split(1), n_perm=99)
        assert one == two

    def test_validation(self):
        with pytest.raises(DomainError):
            stats.energy_two_sample(
                np.zeros((2, 1)), np.zeros((9, 1)), RandomStream(1), n_perm=30
            )
        with pytest.raises(ConfigurationError):
            stats.energy_two_sample(
                np.zeros((9, 1)), np.zeros((9, 2)), RandomStream(1)
            )
        with pytest.raises(ConfigurationError):
            stats.energy_two_sample(
                np.zeros((9, 1)), np.zeros((9, 1)), RandomStream(1), n_perm=5
            )


class TestTailFits:
    def test_survival_slope_pareto(self):
        gen = np.random.default_rng(8)
        v = gen.pareto(1.5, size=40_000) + 1.0
        slope = stats.survival_slope(v, 0.7, 0.995)
        assert slope == pytest.approx(-1.5, abs=0.08)

    def test_log_density_slope_pareto(self):
        gen = np.random.default_rng(9)
        v = gen.pareto(2.0, size=60_000) + 1.0  # density ~ v^{-3}
        slope = stats.log_density_slope(v, 1.5, 8.0, bins=12)
        assert slope == pytest.approx(-3.0, abs=0.15)

    def test_validation(self):
        with pytest.raises(DomainError):
            stats.survival_slope(np.ones(10))
        with pytest.raises(ConfigurationError):
            stats.survival_slope(np.arange(1, 200.0), 0.9, 0.2)
        with pytest.raises(ConfigurationError):
            stats.log_density_slope(np.arange(1, 100.0), 5.0, 1.0)


class TestHolm:
    def test_known_example(self):
        adj = stats.holm_adjust([0.01, 0.04, 0.03, 0.005])
        np.testing.assert_allclose(adj, [0.03, 0.06, 0.06, 0.02])

    def test_monotone_and_clipped(self):
        adj = stats.holm_adjust([0.5, 0.9, 0.2])
        assert np.all(adj <= 1.0)
        assert adj[1] >= adj[0] >= adj[2]

    def test_validation(self):
        with pytest.raises(DomainError):
            stats.holm_adjust([0.5, 1.5])
        assert len(stats.holm_adjust([])) == 0


class TestQuantileBins:
    def test_even_split(self):
        gen = np.random.default_rng(10)
        v = gen.normal(size=1000)
        labels, edges = stats.quantile_bins(v, 4)
        counts = np.bincount(labels, minlength=4)
        assert counts.min() >= 240
        assert len(edges) == 5
        assert edges[0] == v.min() and edges[-1] == v.max()

    def test_degenerate(self):
        with pytest.raises(DomainError):
            stats.quantile_bins(np.ones(100), 4)
        with pytest.raises(DomainError):
            stats.quantile_bins(np.arange(3), 4)
