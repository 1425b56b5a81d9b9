import math

import numpy as np
import pytest

import green
from weights import DomainError

SHIPPED = ["sphere", "power:a=-0.5:m=1", "power:a=0:m=1", "power:a=2:m=1"]


class TestMean:
    def test_sphere_n2_mean_is_one(self, table_for):
        table = table_for("sphere", 2)
        assert green.mean_tau(table) == pytest.approx(1.0, abs=1e-8)
        assert green.mean_tau_identity(table) == pytest.approx(1.0, abs=1e-8)

    def test_sphere_n2_integrand(self, table_for):
        table = table_for("sphere", 2)
        s = np.array([0.3, 1.5, 2.8])
        np.testing.assert_allclose(green.J_n(table, s), np.sin(s) / 2, rtol=1e-9)

    def test_integrand_domain(self, table_for):
        table = table_for("sphere", 2)
        with pytest.raises(DomainError):
            green.J_n(table, 0.0)

    @pytest.mark.parametrize("key", SHIPPED)
    @pytest.mark.parametrize("n", [2, 64])
    def test_mean_identity(self, table_for, key, n):
        table = table_for(key, n)
        assert green.mean_tau_identity(table) == pytest.approx(green.mean_tau(table), rel=1e-8)

    @pytest.mark.parametrize("key", SHIPPED)
    @pytest.mark.parametrize("n", [2, 64])
    def test_variance_expansion(self, table_for, key, n):
        primary, expansion = green.var_tau(table_for(key, n))
        assert primary > 0
        assert expansion == pytest.approx(primary, rel=1e-6)


class TestU1:
    def test_boundary_values(self, table_for):
        table = table_for("sphere", 16)
        assert green.u1(table, 0.0) == pytest.approx(green.mean_tau_identity(table), rel=1e-12)
        assert green.u1(table, table.L) == 0.0
        assert green.u1_prime(table, 0.0) == 0.0

    def test_decreasing(self, table_for):
        table = table_for("power:a=2:m=1", 16)
        r = np.linspace(0.0, table.L, 801)
        values = green.u1(table, r)
        assert np.all(np.diff(values) <= 0)
        assert np.all(green.u1_prime(table, r[1:-1]) < 0)

    def test_derivative_consistent(self, table_for):
        table = table_for("sphere", 16)
        r, h = 1.2, 1e-5
        fd = (green.u1(table, r + h) - green.u1(table, r - h)) / (2 * h)
        assert green.u1_prime(table, r) == pytest.approx(fd, rel=1e-6)

    def test_generator_residual(self, table_for):
        assert green.generator_residual(table_for("sphere", 64)) < 1e-3

    def test_radius_domain(self, table_for):
        with pytest.raises(DomainError):
            green.u1(table_for("sphere", 16), -1.0)


class TestHigherMoments:
    def test_second_moment_matches_variance(self, table_for):
        table = table_for("power:a=0:m=1", 64)
        moments = green.moment_k(table, 2)
        mean = green.mean_tau(table)
        var, _ = green.var_tau(table)
        assert moments[0] == pytest.approx(mean, rel=1e-8)
        assert moments[1] == pytest.approx(mean**2 + var, rel=1e-6)

    def test_factorial_bound(self, table_for):
        table = table_for("power:a=0:m=1", 2)
        m1, m2, m3 = green.moment_k(table, 3)
        assert m2 >= m1**2
        assert m3 <= 6.0 * m1**3
        assert m3 >= m2**1.5

    def test_k_max_range(self, table_for):
        table = table_for("sphere", 2)
        with pytest.raises(DomainError):
            green.moment_k(table, 0)
        with pytest.raises(DomainError):
            green.moment_k(table, green.K_MAX_LIMIT + 1)

    def test_report(self, table_for):
        report = green.moment_report(table_for("sphere", 64), k_max=3)
        data = report.to_json()
        assert data["n"] == 64
        assert len(data["moments"]) == 3
        assert data["ratio"] == pytest.approx(data["var"] / data["mean"] ** 2)
        assert report.residuals["second_moment"] < 1e-6


class TestBounds:
    def test_stationary_cdf(self, table_for):
        table = table_for("sphere", 8)
        assert green.stationary_radial_cdf(table, 0.0) == 0.0
        assert green.stationary_radial_cdf(table, table.L) == 1.0
        assert green.stationary_radial_cdf(table, table.L / 2) == pytest.approx(0.5, abs=1e-10)
        r = np.linspace(0.0, table.L, 301)
        assert np.all(np.diff(green.stationary_radial_cdf(table, r)) >= 0)

    def test_chebyshev_bound_needs_t_above_mean(self, table_for):
        table = table_for("sphere", 8)
        with pytest.raises(DomainError):
            green.tv_bound(table, green.mean_tau(table))

    def test_mixing_time_inverts_bound(self, table_for):
        table = table_for("sphere", 8)
        t = green.mixing_time_bound(table, 0.25)
        assert green.tv_bound(table, t) == pytest.approx(0.25, rel=1e-12)
        assert green.heat_kernel_floor(table, t) == pytest.approx(0.75, rel=1e-12)
        with pytest.raises(DomainError):
            green.mixing_time_bound(table, 0.0)

    def test_lower_bound(self, table_for):
        table = table_for("sphere", 64)
        mean = green.mean_tau(table)
        var, _ = green.var_tau(table)
        assert green.separation_lower_bound(table, 2 * mean) == 0.0
        assert green.separation_lower_bound(table, 0.0) == pytest.approx(max(0.0, 1 - var / mean**2))
        assert 0.0 <= green.separation_lower_bound(table, 0.5 * mean) <= 1.0
        assert math.isfinite(green.tv_bound(table, 1.5 * mean))
