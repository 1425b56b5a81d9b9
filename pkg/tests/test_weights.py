import math

import numpy as np
import pytest

from weights import (
    DomainError,
    SphereWeight,
    WeightFamily,
    ln_ball_volume,
    ln_manifold_volume,
    ln_unit_sphere_area,
    make_power_curvature,
    make_sphere,
    make_weight,
    mean_curvature,
    parse_family,
    ricci_terms,
    validate_assumptions,
)

SHIPPED = ["sphere", "power:a=-0.5:m=1", "power:a=0:m=1", "power:a=2:m=1"]


class TestParseFamily:
    def test_sphere(self):
        fam = parse_family("sphere")
        assert fam.kind == "sphere"
        assert fam.key() == "sphere"

    def test_power_key_is_canonical(self):
        fam = parse_family("power:a=0.0:m=1.0")
        assert fam == WeightFamily("power", 0.0, 1.0)
        assert fam.key() == "power:a=0:m=1"

    def test_fractional_parameters(self):
        fam = parse_family("power:a=-0.5:m=2.5")
        assert fam.a == -0.5
        assert fam.m == 2.5
        assert parse_family(fam.key()) == fam

    @pytest.mark.parametrize("key", [
        "cube",
        "power:a=-1:m=1",
        "power:a=-2:m=1",
        "power:a=0:m=0",
        "power:a=0:m=-1",
        "power:a=x:m=1",
        "power:a=nan:m=1",
        "power:a=0",
    ])
    def test_rejects_invalid_keys(self, key):
        with pytest.raises(DomainError):
            parse_family(key)

    def test_make_weight_accepts_keys_and_descriptors(self):
        assert make_weight("power:a=2:m=1").key() == make_weight(WeightFamily("power", 2.0, 1.0)).key()


class TestWeightValues:
    def test_sphere_is_sine(self):
        w = make_sphere()
        s = np.linspace(0.0, math.pi, 101)
        np.testing.assert_allclose(w.f(s), np.sin(s), atol=1e-15)
        np.testing.assert_allclose(w.fp(s), np.cos(s), atol=1e-15)
        assert w.L == math.pi
        assert w.fmid == 1.0

    def test_power_zero_closed_form(self):
        w = make_power_curvature(0.0, 1.0)
        s = np.linspace(0.0, 1.0, 51)
        np.testing.assert_allclose(w.f(s), s - s**2 / 2, rtol=1e-13, atol=1e-16)
        np.testing.assert_allclose(w.fp(s[:-1]), 1.0 - s[:-1], rtol=1e-13)
        np.testing.assert_allclose(w.fpp(s), -1.0, rtol=1e-13)
        assert w.fmid == 0.5
        assert w.L == 2.0

    def test_power_two_curvature_law(self):
        w = make_power_curvature(2.0, 1.0)
        h = np.array([0.1, 0.3, 0.7])
        np.testing.assert_allclose(w.fpp(1.0 - h), -3.0 * h**2, rtol=1e-12)
        np.testing.assert_allclose(w.fpp(1.0 + h), -3.0 * h**2, rtol=1e-12)

    @pytest.mark.parametrize("key", SHIPPED)
    def test_mirror_symmetry(self, key):
        w = make_weight(key)
        s = np.linspace(0.0, w.L, 1001)
        np.testing.assert_allclose(w.f(s), w.f(w.L - s), rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(w.fp(s), -w.fp(w.L - s), rtol=1e-12, atol=1e-15)

    @pytest.mark.parametrize("key", ["power:a=-0.5:m=1", "power:a=0:m=1", "power:a=2:m=1"])
    def test_derivative_matches_finite_difference(self, key):
        w = make_weight(key)
        s = np.array([0.1, 0.4, 0.8, 1.3, 1.7]) * w.L / 2
        h = 1e-6
        fd = (w.f(s + h) - w.f(s - h)) / (2 * h)
        np.testing.assert_allclose(w.fp(s), fd, rtol=1e-7)

    def test_log_weight_near_pole(self):
        w = make_power_curvature(0.0, 1.0)
        np.testing.assert_allclose(w.lnf(1e-12), math.log(1e-12), rtol=1e-12)
        np.testing.assert_allclose(w.lnf(2.0 - 1e-12), math.log(1e-12), rtol=1e-4)

    def test_out_of_range_radius(self):
        w = make_sphere()
        with pytest.raises(DomainError):
            w.f(-0.1)
        with pytest.raises(DomainError):
            w.f(4.0)

    def test_even_integer_a_has_taylor_order(self):
        w = make_power_curvature(2.0, 1.0)
        assert w.k == 2
        assert w.f2k == -6.0
        w4 = make_power_curvature(4.0, 2.0)
        assert w4.k == 3
        np.testing.assert_allclose(w4.f2k, -120.0 / 2.0**5)
        assert make_power_curvature(1.0, 1.0).k is None
        assert make_sphere().k is None

    def test_boundary_curvature(self):
        assert make_sphere().beta == pytest.approx(0.0, abs=1e-15)
        assert make_power_curvature(0.0, 1.0).beta == pytest.approx(-0.5)


_SPHERE_FIELDS = dict(family=WeightFamily("sphere", 0.0, math.pi / 2), L=math.pi,
                      fmid=1.0, alpha=0.0, curvC=1.0)


class _SteepSphere(SphereWeight):
    """2·sin: f′(0) = 2."""

    def _f(self, u):
        return 2.0 * np.sin(u)

    def _fp(self, u):
        return 2.0 * np.cos(u)

    def _fpp(self, u):
        return -2.0 * np.sin(u)


class _LopsidedSphere(SphereWeight):
    """sin + 0.01·sin(2s): odd about L/2."""

    def f(self, s):
        return super().f(s) + 0.01 * np.sin(2.0 * np.asarray(s))


class TestAssumptions:
    @pytest.mark.parametrize("key", SHIPPED)
    def test_shipped_families_pass(self, key):
        report = validate_assumptions(make_weight(key))
        assert report.passed, str(report)

    def test_steep_boundary_slope_fails(self):
        report = validate_assumptions(_SteepSphere(**_SPHERE_FIELDS))
        assert not report.passed
        assert report.violations == {"boundary_slope": pytest.approx(1.0)}
        assert str(report) == "sphere: FAIL (boundary_slope)"

    def test_lopsided_weight_fails_symmetry(self):
        report = validate_assumptions(_LopsidedSphere(**_SPHERE_FIELDS))
        assert not report.passed
        assert set(report.violations) == {"symmetry"}
        assert report.symmetry == pytest.approx(0.02, rel=1e-6)

    def test_grid_resolution_floor(self):
        with pytest.raises(DomainError):
            validate_assumptions(make_sphere(), grid_resolution=50)

    @pytest.mark.parametrize("key", SHIPPED)
    def test_ricci_nonnegative(self, key):
        w = make_weight(key)
        for s in np.linspace(0.05, 0.95, 18) * w.L:
            tangential, radial = ricci_terms(w, 8, s)
            assert tangential >= -1e-12
            assert radial >= -1e-12

    def test_sphere_ricci_is_n_minus_one(self):
        tangential, radial = ricci_terms(make_sphere(), 3, 1.0)
        assert tangential == pytest.approx(2.0)
        assert radial == pytest.approx(2.0)

    def test_mean_curvature(self):
        w = make_sphere()
        assert mean_curvature(w, 4, math.pi / 4) == pytest.approx(3.0)
        with pytest.raises(DomainError):
            mean_curvature(w, 1, 1.0)


class TestVolumes:
    def test_unit_sphere_area(self):
        assert ln_unit_sphere_area(2) == pytest.approx(math.log(2 * math.pi))
        assert ln_unit_sphere_area(3) == pytest.approx(math.log(4 * math.pi))

    def test_round_sphere_volumes(self):
        w = make_sphere()
        assert ln_manifold_volume(w, 2) == pytest.approx(math.log(4 * math.pi), rel=1e-9)
        assert ln_manifold_volume(w, 3) == pytest.approx(math.log(2 * math.pi**2), rel=1e-9)

    def test_hemisphere(self):
        w = make_sphere()
        assert ln_ball_volume(w, 2, math.pi / 2) == pytest.approx(math.log(2 * math.pi), rel=1e-9)

    def test_empty_ball(self):
        assert ln_ball_volume(make_sphere(), 2, 0.0) == -math.inf

    def test_radius_out_of_range(self):
        with pytest.raises(DomainError):
            ln_ball_volume(make_sphere(), 2, 4.0)
