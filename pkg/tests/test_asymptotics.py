import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import gamma

import asymptotics
from asymptotics import Regime
from weights import DomainError, make_power_curvature, make_sphere, make_weight


class TestClassify:
    @pytest.mark.parametrize("key, regime", [
        ("sphere", Regime.CRITICAL),
        ("power:a=-0.5:m=1", Regime.SUBCRITICAL),
        ("power:a=0:m=3", Regime.CRITICAL),
        ("power:a=1:m=1", Regime.SUPERCRITICAL),
        ("power:a=2:m=1", Regime.SUPERCRITICAL),
    ])
    def test_regime(self, key, regime):
        assert asymptotics.classify(make_weight(key)) is regime


class TestConstants:
    @pytest.mark.parametrize("a, m", [(-0.5, 1.0), (-0.25, 0.5), (-0.25, 2.0), (-0.75, 2.0), (-0.9, 1.0)])
    def test_c1_closed_form(self, a, m):
        w = make_power_curvature(a, m)
        assert asymptotics.c1_quadrature(w) == pytest.approx(m * m / abs(a), rel=1e-8)

    def test_c1_needs_negative_a(self):
        with pytest.raises(DomainError):
            asymptotics.c1_quadrature(make_sphere())

    def test_c2(self):
        assert asymptotics.c2_constant(make_sphere()) == 1.0
        assert asymptotics.c2_constant(make_power_curvature(0.0, 1.0)) == 0.5

    def test_cf2k(self):
        assert asymptotics.cf2k(make_power_curvature(2.0, 1.0)) == pytest.approx(1.0)
        with pytest.raises(DomainError):
            asymptotics.cf2k(make_power_curvature(1.0, 1.0))

    def test_h1k(self):
        k = 2
        H = gamma(0.25) / 2
        assert asymptotics.h1k(k, 0.0) == pytest.approx(H / 2)
        x = np.array([0.3, 1.1, 2.0])
        np.testing.assert_allclose(asymptotics.h1k(k, x) + asymptotics.h1k(k, -x), H, rtol=1e-14)
        direct, _ = integrate.quad(lambda a: math.exp(-a**4), -np.inf, 0.3)
        assert asymptotics.h1k(k, 0.3) == pytest.approx(direct, rel=1e-10)

    def test_c2k_cut_stability(self):
        assert asymptotics.limit_constant_C2k(2, cut=400.0) == pytest.approx(
            asymptotics.limit_constant_C2k(2), rel=1e-8)

    def test_c2k_schemes_agree(self):
        pytest.importorskip("mpmath")
        for k in (2, 3):
            gk = asymptotics.limit_constant_C2k(k, "gauss-kronrod")
            ts = asymptotics.limit_constant_C2k(k, "tanh-sinh")
            assert ts == pytest.approx(gk, rel=1e-7)

    def test_c2k_domain(self):
        with pytest.raises(DomainError):
            asymptotics.limit_constant_C2k(1)
        with pytest.raises(DomainError):
            asymptotics.limit_constant_C2k(2, scheme="simpson")


class TestPredictions:
    def test_critical_sphere(self):
        n = math.e**4
        assert asymptotics.predict_mixing(make_sphere(), n) == pytest.approx(4.0 / n)

    def test_subcritical(self):
        w = make_power_curvature(-0.5, 1.0)
        assert asymptotics.predict_mixing(w, 100) == pytest.approx(2.0 / 100, rel=1e-8)

    def test_supercritical_closed_form(self):
        w = make_power_curvature(2.0, 1.0)
        pred = asymptotics.regime_prediction(w)
        assert pred.exponent == -0.5
        assert not pred.scale_only
        C = asymptotics.limit_constant_C2k(2)
        assert pred.coefficient == pytest.approx(4.0 * C / gamma(0.25))

    def test_supercritical_scale_only(self):
        pred = asymptotics.regime_prediction(make_power_curvature(1.0, 1.0))
        assert pred.scale_only
        assert pred.exponent == pytest.approx(-2.0 / 3.0)
        assert pred.window_exponent == pytest.approx(-1.0 / 3.0)

    def test_prediction_json(self):
        data = asymptotics.regime_prediction(make_sphere()).to_json([100, 1000])
        assert data["regime"] == "Critical"
        assert data["C2"] == 1.0
        assert data["an"]["100"] == pytest.approx(math.log(100) / 100)

    def test_small_n(self):
        with pytest.raises(DomainError):
            asymptotics.predict_mixing(make_sphere(), 1)

    def test_window_ratio(self):
        w = make_sphere()
        assert asymptotics.window_ratio(w, 100, 0.01) == pytest.approx(0.01 / (math.log(100) / 100))

    def test_scale_coefficient(self):
        w = make_power_curvature(1.0, 1.0)
        value = asymptotics.estimate_scale_coefficient(w, 1000)
        assert value > 0
        with pytest.raises(DomainError):
            asymptotics.estimate_scale_coefficient(make_sphere(), 1000)

    def test_mean_approaches_critical_prediction(self, table_for):
        import green
        n = 10**4
        table = table_for("sphere", n)
        ratio = green.mean_tau(table) / asymptotics.predict_mixing(make_sphere(), n)
        assert 0.9 < ratio < 1.2


class TestRatioLimit:
    def test_candidates(self):
        cands = asymptotics.ratio_limit_candidates(2, make_power_curvature(2.0, 1.0))
        assert set(cands) == {"dimensional", "printed"}
        assert all(v > 1.0 for v in cands.values())

    def test_requires_matching_order(self):
        with pytest.raises(DomainError):
            asymptotics.ratio_limit(3, make_power_curvature(2.0, 1.0))
        with pytest.raises(DomainError):
            asymptotics.ratio_limit(2, make_sphere())

    def test_skip_check(self):
        limit = asymptotics.ratio_limit(2, make_power_curvature(2.0, 1.0), n_check=None)
        assert limit.observed is None
        assert limit.value == limit.candidates["dimensional"]
        assert limit.to_json()["ratio_limit_selected"] == "dimensional"

    @pytest.mark.slow
    def test_matches_quadrature(self):
        limit = asymptotics.ratio_limit(2, make_power_curvature(2.0, 1.0), n_check=10**5)
        assert limit.matched
        assert limit.observed == pytest.approx(limit.value, rel=0.01)


class TestVolumeAsymptote:
    @pytest.mark.parametrize("key", ["sphere", "power:a=0:m=1", "power:a=-0.5:m=1", "power:a=2:m=1"])
    def test_matches_half_volume(self, table_for, key):
        n = 10**4
        table = table_for(key, n)
        observed = table.lnI_total - math.log(2.0)
        assert asymptotics.volume_asymptote(make_weight(key), n) == pytest.approx(observed, abs=1e-3)
