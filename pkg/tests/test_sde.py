import math

import numpy as np
import pytest

import green
import sde
from sde import BudgetExceededError, Scheme, SimConfig
from weights import DomainError


def _config(**overrides):
    params = dict(n=4, family="sphere", path_count=64, master_seed=7, dt_base=1e-3)
    params.update(overrides)
    return SimConfig(**params)


class TestSimConfig:
    def test_defaults(self):
        cfg = SimConfig(n=16, family="sphere", path_count=10)
        assert cfg.dt_base == pytest.approx(1e-4 / 16)
        assert cfg.eps_abs == pytest.approx(1e-4 * math.pi)
        assert cfg.scheme is Scheme.AUTONOMOUS
        assert cfg.coupling_sign == -1
        assert cfg.coupling_multiplier == 15

    def test_family_key_is_canonical(self):
        cfg = SimConfig(n=4, family="power:a=0.0:m=1.0", path_count=1)
        assert cfg.family == "power:a=0:m=1"

    def test_scheme_from_string(self):
        assert SimConfig(n=4, family="sphere", path_count=1, scheme="FullDecoupling").scheme \
            is Scheme.FULL_DECOUPLING

    @pytest.mark.parametrize("overrides", [
        {"path_count": 0},
        {"n": 1},
        {"eps_abs": 1.0},
        {"dt_base": 0.0},
        {"kappa": 2.0},
        {"scheme": "Diagonal"},
        {"coupling_sign": 0},
        {"coupling_factor": "2n"},
        {"family": "cube"},
        {"master_seed": -1},
    ])
    def test_rejects_invalid(self, overrides):
        with pytest.raises(DomainError):
            _config(**overrides)

    def test_path_seed(self):
        assert sde.path_seed(3, 5) == sde.path_seed(3, 5)
        seeds = {sde.path_seed(3, i) for i in range(100)}
        assert len(seeds) == 100
        assert sde.path_seed(3, 0) != sde.path_seed(4, 0)


class TestDrift:
    def test_entrance_asymptote(self, table_for):
        table = table_for("sphere", 3)
        r = 1e-6
        assert sde.drift(table, 3, r) * r == pytest.approx(4.0, rel=1e-4)

    def test_sphere_n2_midpoint(self, table_for):
        table = table_for("sphere", 2)
        assert sde.drift(table, 2, math.pi / 2) == pytest.approx(2.0, rel=1e-8)

    def test_increasing_towards_far_pole(self, table_for):
        table = table_for("sphere", 8)
        r = np.linspace(0.5, 3.1, 50)
        values = sde.drift(table, 8, r)
        assert np.all(values > 0)
        assert values[-1] > values[len(r) // 2]

    def test_domain(self, table_for):
        table = table_for("sphere", 8)
        with pytest.raises(DomainError):
            sde.drift(table, 8, 0.0)
        with pytest.raises(DomainError):
            sde.drift(table, 8, math.pi)
        with pytest.raises(DomainError):
            sde.drift(table, 9, 1.0)


class TestAutonomous:
    def test_deterministic_and_chunk_independent(self):
        cfg = _config()
        a = sde.sample_tau(cfg)
        b = sde.sample_tau(cfg)
        c = sde.sample_tau(_config(chunk_size=10), threads=3)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.samples, c.samples)

    def test_seed_changes_samples(self):
        a = sde.sample_tau(_config())
        b = sde.sample_tau(_config(master_seed=8))
        assert not np.array_equal(a.samples, b.samples)

    def test_samples_positive(self):
        run = sde.sample_tau(_config())
        assert len(run.samples) == 64
        assert np.all(run.samples > 0)
        assert run.stats["min_radius"] > 0
        assert len(run.seeds) == 64

    def test_bias_correction(self, table_for):
        cfg = _config()
        table = table_for("sphere", 4)
        run = sde.sample_tau(cfg, table=table)
        assert run.bias_correction == pytest.approx(green.u1(table, table.L - cfg.eps_abs))
        assert run.mean == pytest.approx(float(np.mean(run.samples)) + run.bias_correction)

    def test_sidecar_fields(self):
        data = sde.sample_tau(_config()).to_json()
        for key in ("n", "family", "scheme", "paths", "seed", "eps_abs", "dt_base",
                    "kappa", "coupling_sign", "coupling_factor", "bias_correction",
                    "mean", "se", "flags"):
            assert key in data
        assert data["scheme"] == "Autonomous"
        assert data["coupling_factor"] == "n-1"
        assert data["coupling_sign"] == -1

    def test_scheme_mismatch(self):
        with pytest.raises(DomainError):
            sde.sample_tau(_config(scheme=Scheme.FULL_COUPLING))
        with pytest.raises(DomainError):
            sde.sample_tau_reflected(_config())

    def test_table_mismatch(self, table_for):
        with pytest.raises(DomainError):
            sde.sample_tau(_config(), table=table_for("sphere", 8))

    def test_barrier_offset_is_bias_corrected(self, table_for):
        table = table_for("sphere", 4)
        near = sde.sample_tau(_config(path_count=200, eps_abs=1e-3), table=table)
        far = sde.sample_tau(_config(path_count=200, eps_abs=2e-3), table=table)
        assert np.all(far.samples <= near.samples)
        assert abs(near.mean - far.mean) < near.se

    def test_step_halving_agrees(self, table_for):
        table = table_for("sphere", 4)
        coarse = sde.sample_tau(_config(path_count=300, dt_base=2e-4), table=table)
        fine = sde.sample_tau(_config(path_count=300, dt_base=1e-4), table=table)
        assert abs(coarse.mean - fine.mean) < 4.0 * math.hypot(coarse.se, fine.se)

    def test_mean_matches_quadrature(self, table_for):
        table = table_for("sphere", 16)
        cfg = SimConfig(n=16, family="sphere", path_count=2000, master_seed=11, dt_base=1e-4)
        run = sde.sample_tau(cfg, table=table, threads=2)
        assert abs(run.mean - green.mean_tau(table)) < 4.0 * run.se


class TestCouplings:
    def test_reflected_stays_above(self):
        run = sde.sample_tau_reflected(_config(scheme=Scheme.FULL_DECOUPLING))
        assert np.all(run.samples > 0)
        assert run.stats["min_gap"] >= 0.0
        assert run.stats["containment_paths"] == 0

    def test_unreflected_exhausts_budget(self):
        cfg = _config(scheme=Scheme.FULL_DECOUPLING, reflect=False, max_steps=2000, path_count=8)
        with pytest.raises(BudgetExceededError) as info:
            sde.sample_tau_reflected(cfg)
        assert len(info.value.paths) == 8

    def test_coupled_plus_sign_keeps_containment(self):
        cfg = _config(scheme=Scheme.FULL_COUPLING, coupling_sign=1, path_count=32)
        a = sde.sample_tau_coupled(cfg)
        b = sde.sample_tau_coupled(cfg)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.stats["containment_paths"] == 0
        assert a.stats["min_gap"] >= 0.0

    def test_reflected_law_matches_autonomous(self, table_for):
        table = table_for("sphere", 4)
        reference = sde.sample_tau(_config(path_count=200, dt_base=2e-4), table=table)
        reflected = sde.sample_tau_reflected(
            _config(path_count=200, dt_base=2e-4, master_seed=8, scheme=Scheme.FULL_DECOUPLING),
            table=table)
        assert sde.ks_compare(reflected.samples, reference.samples).passed

    def test_simulate_dispatch(self):
        cfg = _config(scheme=Scheme.FULL_DECOUPLING, path_count=16)
        np.testing.assert_array_equal(sde.simulate(cfg).samples,
                                      sde.sample_tau_reflected(cfg).samples)

    @pytest.mark.slow
    def test_sign_selection_reports_both(self):
        cfg = _config(scheme=Scheme.FULL_COUPLING, path_count=50, max_steps=50_000)
        selection = sde.select_coupling_sign(cfg)
        assert selection.selected in (1, -1)
        assert set(selection.results) == {1, -1}
        assert selection.to_json()["selected_sign"] == selection.selected


class TestKS:
    def test_identical_samples(self):
        x = np.linspace(0.0, 1.0, 500)
        result = sde.ks_compare(x, x)
        assert result.statistic == 0.0
        assert result.passed

    def test_shifted_samples(self):
        rng = np.random.default_rng(0)
        result = sde.ks_compare(rng.normal(size=2000), rng.normal(loc=1.0, size=2000))
        assert not result.passed

    def test_critical_value(self):
        result = sde.ks_compare(np.arange(5000.0), np.arange(5000.0) + 0.5)
        assert result.critical == pytest.approx(1.6276 * math.sqrt(2.0 / 5000), rel=1e-4)

    def test_empty(self):
        with pytest.raises(DomainError):
            sde.ks_compare([], [1.0])
