import json

import pytest

import main
import verify


def _run(*argv):
    return main.main([str(a) for a in argv])


class TestMoments:
    def test_sphere_n2(self, tmp_path):
        out = tmp_path / "m.json"
        assert _run("moments", "--family", "sphere", "--n", 2, "--out", out) == 0
        data = json.loads(out.read_text(encoding="utf-8"))
        assert data["mean"] == pytest.approx(1.0, abs=1e-8)
        assert len(data["moments"]) == 4

        manifest = json.loads((tmp_path / "m.json.manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "moments"
        assert manifest["params"]["family"] == "sphere"
        assert manifest["outputs"] == [str(out)]
        assert set(manifest["cache"]) == {"hits", "misses", "writes"}

    def test_no_cache_gives_same_numbers(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        assert _run("moments", "--family", "power:a=0:m=1", "--n", 3, "--k", 2, "--out", a) == 0
        assert _run("moments", "--family", "power:a=0:m=1", "--n", 3, "--k", 2, "--no-cache", "--out", b) == 0
        assert json.loads(a.read_text()) == json.loads(b.read_text())

    def test_invalid_family_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            _run("moments", "--family", "power:a=-3:m=1", "--n", 2, "--out", tmp_path / "x.json")
        assert info.value.code == 2

    def test_missing_n_list(self):
        with pytest.raises(SystemExit) as info:
            _run("sweep", "--family", "sphere", "--n")
        assert info.value.code == 2


class TestSimulate:
    def test_deterministic_csv(self, tmp_path):
        args = ["simulate", "--family", "sphere", "--n", 4, "--paths", 40, "--seed", 3, "--dt-base", 1e-3]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert _run(*args, "--out", a) == 0
        assert _run(*args, "--threads", 2, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()
        sidecar = json.loads(a.with_suffix(".json").read_text(encoding="utf-8"))
        assert sidecar["paths"] == 40
        assert sidecar["scheme"] == "Autonomous"

    def test_zero_paths(self, tmp_path):
        assert _run("simulate", "--family", "sphere", "--n", 4, "--paths", 0,
                    "--out", tmp_path / "s.csv") == 2

    def test_budget_exit_code(self, tmp_path):
        assert _run("simulate", "--family", "sphere", "--n", 4, "--paths", 4, "--max-steps", 5,
                    "--out", tmp_path / "s.csv") == 4

    def test_profile(self, tmp_path):
        out = tmp_path / "p.csv"
        assert _run("profile", "--family", "sphere", "--n", 4, "--paths", 40, "--dt-base", 1e-3,
                    "--times", 0.0, 0.2, 0.4, "--out", out) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 4
        assert lines[1].startswith("0.0,1.0,")


class TestOtherCommands:
    def test_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        assert _run("sweep", "--family", "sphere", "--n", 4, 16, 64, 256, 1024, "--out", out) == 0
        assert len(out.read_text(encoding="utf-8").splitlines()) == 6
        verdicts = json.loads((tmp_path / "sweep.verdict.json").read_text(encoding="utf-8"))
        assert verdicts[0]["family"] == "sphere"

    def test_thin_sweep_is_domain_error(self, tmp_path):
        assert _run("sweep", "--family", "sphere", "--n", 4, 16, "--out", tmp_path / "s.csv") == 2

    def test_asymptotics(self, tmp_path):
        out = tmp_path / "a.json"
        assert _run("asymptotics", "--family", "power:a=2:m=1", "--n", 1000,
                    "--ratio-check-n", 0, "--out", out) == 0
        data = json.loads(out.read_text(encoding="utf-8"))
        assert data["regime"] == "Supercritical"
        assert data["ratio_limit_selected"] == "dimensional"
        assert "1000" in data["an"]

    def test_verify_passes(self, tmp_path):
        assert _run("verify", "--only", "green.sphere_n2", "weights.assumptions",
                    "--out", tmp_path / "v.json") == 0
        report = json.loads((tmp_path / "v.json").read_text(encoding="utf-8"))
        assert [c["name"] for c in report["checks"]] == ["weights.assumptions", "green.sphere_n2"]

    def test_verify_detects_corruption(self, tmp_path, capsys):
        code = _run("verify", "--only", "tables.gates", "--inject-corruption",
                    "--out", tmp_path / "v.json")
        assert code == 3
        assert "tables.lnI_monotone" in capsys.readouterr().out

    def test_cache_list(self, capsys):
        assert _run("cache", "list") == 0
        assert "table(s)" in capsys.readouterr().out


class TestVerifyRegistry:
    def test_levels_nest(self):
        fast = verify.check_names("fast")
        full = verify.check_names("full")
        assert set(fast) < set(full)
        assert "tables.gates" in fast
        assert "accept.critical" in full and "accept.critical" not in fast

    def test_unknown_level(self):
        with pytest.raises(verify.weights.DomainError):
            verify.run_checks("exhaustive")


class TestRegenerate:
    def test_replay_is_byte_identical(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        from scripts import regenerate

        out = tmp_path / "m.json"
        assert _run("moments", "--family", "sphere", "--n", 5, "--k", 2, "--out", out) == 0
        manifest = tmp_path / "m.json.manifest.json"
        argv = regenerate.manifest_argv(json.loads(manifest.read_text()), tmp_path / "r.json")
        assert argv[0] == "moments"
        assert argv[argv.index("--family") + 1] == "sphere"
        assert argv[argv.index("--k") + 1] == "2"
        assert argv[-2:] == ["--out", str(tmp_path / "r.json")]
        assert regenerate.regenerate(manifest)
