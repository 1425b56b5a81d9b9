#!/usr/bin/env python3
"""
main.py — Cut-off Lab Command Line
==================================
One entry point for every experiment:

    python main.py moments --family sphere --n 2
    python main.py sweep --family sphere --n 256 1024 4096 16384 65536
    python main.py simulate --family sphere --n 8 --paths 5000 --seed 1

Modules invoked:
  1. weights.py     → weight families and geometry
  2. tables.py      → log-space integral tables (cached on disk)
  3. green.py       → moments of τ_n, Chebyshev bounds
  4. asymptotics.py → regime predictions and constants
  5. sde.py         → Monte Carlo of the dual radius and its couplings
  6. analysis.py    → profiles, verdicts, phase table
  7. verify.py      → named invariant checks

Exit codes: 0 ok, 2 usage / domain error, 3 numerical gate failure,
4 Monte Carlo step budget exceeded.
"""

import argparse
import json
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

# Add current directory to path so we can import the modules
sys.path.insert(0, str(Path(__file__).parent))

import analysis
import asymptotics
import green
import sde
import tables
import verify
from sde import BudgetExceededError
from tables import NumericalGateError
from weights import FAMILY_GRAMMAR, DomainError, WeightFamily, make_weight, parse_family


# ── Configuration ─────────────────────────────────────────────────────────────
OUTPUT_DIR = Path(os.environ.get("CUTOFFLAB_OUTPUT_DIR", "output"))
DEFAULT_THREADS = int(os.environ.get("CUTOFFLAB_THREADS", "1"))
ARTIFACT_VERSION = f"cutofflab 1.0 / tables {tables.TABLE_VERSION}"
SCHEMES = {
    "autonomous": sde.Scheme.AUTONOMOUS,
    "coupled": sde.Scheme.FULL_COUPLING,
    "reflected": sde.Scheme.FULL_DECOUPLING,
}
PROFILE_POINTS = 41

EXIT_OK, EXIT_USAGE, EXIT_GATE, EXIT_BUDGET = 0, 2, 3, 4


def slug(key: str) -> str:
    """Filesystem-safe version of a family key."""
    return re.sub(r"[^\w.-]+", "_", key).strip("_")


# ── Run manifest ──────────────────────────────────────────────────────────────

@dataclass
class RunManifest:
    command: str
    params: dict
    version: str = ARTIFACT_VERSION
    cache: dict = field(default_factory=dict)
    wall_time: float = 0.0
    outputs: list[str] = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def write_beside(self, outputs: list[Path]) -> list[Path]:
        """One `<output>.manifest.json` per output file."""
        self.outputs = [str(p) for p in outputs]
        written = []
        for path in outputs:
            target = Path(path).with_name(Path(path).name + ".manifest.json")
            with open(target, "w", encoding="utf-8") as f:
                json.dump(asdict(self), f, indent=2, default=str)
            written.append(target)
        return written


def _echo(value):
    if isinstance(value, (Path, WeightFamily)):
        return str(value)
    if isinstance(value, list):
        return [_echo(v) for v in value]
    return value


def _params(args: argparse.Namespace) -> dict:
    return {k: _echo(v) for k, v in vars(args).items() if k != "handler"}


# ── CLI Argument Parser ───────────────────────────────────────────────────────

def _family_arg(text: str):
    try:
        return parse_family(text)
    except DomainError:
        raise argparse.ArgumentTypeError(f"invalid family '{text}'. Expected: {FAMILY_GRAMMAR}")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=DEFAULT_THREADS,
                        help="Worker cap for table builds and path chunks (default: %(default)s)")
    common.add_argument("--no-cache", action="store_true",
                        help="Bypass the on-disk table cache (results are identical)")
    common.add_argument("-v", "--verbose", action="store_true", help="Print detailed progress messages")
    common.add_argument("--out", type=Path, help="Output file (default: derived under $CUTOFFLAB_OUTPUT_DIR)")

    parser = argparse.ArgumentParser(
        description="Separation cut-off of Brownian motion on rotationally symmetric manifolds",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"""
Examples:
  python main.py moments --family sphere --n 2
  python main.py moments --family power:a=0:m=1 --n 2 --k 3
  python main.py sweep --family sphere power:a=2:m=1 --n 256 4096 65536 1048576
  python main.py simulate --family sphere --n 8 --scheme coupled --paths 5000 --seed 7
  python main.py profile --family sphere --n 1024 --paths 10000
  python main.py asymptotics --family power:a=2:m=1 --ratio-check-n 1000000
  python main.py phase --a -0.5 0 2 --m 1 --n 1000 10000 100000 1000000
  python main.py verify --level fast
  python main.py cache list

Family keys: {FAMILY_GRAMMAR}
Environment: CUTOFFLAB_CACHE_DIR, CUTOFFLAB_OUTPUT_DIR, CUTOFFLAB_THREADS
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", parents=[common], help="Moments of τ_n by quadrature")
    p.add_argument("--family", type=_family_arg, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", dest="k_max", type=int, default=green.DEFAULT_K_MAX,
                   help="Highest moment (default: %(default)s)")
    p.add_argument("--grid", type=int, default=tables.DEFAULT_BASE_COUNT,
                   help="Grid base count (default: %(default)s)")
    p.set_defaults(handler=cmd_moments)

    p = sub.add_parser("sweep", parents=[common], help="Ratio sweep and cut-off verdict")
    p.add_argument("--family", type=_family_arg, nargs="+", required=True)
    p.add_argument("--n", dest="n_list", type=int, nargs="+", required=True)
    p.add_argument("--grid", type=int, default=tables.DEFAULT_BASE_COUNT)
    p.add_argument("--decay", type=float, default=analysis.DECAY_THRESHOLD)
    p.add_argument("--plateau-tol", type=float, default=analysis.PLATEAU_TOL)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo samples of τ_n")
    _add_sim_args(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("profile", parents=[common], help="Separation profile P[τ_n > t]")
    _add_sim_args(p)
    p.add_argument("--times", type=float, nargs="+", help="Times (default: grid over [0, 3·E[τ_n]])")
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("asymptotics", parents=[common], help="Regime, constants and predictions")
    p.add_argument("--family", type=_family_arg, required=True)
    p.add_argument("--n", dest="n_list", type=int, nargs="*", default=[10**3, 10**4, 10**5, 10**6])
    p.add_argument("--ratio-check-n", type=int, default=asymptotics.RATIO_CHECK_N,
                   help="n used to select the ratio-limit candidate (0 to skip)")
    p.set_defaults(handler=cmd_asymptotics)

    p = sub.add_parser("phase", parents=[common], help="Phase table over a for power(a, m)")
    p.add_argument("--a", dest="a_list", type=float, nargs="+", required=True)
    p.add_argument("--m", type=float, default=1.0)
    p.add_argument("--n", dest="n_list", type=int, nargs="+", required=True)
    p.add_argument("--grid", type=int, default=tables.DEFAULT_BASE_COUNT)
    p.set_defaults(handler=cmd_phase)

    p = sub.add_parser("verify", parents=[common], help="Run the named invariant checks")
    p.add_argument("--level", choices=verify.LEVELS, default="fast")
    p.add_argument("--only", nargs="+", help="Run only these checks")
    p.add_argument("--inject-corruption", action="store_true",
                   help="Test hook: corrupt tables before the table gate")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("cache", parents=[common], help="List or clear the table cache")
    p.add_argument("action", choices=["list", "clear"])
    p.set_defaults(handler=cmd_cache)

    return parser


def _add_sim_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", type=_family_arg, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--scheme", choices=sorted(SCHEMES), default="autonomous")
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt-base", type=float, help="Step scale (default: 1e-4/n)")
    p.add_argument("--eps-abs", type=float, help="Absorption offset below L (default: 1e-4·L)")
    p.add_argument("--kappa", type=float, default=sde.KAPPA)
    p.add_argument("--max-steps", type=int, default=sde.MAX_STEPS)
    p.add_argument("--coupling-sign", type=int, choices=[1, -1], default=-1)
    p.add_argument("--coupling-factor", choices=sde.COUPLING_FACTORS, default="n-1")
    p.add_argument("--grid", type=int, default=tables.DEFAULT_BASE_COUNT)


def _sim_config(args) -> sde.SimConfig:
    return sde.SimConfig(
        n=args.n, family=args.family.key(), path_count=args.paths, master_seed=args.seed,
        scheme=SCHEMES[args.scheme], dt_base=args.dt_base, eps_abs=args.eps_abs,
        kappa=args.kappa, max_steps=args.max_steps, coupling_sign=args.coupling_sign,
        coupling_factor=args.coupling_factor, base_count=args.grid,
    )


def banner(title: str) -> None:
    print("\n" + "═" * 70)
    print(f"  {title}")
    print("═" * 70)


def _out(args, default_name: str) -> Path:
    path = args.out or OUTPUT_DIR / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# ── Commands ──────────────────────────────────────────────────────────────────

def cmd_moments(args, manifest: RunManifest) -> list[Path]:
    banner(f"MOMENTS: {args.family} n={args.n}")
    w = make_weight(args.family)
    table = tables.load_or_build(w, args.n, args.grid, not args.no_cache, verbose=args.verbose)
    report = green.moment_report(table, args.k_max)

    path = _out(args, f"moments_{slug(w.key())}_n{args.n}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_json(), f, indent=2)

    print(f"\n✅ E[τ_n] = {report.mean!r}")
    print(f"   Var(τ_n) = {report.var!r}  (ratio {report.ratio:.6g})")
    for k, value in enumerate(report.moments, start=1):
        print(f"   E[τ^{k}] = {value!r}")
    manifest.results = {"mean": report.mean, "var": report.var, "residuals": report.residuals}
    return [path]


def cmd_sweep(args, manifest: RunManifest) -> list[Path]:
    thresholds = analysis.VerdictThresholds(decay=args.decay, plateau_tol=args.plateau_tol)
    verdicts = []
    for family in args.family:
        banner(f"SWEEP: {family} over {len(args.n_list)} values of n")
        v = analysis.cutoff_verdict(family, args.n_list, args.grid, not args.no_cache,
                                    args.threads, thresholds, verbose=args.verbose)
        print(f"\n{'✅' if v.verdict is not analysis.Verdict.INCONCLUSIVE else '⚠️ '} "
              f"{family}: {v.verdict.value}"
              + (f" (plateau {v.plateau:.6g})" if v.plateau is not None else ""))
        for flag in v.flags:
            print(f"   ⚠️  {flag}")
        verdicts.append(v)

    name = "_".join(slug(str(f)) for f in args.family)
    csv_path = analysis.write_sweep_csv(verdicts, _out(args, f"sweep_{name}.csv"))
    json_path = analysis.write_verdict_json(verdicts, csv_path.with_suffix(".verdict.json"))
    manifest.results = {v.family: v.verdict.value for v in verdicts}
    return [csv_path, json_path]


def cmd_simulate(args, manifest: RunManifest) -> list[Path]:
    cfg = _sim_config(args)
    banner(f"SIMULATE: {cfg.scheme.value} {cfg.family} n={cfg.n}, {cfg.path_count} paths")
    table = tables.load_or_build(cfg.weight, cfg.n, cfg.base_count, not args.no_cache,
                                 verbose=args.verbose)
    run = sde.simulate(cfg, table=table, threads=args.threads, verbose=args.verbose)
    mean_q = green.mean_tau(table)
    print(f"\n✅ MC mean (bias-corrected) = {run.mean:.8g} ± {run.se:.2g}")
    print(f"   Quadrature mean          = {mean_q:.8g}  ({abs(run.mean - mean_q) / run.se:.2f} SE)")
    manifest.results = {"mean": run.mean, "se": run.se, "quadrature_mean": mean_q,
                        "flags": run.flags}

    if cfg.scheme is not sde.Scheme.AUTONOMOUS:
        ref_cfg = replace(cfg, scheme=sde.Scheme.AUTONOMOUS,
                          master_seed=(cfg.master_seed + 1) % 2**64)
        ref = sde.sample_tau(ref_cfg, table, threads=args.threads, verbose=args.verbose)
        ks = sde.ks_compare(run.samples, ref.samples)
        print(f"   KS vs Autonomous: D = {ks.statistic:.4f} (1% critical {ks.critical:.4f}) "
              f"{'✅' if ks.passed else '❌'}")
        manifest.results["ks"] = ks.to_json()

    csv_path, sidecar = analysis.write_samples(
        run, _out(args, f"samples_{slug(cfg.family)}_n{cfg.n}_{args.scheme}_s{cfg.master_seed}.csv"))
    return [csv_path, sidecar]


def cmd_profile(args, manifest: RunManifest) -> list[Path]:
    cfg = _sim_config(args)
    banner(f"PROFILE: {cfg.family} n={cfg.n}, {cfg.path_count} paths")
    table = tables.load_or_build(cfg.weight, cfg.n, cfg.base_count, not args.no_cache,
                                 verbose=args.verbose)
    run = sde.simulate(cfg, table=table, threads=args.threads, verbose=args.verbose)
    times = args.times
    if not times:
        times = np.linspace(0.0, 3.0 * green.mean_tau(table), PROFILE_POINTS)
    profile = analysis.separation_profile(table, run, times)

    print(f"\n✅ a_n = {profile.a_n:.6g}, window √Var = {profile.window:.6g}")
    for row in list(profile.rows())[:: max(1, len(profile.times) // 8)]:
        print(f"   t={row[0]:.5g}  sep={row[1]:.4f}  [{row[2]:.4f}, {row[3]:.4f}]  cheb≤{row[4]:.4f}")
    path = analysis.write_profile_csv(profile, _out(args, f"profile_{slug(cfg.family)}_n{cfg.n}.csv"))
    manifest.results = {"a_n": profile.a_n, "window": profile.window, "mean": profile.mean}
    return [path]


def cmd_asymptotics(args, manifest: RunManifest) -> list[Path]:
    w = make_weight(args.family)
    banner(f"ASYMPTOTICS: {w.key()}")
    pred = asymptotics.regime_prediction(w)
    report = pred.to_json(args.n_list)
    report["ln_volume_asymptote"] = {str(n): asymptotics.volume_asymptote(w, n) for n in args.n_list}
    if w.k is not None:
        check_n = args.ratio_check_n or None
        limit = asymptotics.ratio_limit(w.k, w, check_n, use_cache=not args.no_cache,
                                        verbose=args.verbose)
        report.update(limit.to_json())

    print(f"\n✅ Regime: {pred.regime.value} (a = {pred.a:g})")
    for key, value in pred.constants.items():
        print(f"   {key} = {value!r}")
    if pred.scale_only:
        print(f"   scale only: E[τ_n] ≍ n^{pred.exponent:.6g}")
    path = _out(args, f"asymptotics_{slug(w.key())}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    manifest.results = {"regime": pred.regime.value}
    return [path]


def cmd_phase(args, manifest: RunManifest) -> list[Path]:
    banner(f"PHASE TABLE: a ∈ {args.a_list}, m = {args.m:g}")
    rows = analysis.phase_sweep(args.a_list, args.m, args.n_list, args.grid, not args.no_cache,
                                args.threads, verbose=args.verbose)
    print("")
    for r in rows:
        print(f"   a={r.a:>6g}  {r.regime:<13} exponent {r.fitted_exponent:+.4f} "
              f"(predicted {r.predicted_exponent:+.4f})  {r.verdict}")
    path = analysis.write_phase_csv(rows, _out(args, f"phase_m{slug(repr(args.m))}.csv"))
    json_path = path.with_suffix(".json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([r.to_json() for r in rows], f, indent=2)
    manifest.results = {str(r.a): r.verdict for r in rows}
    return [path, json_path]


def cmd_verify(args, manifest: RunManifest) -> list[Path]:
    banner(f"VERIFY: level {args.level}")
    results = verify.run_checks(args.level, corrupt=args.inject_corruption, threads=args.threads,
                                only=args.only, verbose=args.verbose)
    failed = [r.name for r in results if not r.passed]
    manifest.results = {"checks": [r.to_json() for r in results], "failed": failed}
    path = _out(args, f"verify_{args.level}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest.results, f, indent=2)
    if failed:
        raise NumericalGateError(f"failed checks: {', '.join(failed)}")
    print(f"\n✅ {len(results)} checks passed")
    return [path]


def cmd_cache(args, manifest: RunManifest) -> list[Path]:
    if args.action == "list":
        files = tables.cache_list()
        print(f"📦 {len(files)} table(s) in {tables.CACHE_DIR}")
        for path in files:
            print(f"   • {path.name}  ({path.stat().st_size // 1024} KiB)")
    else:
        count = tables.cache_clear()
        print(f"🗑️  removed {count} table(s) from {tables.CACHE_DIR}")
    return []


# ── Entry Point ───────────────────────────────────────────────────────────────

def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    start = time.time()
    tables.reset_cache_stats()
    manifest = RunManifest(command=args.command, params=_params(args))
    try:
        outputs = args.handler(args, manifest)
    except DomainError as e:
        print(f"\n❌ {e}")
        return EXIT_USAGE
    except NumericalGateError as e:
        print(f"\n❌ numerical gate failed: {e}")
        return EXIT_GATE
    except BudgetExceededError as e:
        print(f"\n❌ step budget exceeded: {e}")
        return EXIT_BUDGET

    manifest.cache = tables.cache_stats()
    manifest.wall_time = round(time.time() - start, 3)
    if outputs:
        manifest.write_beside(outputs)
        print("\n   📁 Output files:")
        for path in outputs:
            print(f"      • {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
