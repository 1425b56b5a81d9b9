"""
verify.py — Module 7: Named Invariant Checks
============================================
Runs the invariant suites of every module and reports each check by name.

  fast   identities, gates and closed forms at small and moderate n
  full   fast + the large-n acceptance runs (regimes, phase table,
         Monte Carlo consistency, coupling law equality, geometry,
         determinism)

`corrupt=True` (CLI: --inject-corruption) damages the tables handed to
the table gate so that the failure path can be exercised end to end.
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gamma

import analysis
import asymptotics
import green
import sde
import tables
import weights
from weights import make_weight, parse_family


# ── Configuration ─────────────────────────────────────────────────────────────
SHIPPED_FAMILIES = ["sphere", "power:a=-0.5:m=1", "power:a=0:m=1", "power:a=2:m=1"]
IDENTITY_N = [2, 64, 4096]
MEAN_IDENTITY_TOL = 1e-8
VAR_IDENTITY_TOL = 1e-6
GENERATOR_TOL = 1e-3
RICCI_TOL = 1e-12
C2K_AGREEMENT_TOL = 1e-7
VOLUME_LOG_TOL = 1e-3
CRITICAL_N = [2**j for j in range(8, 21, 2)]
MC_PATHS = 10_000
KS_PATHS = 5_000
LEVELS = ("fast", "full")

_REGISTRY: dict[str, tuple[str, callable]] = {}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail,
                "seconds": round(self.seconds, 3)}


def check(name: str, level: str = "fast"):
    def register(fn):
        _REGISTRY[name] = (level, fn)
        return fn
    return register


class _Context:
    def __init__(self, corrupt: bool, threads: int, verbose: bool):
        self.corrupt = corrupt
        self.threads = threads
        self.verbose = verbose

    def table(self, family: str, n: int):
        return tables.load_or_build(make_weight(family), n)


def corrupt_table(table: tables.IntegralTable) -> tables.IntegralTable:
    """Copy of the table with a reversed run of ln I values on the left half."""
    lnI = table.lnI.copy()
    mid = table.grid.mid_index
    lo, hi = mid // 3, mid // 3 + 8
    lnI[lo:hi] = lnI[lo:hi][::-1]
    return replace(table, lnI=lnI)


# ── fast ──────────────────────────────────────────────────────────────────────

@check("weights.assumptions")
def _weights_assumptions(ctx):
    bad = [str(r) for r in (weights.validate_assumptions(make_weight(f)) for f in SHIPPED_FAMILIES)
           if not r.passed]
    return not bad, "; ".join(bad) or f"{len(SHIPPED_FAMILIES)} families pass"


@check("weights.ricci_nonnegative")
def _ricci(ctx):
    worst = math.inf
    for family in SHIPPED_FAMILIES:
        w = make_weight(family)
        s = np.linspace(0.0, w.L, 1002)[1:-1]
        s = s[s != 0.5 * w.L]
        for n in range(2, 11):
            for x in s:
                worst = min(worst, *weights.ricci_terms(w, n, float(x)))
    return worst >= -RICCI_TOL, f"min Ricci term {worst:.3g}"


@check("tables.gates")
def _table_gates(ctx):
    failed = []
    for family in SHIPPED_FAMILIES:
        for n in IDENTITY_N:
            table = ctx.table(family, n)
            if ctx.corrupt:
                table = corrupt_table(table)
            failed += [f"{name} ({family}, n={n})" for name in tables.table_violations(table)]
    return not failed, "; ".join(failed) or "all tables monotone, finite and symmetric"


@check("green.sphere_n2")
def _sphere_n2(ctx):
    mean = green.mean_tau(ctx.table("sphere", 2))
    return abs(mean - 1.0) <= 1e-8, f"E[τ_2] = {mean!r}"


@check("green.identities")
def _identities(ctx):
    worst_mean = worst_var = worst_u1 = 0.0
    for family in SHIPPED_FAMILIES:
        for n in IDENTITY_N:
            t = ctx.table(family, n)
            mean_p, mean_i = green.mean_tau(t), green.mean_tau_identity(t)
            var_p, var_e = green.var_tau(t)
            worst_mean = max(worst_mean, abs(mean_p - mean_i) / mean_i)
            worst_var = max(worst_var, abs(var_p - var_e) / var_e)
            worst_u1 = max(worst_u1, abs(green.u1(t, 0.0) - mean_i) / mean_i)
    passed = worst_mean <= MEAN_IDENTITY_TOL and worst_var <= VAR_IDENTITY_TOL and worst_u1 <= 1e-12
    return passed, f"mean {worst_mean:.2e}, var {worst_var:.2e}, u1(0) {worst_u1:.2e}"


@check("green.generator_residual")
def _generator(ctx):
    worst = max(green.generator_residual(ctx.table(f, 64)) for f in SHIPPED_FAMILIES)
    return worst <= GENERATOR_TOL, f"max residual {worst:.2e}"


@check("green.second_moment")
def _second_moment(ctx):
    worst = 0.0
    for family in SHIPPED_FAMILIES:
        t = ctx.table(family, 64)
        m = green.moment_k(t, 2)
        var, _ = green.var_tau(t)
        worst = max(worst, abs(m[1] - (var + m[0] ** 2)) / m[1])
    return worst <= VAR_IDENTITY_TOL, f"E[τ²] vs Var + E² {worst:.2e}"


@check("asymptotics.c1_closed_form")
def _c1(ctx):
    worst = 0.0
    for a in (-0.25, -0.5, -0.75):
        for m in (0.5, 1.0, 2.0):
            w = weights.make_power_curvature(a, m)
            worst = max(worst, abs(asymptotics.c1_quadrature(w) - m * m / -a) / (m * m / -a))
    return worst <= 1e-8, f"max relative error {worst:.2e}"


@check("asymptotics.c2k_schemes")
def _c2k(ctx):
    if not asymptotics.MPMATH_AVAILABLE:
        return False, "mpmath not installed"
    worst = max(asymptotics.c2k_agreement(k) for k in (2, 3))
    return worst <= C2K_AGREEMENT_TOL, f"scheme disagreement {worst:.2e}"


@check("tables.cache_equality")
def _cache_equality(ctx):
    w = make_weight("power:a=0:m=1")
    cached = tables.load_or_build(w, 256)
    fresh = tables.load_or_build(w, 256, use_cache=False)
    same = (np.array_equal(cached.lnI, fresh.lnI) and np.array_equal(cached.lnK, fresh.lnK)
            and cached.integrals == fresh.integrals)
    return same, "cache hit equals fresh build" if same else "cache hit differs from fresh build"


# ── full ──────────────────────────────────────────────────────────────────────

@check("accept.critical", level="full")
def _critical(ctx):
    details, ok = [], True
    for family, c2 in (("sphere", 1.0), ("power:a=0:m=1", 0.5)):
        w = make_weight(family)
        built = tables.build_tables(w, CRITICAL_N, threads=ctx.threads, verbose=ctx.verbose)
        dev = []
        for n in CRITICAL_N:
            value = n * green.mean_tau(built[n]) / math.log(n)
            dev.append(abs(value - c2))
            ok &= dev[-1] <= 3.0 * c2 / math.sqrt(math.log(n))
        top = dev[len(dev) // 2:]
        ok &= all(b < a for a, b in zip(top, top[1:]))
        scaled = [n * n * green.var_tau(built[n])[0] / math.log(n) for n in CRITICAL_N[-3:]]
        ok &= max(scaled) / min(scaled) < 2.0
        details.append(f"{family}: |nE/ln n − C₂| {dev[0]:.3g} → {dev[-1]:.3g}")
    return ok, "; ".join(details)


@check("accept.subcritical", level="full")
def _subcritical(ctx):
    w = make_weight("power:a=-0.5:m=1")
    n_list = [10**j for j in range(2, 7)]
    built = tables.build_tables(w, n_list, threads=ctx.threads, verbose=ctx.verbose)
    nE = n_list[-1] * green.mean_tau(built[n_list[-1]])
    n2var = [n * n * green.var_tau(built[n])[0] for n in n_list]
    ok = abs(nE - 2.0) / 2.0 <= 0.02 and all(b < a for a, b in zip(n2var, n2var[1:]))
    return ok, f"n·E = {nE:.6g} at n = 1e6; n²Var {n2var[0]:.3g} → {n2var[-1]:.3g}"


@check("accept.supercritical", level="full")
def _supercritical(ctx):
    w = make_weight("power:a=2:m=1")
    n_list = [10**4, 10**5, 10**6]
    built = tables.build_tables(w, n_list, threads=ctx.threads, verbose=ctx.verbose)
    coeff = 4.0 * asymptotics.limit_constant_C2k(2) / gamma(0.25)
    sqrt_nE = math.sqrt(n_list[-1]) * green.mean_tau(built[n_list[-1]])
    limit = asymptotics.ratio_limit(2, w, n_check=n_list[-1])
    ratios = [green.var_tau(built[n])[0] / green.mean_tau(built[n]) ** 2 for n in n_list]
    plateau = sum(ratios) / len(ratios)
    ok = (abs(sqrt_nE - coeff) / coeff <= 0.02 and limit.matched
          and all(abs(r - plateau) <= 0.1 * plateau for r in ratios))
    return ok, (f"√n·E = {sqrt_nE:.6g} vs {coeff:.6g}; ℓ₂ = {limit.value:.6g} "
                f"({limit.selected}); Var/E² {ratios[0]:.4g} … {ratios[-1]:.4g}")


@check("accept.phase_table", level="full")
def _phase(ctx):
    n_list = [int(round(10 ** (3 + 0.5 * j))) for j in range(7)]
    rows = analysis.phase_sweep([-0.5, 0.0, 2.0], 1.0, n_list, threads=ctx.threads,
                                verbose=ctx.verbose)
    expected = {-0.5: (-1.0, "Cutoff"), 0.0: (-1.0, "Cutoff"), 2.0: (-0.5, "NoCutoff")}
    ok = True
    for row in rows:
        exponent, verdict = expected[row.a]
        ok &= abs(row.fitted_exponent - exponent) <= 0.02 and row.verdict == verdict
    return ok, "; ".join(f"a={r.a:g}: {r.fitted_exponent:.4f} {r.verdict}" for r in rows)


@check("accept.mc_consistency", level="full")
def _mc(ctx):
    details, ok = [], True
    for n in (8, 16):
        cfg = sde.SimConfig(n=n, family="sphere", path_count=MC_PATHS, master_seed=20240 + n)
        table = ctx.table("sphere", n)
        run = sde.sample_tau(cfg, table, threads=ctx.threads, verbose=ctx.verbose)
        z = abs(run.mean - green.mean_tau(table)) / run.se
        ok &= z <= 3.0
        details.append(f"n={n}: {z:.2f} SE")
        if n == 8:
            half = sde.sample_tau(replace(cfg, dt_base=cfg.dt_base / 2), table,
                                  threads=ctx.threads, verbose=ctx.verbose)
            shift = abs(half.mean - run.mean) / run.se
            ok &= shift < 1.0
            details.append(f"dt halving {shift:.2f} SE")
    return ok, "; ".join(details)


@check("accept.coupling_law", level="full")
def _coupling(ctx):
    n = 8
    table = ctx.table("sphere", n)
    base = sde.SimConfig(n=n, family="sphere", path_count=KS_PATHS, master_seed=7)
    reference = sde.sample_tau(base, table, threads=ctx.threads, verbose=ctx.verbose)
    selection = sde.select_coupling_sign(replace(base, master_seed=8), reference,
                                         threads=ctx.threads, verbose=ctx.verbose)
    coupled = selection.results[selection.selected]
    reflected = sde.sample_tau_reflected(
        replace(base, master_seed=9, scheme=sde.Scheme.FULL_DECOUPLING), table,
        threads=ctx.threads, verbose=ctx.verbose)
    ks_reflected = sde.ks_compare(reflected.samples, reference.samples)
    ok = coupled is not None and coupled.passed and ks_reflected.passed
    coupled_text = "—" if coupled is None else f"{coupled.statistic:.4f}/{coupled.critical:.4f}"
    return ok, (f"FullCoupling σ={selection.selected:+d} D={coupled_text}; "
                f"FullDecoupling D={ks_reflected.statistic:.4f}/{ks_reflected.critical:.4f}")


@check("accept.volume_asymptote", level="full")
def _volume(ctx):
    details, ok = [], True
    for family in SHIPPED_FAMILIES:
        w = make_weight(family)
        errors = []
        for n in (10**4, 10**6):
            t = ctx.table(family, n)
            exact = float(tables.ln_I(t, 0.5 * w.L))
            errors.append(abs(asymptotics.volume_asymptote(w, n) - exact))
        ok &= errors[0] < VOLUME_LOG_TOL and errors[1] < errors[0]
        details.append(f"{parse_family(family)}: {errors[0]:.2e} → {errors[1]:.2e}")
    return ok, "; ".join(details)


@check("accept.determinism", level="full")
def _determinism(ctx):
    cfg = sde.SimConfig(n=8, family="sphere", path_count=400, master_seed=123, chunk_size=64)
    first = sde.sample_tau(cfg, threads=ctx.threads)
    second = sde.sample_tau(replace(cfg, chunk_size=400), threads=1)
    same = np.array_equal(first.samples, second.samples)
    return same, "equal seeds give identical samples" if same else "samples differ between runs"


# ── Runner ────────────────────────────────────────────────────────────────────

def check_names(level: str = "full") -> list[str]:
    wanted = LEVELS[: LEVELS.index(level) + 1]
    return [name for name, (lvl, _) in _REGISTRY.items() if lvl in wanted]


def run_checks(level: str = "fast", corrupt: bool = False, threads: int = 1,
               only: list[str] | None = None, verbose: bool = False) -> list[CheckResult]:
    """Run every check of `level` (fast ⊂ full); exceptions count as failures."""
    if level not in LEVELS:
        raise weights.DomainError(f"unknown level '{level}' ({' | '.join(LEVELS)})")
    ctx = _Context(corrupt, threads, verbose)
    results = []
    for name in check_names(level):
        if only and name not in only:
            continue
        _, fn = _REGISTRY[name]
        t0 = time.time()
        try:
            passed, detail = fn(ctx)
        except weights.CutoffLabError as exc:
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        result = CheckResult(name, bool(passed), detail, time.time() - t0)
        results.append(result)
        print(f"   {'✅' if result.passed else '❌'} {name}: {detail} ({result.seconds:.1f}s)")
    return results
