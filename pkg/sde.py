"""
sde.py — Module 5: Monte Carlo of the Dual Radius and its Couplings
===================================================================
Samples the absorption time τ_n of the dual radius

    dR = √2 dB + b_n(R) dt,     b_n(r) = 2f^{n−1}(r)/I_n(r) − (n−1)f′(r)/f(r)

started at the entrance boundary 0, and of the two couplings that build R
on top of the radial part ρ of the Brownian motion itself:

  FullCoupling     dR₁ = √2·σ·dB + c·[2g(ρ) − g(R₁)] dt       (same noise as ρ)
  FullDecoupling   dR₂ = −√2 dW − c·g(R₂) dt, reflected upward on ρ

with dρ = √2 dB + (n−1)g(ρ) dt, g = f′/f and c the coupling factor.

Paths run in lockstep inside a chunk. Each path owns its generator,
seeded by path_seed(master_seed, i), so a path's trajectory does not
depend on how paths are chunked or threaded.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.stats import ks_2samp
from tqdm import tqdm

import green
import tables
from tables import IntegralTable
from weights import CutoffLabError, DomainError, WeightFn, make_weight


# ── Configuration ─────────────────────────────────────────────────────────────
KAPPA = 0.1                    # step control: dt ≤ κ·(distance/drift scale)²
DT_SCALE = 1e-4                # default dt_base = DT_SCALE/n
EPS_SCALE = 1e-4               # default eps_abs = EPS_SCALE·L
MAX_STEPS = 2_000_000          # per-path step budget
CHUNK_SIZE = 500               # paths per lockstep chunk
NORMAL_BLOCK = 256             # normals pre-drawn per path
MAX_RESAMPLE = 64              # redraws before a boundary-crossing step is mirrored
KS_ALPHA = 0.01
COUPLING_FACTORS = ("n-1", "n")


class Scheme(str, Enum):
    AUTONOMOUS = "Autonomous"
    FULL_COUPLING = "FullCoupling"
    FULL_DECOUPLING = "FullDecoupling"


class BudgetExceededError(CutoffLabError):
    """One or more paths hit the step budget before absorption."""

    def __init__(self, message: str, paths=()):
        super().__init__(message)
        self.paths = list(paths)


# ── Configuration object ──────────────────────────────────────────────────────

@dataclass(frozen=True)
class SimConfig:
    """Parameters of one Monte Carlo run.

    The full coupling drives R₁ with drift multiplier n − 1 by default
    (`coupling_factor="n-1"`); the multiplier n is selectable with `"n"`.
    Both the factor and the noise sign σ are echoed in every sidecar and
    manifest.
    """
    n: int
    family: str
    path_count: int
    master_seed: int = 0
    scheme: Scheme = Scheme.AUTONOMOUS
    dt_base: float | None = None
    eps_abs: float | None = None
    kappa: float = KAPPA
    max_steps: int = MAX_STEPS
    coupling_sign: int = -1
    coupling_factor: str = "n-1"
    reflect: bool = True        # test hook: False lets R₂ ignore ρ
    base_count: int | None = None
    chunk_size: int = CHUNK_SIZE

    def __post_init__(self):
        if self.n < 2:
            raise DomainError(f"dimension n = {self.n} must be at least 2")
        w = make_weight(self.family)
        object.__setattr__(self, "family", w.key())
        try:
            object.__setattr__(self, "scheme", Scheme(self.scheme))
        except ValueError:
            raise DomainError(f"unknown scheme '{self.scheme}' ({', '.join(s.value for s in Scheme)})")
        if self.dt_base is None:
            object.__setattr__(self, "dt_base", DT_SCALE / self.n)
        if self.eps_abs is None:
            object.__setattr__(self, "eps_abs", EPS_SCALE * w.L)

        if self.path_count < 1:
            raise DomainError(f"path_count = {self.path_count} must be at least 1")
        if not self.dt_base > 0:
            raise DomainError(f"dt_base = {self.dt_base} must be positive")
        if not 0 < self.eps_abs < w.L / 10:
            raise DomainError(f"eps_abs = {self.eps_abs} outside (0, L/10 = {w.L / 10})")
        if not 0 < self.kappa <= 1:
            raise DomainError(f"kappa = {self.kappa} outside (0, 1]")
        if self.max_steps < 1 or self.chunk_size < 1:
            raise DomainError("max_steps and chunk_size must be positive")
        if self.coupling_sign not in (1, -1):
            raise DomainError(f"coupling_sign = {self.coupling_sign} must be +1 or -1")
        if self.coupling_factor not in COUPLING_FACTORS:
            raise DomainError(f"coupling_factor '{self.coupling_factor}' not in {COUPLING_FACTORS}")
        if not 0 <= self.master_seed < 2**64:
            raise DomainError("master_seed must be a 64-bit unsigned integer")

    @property
    def weight(self) -> WeightFn:
        return make_weight(self.family)

    @property
    def coupling_multiplier(self) -> int:
        return self.n - 1 if self.coupling_factor == "n-1" else self.n

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "family": self.family,
            "paths": self.path_count,
            "seed": self.master_seed,
            "scheme": self.scheme.value,
            "dt_base": self.dt_base,
            "eps_abs": self.eps_abs,
            "kappa": self.kappa,
            "max_steps": self.max_steps,
            "coupling_sign": self.coupling_sign,
            "coupling_factor": self.coupling_factor,
            "reflect": self.reflect,
        }


def path_seed(master_seed: int, i: int) -> int:
    """64-bit seed of path i: SeedSequence entropy master_seed, spawn key (i,)."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(int(i),))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


# ── Sample set ────────────────────────────────────────────────────────────────

@dataclass
class TauSampleSet:
    samples: np.ndarray            # raw hitting times of L − eps_abs
    bias_correction: float         # u1(L − eps_abs), added to the reported mean
    config: SimConfig
    flags: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    @property
    def seeds(self) -> list[int]:
        return [path_seed(self.config.master_seed, i) for i in range(len(self.samples))]

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples)) + self.bias_correction

    @property
    def var(self) -> float:
        return float(np.var(self.samples, ddof=1)) if len(self.samples) > 1 else math.nan

    @property
    def se(self) -> float:
        return math.sqrt(self.var / len(self.samples)) if len(self.samples) > 1 else math.nan

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "n": cfg.n,
            "family": cfg.family,
            "scheme": cfg.scheme.value,
            "paths": len(self.samples),
            "seed": cfg.master_seed,
            "eps_abs": cfg.eps_abs,
            "dt_base": cfg.dt_base,
            "kappa": cfg.kappa,
            "coupling_sign": cfg.coupling_sign,
            "coupling_factor": cfg.coupling_factor,
            "bias_correction": self.bias_correction,
            "mean": self.mean,
            "se": self.se,
            "flags": list(self.flags),
            "stats": dict(self.stats),
        }


# ── Drift ─────────────────────────────────────────────────────────────────────

def _drift(table: IntegralTable, r: np.ndarray) -> np.ndarray:
    out = np.empty(len(r))
    lo = r < table.nodes[0]
    out[lo] = (table.n + 1) / r[lo]
    hi = ~lo
    if np.any(hi):
        rh = r[hi]
        out[hi] = 2.0 * np.exp(-np.asarray(tables.ln_Q(table, rh))) - table.nu * table.weight.g(rh)
    return out


def drift(table: IntegralTable, n: int, r):
    """b_n(r); the entrance asymptote (n+1)/r below the first grid node."""
    if n != table.n:
        raise DomainError(f"table is for n = {table.n}, not {n}")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= table.L):
        raise DomainError(f"drift is defined on (0, {table.L})")
    out = _drift(table, np.atleast_1d(r))
    return out if r.ndim else float(out[0])


# ── Lockstep engine ───────────────────────────────────────────────────────────

class _NormalStream:
    """Per-path standard normals drawn in blocks from each path's own generator."""

    def __init__(self, rngs: list[np.random.Generator], block: int = NORMAL_BLOCK):
        self.rngs = rngs
        self.block = block
        self.buf = np.stack([rng.standard_normal(block) for rng in rngs])
        self.pos = np.zeros(len(rngs), dtype=np.int64)

    def _next(self, idx: np.ndarray) -> np.ndarray:
        for i in idx[self.pos[idx] >= self.block]:
            self.buf[i] = self.rngs[i].standard_normal(self.block)
            self.pos[i] = 0
        out = self.buf[idx, self.pos[idx]]
        self.pos[idx] += 1
        return out

    def draw(self, idx: np.ndarray, width: int) -> np.ndarray:
        return np.stack([self._next(idx) for _ in range(width)], axis=1)


def _propose(stream: _NormalStream, idx: np.ndarray, width: int, step, valid):
    """Draw, propose, and redraw rows whose proposal leaves the state space."""
    Z = stream.draw(idx, width)
    new = step(Z, slice(None))
    bad = ~valid(*new)
    redraws = 0
    for _ in range(MAX_RESAMPLE):
        if not np.any(bad):
            break
        sub = np.flatnonzero(bad)
        Z[sub] = stream.draw(idx[sub], width)
        redraws += len(sub)
        sub_new = step(Z[sub], sub)
        for arr, vals in zip(new, sub_new):
            arr[sub] = vals
        bad[sub] = ~valid(*sub_new)
    return new, bad, redraws


def _mirror(x: np.ndarray, fallback: np.ndarray, L: float | None = None) -> np.ndarray:
    x = np.abs(x)
    if L is not None:
        x = np.where(x >= L, 2.0 * L - x, x)
        ok = (x > 0) & (x < L)
    else:
        ok = x > 0
    return np.where(ok, x, fallback)


def _step_size(cfg: SimConfig, L: float, *states: np.ndarray) -> np.ndarray:
    n, kappa = cfg.n, cfg.kappa
    dt = np.full(len(states[0]), cfg.dt_base)
    for x in states:
        dt = np.minimum(dt, kappa * (x / (n + 1)) ** 2)
        dt = np.minimum(dt, kappa * ((L - x) / n) ** 2)
    return dt


@dataclass
class _ChunkResult:
    ids: np.ndarray
    tau: np.ndarray
    failed: list[int]
    steps: int = 0
    redraws: int = 0
    mirrored: int = 0
    min_radius: float = math.inf
    min_gap: float = math.inf
    containment_paths: int = 0


def _run_chunk(table: IntegralTable, cfg: SimConfig, ids: np.ndarray) -> _ChunkResult:
    w = table.weight
    L, n, nu = w.L, cfg.n, cfg.n - 1
    barrier = L - cfg.eps_abs
    coupled = cfg.scheme is not Scheme.AUTONOMOUS
    c = cfg.coupling_multiplier
    tol = math.sqrt(2.0 * cfg.dt_base)

    rngs = [np.random.default_rng(path_seed(cfg.master_seed, i)) for i in ids]
    P = len(ids)

    # entrance: √2·Bessel(n+2) from 0 at time h₀; ρ shares the first n coordinates
    h0 = cfg.dt_base
    Z0 = np.stack([rng.standard_normal(n + 2) for rng in rngs])
    R = math.sqrt(2.0 * h0) * np.linalg.norm(Z0, axis=1)
    rho = math.sqrt(2.0 * h0) * np.linalg.norm(Z0[:, :n], axis=1)
    stream = _NormalStream(rngs)

    t = np.full(P, h0)
    tau = np.full(P, np.nan)
    steps = np.zeros(P, dtype=np.int64)
    active = R < barrier
    tau[~active] = h0
    violated = np.zeros(P, dtype=bool)
    res = _ChunkResult(ids, tau, [])

    while np.any(active):
        idx = np.flatnonzero(active)
        over = steps[idx] >= cfg.max_steps
        if np.any(over):
            res.failed.extend(int(ids[i]) for i in idx[over])
            active[idx[over]] = False
            idx = idx[~over]
            if not len(idx):
                break

        xr = R[idx]
        if cfg.scheme is Scheme.AUTONOMOUS:
            dt = _step_size(cfg, L, xr)
            sq = np.sqrt(2.0 * dt)
            b = _drift(table, xr)

            def step(Z, sel):
                return (xr[sel] + b[sel] * dt[sel] + sq[sel] * Z[:, 0],)

            (Rn,), bad, redraws = _propose(stream, idx, 1, step, lambda r: r > 0)
            Rn[bad] = _mirror(Rn[bad], xr[bad])
        else:
            xp = rho[idx]
            dt = _step_size(cfg, L, xr, xp)
            sq = np.sqrt(2.0 * dt)
            gp = w.g(xp)
            gr = w.g(xr)
            bp = nu * gp

            if cfg.scheme is Scheme.FULL_COUPLING:
                bR = c * (2.0 * gp - gr)
                sign = float(cfg.coupling_sign)

                def step(Z, sel):
                    dB = sq[sel] * Z[:, 0]
                    return xp[sel] + bp[sel] * dt[sel] + dB, xr[sel] + bR[sel] * dt[sel] + sign * dB

                width = 1
            else:
                bR = -c * gr
                reflect = cfg.reflect

                def step(Z, sel):
                    p = xp[sel] + bp[sel] * dt[sel] + sq[sel] * Z[:, 0]
                    r = xr[sel] + bR[sel] * dt[sel] - sq[sel] * Z[:, 1]
                    return p, (np.maximum(r, p) if reflect else r)

                width = 2

            (Pn, Rn), bad, redraws = _propose(
                stream, idx, width, step, lambda p, r: (p > 0) & (p < L) & (r > 0))
            Pn[bad] = _mirror(Pn[bad], xp[bad], L)
            Rn[bad] = _mirror(Rn[bad], xr[bad])
            if cfg.scheme is Scheme.FULL_DECOUPLING and cfg.reflect:
                Rn = np.maximum(Rn, Pn)
            rho[idx] = Pn
            gap = Rn - Pn
            res.min_gap = min(res.min_gap, float(np.min(gap)))
            violated[idx[gap < -tol]] = True
            res.min_radius = min(res.min_radius, float(np.min(Pn)))

        res.redraws += redraws
        res.mirrored += int(np.count_nonzero(bad))
        res.min_radius = min(res.min_radius, float(np.min(Rn)))
        R[idx] = Rn
        t[idx] += dt
        steps[idx] += 1

        hit = Rn >= barrier
        tau[idx[hit]] = t[idx[hit]]
        active[idx[hit]] = False

    res.steps = int(steps.sum())
    res.containment_paths = int(np.count_nonzero(violated))
    return res


def _simulate(config: SimConfig, table: IntegralTable | None, use_cache: bool,
              threads: int, verbose: bool) -> TauSampleSet:
    w = config.weight
    if table is None:
        table = tables.load_or_build(w, config.n, config.base_count, use_cache, verbose=verbose)
    elif table.n != config.n or table.family != config.family:
        raise DomainError(f"table {table.family}/n={table.n} does not match the configuration")

    ids = np.arange(config.path_count)
    chunks = [ids[i:i + config.chunk_size] for i in range(0, len(ids), config.chunk_size)]
    if verbose:
        print(f"   🎲 {config.scheme.value}: {config.path_count} paths, n={config.n}, "
              f"dt_base={config.dt_base:.3g}, eps_abs={config.eps_abs:.3g}")

    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = [executor.submit(_run_chunk, table, config, chunk) for chunk in chunks]
        results = [f.result() for f in tqdm(futures, desc=f"paths n={config.n}",
                                            disable=not verbose)]

    failed = sorted(i for r in results for i in r.failed)
    if failed:
        raise BudgetExceededError(
            f"{len(failed)} path(s) exceeded the budget of {config.max_steps} steps "
            f"(first: {failed[:5]})", failed)

    samples = np.concatenate([r.tau for r in results])
    stats = {
        "steps": sum(r.steps for r in results),
        "redraws": sum(r.redraws for r in results),
        "mirrored": sum(r.mirrored for r in results),
        "min_radius": min(r.min_radius for r in results),
    }
    flags = []
    if stats["mirrored"]:
        flags.append(f"{stats['mirrored']} step(s) mirrored after {MAX_RESAMPLE} redraws")
    if config.scheme is not Scheme.AUTONOMOUS:
        stats["min_gap"] = min(r.min_gap for r in results)
        stats["containment_paths"] = sum(r.containment_paths for r in results)
        if stats["containment_paths"]:
            flags.append(f"containment R ≥ ρ violated on {stats['containment_paths']} path(s) "
                         f"(min gap {stats['min_gap']:.3g})")
    for flag in flags:
        print(f"   ⚠️  {flag}")

    bias = float(green.u1(table, table.L - config.eps_abs))
    return TauSampleSet(samples, bias, config, flags, stats)


def _require(config: SimConfig, scheme: Scheme) -> None:
    if config.scheme is not scheme:
        raise DomainError(f"configuration scheme is {config.scheme.value}, expected {scheme.value}")


def sample_tau(config: SimConfig, table: IntegralTable | None = None, use_cache: bool = True,
               threads: int = 1, verbose: bool = False) -> TauSampleSet:
    """Hitting times of L − eps_abs by the autonomous dual radius."""
    _require(config, Scheme.AUTONOMOUS)
    return _simulate(config, table, use_cache, threads, verbose)


def sample_tau_coupled(config: SimConfig, table: IntegralTable | None = None,
                       use_cache: bool = True, threads: int = 1,
                       verbose: bool = False) -> TauSampleSet:
    _require(config, Scheme.FULL_COUPLING)
    return _simulate(config, table, use_cache, threads, verbose)


def sample_tau_reflected(config: SimConfig, table: IntegralTable | None = None,
                         use_cache: bool = True, threads: int = 1,
                         verbose: bool = False) -> TauSampleSet:
    _require(config, Scheme.FULL_DECOUPLING)
    return _simulate(config, table, use_cache, threads, verbose)


def simulate(config: SimConfig, **kwargs) -> TauSampleSet:
    """Dispatch on config.scheme."""
    runner = {
        Scheme.AUTONOMOUS: sample_tau,
        Scheme.FULL_COUPLING: sample_tau_coupled,
        Scheme.FULL_DECOUPLING: sample_tau_reflected,
    }[config.scheme]
    return runner(config, **kwargs)


# ── Law comparisons ───────────────────────────────────────────────────────────

@dataclass
class KSResult:
    statistic: float
    pvalue: float
    critical: float
    alpha: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical

    def to_json(self) -> dict:
        return {"statistic": self.statistic, "pvalue": self.pvalue,
                "critical": self.critical, "alpha": self.alpha, "passed": self.passed}


def ks_compare(a, b, alpha: float = KS_ALPHA) -> KSResult:
    """Two-sample KS test with the asymptotic critical value c(α)·√((n₁+n₂)/(n₁n₂))."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if not len(a) or not len(b):
        raise DomainError("ks_compare needs two nonempty samples")
    if not 0 < alpha < 1:
        raise DomainError(f"alpha = {alpha} outside (0, 1)")
    result = ks_2samp(a, b)
    c_alpha = math.sqrt(-0.5 * math.log(alpha / 2.0))
    critical = c_alpha * math.sqrt((len(a) + len(b)) / (len(a) * len(b)))
    return KSResult(float(result.statistic), float(result.pvalue), critical, alpha)


@dataclass
class CouplingSelection:
    results: dict[int, KSResult | None]
    selected: int
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "selected_sign": self.selected,
            "results": {str(s): (r.to_json() if r else None) for s, r in self.results.items()},
            "flags": list(self.flags),
        }


def select_coupling_sign(config: SimConfig, reference: TauSampleSet | None = None,
                         use_cache: bool = True, threads: int = 1,
                         verbose: bool = False) -> CouplingSelection:
    """Run the full coupling with σ = +1 and σ = −1 and test each against the autonomous law.

    The reference sample uses master_seed + 1 so that it is independent of
    the coupled runs.
    """
    if reference is None:
        ref_cfg = replace(config, scheme=Scheme.AUTONOMOUS,
                          master_seed=(config.master_seed + 1) % 2**64)
        reference = sample_tau(ref_cfg, use_cache=use_cache, threads=threads, verbose=verbose)

    results: dict[int, KSResult | None] = {}
    flags = []
    for sign in (1, -1):
        cfg = replace(config, scheme=Scheme.FULL_COUPLING, coupling_sign=sign)
        try:
            coupled = sample_tau_coupled(cfg, use_cache=use_cache, threads=threads, verbose=verbose)
        except BudgetExceededError as exc:
            results[sign] = None
            flags.append(f"σ={sign:+d}: {exc}")
            continue
        results[sign] = ks_compare(coupled.samples, reference.samples)
        flags.extend(f"σ={sign:+d}: {flag}" for flag in coupled.flags)

    finished = {s: r for s, r in results.items() if r is not None}
    if not finished:
        raise BudgetExceededError("neither coupling sign finished within the step budget")
    passing = [s for s, r in finished.items() if r.passed]
    selected = min(passing or finished, key=lambda s: finished[s].statistic)
    if not passing:
        flags.append("no coupling sign passes the KS law-equality test")
    elif len(passing) == 2:
        flags.append("both coupling signs pass the KS law-equality test")
    if verbose:
        for s, r in results.items():
            status = "—" if r is None else f"D={r.statistic:.4f} (crit {r.critical:.4f})"
            print(f"   🔀 σ={s:+d}: {status}")
    return CouplingSelection(results, selected, flags)
