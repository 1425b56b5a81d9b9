"""
analysis.py — Module 6: Profiles, Sweeps and the Cut-off Verdict
================================================================
Turns moments and samples into statements about cut-off:

  separation_profile   empirical P[τ_n > t] with Wilson intervals and the
                       Chebyshev bounds from quadrature
  cutoff_verdict       Cutoff / NoCutoff / Inconclusive from the ratio
                       Var(τ_n)/E[τ_n]² along a list of dimensions
  phase_sweep          verdict and fitted exponent for each a of the power family

plus the CSV / JSON writers for these results.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

import asymptotics
import green
import tables
from sde import TauSampleSet
from tables import IntegralTable
from weights import DomainError, WeightFamily, make_weight, parse_family


# ── Configuration ─────────────────────────────────────────────────────────────
DECAY_THRESHOLD = 0.01         # Cutoff: ratio decreasing and final ratio below this
PLATEAU_TOL = 0.10             # NoCutoff: ratio within 10% of its plateau ...
TOP_DECADE = 10.0              # ... over n ∈ [n_max/10, n_max]
MIN_VERDICT_POINTS = 4
MIN_DECADES = 2.0
FIT_MIN_POINTS = 5
FIT_MAX_RESIDUAL = 0.05
PHASE_A_RANGE = (-1.0, 4.0)

SWEEP_COLUMNS = ["family", "a", "m", "n", "mean", "var", "ratio", "predicted_an", "window", "verdict"]
PROFILE_COLUMNS = ["t", "sep_mc", "ci_lo", "ci_hi", "cheb_bound"]


class Verdict(str, Enum):
    CUTOFF = "Cutoff"
    NO_CUTOFF = "NoCutoff"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class VerdictThresholds:
    decay: float = DECAY_THRESHOLD
    plateau_tol: float = PLATEAU_TOL
    top_decade: float = TOP_DECADE


# ── Separation profile ────────────────────────────────────────────────────────

@dataclass
class ProfileTable:
    n: int
    times: np.ndarray
    sep_mc: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    sep_upper: np.ndarray      # Chebyshev: min(1, Var/(t − E)²) for t > E, else 1
    sep_lower: np.ndarray      # Chebyshev: max(0, 1 − Var/(E − t)²) for t < E, else 0
    a_n: float
    window: float
    mean: float

    def rows(self):
        for i, t in enumerate(self.times):
            yield [t, self.sep_mc[i], self.ci_lo[i], self.ci_hi[i], self.sep_upper[i]]


def separation_profile(table: IntegralTable, samples: TauSampleSet, times,
                       confidence: float = 0.95) -> ProfileTable:
    """Empirical separation P[τ_n > t] at the (sorted) requested times.

    Samples are shifted by their bias correction before counting.
    """
    times = np.sort(np.atleast_1d(np.asarray(times, dtype=float)))
    if not len(times):
        raise DomainError("separation_profile needs at least one time")
    if np.any(times < 0):
        raise DomainError("times must be nonnegative")
    shifted = np.asarray(samples.samples) + samples.bias_correction
    N = len(shifted)
    if not N:
        raise DomainError("separation_profile needs a nonempty sample set")

    ordered = np.sort(shifted)
    above = N - np.searchsorted(ordered, times, side="right")
    sep = above / N
    ci_lo = np.empty(len(times))
    ci_hi = np.empty(len(times))
    for i, k in enumerate(above):
        ci = binomtest(int(k), N).proportion_ci(confidence_level=confidence, method="wilson")
        ci_lo[i], ci_hi[i] = ci.low, ci.high

    mean = green.mean_tau(table)
    upper = np.array([green.tv_bound(table, t) if t > mean else 1.0 for t in times])
    lower = np.array([green.separation_lower_bound(table, t) for t in times])
    var, _ = green.var_tau(table)
    a_n = asymptotics.predict_mixing(table.weight, table.n)
    return ProfileTable(table.n, times, sep, ci_lo, ci_hi, upper, lower, a_n, math.sqrt(var), mean)


# ── Exponent fits ─────────────────────────────────────────────────────────────

@dataclass
class ExponentFit:
    slope: float
    intercept: float
    residuals: np.ndarray
    log_corrected: bool

    @property
    def points(self) -> int:
        return len(self.residuals)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    @property
    def verdict_grade(self) -> bool:
        return self.points >= FIT_MIN_POINTS and self.max_residual < FIT_MAX_RESIDUAL


def fit_exponent(n_list, values, log_corrected: bool = False) -> ExponentFit:
    """Least-squares slope of ln(value) against ln n; divides by ln n first if log_corrected."""
    n = np.asarray(n_list, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(n) < 2 or len(n) != len(v):
        raise DomainError("fit_exponent needs at least two (n, value) pairs")
    if np.any(v <= 0):
        raise DomainError("fit_exponent needs positive values")
    if log_corrected:
        v = v / np.log(n)
    x, y = np.log(n), np.log(v)
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (slope * x + intercept)
    return ExponentFit(float(slope), float(intercept), residuals, log_corrected)


def tau_histogram(samples: TauSampleSet | np.ndarray, mean: float, bins: int = 50):
    """Density histogram of τ/E[τ]: (density, edges)."""
    values = samples.samples if isinstance(samples, TauSampleSet) else np.asarray(samples)
    if not mean > 0:
        raise DomainError("mean must be positive")
    return np.histogram(np.asarray(values) / mean, bins=bins, density=True)


# ── Cut-off verdict ───────────────────────────────────────────────────────────

@dataclass
class CutoffVerdict:
    family: str
    n_list: list[int]
    means: list[float]
    variances: list[float]
    ratios: list[float]
    verdict: Verdict
    plateau: float | None
    rate: float
    thresholds: VerdictThresholds
    prediction: dict
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "n_list": list(self.n_list),
            "mean": list(self.means),
            "var": list(self.variances),
            "ratio": list(self.ratios),
            "verdict": self.verdict.value,
            "plateau": self.plateau,
            "decay_rate": self.rate,
            "thresholds": asdict(self.thresholds),
            "prediction": self.prediction,
            "flags": list(self.flags),
        }


def _check_n_list(n_list) -> list[int]:
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < MIN_VERDICT_POINTS:
        raise DomainError(f"a verdict needs at least {MIN_VERDICT_POINTS} values of n (got {len(n_list)})")
    if len(set(n_list)) != len(n_list):
        raise DomainError("n values must be distinct")
    if n_list[0] < 2:
        raise DomainError("n values must be at least 2")
    if math.log10(n_list[-1] / n_list[0]) < MIN_DECADES:
        raise DomainError(f"n values must span at least {MIN_DECADES:g} decades")
    return n_list


def classify_ratios(n_list: list[int], ratios: list[float],
                    thresholds: VerdictThresholds = VerdictThresholds()):
    """(verdict, plateau or None, flags) for a ratio sequence along increasing n."""
    r = np.asarray(ratios, dtype=float)
    n = np.asarray(n_list, dtype=float)
    flags = []
    decreasing = bool(np.all(np.diff(r) < 0))
    if decreasing and r[-1] < thresholds.decay:
        return Verdict.CUTOFF, None, flags

    top = r[n >= n[-1] / thresholds.top_decade]
    plateau = float(np.mean(top))
    if plateau >= thresholds.decay and np.all(np.abs(top - plateau) <= thresholds.plateau_tol * plateau):
        return Verdict.NO_CUTOFF, plateau, flags

    if not decreasing:
        flags.append("ratio sequence is not monotone")
    else:
        flags.append(f"ratio decreasing but final value {r[-1]:.3g} ≥ {thresholds.decay}")
    return Verdict.INCONCLUSIVE, None, flags


def cutoff_verdict(family: WeightFamily | str, n_list, base_count: int | None = None,
                   use_cache: bool = True, threads: int = 1,
                   thresholds: VerdictThresholds = VerdictThresholds(),
                   verbose: bool = False) -> CutoffVerdict:
    """Quadrature-only verdict from Var(τ_n)/E[τ_n]² along n_list."""
    w = make_weight(family)
    n_list = _check_n_list(n_list)
    built = tables.build_tables(w, n_list, base_count, use_cache, threads, verbose)
    return _verdict_from_tables(w, n_list, built, thresholds, verbose)


def _verdict_from_tables(w, n_list: list[int], built: dict[int, IntegralTable],
                         thresholds: VerdictThresholds, verbose: bool = False) -> CutoffVerdict:
    means = [green.mean_tau(built[n]) for n in n_list]
    variances = [green.var_tau(built[n])[0] for n in n_list]
    ratios = [v / m**2 for m, v in zip(means, variances)]
    verdict, plateau, flags = classify_ratios(n_list, ratios, thresholds)
    rate = fit_exponent(n_list, ratios).slope if min(ratios) > 0 else math.nan

    prediction = asymptotics.regime_prediction(w).to_json(n_list)
    if verbose:
        print(f"   ⚖️  {w.key()}: ratio {ratios[0]:.3g} → {ratios[-1]:.3g} ⇒ {verdict.value}")
    return CutoffVerdict(w.key(), n_list, means, variances, ratios, verdict, plateau, rate,
                         thresholds, prediction, flags)


# ── Phase sweep ───────────────────────────────────────────────────────────────

@dataclass
class PhaseRow:
    a: float
    regime: str
    verdict: str
    fitted_exponent: float
    max_residual: float
    verdict_grade: bool
    predicted_exponent: float
    log_corrected: bool
    coefficient_predicted: float | None
    coefficient_measured: float
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def phase_sweep(a_list, m: float, n_list, base_count: int | None = None,
                use_cache: bool = True, threads: int = 1,
                thresholds: VerdictThresholds = VerdictThresholds(),
                verbose: bool = False) -> list[PhaseRow]:
    """Verdict and mean-exponent fit for each a of power(a, m)."""
    lo, hi = PHASE_A_RANGE
    for a in a_list:
        if not lo < a <= hi:
            raise DomainError(f"a = {a} outside ({lo:g}, {hi:g}]")
    n_sorted = sorted(int(n) for n in n_list)

    rows = []
    for a in a_list:
        family = WeightFamily("power", float(a), float(m))
        w = make_weight(family)
        pred = asymptotics.regime_prediction(w)
        built = tables.build_tables(w, n_sorted, base_count, use_cache, threads, verbose)
        means = [green.mean_tau(built[n]) for n in n_sorted]
        flags = []

        try:
            verdict = _verdict_from_tables(w, _check_n_list(n_sorted), built,
                                           thresholds).verdict.value
        except DomainError as exc:
            verdict = Verdict.INCONCLUSIVE.value
            flags.append(str(exc))

        fit = fit_exponent(n_sorted, means, log_corrected=pred.log_factor)
        if not fit.verdict_grade:
            flags.append(f"fit not verdict-grade ({fit.points} points, max residual {fit.max_residual:.3g})")

        n_top = n_sorted[-1]
        measured = means[-1] / (n_top**pred.exponent * (math.log(n_top) if pred.log_factor else 1.0))
        rows.append(PhaseRow(
            a=float(a), regime=pred.regime.value, verdict=verdict,
            fitted_exponent=fit.slope, max_residual=fit.max_residual,
            verdict_grade=fit.verdict_grade, predicted_exponent=pred.exponent,
            log_corrected=pred.log_factor,
            coefficient_predicted=None if pred.scale_only else pred.coefficient,
            coefficient_measured=measured, flags=flags,
        ))
        if verbose:
            print(f"   📈 a={a:g}: exponent {fit.slope:.4f} (predicted {pred.exponent:.4f}) → {verdict}")
    return rows


# ── Writers ───────────────────────────────────────────────────────────────────

def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, columns: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_num(x) for x in row])
    return path


def sweep_rows(verdict: CutoffVerdict):
    family = parse_family(verdict.family)
    w = make_weight(family)
    for n, mean, var, ratio in zip(verdict.n_list, verdict.means, verdict.variances, verdict.ratios):
        yield [verdict.family, family.a, family.m, n, mean, var, ratio,
               asymptotics.predict_mixing(w, n), math.sqrt(var), verdict.verdict.value]


def write_sweep_csv(verdicts: list[CutoffVerdict], path: Path) -> Path:
    rows = [row for v in verdicts for row in sweep_rows(v)]
    return _write_csv(path, SWEEP_COLUMNS, rows)


def write_profile_csv(profile: ProfileTable, path: Path) -> Path:
    return _write_csv(path, PROFILE_COLUMNS, profile.rows())


def write_verdict_json(verdicts: list[CutoffVerdict], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([v.to_json() for v in verdicts], fh, indent=2)
    return path


def write_samples(samples: TauSampleSet, path: Path) -> tuple[Path, Path]:
    """Sample CSV `path_id,tau_raw` plus its JSON sidecar (same stem, .json)."""
    csv_path = _write_csv(path, ["path_id", "tau_raw"], enumerate(samples.samples))
    sidecar = Path(path).with_suffix(".json")
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(samples.to_json(), fh, indent=2)
    return csv_path, sidecar


def write_phase_csv(rows: list[PhaseRow], path: Path) -> Path:
    columns = ["a", "regime", "verdict", "fitted_exponent", "predicted_exponent",
               "max_residual", "coefficient_predicted", "coefficient_measured"]
    return _write_csv(path, columns, ([getattr(r, c) for c in columns] for r in rows))
