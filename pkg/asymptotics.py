"""
asymptotics.py — Module 4: Regime Classification and Predicted Mixing Times
===========================================================================
Closed-form predictions for the three phases of the dimension-n family:

  Subcritical   a ∈ (−1, 0)   a_n = C₁/n,         C₁ = 2∫_0^{L/2} f/f′
  Critical      a = 0         a_n = C₂·ln n/n,    C₂ = f(L/2)/C
  Supercritical a > 0         E[τ_n] ≍ n^{−2/(2+a)}; for a = 2k−2 the
                              coefficient 2k·C(2k)·C(f,2k)²/Γ(1/2k) and the
                              limit ℓ_k of E[τ²]/E[τ]² are explicit.

Here a is the exponent in f″(L/2 − h) = −C|h|^a. The Laplace-method
volume constants are written with α = a + 1 (so that
f(L/2 − h) ≈ f(L/2) − C_α|h|^{1+α}); the mapping is fixed in
`_alpha_laplace`.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import gamma, gammaincc, gammaln

import green
import tables
from weights import CutoffLabError, DomainError, WeightFamily, WeightFn, make_weight

# mpmath drives the tanh-sinh scheme for C(2k) (install via: pip install mpmath)
try:
    import mpmath as mp
    MPMATH_AVAILABLE = True
except ImportError:
    MPMATH_AVAILABLE = False


# ── Configuration ─────────────────────────────────────────────────────────────
C2K_CUT = 200.0                # truncate a^{2k} at this value, analytic tail beyond
C2K_TAIL_TERMS = 8
C2K_RTOL = 1e-12
MP_DPS = 30
D1_CUT = 400.0                 # same for the double integral of the ratio limit
D1_RTOL = 1e-11
RATIO_CHECK_N = 10**6
RATIO_MATCH_TOL = 0.01
C2K_SCHEMES = ("gauss-kronrod", "tanh-sinh")


class Regime(str, Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


def classify(w: WeightFn) -> Regime:
    """Phase of the family from the sign of its regime parameter a."""
    if w.alpha < 0:
        return Regime.SUBCRITICAL
    if w.alpha == 0:
        return Regime.CRITICAL
    return Regime.SUPERCRITICAL


# ── Closed-form constants ─────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def _c1(family: WeightFamily) -> float:
    w = make_weight(family)
    return c1_quadrature(w)


def c1_quadrature(w: WeightFn) -> float:
    """2∫_0^{L/2} f/f′ for a ∈ (−1, 0).

    The substitution L/2 − s = (L/2)·t^{1/|a|} turns the (L/2 − s)^{−(1+a)}
    endpoint singularity into a smooth integrand. Everything is evaluated
    from ln t so that small t never rounds s back onto L/2.
    """
    if not w.alpha < 0:
        raise DomainError(f"C₁ is infinite for a = {w.alpha} ≥ 0")
    m = 0.5 * w.L
    q = 1.0 / -w.alpha

    def integrand(t):
        lt = math.log(t)
        f, lnfp = w.f_lnfp_from_mid(math.log(m) + q * lt)
        return f * m * q * math.exp((q - 1.0) * lt - lnfp)

    value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * value


def c2_constant(w: WeightFn) -> float:
    """f(L/2)/C for the critical regime."""
    return w.fmid / w.curvC


def cf2k(w: WeightFn) -> float:
    """C(f,2k) = ((2k)!·f(L/2)/|f^{(2k)}(L/2)|)^{1/2k}."""
    if w.k is None:
        raise DomainError(f"C(f,2k) needs an even-integer a ≥ 2 (got a = {w.alpha})")
    k = w.k
    return (math.factorial(2 * k) * w.fmid / abs(w.f2k)) ** (1.0 / (2 * k))


def h1k(k: int, x):
    """h_{1,k}(x) = ∫_{−∞}^x exp(−a^{2k}) da via the regularised upper incomplete gamma."""
    x = np.asarray(x, dtype=float)
    s = 1.0 / (2 * k)
    c = gamma(s) / (2 * k)
    lower = c * gammaincc(s, np.abs(x) ** (2 * k))
    out = np.where(x < 0, lower, 2.0 * c - lower)
    return out if out.ndim else float(out)


def _tail_series(k: int, cut: float, power_offset: int = 0) -> float:
    """∫_X^∞ (H/2k)·a^{1−2k}·Σ_j c_j a^{−2kj} da with X^{2k} = cut, c_j = (s−1)…(s−j)."""
    s = 1.0 / (2 * k)
    H = gamma(s) / k
    X = cut ** (1.0 / (2 * k))
    total, coeff = 0.0, 1.0
    for j in range(C2K_TAIL_TERMS):
        if j:
            coeff *= s - j
        expo = 2 * k * (1 + j) - 2
        total += coeff * X ** (-expo) / expo
    return H / (2 * k) * total


def _c2k_gauss_kronrod(k: int, cut: float) -> float:
    s = 1.0 / (2 * k)
    c = gamma(s) / (2 * k)
    X = cut ** (1.0 / (2 * k))

    def integrand(a):
        x = a ** (2 * k)
        Q = gammaincc(s, x)
        return c * c * (2.0 - Q) * Q * math.exp(x)

    head, _ = integrate.quad(integrand, 0.0, X, epsabs=0.0, epsrel=C2K_RTOL, limit=400)
    return head + _tail_series(k, cut)


def _c2k_tanh_sinh(k: int, cut: float) -> float:
    if not MPMATH_AVAILABLE:
        raise CutoffLabError("the tanh-sinh scheme needs mpmath (pip install mpmath)")
    with mp.workdps(MP_DPS):
        s = mp.mpf(1) / (2 * k)
        H = mp.gamma(s) / k
        X = mp.mpf(cut) ** s

        def integrand(a):
            x = a ** (2 * k)
            lower = mp.gammainc(s, x) / (2 * k)
            return (H - lower) * lower * mp.exp(x)

        return float(mp.quad(integrand, [0, X, 4 * X, mp.inf], method="tanh-sinh"))


@lru_cache(maxsize=None)
def limit_constant_C2k(k: int, scheme: str = "gauss-kronrod", cut: float = C2K_CUT) -> float:
    """C(2k) = ∫_0^∞ h_{1,k}(a)·h_{1,k}(−a)·e^{a^{2k}} da."""
    if k < 2 or int(k) != k:
        raise DomainError(f"C(2k) needs an integer k ≥ 2 (k = {k}); C(2) diverges")
    if scheme == "gauss-kronrod":
        return _c2k_gauss_kronrod(int(k), cut)
    if scheme == "tanh-sinh":
        return _c2k_tanh_sinh(int(k), cut)
    raise DomainError(f"unknown scheme '{scheme}' ({' | '.join(C2K_SCHEMES)})")


def c2k_agreement(k: int) -> float:
    """Relative difference between the two quadrature schemes for C(2k)."""
    a = limit_constant_C2k(k, "gauss-kronrod")
    b = limit_constant_C2k(k, "tanh-sinh")
    return abs(a - b) / abs(a)


# ── Ratio limit ───────────────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def _d1(k: int, cut: float = D1_CUT) -> float:
    """∫ h(−a)²e^{a^{2k}} ∫_{−∞}^a h(b)²e^{b^{2k}} db da for h = h_{1,k}, over ℝ.

    Integrated as an ODE on [−X, X]; both tails decay like
    H²/(2k·|a|^{2k−1})³ and are added analytically.
    """
    s = 1.0 / (2 * k)
    c = gamma(s) / (2 * k)
    H = 2.0 * c
    X = cut ** s

    def rhs(t, y):
        x = t ** (2 * k)
        Q = gammaincc(s, x)
        Qe = Q * math.exp(x)
        if t < 0:
            inner = c * c * Q * Qe
            outer = (H - c * Q) ** 2 * math.exp(x)
        else:
            inner = (H - c * Q) ** 2 * math.exp(x)
            outer = c * c * Q * Qe
        return [inner, outer * y[0]]

    sol = integrate.solve_ivp(rhs, (-X, X), [0.0, 0.0], method="DOP853", rtol=D1_RTOL, atol=1e-300)
    if not sol.success:
        raise tables.NumericalGateError(f"asymptotics.d1_ode: {sol.message}")
    tail = H**2 * X ** (4 - 6 * k) / ((2 * k) ** 3 * (6 * k - 4))
    return float(sol.y[1, -1]) + 2.0 * tail


@dataclass
class RatioLimit:
    k: int
    candidates: dict[str, float]
    observed: float | None
    n_check: int | None
    selected: str
    matched: bool
    flags: list[str] = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.candidates[self.selected]

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "ratio_limit_candidates": dict(self.candidates),
            "ratio_limit_selected": self.selected,
            "ratio_limit": self.value,
            "observed": self.observed,
            "n_check": self.n_check,
            "matched": self.matched,
            "flags": list(self.flags),
        }


def ratio_limit_candidates(k: int, w: WeightFn) -> dict[str, float]:
    """ℓ_k = 1 + (2/c_k)·C(f,2k)⁶·D₁ under both normalisations of c_k."""
    C = limit_constant_C2k(k)
    cf = cf2k(w)
    D = cf**6 * _d1(k)
    c_dimensional = 4.0 * C**2 * cf**6
    c_printed = C**2 * cf ** (3.0 / k)
    return {
        "dimensional": 1.0 + 2.0 * D / c_dimensional,
        "printed": 1.0 + 2.0 * D / c_printed,
    }


def ratio_limit(k: int, w: WeightFn, n_check: int | None = RATIO_CHECK_N,
                base_count: int | None = None, use_cache: bool = True,
                verbose: bool = False) -> RatioLimit:
    """Limit of E[τ_n²]/E[τ_n]², selecting the candidate that matches quadrature at n_check."""
    if w.k is None or w.k != k:
        raise DomainError(f"ratio_limit(k={k}) needs a = {2 * k - 2} (family a = {w.alpha})")

    candidates = ratio_limit_candidates(k, w)
    if n_check is None:
        return RatioLimit(k, candidates, None, None, "dimensional", False,
                          ["no large-n check requested"])

    table = tables.load_or_build(w, n_check, base_count, use_cache, verbose=verbose)
    mean = green.mean_tau(table)
    var, _ = green.var_tau(table)
    observed = 1.0 + var / mean**2

    errors = {name: abs(v - observed) / observed for name, v in candidates.items()}
    selected = min(errors, key=errors.get)
    matched = errors[selected] <= RATIO_MATCH_TOL
    flags = []
    if not matched:
        flags.append(f"no candidate within {RATIO_MATCH_TOL:.0%} of observed {observed:.6g}")
        print(f"   ⚠️  ratio limit: {flags[-1]}")
    if verbose:
        print(f"   📐 ℓ_{k}: dimensional={candidates['dimensional']:.6g}, "
              f"printed={candidates['printed']:.6g}, observed(n={n_check})={observed:.6g} → {selected}")
    return RatioLimit(k, candidates, observed, n_check, selected, matched, flags)


# ── Predictions ───────────────────────────────────────────────────────────────

@dataclass
class RegimePrediction:
    regime: Regime
    a: float
    family: str
    coefficient: float
    exponent: float            # a_n = coefficient·n^exponent·(ln n if log_factor)
    log_factor: bool = False
    scale_only: bool = False
    constants: dict[str, float] = field(default_factory=dict)
    window_exponent: float = 0.0   # Laplace concentration width ≍ n^{window_exponent}

    def predict(self, n: float) -> float:
        if n < 2:
            raise DomainError(f"n = {n} must be at least 2")
        value = self.coefficient * n**self.exponent
        return value * math.log(n) if self.log_factor else value

    def to_json(self, n_list: list[int] | None = None) -> dict:
        out = {
            "regime": self.regime.value,
            "a": self.a,
            "family": self.family,
            "coefficient": self.coefficient,
            "exponent": self.exponent,
            "log_factor": self.log_factor,
            "scale_only": self.scale_only,
            "window_exponent": self.window_exponent,
        }
        out.update(self.constants)
        if n_list:
            out["an"] = {str(n): self.predict(n) for n in n_list}
        return out


@lru_cache(maxsize=None)
def _prediction(family: WeightFamily) -> RegimePrediction:
    w = make_weight(family)
    regime = classify(w)
    a = w.alpha
    common = dict(regime=regime, a=a, family=w.key(), window_exponent=-1.0 / (2.0 + a))

    if regime is Regime.SUBCRITICAL:
        c1 = _c1(family)
        return RegimePrediction(coefficient=c1, exponent=-1.0, constants={"C1": c1}, **common)
    if regime is Regime.CRITICAL:
        c2 = c2_constant(w)
        return RegimePrediction(coefficient=c2, exponent=-1.0, log_factor=True,
                                constants={"C2": c2}, **common)
    if w.k is not None:
        k = w.k
        C = limit_constant_C2k(k)
        cf = cf2k(w)
        coeff = 2 * k * C * cf**2 / gamma(1.0 / (2 * k))
        return RegimePrediction(coefficient=coeff, exponent=-1.0 / k,
                                constants={"k": k, "Cf2k": cf, "C2k": C}, **common)
    return RegimePrediction(coefficient=1.0, exponent=-2.0 / (2.0 + a), scale_only=True, **common)


def regime_prediction(w: WeightFn) -> RegimePrediction:
    return _prediction(w.family)


def predict_mixing(w: WeightFn, n: float) -> float:
    """Predicted mixing time a_n (the mean scale for the supercritical phase)."""
    if n < 2:
        raise DomainError(f"n = {n} must be at least 2")
    return regime_prediction(w).predict(n)


def estimate_scale_coefficient(w: WeightFn, n: int, base_count: int | None = None,
                               use_cache: bool = True) -> float:
    """E[τ_n]·n^{2/(2+a)} from quadrature, for supercritical a without a closed form."""
    if not w.alpha > 0:
        raise DomainError("the scale coefficient is only estimated for a > 0")
    table = tables.load_or_build(w, n, base_count, use_cache)
    return green.mean_tau(table) * n ** (2.0 / (2.0 + w.alpha))


def window_ratio(w: WeightFn, n: float, window: float) -> float:
    """Relative window size window/a_n; tends to 0 along a cut-off."""
    return window / predict_mixing(w, n)


# ── Volume asymptotes ─────────────────────────────────────────────────────────

def _alpha_laplace(w: WeightFn) -> float:
    """Exponent convention of the volume constants: α = a + 1."""
    return w.alpha + 1.0


def volume_asymptote(w: WeightFn, n: int) -> float:
    """ln of the Laplace prediction for I_n(L/2)."""
    if n < 2:
        raise DomainError(f"n = {n} must be at least 2")
    base = (n - 1) * math.log(w.fmid)
    regime = classify(w)

    if regime is Regime.CRITICAL:
        return 0.5 * math.log(math.pi * w.fmid / (2.0 * n * w.curvC)) + base
    if regime is Regime.SUPERCRITICAL and w.k is not None:
        k = w.k
        return (float(gammaln(1.0 / (2 * k))) - math.log(2 * k) + math.log(cf2k(w))
                - math.log(n) / (2 * k) + base)

    alpha = _alpha_laplace(w)
    c_alpha = w.curvC / (alpha * (alpha + 1.0))
    ln_c = (math.log(w.fmid / c_alpha) / (1.0 + alpha)
            + float(gammaln(1.0 / (1.0 + alpha))) - math.log(1.0 + alpha))
    return ln_c - math.log(n) / (1.0 + alpha) + base
