"""
weights.py — Module 1: Weight Functions and Geometry
=====================================================
Closed-form warping profiles f on [0, L] for the rotationally symmetric
metric dr² + f²(r)dθ², their assumption checks, and the geometric
quantities built on them (Ricci terms, mean curvature, ball volumes).

Two families ship:
  sphere                  f = sin on [0, π]
  power:a=<a>:m=<m>       f(s) = (m/(2+a))·(1 − (1 − s/m)^{2+a}) on [0, m],
                          mirrored onto [m, 2m]

Every evaluation goes through u = min(s, L − s), so f(s) = f(L − s) holds
exactly in floating point.
"""

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln


# ── Configuration ─────────────────────────────────────────────────────────────
ASSUMPTION_TOL = 1e-9          # PASS threshold for validate_assumptions
FAMILY_GRAMMAR = "sphere | power:a=<decimal>:m=<decimal>  (a > -1, m > 0)"

_POWER_KEY = re.compile(r"^power:a=([^:]+):m=([^:]+)$")


# ── Errors ────────────────────────────────────────────────────────────────────

class CutoffLabError(Exception):
    """Base class for every error raised by the lab."""


class DomainError(CutoffLabError, ValueError):
    """An argument lies outside the domain of the operation."""


# ── Family descriptors ────────────────────────────────────────────────────────

def _fmt(x: float) -> str:
    """Canonical decimal: shortest round-trip repr, integers without '.0'."""
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True)
class WeightFamily:
    """Serializable identity of a weight family (keys the table cache)."""
    kind: str                  # "sphere" | "power"
    a: float = 0.0
    m: float = 1.0

    def key(self) -> str:
        if self.kind == "sphere":
            return "sphere"
        return f"power:a={_fmt(self.a)}:m={_fmt(self.m)}"

    def __str__(self) -> str:
        return self.key()


def parse_family(key: str) -> WeightFamily:
    """Parse a family descriptor; raises DomainError carrying the grammar."""
    key = key.strip()
    if key == "sphere":
        return WeightFamily("sphere", 0.0, math.pi / 2)

    match = _POWER_KEY.match(key)
    if not match:
        raise DomainError(f"invalid family key '{key}'. Expected: {FAMILY_GRAMMAR}")
    try:
        a, m = float(match.group(1)), float(match.group(2))
    except ValueError:
        raise DomainError(f"invalid number in family key '{key}'. Expected: {FAMILY_GRAMMAR}")
    if not (math.isfinite(a) and math.isfinite(m)):
        raise DomainError(f"non-finite parameter in family key '{key}'")
    if a <= -1:
        raise DomainError(f"a = {a} ≤ -1: the origin is no longer an entrance boundary")
    if m <= 0:
        raise DomainError(f"half-length m = {m} must be positive")
    return WeightFamily("power", a, m)


# ── Weight functions ──────────────────────────────────────────────────────────

@dataclass(frozen=True)
class WeightFn:
    """
    A symmetric weight f on [0, L] with analytic derivatives.

    Subclasses provide the half-profile on u ∈ [0, L/2] through the
    `_f`, `_fp`, `_fpp`, `_lnf` and `_one_minus_fp2` hooks.
    """
    family: WeightFamily
    L: float
    fmid: float
    alpha: float
    curvC: float
    k: int | None = None
    f2k: float | None = None   # f^{(2k)}(L/2) for even-integer a = 2k − 2

    # -- argument handling --

    def key(self) -> str:
        return self.family.key()

    def _split(self, s):
        s = np.asarray(s, dtype=float)
        if np.any((s < 0) | (s > self.L)):
            raise DomainError(f"radius outside [0, {self.L}]")
        u = np.minimum(s, self.L - s)
        sign = np.where(s <= 0.5 * self.L, 1.0, -1.0)
        return u, sign

    # -- public evaluators --

    def f(self, s):
        u, _ = self._split(s)
        return self._f(u)

    def fp(self, s):
        u, sign = self._split(s)
        return sign * self._fp(u)

    def fpp(self, s):
        u, _ = self._split(s)
        return self._fpp(u)

    def lnf(self, s):
        u, _ = self._split(s)
        with np.errstate(divide="ignore"):
            return self._lnf(u)

    def g(self, s):
        """Logarithmic derivative f′/f."""
        u, sign = self._split(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            return sign * self._fp(u) / self._f(u)

    def one_minus_fp2(self, s):
        u, _ = self._split(s)
        return self._one_minus_fp2(u)

    def f_lnfp_from_mid(self, ln_d: float) -> tuple[float, float]:
        """(f, ln f′) at s = L/2 − d, given ln d."""
        s = 0.5 * self.L - math.exp(ln_d)
        return float(self.f(s)), math.log(float(self.fp(s)))

    @property
    def beta(self) -> float:
        """f″(0)/2, the constant term of f′/f ≈ 1/s + β near the pole."""
        return 0.5 * float(self._fpp(np.float64(0.0)))

    # -- hooks --

    def _f(self, u):
        raise NotImplementedError

    def _fp(self, u):
        raise NotImplementedError

    def _fpp(self, u):
        raise NotImplementedError

    def _lnf(self, u):
        return np.log(self._f(u))

    def _one_minus_fp2(self, u):
        return 1.0 - self._fp(u) ** 2


@dataclass(frozen=True)
class SphereWeight(WeightFn):
    """f = sin on [0, π]."""

    def _f(self, u):
        return np.sin(u)

    def _fp(self, u):
        return np.cos(u)

    def _fpp(self, u):
        return -np.sin(u)

    def _one_minus_fp2(self, u):
        return np.sin(u) ** 2


@dataclass(frozen=True)
class PowerCurvatureWeight(WeightFn):
    """f″(m − h) = −((1+a)/m)(h/m)^a on [0, m], mirrored."""
    a: float = field(default=0.0)
    m: float = field(default=1.0)

    def _log1m(self, u):
        with np.errstate(divide="ignore"):
            return np.log1p(-u / self.m)

    def _f(self, u):
        return self.fmid * -np.expm1((2.0 + self.a) * self._log1m(u))

    def _fp(self, u):
        return np.exp((1.0 + self.a) * self._log1m(u))

    def _fpp(self, u):
        if self.a < 0 and np.any(u >= self.m):
            raise DomainError("f″ is singular at L/2 for a < 0")
        return -((1.0 + self.a) / self.m) * (1.0 - np.asarray(u) / self.m) ** self.a

    def _lnf(self, u):
        return math.log(self.fmid) + np.log(-np.expm1((2.0 + self.a) * self._log1m(u)))

    def _one_minus_fp2(self, u):
        return -np.expm1(2.0 * (1.0 + self.a) * self._log1m(u))

    def f_lnfp_from_mid(self, ln_d: float) -> tuple[float, float]:
        # f′ = (d/m)^{1+a} exactly, no cancellation in m − d
        lx = ln_d - math.log(self.m)
        return self.fmid * -math.expm1((2.0 + self.a) * lx), (1.0 + self.a) * lx


def make_sphere() -> WeightFn:
    """The round sphere: f = sin, L = π, critical regime with C = 1."""
    return SphereWeight(
        family=WeightFamily("sphere", 0.0, math.pi / 2),
        L=math.pi, fmid=1.0, alpha=0.0, curvC=1.0,
    )


def make_power_curvature(a: float, m: float) -> WeightFn:
    """Closed-form family with f″(L/2 − h) = −((1+a)/m^{1+a})·|h|^a."""
    if not a > -1:
        raise DomainError(f"a = {a} ≤ -1: the origin is no longer an entrance boundary")
    if not m > 0:
        raise DomainError(f"half-length m = {m} must be positive")

    a, m = float(a), float(m)
    k = f2k = None
    if a >= 2 and a == int(a) and int(a) % 2 == 0:
        k = int(a) // 2 + 1
        f2k = -math.factorial(2 * k - 1) / m ** (2 * k - 1)

    return PowerCurvatureWeight(
        family=WeightFamily("power", a, m),
        L=2.0 * m, fmid=m / (2.0 + a), alpha=a, curvC=(1.0 + a) / m ** (1.0 + a),
        k=k, f2k=f2k, a=a, m=m,
    )


def make_weight(family: WeightFamily | str) -> WeightFn:
    """Build the WeightFn for a descriptor or a descriptor key."""
    if isinstance(family, str):
        family = parse_family(family)
    if family.kind == "sphere":
        return make_sphere()
    return make_power_curvature(family.a, family.m)


# ── Assumption checks ─────────────────────────────────────────────────────────

@dataclass
class ValidationReport:
    family: str
    symmetry: float
    slope_sign: float
    curvature_sign: float
    boundary_slope: float
    tol: float = ASSUMPTION_TOL

    @property
    def violations(self) -> dict[str, float]:
        checks = {
            "symmetry": self.symmetry,
            "slope_sign": self.slope_sign,
            "curvature_sign": self.curvature_sign,
            "boundary_slope": self.boundary_slope,
        }
        return {name: v for name, v in checks.items() if not v <= self.tol}

    @property
    def passed(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL (" + ", ".join(self.violations) + ")"
        return f"{self.family}: {status}"


def validate_assumptions(w: WeightFn, grid_resolution: int = 1000) -> ValidationReport:
    """Max violation of symmetry, f′ > 0 on (0, L/2), f″ ≤ 0 and unit boundary slopes."""
    if grid_resolution < 100:
        raise DomainError("grid_resolution must be at least 100")

    s = np.linspace(0.0, w.L, grid_resolution + 1)[1:-1]
    half = 0.5 * w.L
    scale = max(abs(w.fmid), 1.0)

    symmetry = float(np.max(np.abs(w.f(s) - w.f(w.L - s)))) / scale
    left = s[s < half]
    slope_sign = float(max(0.0, -np.min(w.fp(left))))
    off_mid = s[s != half]
    curvature_sign = float(max(0.0, np.max(w.fpp(off_mid))))
    boundary_slope = float(max(abs(w.fp(0.0) - 1.0), abs(w.fp(w.L) + 1.0)))

    return ValidationReport(w.key(), symmetry, slope_sign, curvature_sign, boundary_slope)


# ── Geometry ──────────────────────────────────────────────────────────────────

def _check_n(n: int) -> None:
    if n < 2:
        raise DomainError(f"dimension n = {n} must be at least 2")


def ricci_terms(w: WeightFn, n: int, s: float) -> tuple[float, float]:
    """(tangential, radial) Ricci eigenvalues at radius s."""
    _check_n(n)
    if not 0 < s < w.L:
        raise DomainError(f"radius {s} outside (0, {w.L})")
    f = float(w.f(s))
    fpp = float(w.fpp(s))
    tangential = (n - 2) * float(w.one_minus_fp2(s)) / f**2 - fpp / f
    radial = -(n - 1) * fpp / f
    return tangential, radial


def mean_curvature(w: WeightFn, n: int, r):
    """(n−1)f′/f: mean curvature of the geodesic sphere of radius r."""
    _check_n(n)
    return (n - 1) * w.g(r)


def ln_unit_sphere_area(n: int) -> float:
    """ln c_n with c_n = 2π^{n/2}/Γ(n/2)."""
    return math.log(2.0) + 0.5 * n * math.log(math.pi) - float(gammaln(0.5 * n))


def ln_ball_volume(w: WeightFn, n: int, r: float, base_count: int | None = None) -> float:
    """ln Vol_n(B(0, r)) = ln c_n + ln I_n(r); −inf at r = 0."""
    import tables

    _check_n(n)
    if not 0 <= r <= w.L:
        raise DomainError(f"radius {r} outside [0, {w.L}]")
    if r == 0:
        return -math.inf
    table = tables.load_or_build(w, n, base_count)
    return ln_unit_sphere_area(n) + float(tables.ln_I(table, r))


def ball_volume(w: WeightFn, n: int, r: float, base_count: int | None = None) -> float:
    """Vol_n(B(0, r)) = c_n·I_n(r); may underflow for large n (see ln_ball_volume)."""
    return math.exp(ln_ball_volume(w, n, r, base_count))


def ln_manifold_volume(w: WeightFn, n: int, base_count: int | None = None) -> float:
    return ln_ball_volume(w, n, w.L, base_count)
