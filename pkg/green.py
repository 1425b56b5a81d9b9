"""
green.py — Module 3: Green Operator and Moments of τ_n
======================================================
Mean, variance and higher moments of the absorption time τ_n of the dual
radius, through the Green operator

    G_n[g](r) = ∫_r^L f^{n−1}(t)/I_n(t)² ∫_0^t I_n(s)²/f^{n−1}(s) g(s) ds dt

and the bounds derived from them (Chebyshev separation bounds, the
stationary radial CDF).

Mean and variance come from the integrals accumulated with the table.
Higher moments iterate G_n written as a first-order system: with
h = ∫_0^t (I²/f^{n−1})g / K_n the weighted running average of g,

    h′ = (g − h)/p        G_n[g](r) = ∫_r^L p·h        p = −u1′.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

import tables
from tables import IntegralTable, NumericalGateError
from weights import DomainError


# ── Configuration ─────────────────────────────────────────────────────────────
K_MAX_LIMIT = 20
DEFAULT_K_MAX = 4
GREEN_RTOL = 1e-10
GREEN_ATOL = 1e-14
RESIDUAL_BULK = (0.05, 0.95)   # generator residual checked on this fraction of [0, L]
RESIDUAL_UNIFORM_TOL = 0.01    # ... at nodes whose two neighbour gaps agree to 1%


# ── Moment report ─────────────────────────────────────────────────────────────

@dataclass
class MomentReport:
    family: str
    n: int
    mean_primary: float
    mean_identity: float
    var_primary: float
    var_expansion: float
    moments: list[float]
    grid_points: int
    residuals: dict[str, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return self.mean_primary

    @property
    def var(self) -> float:
        return self.var_primary

    @property
    def ratio(self) -> float:
        """Var(τ_n)/E[τ_n]²."""
        return self.var_primary / self.mean_primary**2

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "mean": self.mean_primary,
            "mean_identity": self.mean_identity,
            "mean_identity_resid": self.residuals.get("mean_identity"),
            "var": self.var_primary,
            "var_expansion": self.var_expansion,
            "var_resid": self.residuals.get("var_expansion"),
            "ratio": self.ratio,
            "moments": list(self.moments),
            "grid_points": self.grid_points,
            "residuals": dict(self.residuals),
        }


# ── J_n, mean, variance ───────────────────────────────────────────────────────

def J_n(table: IntegralTable, s):
    """(I_n(s)/f^{n−1}(s))·(I_n(L) − I_n(s))/I_n(L), evaluated on the left half."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or np.any(s >= table.L):
        raise DomainError(f"J_n is defined on the open interval (0, {table.L})")
    u = np.where(s <= 0.5 * table.L, s, table.L - s)
    lnQ = np.asarray(tables.ln_Q(table, u))
    lnR = lnQ + table.nu * table.weight.lnf(u) - table.lnI_total
    out = np.exp(lnQ + np.log1p(-np.exp(lnR)))
    return out if out.ndim else float(out)


def mean_tau(table: IntegralTable) -> float:
    """E[τ_n] = ∫_0^L J_n."""
    return table.integrals.mean_primary


def mean_tau_identity(table: IntegralTable) -> float:
    """E[τ_n] through the ball-volume form ∫_0^L f^{n−1}K_n/I_n² (= u1(0))."""
    return table.integrals.mean_identity


def var_tau(table: IntegralTable) -> tuple[float, float]:
    """(2∫J_n·(u1′)², 2∫f^{1−n}((I_L − I_n)/I_L)²K_n)."""
    return table.integrals.var_primary, table.integrals.var_expansion


# ── u1 and its derivative ─────────────────────────────────────────────────────

def _tail_sums(x: np.ndarray, F: np.ndarray, dF: np.ndarray) -> np.ndarray:
    """∫_{x_j}^{x_last} F for every node j, trapezoid plus endpoint-derivative correction."""
    h = np.diff(x)
    seg = 0.5 * h * (F[:-1] + F[1:]) + h * h / 12.0 * (dF[:-1] - dF[1:])
    return np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])


def _integrate_from_nodes(table: IntegralTable, F: np.ndarray, dF: np.ndarray,
                          total: float, head: float) -> np.ndarray:
    """Node values of ∫_r^L F, rescaled so the value at 0 equals `total`."""
    x_last = table.L - table.nodes[-1]
    raw = _tail_sums(table.nodes, F, dF) + 0.5 * F[-1] * x_last
    return raw * ((total - head) / raw[0])


@lru_cache(maxsize=64)
def _u1_nodes(table: IntegralTable) -> tuple[np.ndarray, np.ndarray]:
    p = np.exp(table.lnp)
    dp = p * table.dlnp
    _, _, _, head = tables._heads(table.weight, table.n, table.nodes[0])
    values = _integrate_from_nodes(table, p, dp, mean_tau_identity(table), head)
    return values, p


@lru_cache(maxsize=64)
def _u1_spline(table: IntegralTable) -> CubicHermiteSpline:
    values, p = _u1_nodes(table)
    return CubicHermiteSpline(table.nodes, values, -p, extrapolate=False)


def u1(table: IntegralTable, r):
    """u_{n,1}(r) = E_r[τ_n] = ∫_r^L f^{n−1}K_n/I_n²; u1(0) = E[τ_n], u1(L) = 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > table.L):
        raise DomainError(f"radius outside [0, {table.L}]")
    ra = np.atleast_1d(r)
    nodes = table.nodes
    out = np.asarray(_u1_spline(table)(ra), dtype=float)

    lo = ra < nodes[0]
    _, _, _, U = tables._heads(table.weight, table.n, ra[lo])
    out[lo] = mean_tau_identity(table) - U

    hi = ra > nodes[-1]
    x_last = table.L - nodes[-1]
    out[hi] = 0.5 * math.exp(table.lnp[-1]) * (table.L - ra[hi]) ** 2 / x_last
    return out if r.ndim else float(out[0])


def u1_prime(table: IntegralTable, r):
    """u1′(r) = −f^{n−1}K_n/I_n² ≤ 0; vanishes at both poles."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > table.L):
        raise DomainError(f"radius outside [0, {table.L}]")
    ra = np.atleast_1d(r)
    out = np.zeros(len(ra))
    inner = ra > 0
    if np.any(inner):
        out[inner] = -np.exp(tables.ln_p(table, ra[inner]))
    return out if r.ndim else float(out[0])


def generator_residual(table: IntegralTable) -> float:
    """Max of |u1″ + b_n·u1′ + 1|/(1 + |b_n·u1′|) over locally uniform bulk nodes.

    u1″ by 3-point differences of the node values of u1, u1′ and b_n exact.
    """
    x = table.nodes
    values, p = _u1_nodes(table)
    h_minus = x[1:-1] - x[:-2]
    h_plus = x[2:] - x[1:-1]
    lo, hi = RESIDUAL_BULK
    mask = ((x[1:-1] > lo * table.L) & (x[1:-1] < hi * table.L)
            & (np.abs(h_plus - h_minus) <= RESIDUAL_UNIFORM_TOL * h_minus))
    d2 = 2.0 * ((values[2:] - values[1:-1]) / h_plus - (values[1:-1] - values[:-2]) / h_minus) \
        / (h_plus + h_minus)
    b = 2.0 * np.exp(-table.lnQ[1:-1]) - table.nu * table.g[1:-1]
    bu = -b * p[1:-1]
    resid = np.abs(d2 + bu + 1.0) / (1.0 + np.abs(bu))
    return float(np.max(resid[mask])) if np.any(mask) else 0.0


# ── Higher moments ────────────────────────────────────────────────────────────

def _green_step(table: IntegralTable, g_vals: np.ndarray, g_der: np.ndarray):
    """One application of G_n to a node function (values and derivatives).

    Returns the node values and derivatives of G_n[g] and G_n[g](0).
    """
    L = table.L
    s_lo = tables.ODE_START * L
    s_hi = L - s_lo
    g = CubicHermiteSpline(table.nodes, g_vals, g_der)

    def rhs(t, y):
        p = math.exp(tables.ln_p(table, t))
        return np.array([(float(g(t)) - y[0]) / p, p * y[0]])

    def jac(t, y):
        p = math.exp(tables.ln_p(table, t))
        return np.array([[-1.0 / p, 0.0], [p, 0.0]])

    _, _, _, U_lo = tables._heads(table.weight, table.n, s_lo)
    g0 = float(g(s_lo))
    scale = mean_tau_identity(table) * max(abs(g0), 1.0)
    sol = solve_ivp(rhs, (s_lo, s_hi), [g0, g0 * U_lo], method="Radau", jac=jac,
                    rtol=GREEN_RTOL, atol=[GREEN_ATOL, GREEN_ATOL * scale], dense_output=True)
    if not sol.success:
        raise NumericalGateError(f"green.moment_ode: {sol.message}")

    h_end, A_end = sol.y[:, -1]
    p_end = math.exp(tables.ln_p(table, s_hi))
    total = A_end + 0.5 * p_end * h_end * s_lo

    x = table.nodes
    h = np.empty(len(x))
    inside = (x >= s_lo) & (x <= s_hi)
    h[inside] = sol.sol(x[inside])[0]
    h[x < s_lo] = g_vals[x < s_lo]
    h[x > s_hi] = h_end

    p = np.exp(table.lnp)
    F = p * h
    dF = p * table.dlnp * h + (g_vals - h)
    _, _, _, head = tables._heads(table.weight, table.n, x[0])
    values = _integrate_from_nodes(table, F, dF, total, g_vals[0] * head)
    return values, -F, total


def moment_k(table: IntegralTable, k_max: int = DEFAULT_K_MAX) -> np.ndarray:
    """E[τ_n^k] = k!·G_n^k[1](0) for k = 1..k_max.

    Iterates are renormalised to g(0) = 1 and the scale is carried as a
    log-magnitude, so high moments at large n do not underflow.
    """
    if not 1 <= k_max <= K_MAX_LIMIT:
        raise DomainError(f"k_max = {k_max} outside [1, {K_MAX_LIMIT}]")

    values, p = _u1_nodes(table)
    mean = mean_tau_identity(table)
    ln_scale = math.log(mean)
    g_vals, g_der = values / mean, -p / mean
    moments = [mean]

    for k in range(2, k_max + 1):
        g_vals, g_der, total = _green_step(table, g_vals, g_der)
        if not total > 0:
            raise NumericalGateError(f"green.moment_positive: G_n^{k}[1](0) = {total}")
        ln_scale += math.log(total)
        g_vals, g_der = g_vals / total, g_der / total
        moments.append(math.exp(math.lgamma(k + 1) + ln_scale))
    return np.array(moments)


def moment_report(table: IntegralTable, k_max: int = DEFAULT_K_MAX) -> MomentReport:
    mean_p, mean_i = mean_tau(table), mean_tau_identity(table)
    var_p, var_e = var_tau(table)
    moments = moment_k(table, k_max)
    residuals = {
        "mean_identity": abs(mean_p - mean_i) / mean_p,
        "var_expansion": abs(var_p - var_e) / var_p,
        "second_moment": abs(moments[1] - mean_p**2 - var_p) / moments[1] if k_max >= 2 else 0.0,
        "generator": generator_residual(table),
    }
    return MomentReport(table.family, table.n, mean_p, mean_i, var_p, var_e,
                        [float(v) for v in moments], len(table.nodes), residuals)


# ── Distribution bounds ───────────────────────────────────────────────────────

def stationary_radial_cdf(table: IntegralTable, r):
    """Uniform-measure mass of the ball of radius r: I_n(r)/I_n(L), clamped to [0, 1]."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > table.L):
        raise DomainError(f"radius outside [0, {table.L}]")
    ra = np.atleast_1d(r)
    half = 0.5 * table.L
    u = np.minimum(ra, table.L - ra)
    mass = np.zeros(len(ra))
    pos = u > 0
    if np.any(pos):
        mass[pos] = np.exp(tables.ln_I(table, u[pos]) - table.lnI_total)
    out = np.where(ra <= half, mass, 1.0 - mass)
    out = np.clip(out, 0.0, 1.0)
    return out if r.ndim else float(out[0])


def tv_bound(table: IntegralTable, t: float) -> float:
    """Chebyshev bound on the separation distance: min(1, Var/(t − E)²), t > E[τ_n]."""
    mean = mean_tau(table)
    if not t > mean:
        raise DomainError(f"t = {t} must exceed E[τ_n] = {mean} for the Chebyshev bound")
    return min(1.0, var_tau(table)[0] / (t - mean) ** 2)


def separation_lower_bound(table: IntegralTable, t: float) -> float:
    """Lower Chebyshev side: P[τ_n > t] ≥ 1 − Var/(E − t)² for t < E[τ_n]; 0 otherwise."""
    mean = mean_tau(table)
    if t >= mean:
        return 0.0
    return max(0.0, 1.0 - var_tau(table)[0] / (mean - t) ** 2)


def mixing_time_bound(table: IntegralTable, eps: float) -> float:
    """Smallest t with tv_bound(t) ≤ eps: E + √(Var/eps)."""
    if not 0 < eps <= 1:
        raise DomainError(f"eps = {eps} outside (0, 1]")
    return mean_tau(table) + math.sqrt(var_tau(table)[0] / eps)


def heat_kernel_floor(table: IntegralTable, t: float) -> float:
    """Lower bound on inf_y p_t(0, y)·Vol(M) implied by the separation bound."""
    return 1.0 - tv_bound(table, t)
