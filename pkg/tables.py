"""
tables.py — Module 2: Graded Grids and Log-Space Integral Tables
================================================================
Builds, per (family, n), the cumulative integrals

    I_n(r) = ∫_0^r f^{n−1}(s) ds        K_n(r) = ∫_0^r I_n(s)²/f^{n−1}(s) ds

on a graded grid, in log space, stable up to n ≈ 10⁶.

The default method ("ode") integrates the smooth log-ratios
    ln Q = ln(I_n/f^{n−1})        ln p = ln(f^{n−1}K_n/I_n²) = ln(−u1′)
with a stiff solver, and carries the mean and variance integrals as
extra solver states. The reference method ("trapezoid") accumulates
per-segment log-sum-exp trapezoids; it is kept for cross-checks.

Tables are cached on disk (text format, atomic writes) keyed by
family key, n, base_count, method and table version.
"""

import math
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from tqdm import tqdm

from weights import CutoffLabError, DomainError, WeightFn


# ── Configuration ─────────────────────────────────────────────────────────────
CACHE_DIR = Path(os.environ.get("CUTOFFLAB_CACHE_DIR", Path.home() / ".cache" / "cutofflab"))
TABLE_VERSION = "v1"
TABLE_HEADER = f"cutofflab-table {TABLE_VERSION}"

DEFAULT_BASE_COUNT = 4000
MIN_BASE_COUNT = 1000
POLE_MARGIN = 1e-12            # first node at POLE_MARGIN·L from each pole
GEOMETRIC_RATIO = 1.05
WINDOW_FACTOR = 40.0           # window half-width = WINDOW_FACTOR·n^{−1/(2+a)}
WINDOW_NODES = 2000            # per half, so ≥ 4000 across the window
WINDOW_CLIP = 0.9              # window never exceeds this fraction of L/2
MID_MARGIN = 1e-9              # a < 0: extra grading toward L/2 down to MID_MARGIN·L

ODE_START = 1e-6               # solver range is [ODE_START·L, L − ODE_START·L]
ODE_RTOL = 1e-12
ODE_ATOL_LOG = 1e-14
ODE_ATOL_QUAD = 1e-30

TOTAL_SYMMETRY_TOL = 1e-10


class NumericalGateError(CutoffLabError):
    """A numerical invariant gate failed."""


# ── Grid ──────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, eq=False)
class GradedGrid:
    nodes: np.ndarray
    window_width: float
    endpoint_margin: float
    counts: dict
    mid_index: int
    base_count: int

    def __len__(self) -> int:
        return len(self.nodes)


def window_width(w: WeightFn, n: int) -> float:
    """Unclipped Laplace window half-width WINDOW_FACTOR·n^{−1/(2+a)}."""
    return WINDOW_FACTOR * n ** (-1.0 / (2.0 + w.alpha))


def build_grid(w: WeightFn, n: int, base_count: int = DEFAULT_BASE_COUNT) -> GradedGrid:
    """Geometric grading at the poles, uniform bulk, dense window around L/2.

    The left half is built on [0, L/2] and mirrored, so node j and node
    N−1−j are reflections of each other.
    """
    if base_count < MIN_BASE_COUNT:
        raise DomainError(f"base_count = {base_count} must be at least {MIN_BASE_COUNT}")
    _check_n(n)

    L = w.L
    m = 0.5 * L
    s0 = POLE_MARGIN * L
    bulk_step = L / base_count
    ratio = GEOMETRIC_RATIO

    geo_count = math.ceil(math.log(bulk_step / (s0 * (ratio - 1.0))) / math.log(ratio))
    pole = s0 * ratio ** np.arange(geo_count)
    s_geo = s0 * ratio**geo_count

    width = window_width(w, n)
    half = min(width, WINDOW_CLIP * m, m - s_geo)
    w_start = m - half

    bulk_count = max(0, math.ceil((w_start - s_geo) / bulk_step))
    bulk = np.linspace(s_geo, w_start, bulk_count, endpoint=False) if bulk_count else np.array([s_geo])
    window = np.linspace(w_start, m, WINDOW_NODES + 1)

    mid = np.empty(0)
    if w.alpha < 0:
        cell = half / WINDOW_NODES
        d0 = MID_MARGIN * L
        if d0 < cell:
            mid_count = math.ceil(math.log(cell / d0) / math.log(ratio))
            d = d0 * ratio ** np.arange(mid_count)
            mid = m - d[d < cell]

    left = np.unique(np.concatenate([pole, bulk, window, mid]))
    nodes = np.concatenate([left, L - left[-2::-1]])

    counts = {"pole": len(pole), "bulk": len(bulk), "window": len(window), "mid": len(mid)}
    return GradedGrid(nodes, width, s0, counts, len(left) - 1, base_count)


# ── Tables ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class TableIntegrals:
    """Moment integrals accumulated at table-build time."""
    mean_primary: float        # ∫_0^L J_n
    mean_identity: float       # ∫_0^L −u1′ = u1(0)
    var_primary: float         # 2∫ J_n·(u1′)²
    var_expansion: float       # 2∫ f^{1−n}((I_L − I)/I_L)²·K_n


@dataclass(frozen=True, eq=False)
class IntegralTable:
    family: str
    n: int
    grid: GradedGrid
    lnf: np.ndarray
    lnI: np.ndarray
    lnK: np.ndarray
    lnI_total: float
    integrals: TableIntegrals
    method: str = "ode"
    weight: WeightFn = field(default=None, repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def L(self) -> float:
        return self.weight.L

    @property
    def nu(self) -> int:
        return self.n - 1

    @cached_property
    def g(self) -> np.ndarray:
        return self.weight.g(self.nodes)

    @cached_property
    def lnQ(self) -> np.ndarray:
        return self.lnI - self.nu * self.lnf

    @cached_property
    def lnp(self) -> np.ndarray:
        return self.lnK - 2.0 * self.lnI + self.nu * self.lnf

    @cached_property
    def dlnQ(self) -> np.ndarray:
        return np.exp(-self.lnQ) - self.nu * self.g

    @cached_property
    def dlnp(self) -> np.ndarray:
        return np.exp(-self.lnp) + self.nu * self.g - 2.0 * np.exp(-self.lnQ)

    @cached_property
    def pchip_I(self) -> PchipInterpolator:
        return PchipInterpolator(self.nodes, self.lnI, extrapolate=False)

    @cached_property
    def pchip_K(self) -> PchipInterpolator:
        return PchipInterpolator(self.nodes, self.lnK, extrapolate=False)

    @cached_property
    def spline_Q(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.nodes, self.lnQ, self.dlnQ, extrapolate=False)

    @cached_property
    def spline_p(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.nodes, self.lnp, self.dlnp, extrapolate=False)


def _check_n(n: int) -> None:
    if n < 2:
        raise DomainError(f"dimension n = {n} must be at least 2")


def _heads(w: WeightFn, n: int, s):
    """Two-term expansions of Q, p and their integrals at distance s from a pole."""
    nu = n - 1
    beta = w.beta
    q2 = -nu * beta / (n * (n + 1))
    r2 = -nu * nu * beta / ((n + 1) * (n + 2) * (n + 3))
    Q = s / n + q2 * s * s
    p = s / (n + 2) + r2 * s * s
    S = s * s / (2 * n) + q2 * s**3 / 3
    U = s * s / (2 * (n + 2)) + r2 * s**3 / 3
    return Q, p, S, U


class _RadialODE:
    """Right-hand sides of the three solver passes.

    State variables: z1 = ln Q, z2 = ln p, plus quadrature states.
        z1′ = 1/Q − (n−1)g        z2′ = 1/p + (n−1)g − 2/Q
    """

    def __init__(self, w: WeightFn, n: int):
        self.w = w
        self.n = n
        self.nu = n - 1
        self.lnI_L = None
        self.left = None       # dense output of pass 1

    def _logs(self, s, y):
        ng = self.nu * float(self.w.g(s))
        iq = math.exp(-y[0])
        ip = math.exp(-y[1])
        return ng, iq, ip

    # pass 1: [z1, z2, ∫Q, ∫p] on [s_lo, L/2]
    def rhs_1(self, s, y):
        ng, iq, ip = self._logs(s, y)
        return np.array([iq - ng, ip + ng - 2.0 * iq, math.exp(y[0]), math.exp(y[1])])

    def jac_1(self, s, y):
        _, iq, ip = self._logs(s, y)
        return np.array([
            [-iq, 0.0, 0.0, 0.0],
            [2.0 * iq, -ip, 0.0, 0.0],
            [math.exp(y[0]), 0.0, 0.0, 0.0],
            [0.0, math.exp(y[1]), 0.0, 0.0],
        ])

    # pass 2: [z1, z2, ∫Jp², ∫J²p] on [s_lo, L/2]
    def _left_J(self, s, z1):
        lnR = z1 + self.nu * float(self.w.lnf(s)) - self.lnI_L
        R = math.exp(lnR)
        J = math.exp(z1 + math.log1p(-R))
        return J, math.exp(z1 + lnR)

    def rhs_2(self, s, y):
        ng, iq, ip = self._logs(s, y)
        J, _ = self._left_J(s, y[0])
        p = math.exp(y[1])
        return np.array([iq - ng, ip + ng - 2.0 * iq, J * p * p, J * J * p])

    def jac_2(self, s, y):
        _, iq, ip = self._logs(s, y)
        J, QR = self._left_J(s, y[0])
        p = math.exp(y[1])
        dJ = J - QR
        return np.array([
            [-iq, 0.0, 0.0, 0.0],
            [2.0 * iq, -ip, 0.0, 0.0],
            [dJ * p * p, 2.0 * J * p * p, 0.0, 0.0],
            [2.0 * J * dJ * p, J * J * p, 0.0, 0.0],
        ])

    # pass 3: [z1, z2, ∫p, ∫Jp², ∫J²p] on [L/2, L − s_lo]; J by symmetry from pass 1
    def _right_J(self, s):
        u = self.w.L - s
        z1u = float(self.left(u)[0])
        R = math.exp(z1u + self.nu * float(self.w.lnf(u)) - self.lnI_L)
        return math.exp(z1u + math.log1p(-R))

    def rhs_3(self, s, y):
        ng, iq, ip = self._logs(s, y)
        J = self._right_J(s)
        p = math.exp(y[1])
        return np.array([iq - ng, ip + ng - 2.0 * iq, p, J * p * p, J * J * p])

    def jac_3(self, s, y):
        _, iq, ip = self._logs(s, y)
        J = self._right_J(s)
        p = math.exp(y[1])
        return np.array([
            [-iq, 0.0, 0.0, 0.0, 0.0],
            [2.0 * iq, -ip, 0.0, 0.0, 0.0],
            [0.0, p, 0.0, 0.0, 0.0],
            [0.0, 2.0 * J * p * p, 0.0, 0.0, 0.0],
            [0.0, J * J * p, 0.0, 0.0, 0.0],
        ])


def _solve(fun, jac, span, y0, dense: bool, label: str):
    atol = np.full(len(y0), ODE_ATOL_QUAD)
    atol[:2] = ODE_ATOL_LOG
    sol = solve_ivp(fun, span, y0, method="Radau", jac=jac, rtol=ODE_RTOL, atol=atol,
                    dense_output=dense)
    if not sol.success:
        raise NumericalGateError(f"tables.ode_{label}: {sol.message}")
    return sol


def _ode_arrays(w: WeightFn, n: int, grid: GradedGrid, lnf: np.ndarray):
    nu = n - 1
    L = w.L
    m = 0.5 * L
    s_lo = ODE_START * L
    nodes = grid.nodes
    mid = grid.mid_index
    ode = _RadialODE(w, n)

    Q0, p0, S0, U0 = _heads(w, n, s_lo)
    sol1 = _solve(ode.rhs_1, ode.jac_1, (s_lo, m), [math.log(Q0), math.log(p0), S0, U0], True, "left")
    z1m, z2m, Sm, Um = sol1.y[:, -1]
    lnI_m = z1m + nu * float(w.lnf(m))
    lnI_L = math.log(2.0) + lnI_m
    ode.lnI_L = lnI_L
    ode.left = sol1.sol

    sol2 = _solve(ode.rhs_2, ode.jac_2, (s_lo, m), [math.log(Q0), math.log(p0), 0.0, 0.0], False, "variance")
    V1L, V2L = sol2.y[2:, -1]

    sol3 = _solve(ode.rhs_3, ode.jac_3, (m, L - s_lo), [z1m, z2m, 0.0, 0.0, 0.0], True, "right")
    _, z2e, U3, V1R, V2R = sol3.y[:, -1]
    p_end = math.exp(z2e)

    integrals = TableIntegrals(
        mean_primary=2.0 * Sm - math.exp(z2m + z1m),
        mean_identity=Um + U3 + (p_end * s_lo + 0.5 * s_lo * s_lo) / n,
        var_primary=2.0 * (V1L + V1R),
        var_expansion=2.0 * (V2L + V2R),
    )

    # left half: solver values, analytic heads below s_lo
    left = nodes[: mid + 1]
    z1 = np.empty(len(left))
    z2 = np.empty(len(left))
    head = left < s_lo
    Qh, ph, _, _ = _heads(w, n, left[head])
    z1[head], z2[head] = np.log(Qh), np.log(ph)
    z = sol1.sol(left[~head])
    z1[~head], z2[~head] = z[0], z[1]
    z1[-1], z2[-1] = z1m, z2m

    lnI_left = z1 + nu * lnf[: mid + 1]
    lnp_left = z2

    # right half: I by symmetry, p from pass 3, K integrated directly near L
    right = nodes[mid + 1:]
    mirror = lnI_left[-2::-1]
    lnI_right = lnI_L + np.log1p(-np.exp(mirror - lnI_L))
    lnp_right = np.empty(len(right))
    solved = right <= L - s_lo
    lnp_right[solved] = sol3.sol(right[solved])[1]
    lnp_right[~solved] = 0.0

    lnI = np.concatenate([lnI_left, lnI_right])
    lnp = np.concatenate([lnp_left, lnp_right])
    lnK = lnp + 2.0 * lnI - nu * lnf

    tail = mid + 1 + np.flatnonzero(~solved)
    if len(tail):
        lnI_end = lnI_L + math.log1p(-math.exp(math.log(Q0) + nu * float(w.lnf(s_lo)) - lnI_L))
        lnK_end = z2e + 2.0 * lnI_end - nu * float(w.lnf(L - s_lo))
        lnK[tail] = np.logaddexp(lnK_end, 2.0 * lnI_L + _ln_pole_tail(n, L - nodes[tail], s_lo))
    return lnI, lnK, lnI_L, integrals


def _ln_pole_tail(n: int, d: np.ndarray, s_lo: float) -> np.ndarray:
    """ln ∫_d^{s_lo} x^{1−n} dx for 0 < d < s_lo (f ≈ x within s_lo of a pole)."""
    if n == 2:
        return np.log(np.log(s_lo / d))
    k = n - 2
    return -k * np.log(d) - math.log(k) + np.log1p(-((d / s_lo) ** k))


def _trapezoid_arrays(w: WeightFn, n: int, grid: GradedGrid, lnf: np.ndarray):
    nu = n - 1
    nodes = grid.nodes
    h = np.diff(nodes)

    y = nu * lnf
    seg = np.log(0.5 * h) + np.logaddexp(y[:-1], y[1:])
    head = n * math.log(nodes[0]) - math.log(n)
    lnI = np.logaddexp.accumulate(np.concatenate([[head], seg]))
    tail = n * math.log(w.L - nodes[-1]) - math.log(n)
    lnI_total = float(np.logaddexp(lnI[-1], tail))

    yk = 2.0 * lnI - nu * lnf
    seg_k = np.log(0.5 * h) + np.logaddexp(yk[:-1], yk[1:])
    head_k = (n + 2) * math.log(nodes[0]) - math.log(n + 2) - 2.0 * math.log(n)
    lnK = np.logaddexp.accumulate(np.concatenate([[head_k], seg_k]))

    lnQ = lnI - nu * lnf
    lnp = lnK - 2.0 * lnI + nu * lnf
    lnC = lnI[::-1] - lnI_total          # mirror grid: I_n(L) − I_n(s) = I_n(L − s)
    J = np.exp(lnQ + lnC)
    p = np.exp(lnp)
    integrals = TableIntegrals(
        mean_primary=float(trapezoid(J, nodes)),
        mean_identity=float(trapezoid(p, nodes)) + 0.5 * nodes[0] ** 2 / (n + 2),
        var_primary=2.0 * float(trapezoid(J * p * p, nodes)),
        var_expansion=2.0 * float(trapezoid(J * J * p, nodes)),
    )
    return lnI, lnK, lnI_total, integrals


def table_violations(table: IntegralTable) -> list[str]:
    """Names of the table invariants that fail; empty for a healthy table."""
    failed = []
    mid = table.grid.mid_index
    if not (np.all(np.isfinite(table.lnI)) and np.all(np.isfinite(table.lnK))):
        failed.append("tables.finite")
        return failed
    dI = np.diff(table.lnI)
    # right-half increments of ln I fall below one ulp of ln I_n(L) near the pole
    if not (np.all(dI[:mid] > 0) and np.all(dI >= 0)):
        failed.append("tables.lnI_monotone")
    if not np.all(np.diff(table.lnK) > 0):
        failed.append("tables.lnK_monotone")
    if abs(1.0 - 2.0 * math.exp(table.lnI[mid] - table.lnI_total)) > TOTAL_SYMMETRY_TOL:
        failed.append("tables.total_symmetry")
    ints = table.integrals
    if not min(ints.mean_primary, ints.mean_identity, ints.var_primary, ints.var_expansion) > 0:
        failed.append("tables.integrals_positive")
    return failed


def build_table(w: WeightFn, n: int, grid: GradedGrid | None = None, method: str = "ode",
                verbose: bool = False) -> IntegralTable:
    """Build the log-space tables of I_n and K_n for weight w in dimension n."""
    _check_n(n)
    if grid is None:
        grid = build_grid(w, n)
    t0 = time.time()

    lnf = w.lnf(grid.nodes)
    if not np.all(np.isfinite(lnf)):
        raise NumericalGateError("tables.lnf_finite: ln f is -inf at an interior node")

    if method == "ode":
        lnI, lnK, lnI_total, integrals = _ode_arrays(w, n, grid, lnf)
    elif method == "trapezoid":
        lnI, lnK, lnI_total, integrals = _trapezoid_arrays(w, n, grid, lnf)
    else:
        raise DomainError(f"unknown table method '{method}' (ode | trapezoid)")

    table = IntegralTable(w.key(), n, grid, lnf, lnI, lnK, float(lnI_total), integrals, method, w)
    failed = table_violations(table)
    if failed:
        raise NumericalGateError(f"{', '.join(failed)} (family {w.key()}, n={n})")

    if verbose:
        print(f"   🔢 {w.key()} n={n}: {len(grid)} nodes, "
              f"ln I_n(L) = {table.lnI_total:.12g} ({time.time() - t0:.1f}s)")
    return table


# ── Interpolation ─────────────────────────────────────────────────────────────

def _domain(table: IntegralTable, r) -> tuple[bool, np.ndarray]:
    """(is_scalar, 1-d radii), rejecting r ≤ 0 and r > L."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r > table.L):
        raise DomainError(f"radius outside (0, {table.L}]")
    return r.ndim == 0, np.atleast_1d(r)


def _output(scalar: bool, out: np.ndarray):
    return float(out[0]) if scalar else out


def _zones(table: IntegralTable, r: np.ndarray):
    nodes = table.nodes
    return r < nodes[0], r > nodes[-1]


def ln_I(table: IntegralTable, r):
    """Monotone (PCHIP) interpolation of ln I_n; exact at nodes; ln I_n(L) = lnI_total."""
    scalar, r = _domain(table, r)
    lo, hi = _zones(table, r)
    out = np.asarray(table.pchip_I(r), dtype=float)
    n = table.n
    with np.errstate(divide="ignore"):
        out[lo] = n * np.log(r[lo]) - math.log(n)
        tail = n * np.log(table.L - r[hi]) - math.log(n)
    out[hi] = table.lnI_total + np.log1p(-np.exp(tail - table.lnI_total))
    return _output(scalar, out)


def ln_K(table: IntegralTable, r):
    """Monotone (PCHIP) interpolation of ln K_n; +inf at r = L."""
    scalar, r = _domain(table, r)
    lo, hi = _zones(table, r)
    out = np.asarray(table.pchip_K(r), dtype=float)
    n = table.n
    out[lo] = (n + 2) * np.log(r[lo]) - math.log(n + 2) - 2.0 * math.log(n)
    if np.any(hi):
        rh = r[hi]
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = ln_p(table, rh) + 2.0 * ln_I(table, rh) - table.nu * table.weight.lnf(rh)
        out[hi] = np.where(rh >= table.L, np.inf, vals)
    return _output(scalar, out)


def ln_Q(table: IntegralTable, r):
    """ln(I_n/f^{n−1}) via a Hermite spline with exact node derivatives."""
    scalar, r = _domain(table, r)
    lo, hi = _zones(table, r)
    out = np.asarray(table.spline_Q(r), dtype=float)
    Qh, _, _, _ = _heads(table.weight, table.n, r[lo])
    out[lo] = np.log(Qh)
    if np.any(hi):
        rh = r[hi]
        with np.errstate(divide="ignore"):
            out[hi] = ln_I(table, rh) - table.nu * table.weight.lnf(rh)
    return _output(scalar, out)


def ln_p(table: IntegralTable, r):
    """ln(−u1′) = ln(f^{n−1}K_n/I_n²); −inf at r = L."""
    scalar, r = _domain(table, r)
    lo, hi = _zones(table, r)
    out = np.asarray(table.spline_p(r), dtype=float)
    _, ph, _, _ = _heads(table.weight, table.n, r[lo])
    out[lo] = np.log(ph)
    x_last = table.L - table.nodes[-1]
    with np.errstate(divide="ignore"):
        out[hi] = table.lnp[-1] + np.log((table.L - r[hi]) / x_last)
    return _output(scalar, out)


def ln_I_precise(table: IntegralTable, r):
    """ln I_n through ln Q on the left half and the complement on the right.

    Smoother than the PCHIP interpolant between nodes; used where ratios
    of I_n enter directly (J_n, the stationary CDF, the drift).
    """
    scalar, r = _domain(table, r)
    u = np.minimum(r, table.L - r)
    lnI_u = np.full(len(r), -np.inf)
    pos = u > 0
    if np.any(pos):
        lnI_u[pos] = ln_Q(table, u[pos]) + table.nu * table.weight.lnf(u[pos])
    right = r > 0.5 * table.L
    out = lnI_u.copy()
    out[right] = table.lnI_total + np.log1p(-np.exp(lnI_u[right] - table.lnI_total))
    return _output(scalar, out)


# ── Cache ─────────────────────────────────────────────────────────────────────

_memory: dict[tuple, IntegralTable] = {}
_lock = threading.Lock()
_stats = {"hits": 0, "misses": 0, "writes": 0}


def cache_stats() -> dict:
    with _lock:
        return dict(_stats)


def reset_cache_stats() -> None:
    with _lock:
        for k in _stats:
            _stats[k] = 0
        _memory.clear()


def cache_path(key: str, n: int, base_count: int, method: str = "ode") -> Path:
    safe = key.replace(":", "_").replace("=", "")
    return Path(CACHE_DIR) / f"{safe}_n{n}_b{base_count}_{method}_{TABLE_VERSION}.tbl"


def _fmt(x: float) -> str:
    return repr(float(x))


def save_table(table: IntegralTable, path: Path) -> Path:
    """Write a table atomically (temp file in the target directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ints = table.integrals
    lines = [
        TABLE_HEADER,
        f"family {table.family}",
        f"n {table.n}",
        f"base_count {table.grid.base_count}",
        f"nodes {len(table.nodes)}",
        f"method {table.method}",
        f"mean_primary {_fmt(ints.mean_primary)}",
        f"mean_identity {_fmt(ints.mean_identity)}",
        f"var_primary {_fmt(ints.var_primary)}",
        f"var_expansion {_fmt(ints.var_expansion)}",
    ]
    for row in zip(table.nodes, table.lnf, table.lnI, table.lnK):
        lines.append(" ".join(_fmt(v) for v in row))
    lines.append(f"total {_fmt(table.lnI_total)}")

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".tbl")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        Path(tmp).replace(path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load_table(path: Path, w: WeightFn, n: int, grid: GradedGrid) -> IntegralTable | None:
    """Read a cached table; None when the file is missing, stale or malformed."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        lines = path.read_text(encoding="ascii").splitlines()
        if lines[0] != TABLE_HEADER:
            return None
        meta = dict(line.split(" ", 1) for line in lines[1:10])
        if (meta["family"] != w.key() or int(meta["n"]) != n
                or int(meta["base_count"]) != grid.base_count):
            return None
        count = int(meta["nodes"])
        rows = np.array([[float(v) for v in line.split()] for line in lines[10:10 + count]])
        tag, total = lines[10 + count].split()
        if tag != "total" or rows.shape != (count, 4) or not np.array_equal(rows[:, 0], grid.nodes):
            return None
    except (IndexError, KeyError, ValueError):
        return None

    integrals = TableIntegrals(*(float(meta[k]) for k in
                                 ("mean_primary", "mean_identity", "var_primary", "var_expansion")))
    return IntegralTable(w.key(), int(meta["n"]), grid, rows[:, 1].copy(), rows[:, 2].copy(),
                         rows[:, 3].copy(), float(total), integrals, meta["method"], w)


def load_or_build(w: WeightFn, n: int, base_count: int | None = None, use_cache: bool = True,
                  method: str = "ode", verbose: bool = False) -> IntegralTable:
    """Cache front-end: memory, then disk, then build (and persist)."""
    base_count = base_count or DEFAULT_BASE_COUNT
    mem_key = (w.key(), n, base_count, method)
    if use_cache:
        with _lock:
            table = _memory.get(mem_key)
            if table is not None:
                _stats["hits"] += 1
                return table

    grid = build_grid(w, n, base_count)
    path = cache_path(w.key(), n, base_count, method)
    table = load_table(path, w, n, grid) if use_cache else None

    if table is not None:
        with _lock:
            _stats["hits"] += 1
        if verbose:
            print(f"   📦 cache hit: {path.name}")
    else:
        with _lock:
            _stats["misses"] += 1
        built = build_table(w, n, grid, method=method, verbose=verbose)
        if use_cache:
            save_table(built, path)
            with _lock:
                _stats["writes"] += 1
        table = built

    if use_cache:
        with _lock:
            _memory[mem_key] = table
    return table


def build_tables(w: WeightFn, n_list: list[int], base_count: int | None = None,
                 use_cache: bool = True, threads: int = 1,
                 verbose: bool = False) -> dict[int, IntegralTable]:
    """Tables for several n in parallel (one independent build per n)."""
    results = {}
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        futures = {n: executor.submit(load_or_build, w, n, base_count, use_cache, "ode", False)
                   for n in n_list}
        for n in tqdm(n_list, desc=f"tables {w.key()}", disable=not verbose):
            results[n] = futures[n].result()
    return results


def cache_list() -> list[Path]:
    return sorted(Path(CACHE_DIR).glob(f"*_{TABLE_VERSION}.tbl"))


def cache_clear() -> int:
    files = cache_list()
    for path in files:
        path.unlink(missing_ok=True)
    with _lock:
        _memory.clear()
    return len(files)
