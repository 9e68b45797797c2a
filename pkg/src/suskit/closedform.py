"""Analytic reference values for the explicit model families.

Each function states its validity region.  A query outside it either
returns ``math.inf`` (the quantity is known to be infinite there) or raises
:class:`ClosedFormUnavailable` (no formula exists).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.optimize

from .typespace import TypeSpace, integrate


SUBCRITICAL = "subcritical"
SUPERCRITICAL = "supercritical"
BOTH = "both"


class ClosedFormUnavailable(ValueError):
    """No closed form exists for this query."""


def _positive(lam):
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam!r}")
    return float(lam)


# Erdos-Renyi ---------------------------------------------------------------

def er_chi(lam: float) -> float:
    lam = _positive(lam)
    return 1.0 / (1.0 - lam) if lam < 1 else math.inf


def er_rho(lam: float, tol: float = 1e-16, max_iter: int = 10_000_000) -> float:
    """Largest root of ``rho = 1 - exp(-lam rho)``; 0 for ``lam <= 1``."""
    lam = _positive(lam)
    if lam <= 1:
        return 0.0
    rho = 1.0
    for _ in range(max_iter):
        new = -math.expm1(-lam * rho)
        if abs(new - rho) < tol:
            rho = new
            break
        rho = new
    # the iteration contracts slowly near lam = 1; finish with Newton
    for _ in range(3):
        g = rho + math.expm1(-lam * rho)
        dg = 1.0 - lam * math.exp(-lam * rho)
        if dg <= 0:
            break
        rho -= g / dg
    return rho


def er_chi_hat(lam: float) -> float:
    lam = _positive(lam)
    if lam < 1:
        return er_chi(lam)
    if lam == 1:
        return math.inf
    q = 1.0 - er_rho(lam)
    return q / (1.0 - lam * q)


def er_borel_rhok(lam: float, k):
    """Borel law ``k^(k-1)/k! lam^(k-1) e^(-k lam)``, evaluated in log space."""
    lam = _positive(lam)
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k != np.floor(k)):
        raise ValueError("k must be a positive integer")
    kf = k.astype(float)
    from scipy.special import gammaln
    logv = (kf - 1) * np.log(kf) - gammaln(kf + 1) + (kf - 1) * math.log(lam) - kf * lam
    out = np.exp(logv)
    return float(out) if out.ndim == 0 else out


# rank 1 --------------------------------------------------------------------

def rank1_chi_sub(moments: dict, lam: float) -> float:
    """``1 + lam m1^2 / (1 - lam m2)`` with ``m_p`` the integral of ``psi**p``."""
    lam = _positive(lam)
    m1, m2 = moments[1], moments[2]
    if lam * m2 >= 1:
        return math.inf
    return 1.0 + lam * m1 * m1 / (1.0 - lam * m2)


def rank1_prefactor(moments: dict) -> float:
    """Critical amplitude ``a = (int psi)^2 / int psi^2``."""
    return moments[1] ** 2 / moments[2]


def rank1_lambda_c(psi: Callable, ts: TypeSpace) -> float:
    return 1.0 / integrate(ts, lambda x: psi(x) ** 2)


def rank1_xi_to_lambda(psi: Callable, ts: TypeSpace, xi: float) -> float:
    """``lam = xi / int (1 - e^(-xi psi)) psi``."""
    if not xi > 0:
        raise ValueError(f"xi must be positive, got {xi!r}")
    return xi / integrate(ts, lambda x: -np.expm1(-xi * psi(x)) * psi(x))


def rank1_lambda_to_xi(psi: Callable, ts: TypeSpace, lam: float, tol: float = 1e-14) -> float:
    """Inverse of :func:`rank1_xi_to_lambda`, which is strictly increasing in xi."""
    lam_c = rank1_lambda_c(psi, ts)
    if not lam > lam_c:
        raise ValueError(f"lambda={lam!r} is not above the threshold {lam_c:.6g}")
    hi = 1.0
    while rank1_xi_to_lambda(psi, ts, hi) < lam:
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("could not bracket xi")
    lo = hi / 2.0
    while rank1_xi_to_lambda(psi, ts, lo) > lam and lo > 1e-300:
        lo /= 2.0
    return scipy.optimize.brentq(lambda s: rank1_xi_to_lambda(psi, ts, s) - lam, lo, hi,
                                 xtol=tol * lo, rtol=4 * np.finfo(float).eps)


def _one_minus_e_one_plus(u):
    # 1 - e^-u (1 + u), with a series for small u to avoid cancellation
    u = np.asarray(u, dtype=float)
    small = u < 1e-3
    out = np.empty_like(u)
    us = u[small]
    out[small] = us ** 2 / 2 - us ** 3 / 3 + us ** 4 / 8 - us ** 5 / 30
    ub = u[~small]
    out[~small] = -np.expm1(-ub) - ub * np.exp(-ub)
    return out


def rank1_chi_hat_xi(psi: Callable, ts: TypeSpace, xi: float) -> float:
    """chi-hat parametrized by xi (the ``rho = 1 - e^(-xi psi)`` scale)."""
    e = lambda x: np.exp(-xi * psi(x))  # noqa: E731
    a = integrate(ts, e)
    b = integrate(ts, lambda x: e(x) * psi(x))
    d = integrate(ts, lambda x: _one_minus_e_one_plus(xi * psi(x)) * psi(x))
    if not d > 0:
        raise ClosedFormUnavailable(f"denominator underflow at xi={xi:g} (too close to criticality)")
    return (a + xi * b * b / d) / ts.total_mass


def rank1_chi_hat(psi: Callable, ts: TypeSpace, lam: float, tol: float = 1e-14) -> float:
    """Supercritical chi-hat of ``lam psi(x) psi(y)`` by quadrature on ``ts``."""
    return rank1_chi_hat_xi(psi, ts, rank1_lambda_to_xi(psi, ts, lam, tol))


def extrapolate_to_zero(eps, values, degree: int = 2) -> float:
    """Intercept of a least-squares polynomial fit in ``eps``."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    if eps.size <= degree:
        raise ValueError("need more points than the fit degree")
    return float(np.polynomial.polynomial.polyfit(eps, values, degree)[0])


def rank1_supercritical_prefactor(psi: Callable, ts: TypeSpace, xi_grid=None,
                                  degree: int = 2) -> float:
    """Fitted limit of ``(lam/lam_c - 1) chi_hat(lam)`` as ``lam`` decreases to ``lam_c``."""
    if xi_grid is None:
        xi_grid = np.geomspace(0.01, 0.1, 12)
    lam_c = rank1_lambda_c(psi, ts)
    eps, vals = [], []
    for xi in xi_grid:
        lam = rank1_xi_to_lambda(psi, ts, xi)
        e = lam / lam_c - 1.0
        eps.append(e)
        vals.append(e * rank1_chi_hat_xi(psi, ts, xi))
    return extrapolate_to_zero(eps, vals, degree)


# CHKNS ---------------------------------------------------------------------

def chkns_chi(lam: float) -> float:
    lam = _positive(lam)
    if lam > 0.25:
        return math.inf
    return (1.0 - math.sqrt(max(0.0, 1.0 - 4.0 * lam))) / (2.0 * lam)


def chkns_chi_hat(lam: float) -> float:
    lam = _positive(lam)
    return chkns_chi(lam) if lam <= 0.25 else 1.0 / lam


def chkns_rhok_recursion(lam: float, K: int) -> np.ndarray:
    """``rho_1..rho_K`` from ``rho_k = k lam / (2 (1 + k lam)) sum_j rho_(k-j) rho_j``."""
    lam = _positive(lam)
    if int(K) != K or K < 1:
        raise ValueError("K must be a positive integer")
    K = int(K)
    rho = np.zeros(K)
    rho[0] = 1.0 / (1.0 + lam)
    for k in range(2, K + 1):
        s = np.dot(rho[:k - 1], rho[k - 2::-1])
        rho[k - 1] = k * lam / (2.0 * (1.0 + k * lam)) * s
    return rho


def chkns_rho_closed(lam: float, k: int) -> float:
    """Explicit ``rho_k`` for ``k <= 4``."""
    lam = _positive(lam)
    l = lam
    if k == 1:
        return 1.0 / (1 + l)
    if k == 2:
        return l / ((1 + l) ** 2 * (1 + 2 * l))
    if k == 3:
        return 3 * l ** 2 / ((1 + l) ** 3 * (1 + 2 * l) * (1 + 3 * l))
    if k == 4:
        return 2 * l ** 3 * (7 + 15 * l) / ((1 + l) ** 4 * (1 + 2 * l) ** 2 * (1 + 3 * l) * (1 + 4 * l))
    raise ClosedFormUnavailable(f"no explicit formula for k={k}")


def _rk4(f, y, t0, t1, h):
    n = max(1, int(round((t1 - t0) / h)))
    ts = np.linspace(t0, t1, n + 1)
    for i in range(n):
        t = ts[i]
        dt = ts[i + 1] - t
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(f"integration blew up at t={ts[i + 1]:.6g}")
    return y


def chkns_rho_via_ode(lam: float, step: float = 1e-4, z0: float = 1e-4) -> float:
    """``1 - G(1)`` where ``G' = (z - G) / (lam z (1 - G))`` is the size pgf."""
    lam = _positive(lam)
    if lam <= 0.25:
        return 0.0
    r1, r2 = chkns_rho_closed(lam, 1), chkns_rho_closed(lam, 2)
    g0 = r1 * z0 + r2 * z0 * z0

    def rhs(z, g):
        if g >= 1.0:
            raise FloatingPointError(f"G reached 1 before z=1 (z={z:.6g})")
        return (z - g) / (lam * z * (1.0 - g))

    return 1.0 - float(_rk4(rhs, g0, z0, 1.0, step))


def richardson_gap(fn: Callable, *args, step: float = 1e-4) -> float:
    """``|fn(..., step) - fn(..., 2 step)|`` as an error estimate for fixed-step RK4."""
    return abs(fn(*args, step=step) - fn(*args, step=2 * step))


def chkns_finite_moment(lam: float, order: int) -> float:
    """``E(|X|^m ; |X| < inf)`` for m = 1, 2, 3 in the supercritical range."""
    lam = _positive(lam)
    if lam <= 0.25:
        raise ClosedFormUnavailable("moment formulas are stated for lambda > 1/4")
    rho = chkns_rho_via_ode(lam)
    if order == 1:
        return 1.0 / lam
    if order == 2:
        return 1.0 / (lam * rho)
    if order == 3:
        return 2.0 / (lam * rho) ** 2 + 1.0 / (lam * rho)
    raise ClosedFormUnavailable(f"no general formula for moment order {order}")


def _alpha_plus(lam):
    return 0.5 + math.sqrt(0.25 - lam)


def chkns_chi_solution_pointwise(lam: float) -> Callable:
    """``x -> x^(alpha+ - 1)`` with ``alpha+ = 1/2 + sqrt(1/4 - lam)``."""
    lam = _positive(lam)
    if lam > 0.25:
        raise ClosedFormUnavailable("supercritical: the integrable solution oscillates")
    g = _alpha_plus(lam) - 1.0
    return lambda x: np.asarray(x, dtype=float) ** g


# Dubins --------------------------------------------------------------------

def dubins_chi(lam: float) -> float:
    lam = _positive(lam)
    if lam > 0.25:
        raise ClosedFormUnavailable("no closed form above lambda_c = 1/4")
    return (1.0 - 2.0 * lam - math.sqrt(max(0.0, 1.0 - 4.0 * lam))) / (2.0 * lam * lam)


def dubins_rhok(lam: float, k: int) -> float:
    lam = _positive(lam)
    l = lam
    if k == 1:
        return math.exp(-l) / (1 + l)
    if k == 2:
        return 2 * l * math.exp(-2 * l) / ((1 + l) * (1 + 2 * l))
    if k == 3:
        return (15 * l ** 2 + 18 * l ** 3) * math.exp(-3 * l) / (
            2 * (1 + l) ** 2 * (1 + 2 * l) * (1 + 3 * l))
    raise ClosedFormUnavailable(f"no explicit formula for k={k}")


def dubins_chi_solution_pointwise(lam: float) -> Callable:
    """``x -> x^(alpha+ - 1) / alpha+``."""
    lam = _positive(lam)
    if lam > 0.25:
        raise ClosedFormUnavailable("no closed form above lambda_c = 1/4")
    ap = _alpha_plus(lam)
    return lambda x: np.asarray(x, dtype=float) ** (ap - 1.0) / ap


def dubins_apply_power(lam: float, gamma: float, x):
    """Exact ``T(y^gamma)(x) = lam/gamma - lam x^gamma / (gamma (gamma + 1))`` for the
    Dubins kernel, valid for ``gamma > -1``, ``gamma != 0``."""
    if not gamma > -1 or gamma == 0:
        raise ValueError("need gamma > -1 and gamma != 0")
    x = np.asarray(x, dtype=float)
    return lam / gamma - lam * x ** gamma / (gamma * (gamma + 1.0))


# kernels phi(max(x, y)) -----------------------------------------------------

@dataclass
class MaxKernelChi:
    chi: float | None
    subcritical: bool
    c: float
    denominator: float
    richardson_gap: float = math.nan


def _shoot(phi, dphi, lam, step):
    """Integrate ``F'' = lam phi' F`` from ``F(0) = 0, F'(0) = 1``; returns F, F' on the grid."""
    n = max(1, int(round(1.0 / step)))
    xs = np.linspace(0.0, 1.0, n + 1)
    h = 1.0 / n
    # the system is linear, so the coefficient is only needed at nodes and midpoints
    a_node = lam * np.broadcast_to(np.asarray(dphi(xs), dtype=float), xs.shape)
    a_mid = lam * np.broadcast_to(np.asarray(dphi(xs[:-1] + h / 2), dtype=float), (n,))
    F = np.empty(n + 1)
    dF = np.empty(n + 1)
    u, v = 0.0, 1.0
    F[0], dF[0] = u, v
    for i in range(n):
        a0, am, a1 = a_node[i], a_mid[i], a_node[i + 1]
        k1u, k1v = v, a0 * u
        k2u, k2v = v + h / 2 * k1v, am * (u + h / 2 * k1u)
        k3u, k3v = v + h / 2 * k2v, am * (u + h / 2 * k2u)
        k4u, k4v = v + h * k3v, a1 * (u + h * k3u)
        u += h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u)
        v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        F[i + 1], dF[i + 1] = u, v
    return F, dF


def _maxkernel_once(phi, dphi, lam, step):
    F, dF = _shoot(phi, dphi, lam, step)
    denom = dF[-1] - lam * float(phi(1.0)) * F[-1]
    if not np.isfinite(denom):
        raise FloatingPointError("shooting produced non-finite values")
    c = 1.0 / denom if denom != 0 else math.inf
    ok = denom > 0 and bool(np.all(c * dF >= 0))
    return (c * F[-1] if ok else None), ok, c, denom


def maxkernel_chi_ode(phi: Callable, phi_derivative: Callable, lam: float,
                      step: float = 1e-4) -> MaxKernelChi:
    """chi for ``lam phi(max(x, y))`` from the equivalent boundary-value problem.

    ``F'' = lam phi' F`` with ``F(0) = 0`` and ``F'(1) = lam phi(1) F(1) + 1`` is
    solved by shooting; a solution with ``F' >= 0`` gives ``chi = F(1)``.
    Otherwise the kernel is supercritical and ``chi`` is ``None``.
    """
    lam = _positive(lam)
    chi, ok, c, denom = _maxkernel_once(phi, phi_derivative, lam, step)
    gap = math.nan
    if ok:
        chi2, ok2, _, _ = _maxkernel_once(phi, phi_derivative, lam, 2 * step)
        gap = abs(chi - chi2) if ok2 else math.inf
    return MaxKernelChi(chi, ok, c, denom, gap)


def maxkernel_lambda_c(phi: Callable, phi_derivative: Callable, lo: float = 1e-3,
                       hi: float = 100.0, step: float = 1e-4, tol: float = 1e-10,
                       n_grid: int = 60) -> float:
    """Smallest lambda at which the shooting scale ``1/c`` changes sign."""
    def denom(lam):
        return _maxkernel_once(phi, phi_derivative, lam, step)[3]

    grid = np.geomspace(lo, hi, n_grid)
    prev = denom(grid[0])
    if not prev > 0:
        raise ValueError(f"lower end {lo} is not subcritical")
    for a, b in zip(grid[:-1], grid[1:]):
        cur = denom(b)
        if cur <= 0:
            return scipy.optimize.brentq(denom, a, b, xtol=tol)
        prev = cur
    raise ClosedFormUnavailable(f"no sign change of the scaling constant below {hi}")
