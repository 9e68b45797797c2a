"""Nystrom realization of integral operators ``T f(x) = int kappa(x, y) f(y) dmu(y)``.

The discretized operator acts on vectors of nodal values: ``(T f)_i =
sum_j K[i, j] w_j f_j``.  It is self-adjoint in the weighted inner product,
so its L2(mu) norm is the largest eigenvalue of ``sqrt(w) K sqrt(w)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
import scipy.linalg

from .kernels import Kernel, scale as scale_kernel
from .typespace import TypeSpace

CRITICAL_BAND = 1e-6
DIVERGENCE_RUN = 10
NORM_MAX_ITER = 100_000

CONVERGED = "converged"
RATIO_GE_ONE = "ratio_ge_one"
J_MAX_HIT = "j_max_hit"


class ConvergenceWarning(RuntimeWarning):
    pass


class SeriesDiverged(ArithmeticError):
    """The Neumann series for ``(I - T)^-1 1`` does not converge."""


class DiscreteOperator:
    """Quadrature matrix for ``factor * T_kappa`` on a :class:`TypeSpace`.

    The base kernel matrix is shared between scaled copies and dual
    operators, so ``scaled`` and ``with_weights`` are cheap.
    """

    def __init__(self, base_matrix: np.ndarray, weights: np.ndarray, points: np.ndarray,
                 factor: float = 1.0, description: str = "", total_mass: float | None = None,
                 _norm_cache: Optional[dict] = None):
        self._K = base_matrix
        self.weights = np.asarray(weights, dtype=float)
        self.points = np.asarray(points, dtype=float)
        self.factor = float(factor)
        self.total_mass = float(self.weights.sum()) if total_mass is None else float(total_mass)
        self.description = description
        self._sqrt_w = np.sqrt(self.weights)
        self._norm_cache = {} if _norm_cache is None else _norm_cache

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def kernel_matrix(self) -> np.ndarray:
        return self._K if self.factor == 1.0 else self.factor * self._K

    @property
    def symmetric_form(self) -> np.ndarray:
        sw = self._sqrt_w
        return self.factor * (sw[:, None] * self._K * sw[None, :])

    def scaled(self, lam: float) -> "DiscreteOperator":
        return DiscreteOperator(self._K, self.weights, self.points, self.factor * lam,
                                self.description, self.total_mass, self._norm_cache)

    def with_weights(self, weights, total_mass: float | None = None,
                     factor: float | None = None) -> "DiscreteOperator":
        return DiscreteOperator(self._K, weights, self.points,
                                self.factor if factor is None else factor,
                                self.description, total_mass)

    def apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[0] != self.size:
            raise ValueError(f"vector length {f.shape[0]} does not match operator size {self.size}")
        return self.factor * (self._K @ (self.weights * f))

    def inner(self, f, g=None) -> float:
        """``<f, g>_mu``; ``g`` defaults to the constant 1."""
        if g is None:
            return float(np.dot(self.weights, f))
        return float(np.dot(self.weights, np.asarray(f) * np.asarray(g)))

    def norm(self, tol: float = 1e-12) -> float:
        """Cached :func:`operator_norm`."""
        key = ("norm", tol)
        if key not in self._norm_cache:
            self._norm_cache[key] = _spectral_radius(self._sqrt_w, self._K, tol)
        return self.factor * self._norm_cache[key]

    def criticality_flags(self) -> set:
        nrm = self.norm()
        if abs(nrm - 1.0) <= CRITICAL_BAND:
            return {"at-criticality, mesh-limited"}
        return set()

    def __repr__(self):
        return f"DiscreteOperator(size={self.size}, factor={self.factor:g}, {self.description!r})"


def discretize(k: Kernel, ts: TypeSpace) -> DiscreteOperator:
    """Evaluate ``k`` on all pairs of mesh points."""
    x = ts.points
    K = np.asarray(k.evaluate(x[:, None], x[None, :]), dtype=float)
    if K.shape != (ts.size, ts.size):
        K = np.broadcast_to(K, (ts.size, ts.size)).copy()
    if not np.all(np.isfinite(K)):
        raise FloatingPointError(f"kernel {k.name} is not finite at every mesh point pair")
    return DiscreteOperator(K, ts.weights, x, 1.0, f"{k.name} on {ts.description}",
                            ts.total_mass)


def apply(op: DiscreteOperator, f) -> np.ndarray:
    return op.apply(f)


def _spectral_radius(sqrt_w, K, tol, max_iter=NORM_MAX_ITER, seed=0):
    S = sqrt_w[:, None] * K * sqrt_w[None, :]
    n = S.shape[0]
    if not np.any(S):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.random(n) + 0.5
    v /= np.linalg.norm(v)
    # the shift keeps a -rho eigenvalue from tying with the Perron root
    shift = 0.05 * float(np.abs(S).sum(axis=1).max())
    est = float(v @ (S @ v))
    for _ in range(max_iter):
        Sv = S @ v
        w = Sv + shift * v
        v_new = w / np.linalg.norm(w)
        new = float(v_new @ (S @ v_new))
        if abs(new - est) <= tol * abs(new):
            return new
        est, v = new, v_new
    warnings.warn(f"power iteration hit {max_iter} iterations; last estimate {est!r}",
                  ConvergenceWarning, stacklevel=3)
    return est


def operator_norm(op: DiscreteOperator, tol: float = 1e-12) -> float:
    """L2(mu) norm of the discretized operator via power iteration."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    return op.norm(tol)


@dataclass
class SeriesResult:
    value: float
    terms: list
    j_stop: int
    reason: str
    partial_sum: float = 0.0
    last_ratio: float = math.nan
    flags: set = field(default_factory=set)

    @property
    def converged(self) -> bool:
        return self.reason == CONVERGED

    @property
    def diverged(self) -> bool:
        return self.reason == RATIO_GE_ONE

    @property
    def status(self) -> str:
        return {CONVERGED: "converged", RATIO_GE_ONE: "diverged",
                J_MAX_HIT: "undecided"}[self.reason]


def _ratio_stable(r, r_prev):
    return r < 1.0 and abs(r - r_prev) <= 0.01 * (1.0 - r)


def susceptibility_series(op: DiscreteOperator, tol: float = 1e-12,
                          j_max: int = 100_000, check_critical: bool = False) -> SeriesResult:
    """Sum ``mu(S)^-1 sum_j <T^j 1, 1>`` with a geometric tail estimate.

    Stops once the term ratio has settled below 1 and the extrapolated tail
    is under ``tol``; declares divergence after ``DIVERGENCE_RUN``
    consecutive ratios >= 1.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    g = np.ones(op.size)
    terms = [op.inner(g)]
    partial = terms[0]
    r_prev = math.nan
    run = 0
    flags = op.criticality_flags() if check_critical else set()
    mass = op.total_mass
    for j in range(1, j_max + 1):
        g = op.apply(g)
        t = op.inner(g)
        terms.append(t)
        partial += t
        if t == 0.0:
            return SeriesResult(partial / mass, terms, j, CONVERGED, partial / mass, 0.0, flags)
        r = t / terms[-2]
        if r >= 1.0:
            run += 1
            if run >= DIVERGENCE_RUN:
                return SeriesResult(math.inf, terms, j, RATIO_GE_ONE, partial / mass, r, flags)
        else:
            run = 0
            tail = t * r / (1.0 - r)
            if _ratio_stable(r, r_prev) and tail / mass < tol:
                return SeriesResult((partial + tail) / mass, terms, j, CONVERGED,
                                    partial / mass, r, flags)
        r_prev = r
    return SeriesResult(partial / mass, terms, j_max, J_MAX_HIT, partial / mass, r_prev, flags)


def minimal_solution_iterates(op: DiscreteOperator) -> Iterator[np.ndarray]:
    """Iterates ``f <- T f + 1`` from ``f = 0``; nondecreasing componentwise."""
    f = np.zeros(op.size)
    while True:
        f = op.apply(f) + 1.0
        yield f


def susceptibility_pointwise(op: DiscreteOperator, tol: float = 1e-12,
                             j_max: int = 100_000) -> np.ndarray:
    """Minimal non-negative solution of ``f = T f + 1`` at the mesh points.

    Accumulates ``sum_j T^j 1`` (the same sequence as the minimal-solution
    iteration) and adds a componentwise geometric tail once the increments
    contract steadily.
    """
    d = np.ones(op.size)
    f = d.copy()
    prev = float(d.max())
    r_prev = math.nan
    run = 0
    for _ in range(j_max):
        d = op.apply(d)
        cur = float(d.max())
        f += d
        if cur == 0.0:
            return f
        r = cur / prev
        if r >= 1.0:
            run += 1
            if run >= DIVERGENCE_RUN:
                raise SeriesDiverged(f"increments stopped contracting (ratio {r:.6g})")
        else:
            run = 0
            if _ratio_stable(r, r_prev) and cur * r / (1.0 - r) < tol:
                return f + d * (r / (1.0 - r))
        prev, r_prev = cur, r
    raise SeriesDiverged(f"no decision after {j_max} iterations (last ratio {r_prev:.6g})")


def solve_linear(op: DiscreteOperator) -> np.ndarray:
    """Dense solve of ``(I - T) f = 1``; only valid below criticality."""
    nrm = op.norm()
    if nrm >= 1.0:
        raise ValueError(f"operator norm {nrm:.6g} >= 1: (I - T)^-1 1 is not the susceptibility")
    sw = op._sqrt_w
    M = np.eye(op.size) - op.symmetric_form
    try:
        # symmetric positive definite because the norm is below 1
        y = scipy.linalg.solve(M, sw, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ValueError(f"singular system: {exc}") from exc
    return y / sw


@dataclass
class ResidualReport:
    min_residual: float
    argmin: int
    residuals: np.ndarray

    @property
    def certified(self) -> bool:
        """True when ``f >= T f + 1`` holds at every node."""
        return self.min_residual >= 0.0


def verify_supersolution(op: DiscreteOperator, f) -> ResidualReport:
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("candidate must be non-negative")
    res = f - (op.apply(f) + 1.0)
    i = int(np.argmin(res))
    return ResidualReport(float(res[i]), i, res)


def critical_lambda_norm(k: Kernel, ts: TypeSpace, tol: float = 1e-12) -> float:
    """``1 / ||T_kappa||`` for the discretized operator."""
    nrm = operator_norm(discretize(k, ts), tol)
    if nrm <= 0:
        raise ValueError(f"kernel {k.name} has zero norm; no finite threshold")
    return 1.0 / nrm


def _probe_status(op: DiscreteOperator, series_tol: float, j_max: int) -> bool:
    """True when the series at this operator is on the subcritical side."""
    res = susceptibility_series(op, tol=series_tol, j_max=j_max)
    if res.reason == J_MAX_HIT:
        return res.last_ratio < 1.0
    return res.converged


def critical_lambda_solvability(k: Kernel | DiscreteOperator, ts: TypeSpace | None,
                                lo: float, hi: float, tol: float = 1e-4,
                                series_tol: float = 1e-8, j_max: int = 20_000) -> float:
    """Threshold from solvability of ``f = 1 + lam T f``, by bisection on
    the series convergence status.

    The series ratios increase monotonically to ``lam ||T||`` for these
    positive operators, so a probe that runs out of iterations is classified
    by its last ratio.
    """
    if not lo < hi:
        raise ValueError(f"bracket must satisfy lo < hi, got [{lo}, {hi}]")
    base = k if isinstance(k, DiscreteOperator) else discretize(k, ts)
    if not _probe_status(base.scaled(lo), series_tol, j_max):
        raise ValueError(f"lower bracket {lo} is not subcritical")
    if _probe_status(base.scaled(hi), series_tol, j_max):
        raise ValueError(f"upper bracket {hi} is not supercritical")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _probe_status(base.scaled(mid), series_tol, j_max):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scaled_kernel_operator(k: Kernel, ts: TypeSpace, lam: float) -> DiscreteOperator:
    """Discretize ``lam * k``; equivalent to ``discretize(k, ts).scaled(lam)``."""
    return discretize(scale_kernel(k, lam), ts)
