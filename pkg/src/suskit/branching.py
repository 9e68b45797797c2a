"""Multi-type Poisson branching process: survival, dual kernel, component-size
laws and Monte-Carlo simulation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .operators import (
    CRITICAL_BAND,
    ConvergenceWarning,
    DiscreteOperator,
    solve_linear,
    susceptibility_series,
)

K_MAX_GUARD = 40
DUAL_CRITICAL = "dual critical"
NEWTON_AFTER = 2000
NEWTON_MAX = 60
ASSUMES_COMPACT = "assumes compact T (dual norm < 1 not proven in general)"


def survival_probability(op: DiscreteOperator, tol: float = 1e-13,
                         max_iter: int = 1_000_000, return_iterations: bool = False,
                         newton_after: int = NEWTON_AFTER):
    """Maximal solution of ``f = 1 - exp(-T f)`` by monotone iteration from 1.

    Near criticality the plain iteration contracts very slowly; after
    ``newton_after`` steps it switches to Newton steps, which started above
    the maximal root of this concave map stay above it and converge to it.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    f = np.ones(op.size)
    step = math.inf
    newton = 0
    for it in range(1, max_iter + 1):
        if it > newton_after and newton < NEWTON_MAX:
            newton += 1
            nf = _newton_step(op, f)
        else:
            nf = -np.expm1(-op.apply(f))
        step = float(np.max(np.abs(nf - f)))
        f = nf
        if step < tol:
            break
    else:
        warnings.warn(f"survival iteration hit max_iter={max_iter}; last sup-norm step {step:.3e}",
                      ConvergenceWarning, stacklevel=2)
    return (f, it) if return_iterations else f


def _newton_step(op: DiscreteOperator, f: np.ndarray) -> np.ndarray:
    em1 = np.expm1(-op.apply(f))
    g = f + em1
    e = 1.0 + em1
    jac = np.eye(op.size) - (e * op.factor)[:, None] * op._K * op.weights[None, :]
    try:
        delta = np.linalg.solve(jac, g)
    except np.linalg.LinAlgError:
        return -np.expm1(-op.apply(f))
    return np.clip(f - delta, 0.0, 1.0)


def dual_operator(op: DiscreteOperator, rho) -> DiscreteOperator:
    """Same kernel on the tilted measure ``(1 - rho) dmu``."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != op.weights.shape:
        raise ValueError("rho must have one entry per mesh point")
    if np.any(rho < 0) or np.any(rho > 1):
        raise ValueError("rho must lie in [0, 1]")
    tilted = op.weights * (1.0 - rho)
    keep = tilted > 0
    if not np.all(keep):
        # atoms with rho = 1 carry no dual mass; a tiny floor keeps sqrt(w) finite
        tilted = np.where(keep, tilted, np.finfo(float).tiny)
    return op.with_weights(tilted, total_mass=op.total_mass - float(np.dot(op.weights, rho)))


@dataclass
class BranchingResult:
    rho: np.ndarray
    rho_total: float
    chi: float
    chi_hat: float
    iterations: int
    flags: set = field(default_factory=set)
    norm: float = math.nan
    dual_norm: float = math.nan
    lsusq_gap: float = math.nan


def modified_susceptibility(op: DiscreteOperator, tol: float = 1e-13,
                            max_iter: int = 1_000_000) -> BranchingResult:
    """chi and chi-hat of the discretized process.

    Below criticality ``rho = 0`` and chi-hat equals chi.  Above it, chi-hat
    is the dual-measure solve ``<(I - T~)^-1 1, 1>`` normalized by mu(S),
    cross-checked against ``mu~(S) * chi`` of the renormalized dual computed
    by the series route.
    """
    mass = op.total_mass
    nrm = op.norm()
    flags = set()
    if abs(nrm - 1.0) <= CRITICAL_BAND:
        flags.add("at-criticality, mesh-limited")
    if nrm <= 1.0:
        rho = np.zeros(op.size)
        if nrm < 1.0:
            chi = op.inner(solve_linear(op)) / mass
        else:
            chi = math.inf
        return BranchingResult(rho, 0.0, chi, chi, 0, flags, nrm, nrm, 0.0)

    rho, iters = survival_probability(op, tol=tol, max_iter=max_iter, return_iterations=True)
    rho_total = op.inner(rho)
    dual = dual_operator(op, rho)
    dnorm = dual.norm()
    flags.add(ASSUMES_COMPACT)
    if dnorm >= 1.0 - CRITICAL_BAND:
        flags.add(DUAL_CRITICAL)
        return BranchingResult(rho, rho_total, math.inf, math.inf, iters, flags, nrm, dnorm)

    g = solve_linear(dual)
    chi_hat = dual.inner(g) / mass

    # renormalized dual: mu' = mu~ / mu~(S), kappa' = mu~(S) kappa
    dmass = dual.total_mass
    renorm = dual.with_weights(dual.weights / dmass, total_mass=1.0, factor=dual.factor * dmass)
    series = susceptibility_series(renorm, tol=1e-14 * max(1.0, chi_hat))
    via_lemma = dmass * series.value / mass
    gap = abs(via_lemma - chi_hat) / chi_hat
    if not gap <= 1e-8:
        flags.add(f"renormalized-dual identity off by {gap:.2e}")
    return BranchingResult(rho, rho_total, math.inf, chi_hat, iters, flags, nrm, dnorm, gap)


@dataclass
class RhoKTable:
    k_max: int
    pointwise: np.ndarray  # row k-1 holds rho_k at the mesh points
    totals: np.ndarray     # totals[k-1] = integral of rho_k

    def total(self, k: int) -> float:
        return float(self.totals[k - 1])


@lru_cache(maxsize=None)
def integer_partitions(n: int) -> tuple:
    """All partitions of ``n`` as tuples of (part, multiplicity), largest part first."""
    out = []

    def rec(rem, max_part, acc):
        if rem == 0:
            out.append(tuple(acc))
            return
        for p in range(min(rem, max_part), 0, -1):
            for mult in range(rem // p, 0, -1):
                acc.append((p, mult))
                rec(rem - p * mult, p - 1, acc)
                acc.pop()

    rec(n, n, [])
    return tuple(out)


def rho_k_pointwise(op: DiscreteOperator, k_max: int) -> RhoKTable:
    """``rho_k(x) = P(|X(x)| = k)`` for ``k <= k_max``.

    ``rho_1 = exp(-T1)`` and, for ``k >= 2``, ``rho_k = rho_1 * sum`` over
    partitions ``1^m1 2^m2 ...`` of ``k - 1`` of ``prod_j (T rho_j)^mj / mj!``.
    The partition sum is accumulated grouped by largest part, so shared
    sub-partitions are multiplied once.
    """
    if int(k_max) != k_max or k_max < 1:
        raise ValueError("k_max must be a positive integer")
    if k_max > K_MAX_GUARD:
        raise ValueError(f"k_max={k_max} exceeds the partition guard {K_MAX_GUARD}")
    k_max = int(k_max)
    m = op.size
    rho = np.zeros((k_max, m))
    rho[0] = np.exp(-op.apply(np.ones(m)))
    t_rho = {}  # j -> T rho_j
    power_terms = {}  # (j, mult) -> (T rho_j)^mult / mult!

    def term(j, mult):
        key = (j, mult)
        if key not in power_terms:
            power_terms[key] = t_rho[j] ** mult / math.factorial(mult)
        return power_terms[key]

    # sums[(n, p)] = sum over partitions of n with all parts <= p
    sums = {}

    def partition_sum(n, p):
        if n == 0:
            return None  # empty product, i.e. 1
        p = min(p, n)
        key = (n, p)
        if key in sums:
            return sums[key]
        total = np.zeros(m)
        for mult in range(0, n // p + 1):
            rest = n - mult * p
            if rest > 0 and p == 1:
                continue
            sub = partition_sum(rest, p - 1) if rest > 0 else None
            if rest > 0 and sub is None:
                continue
            factor = term(p, mult) if mult > 0 else None
            if factor is None and sub is None:
                continue
            if factor is None:
                total += sub
            elif sub is None:
                total += factor
            else:
                total += factor * sub
        sums[key] = total
        return total

    for k in range(2, k_max + 1):
        t_rho[k - 1] = op.apply(rho[k - 2])
        rho[k - 1] = rho[0] * partition_sum(k - 1, k - 1)
    totals = rho @ op.weights
    return RhoKTable(k_max, rho, totals)


class Progeny(NamedTuple):
    size: int
    cap_hit: bool


def _offspring_matrix(op: DiscreteOperator) -> np.ndarray:
    # mean[i, j]: expected type-j children of a type-i parent
    return op.factor * op._K * op.weights[None, :]


def _run_batch(mean_mat, roots, cap, rng):
    """Generation-synchronous simulation of many independent trees.

    Children counts per type are Poisson with mean ``counts @ mean_mat``:
    sums of independent Poisson offspring are Poisson, so this has the law
    of individual-by-individual simulation.
    """
    n_runs = roots.size
    m = mean_mat.shape[0]
    counts = np.zeros((n_runs, m))
    counts[np.arange(n_runs), roots] = 1.0
    totals = np.ones(n_runs, dtype=np.int64)
    active = np.ones(n_runs, dtype=bool)
    if cap <= 1:
        hit = np.ones(n_runs, dtype=bool)
        return np.full(n_runs, cap, dtype=np.int64), hit
    while active.any():
        idx = np.flatnonzero(active)
        lam = counts[idx] @ mean_mat
        kids = rng.poisson(lam).astype(float)
        counts[idx] = kids
        totals[idx] += kids.sum(axis=1).astype(np.int64)
        active[idx] = (kids.sum(axis=1) > 0) & (totals[idx] < cap)
    hit = totals >= cap
    return np.minimum(totals, cap), hit


def simulate_branching(op: DiscreteOperator, root=None, cap: int = 10**6, seed=None) -> Progeny:
    """Total progeny of one tree, stopped at ``cap``.

    ``root`` is a type index, or ``None`` to draw it from ``mu / mu(S)``.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    rng = np.random.default_rng(seed)
    if root is None:
        root = rng.choice(op.size, p=op.weights / op.weights.sum())
    sizes, hit = _run_batch(_offspring_matrix(op), np.array([int(root)]), cap, rng)
    return Progeny(int(sizes[0]), bool(hit[0]))


@dataclass
class MCEstimate:
    sizes: np.ndarray
    cap_hit: np.ndarray
    cap: int

    @property
    def n_runs(self) -> int:
        return int(self.sizes.size)

    @property
    def mean_capped(self) -> float:
        return float(self.sizes.mean())

    @property
    def frac_cap_hit(self) -> float:
        return float(self.cap_hit.mean())

    @property
    def mean_on_finite(self) -> float:
        fin = self.sizes[~self.cap_hit]
        return float(fin.mean()) if fin.size else math.nan

    @property
    def std_errors(self) -> dict:
        n = self.n_runs
        fin = self.sizes[~self.cap_hit]
        p = self.frac_cap_hit
        return {
            "mean_capped": float(self.sizes.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
            "mean_on_finite": float(fin.std(ddof=1) / math.sqrt(fin.size)) if fin.size > 1 else 0.0,
            "frac_cap_hit": math.sqrt(p * (1 - p) / n),
        }

    def pmf(self, k: int) -> tuple[float, float]:
        """Empirical ``P(|X| = k)`` and its binomial standard error."""
        p = float(np.mean((self.sizes == k) & ~self.cap_hit))
        return p, math.sqrt(p * (1 - p) / self.n_runs)

    def summary(self) -> dict:
        return {"n_runs": self.n_runs, "cap": self.cap, "mean_capped": self.mean_capped,
                "mean_on_finite": self.mean_on_finite, "frac_cap_hit": self.frac_cap_hit,
                "std_errors": self.std_errors}


def mc_susceptibility(op: DiscreteOperator, n_runs: int, cap: int = 10**6, seed=0,
                      chunk: int = 20_000) -> MCEstimate:
    """Monte-Carlo progeny sizes with roots drawn from ``mu / mu(S)``.

    Runs are processed in chunks; chunk ``c`` uses the stream
    ``SeedSequence(seed).spawn`` child ``c``, so results depend only on
    ``(seed, n_runs, chunk)``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    mean_mat = _offspring_matrix(op)
    p = op.weights / op.weights.sum()
    n_chunks = -(-n_runs // chunk)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    sizes, hits = [], []
    for c, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        n = min(chunk, n_runs - c * chunk)
        roots = rng.choice(op.size, size=n, p=p)
        s, h = _run_batch(mean_mat, roots, cap, rng)
        sizes.append(s)
        hits.append(h)
    return MCEstimate(np.concatenate(sizes), np.concatenate(hits), cap)
