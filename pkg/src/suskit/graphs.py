"""Finite random graphs G(n, kappa): vertex specifications, edge samplers,
component statistics and convergence experiments.

Edge ``{i, j}`` is present independently with probability
``min(lam kappa(x_i, x_j) / n, 1)`` (rule ``"clip"``) or
``1 - exp(-lam kappa(x_i, x_j) / n)`` (rule ``"exponential"``).
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

from .kernels import Kernel
from .typespace import TypeSpace

CLIP = "clip"
EXPONENTIAL = "exponential"
EDGE_RULES = (CLIP, EXPONENTIAL)

IID = "iid_from_measure"
GRID = "deterministic_grid"
PLANTED = "planted_atoms"

MAX_BUCKETS = 256
EXACT_N_LIMIT = 20_000
PATH_COUNT_LIMIT = 14


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SUSKIT_THREADS", "1")))
    except ValueError:
        return 1


def planted_count(n: int) -> int:
    """``floor(n^(3/4))`` in exact integer arithmetic."""
    from math import isqrt
    return isqrt(isqrt(n ** 3))


@dataclass(frozen=True)
class VertexSpec:
    mode: str
    space: Optional[TypeSpace] = None
    atoms: Optional[tuple] = None  # (a, b) for planted_atoms

    def types(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.mode == GRID:
            return np.arange(1, n + 1) / n
        if self.mode == IID:
            return self.space.sample(rng, n)
        if self.mode == PLANTED:
            m = planted_count(n)
            if 2 * m > n:
                raise ValueError(f"n={n} too small to plant 2*{m} atoms")
            a, b = self.atoms
            rest = self.space.sample(rng, n - 2 * m)
            return np.concatenate([np.full(m, float(a)), np.full(m, float(b)), rest])
        raise ValueError(f"unknown vertex mode {self.mode!r}")

    @property
    def label(self) -> str:
        if self.mode == GRID:
            return "grid:i/n"
        if self.mode == PLANTED:
            return f"planted:a={self.atoms[0]:g},b={self.atoms[1]:g},iid={self.space.description}"
        return f"iid:{self.space.description}"


def iid_vertices(ts: TypeSpace) -> VertexSpec:
    return VertexSpec(IID, ts)


def grid_vertices() -> VertexSpec:
    """Deterministic types ``x_i = i / n``."""
    return VertexSpec(GRID)


def planted_vertices(ts: TypeSpace, a: float, b: float) -> VertexSpec:
    """``floor(n^(3/4))`` vertices of type ``a``, as many of type ``b``, the rest i.i.d."""
    return VertexSpec(PLANTED, ts, (float(a), float(b)))


@dataclass
class GraphSample:
    n: int
    types: np.ndarray
    edges: np.ndarray  # (E, 2) int64, 0-based, i < j, lexicographically sorted
    seed: object = None
    edge_rule: str = CLIP
    strategy: str = ""
    label: str = ""

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])


def edge_probability(values, lam: float, n: int, rule: str = CLIP):
    v = lam * np.asarray(values, dtype=float) / n
    if rule == CLIP:
        return np.minimum(v, 1.0)
    if rule == EXPONENTIAL:
        return -np.expm1(-v)
    raise ValueError(f"unknown edge rule {rule!r}; expected one of {EDGE_RULES}")


def _poisson_intensity(values, lam, n, rule):
    """Per-pair Poisson intensity whose coalesced edge probability is the rule's."""
    v = lam * np.asarray(values, dtype=float) / n
    if rule == EXPONENTIAL:
        return v
    with np.errstate(divide="ignore"):
        return np.where(v >= 1.0, np.inf, -np.log1p(-np.minimum(v, 1.0)))


def skip_positions(rng: np.random.Generator, N: int, p: float) -> np.ndarray:
    """Indices in ``[0, N)`` each selected independently with probability ``p``,
    generated by geometric jumps (cost proportional to the output size)."""
    if N <= 0 or p <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(N, dtype=np.int64)
    out = []
    cur = -1
    mean = N * p
    batch = int(mean + 6 * math.sqrt(mean) + 16)
    while True:
        pos = cur + np.cumsum(rng.geometric(p, size=batch), dtype=np.int64)
        keep = pos[pos < N]
        out.append(keep)
        if keep.size < pos.size:
            break
        cur = int(pos[-1])
        batch = max(16, int((N - cur) * p + 6 * math.sqrt((N - cur) * p) + 16))
    return np.concatenate(out)


def triangular_pairs(t: np.ndarray):
    """Map linear indices over ``{(i, j): 0 <= i < j}`` (ordered by j) to pairs."""
    t = np.asarray(t, dtype=np.int64)
    j = np.floor((1.0 + np.sqrt(1.0 + 8.0 * t.astype(float))) / 2.0).astype(np.int64)
    # float sqrt can be off by one for large t
    j = np.where(j * (j - 1) // 2 > t, j - 1, j)
    j = np.where((j + 1) * j // 2 <= t, j + 1, j)
    i = t - j * (j - 1) // 2
    return i, j


def _finish(n, u, v):
    if u.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    lo = np.minimum(u, v).astype(np.int64)
    hi = np.maximum(u, v).astype(np.int64)
    keep = lo != hi
    codes = np.unique(lo[keep] * n + hi[keep])
    return np.column_stack([codes // n, codes % n])


def _sample_buckets(k, types, n, lam, rule, rng):
    uniq, inv = np.unique(types, return_inverse=True)
    order = np.argsort(inv, kind="stable")
    counts = np.bincount(inv, minlength=uniq.size)
    starts = np.concatenate([[0], np.cumsum(counts)])
    us, vs = [], []
    for a in range(uniq.size):
        ma = order[starts[a]:starts[a + 1]]
        for b in range(a, uniq.size):
            p = float(edge_probability(k(uniq[a], uniq[b]), lam, n, rule))
            if b == a:
                sa = ma.size
                t = skip_positions(rng, sa * (sa - 1) // 2, p)
                i, j = triangular_pairs(t)
                us.append(ma[i])
                vs.append(ma[j])
            else:
                mb = order[starts[b]:starts[b + 1]]
                t = skip_positions(rng, ma.size * mb.size, p)
                us.append(ma[t // mb.size])
                vs.append(mb[t % mb.size])
    if not us:
        return _finish(n, np.empty(0, np.int64), np.empty(0, np.int64))
    return _finish(n, np.concatenate(us), np.concatenate(vs))


def _sample_max_kernel(k, types, n, lam, rule, rng):
    # rank vertices by type; a vertex meets all lower-ranked ones with the
    # same probability, so draw Poisson multi-edges to uniform lower ranks
    # and coalesce (exact: each lower partner is hit independently)
    order = np.argsort(types, kind="stable")
    xs = types[order]
    mu = _poisson_intensity(k.phi(xs), lam, n, rule)
    r = np.arange(n)
    full = np.isinf(mu)
    counts = np.zeros(n, dtype=np.int64)
    finite = ~full & (r > 0)
    counts[finite] = rng.poisson(mu[finite] * r[finite])
    owner = np.repeat(r, counts)
    partner = np.floor(rng.random(owner.size) * owner).astype(np.int64)
    fr = r[full & (r > 0)]
    if fr.size:
        owner = np.concatenate([owner, np.repeat(fr, fr)])
        partner = np.concatenate([partner, np.concatenate([np.arange(x) for x in fr])])
    return _finish(n, order[owner], order[partner])


def _sample_thinning(k, types, n, lam, rule, rng):
    pmax = float(edge_probability(k.bound, lam, n, rule))
    t = skip_positions(rng, n * (n - 1) // 2, pmax)
    i, j = triangular_pairs(t)
    if i.size == 0:
        return _finish(n, i, j)
    p = edge_probability(k(types[i], types[j]), lam, n, rule)
    keep = rng.random(i.size) * pmax < p
    return _finish(n, i[keep], j[keep])


def _sample_exact(k, types, n, lam, rule, rng, chunk=512):
    us, vs = [], []
    for s in range(0, n - 1, chunk):
        rows = np.arange(s, min(s + chunk, n - 1))
        # row i pairs with columns i+1..n-1
        cols = np.arange(n)
        p = edge_probability(k(types[rows][:, None], types[None, :]), lam, n, rule)
        u = rng.random(p.shape)
        hit = (u < p) & (cols[None, :] > rows[:, None])
        ii, jj = np.nonzero(hit)
        us.append(rows[ii])
        vs.append(jj)
    if not us:
        return _finish(n, np.empty(0, np.int64), np.empty(0, np.int64))
    return _finish(n, np.concatenate(us), np.concatenate(vs))


def choose_strategy(k: Kernel, types: np.ndarray) -> str:
    if k.matrix is not None or np.unique(types).size <= MAX_BUCKETS:
        return "buckets"
    if k.phi is not None:
        return "max-kernel"
    if k.bound is not None:
        return "thinning"
    return "exact"


def sample_graph(k: Kernel, vs: VertexSpec, n: int, lam: float = 1.0,
                 edge_rule: str = CLIP, seed=None, strategy: str | None = None) -> GraphSample:
    """One realization of ``G(n, lam kappa)`` on vertex types drawn from ``vs``.

    Strategy is chosen from kernel structure: geometric skips per type bucket
    for few distinct types, the sorted Poisson sampler for ``phi(max(x, y))``
    kernels, thinning for bounded kernels, and an exact pairwise pass
    otherwise.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if edge_rule not in EDGE_RULES:
        raise ValueError(f"unknown edge rule {edge_rule!r}")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n = int(n)
    rng = np.random.default_rng(seed)
    types = np.asarray(vs.types(n, rng), dtype=float)
    if vs.mode == PLANTED:
        a, b = vs.atoms
        if not lam * float(k(a, b)) > n:
            raise ValueError(f"planted pair needs lam*kappa(a, b) > n; got {lam * float(k(a, b)):.4g}")
    strategy = strategy or choose_strategy(k, types)
    if lam == 0 or n == 1:
        edges = np.empty((0, 2), dtype=np.int64)
    else:
        fn = {"buckets": _sample_buckets, "max-kernel": _sample_max_kernel,
              "thinning": _sample_thinning, "exact": _sample_exact}[strategy]
        if strategy == "exact" and n > EXACT_N_LIMIT:
            warnings.warn(f"exact O(n^2) sampler at n={n}", RuntimeWarning, stacklevel=2)
        edges = fn(k, types, n, lam, edge_rule, rng)
    return GraphSample(n, types, edges, seed, edge_rule, strategy,
                       f"{k.name} x{lam:g} on {vs.label}")


def sample_graph_naive(k: Kernel, types, lam: float, edge_rule: str = CLIP, seed=None) -> GraphSample:
    """Reference sampler: one uniform per unordered pair."""
    types = np.asarray(types, dtype=float)
    n = types.size
    rng = np.random.default_rng(seed)
    i, j = np.triu_indices(n, 1)
    p = edge_probability(k(types[i], types[j]), lam, n, edge_rule)
    keep = rng.random(i.size) < p
    return GraphSample(n, types, np.column_stack([i[keep], j[keep]]).astype(np.int64),
                       seed, edge_rule, "naive")


CHKNS_VARIANTS = ("I", "II", "III", "growth")


def sample_chkns_family(variant: str, lam: float, n: int, seed=None) -> GraphSample:
    """CHKNS-type graphs on vertices ``1..n``.

    Variants I, II, III have Poisson(lam_ij) multi-edges for ``i < j`` with
    ``lam_ij = lam (1/(j-1) - 1/n)``, ``lam (1/j - 1/n)`` and
    ``lam (1/j - 1/(n+1))``; multi-edges are coalesced.  ``growth`` adds one
    vertex per step followed, with probability ``lam / 2``, by one edge with
    uniform endpoints among the existing vertices.
    """
    if variant not in CHKNS_VARIANTS:
        raise ValueError(f"unknown CHKNS variant {variant!r}; expected one of {CHKNS_VARIANTS}")
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    n = int(n)
    rng = np.random.default_rng(seed)
    types = np.arange(1, n + 1) / n
    j = np.arange(1, n + 1, dtype=float)  # 1-based label of the later endpoint
    if variant == "growth":
        delta = lam / 2.0
        if not 0 <= delta < 1:
            raise ValueError("growth variant needs delta = lambda/2 in [0, 1)")
        steps = np.flatnonzero(rng.random(n) < delta) + 1  # vertex count when the edge is added
        u = np.floor(rng.random(steps.size) * steps).astype(np.int64)
        v = np.floor(rng.random(steps.size) * steps).astype(np.int64)
        edges = _finish(n, u, v)
        return GraphSample(n, types, edges, seed, "growth", "growth", f"chkns-growth lam={lam:g}")
    with np.errstate(divide="ignore"):
        if variant == "I":
            inten = lam * (1.0 / (j - 1.0) - 1.0 / n)
        elif variant == "II":
            inten = lam * (1.0 / j - 1.0 / n)
        else:
            inten = lam * (1.0 / j - 1.0 / (n + 1))
    inten[0] = 0.0  # vertex 1 has no earlier partner
    inten = np.maximum(inten, 0.0)
    lower = np.arange(n)  # number of earlier vertices
    counts = rng.poisson(inten * lower)
    owner = np.repeat(lower, counts)
    partner = np.floor(rng.random(owner.size) * owner).astype(np.int64)
    edges = _finish(n, owner, partner)
    return GraphSample(n, types, edges, seed, EXPONENTIAL, f"chkns-{variant}",
                       f"chkns-{variant} lam={lam:g}")


class UnionFind:
    """Disjoint sets with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return ra

    def labels(self) -> np.ndarray:
        return np.array([self.find(i) for i in range(len(self.parent))], dtype=np.int64)


@dataclass
class ComponentStats:
    n: int
    labels: np.ndarray
    sizes: np.ndarray          # descending
    largest_root: int          # smallest vertex id in the largest component
    _sq: float = field(init=False, repr=False)

    def __post_init__(self):
        self._sq = float(np.dot(self.sizes.astype(float), self.sizes.astype(float)))

    @property
    def N_k(self) -> dict:
        """``{k: number of vertices in components of size k}``."""
        ks, cnt = np.unique(self.sizes, return_counts=True)
        return {int(k): int(k) * int(c) for k, c in zip(ks, cnt)}

    def n_k(self, k: int) -> int:
        return int(k) * int(np.count_nonzero(self.sizes == k))

    @property
    def chi(self) -> float:
        return self._sq / self.n

    @property
    def chi_hat(self) -> float:
        big = float(self.sizes[0]) if self.sizes.size else 0.0
        return (self._sq - big * big) / self.n

    def chi_trunc(self, delta: float) -> float:
        s = self.sizes[self.sizes <= delta * self.n].astype(float)
        return float(np.dot(s, s)) / self.n


def components(g: GraphSample, method: str = "csgraph") -> ComponentStats:
    """Connected components; ties for the largest broken by smallest vertex id."""
    n = g.n
    if method == "unionfind":
        uf = UnionFind(n)
        for a, b in g.edges:
            uf.union(int(a), int(b))
        labels = uf.labels()
    elif method == "csgraph":
        e = g.edges
        adj = scipy.sparse.coo_matrix((np.ones(e.shape[0], dtype=np.int8), (e[:, 0], e[:, 1])),
                                      shape=(n, n)).tocsr()
        _, labels = scipy.sparse.csgraph.connected_components(adj, directed=False)
        labels = labels.astype(np.int64)
    else:
        raise ValueError(f"unknown method {method!r}")
    uniq, first, counts = np.unique(labels, return_index=True, return_counts=True)
    # sort by size descending, then by smallest member id
    key = np.lexsort((first, -counts))
    sizes = counts[key]
    return ComponentStats(n, labels, sizes, int(first[key[0]]))


def count_paths(g: GraphSample, l_max: int | None = None) -> list:
    """Ordered self-avoiding paths ``v0 v1 ... vl`` by length, ``P_0 = n``."""
    n = g.n
    if n > PATH_COUNT_LIMIT:
        raise ValueError(f"path enumeration limited to n <= {PATH_COUNT_LIMIT}, got {n}")
    l_max = n - 1 if l_max is None else int(l_max)
    nbr = [[] for _ in range(n)]
    for a, b in g.edges:
        nbr[a].append(int(b))
        nbr[b].append(int(a))
    counts = [0] * (l_max + 1)

    def walk(v, visited, depth):
        counts[depth] += 1
        if depth == l_max:
            return
        for w in nbr[v]:
            if not visited >> w & 1:
                walk(w, visited | (1 << w), depth + 1)

    for v in range(n):
        walk(v, 1 << v, 0)
    return counts


def _replicate_seeds(seed, reps):
    return np.random.SeedSequence(seed).spawn(reps)


def run_replicates(fn: Callable, seed, reps: int, workers: int | None = None) -> list:
    """``fn(seed_sequence)`` for each replicate; results in replicate order."""
    seeds = _replicate_seeds(seed, reps)
    workers = default_workers() if workers is None else workers
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, seeds))


def _mean_se(vals):
    a = np.asarray(vals, dtype=float)
    if a.size < 2:
        return float(a.mean()), math.nan
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def replicate_stats(sampler: Callable, seed, reps: int, workers: int | None = None) -> dict:
    """Mean and standard error of chi and chi-hat over replicates of ``sampler(seed)``."""
    def one(ss):
        st = components(sampler(ss))
        return st.chi, st.chi_hat
    res = run_replicates(one, seed, reps, workers)
    chi = [r[0] for r in res]
    chh = [r[1] for r in res]
    m_chi, se_chi = _mean_se(chi)
    m_chh, se_chh = _mean_se(chh)
    return {"reps": reps, "chi": chi, "chi_hat": chh, "mean_chi": m_chi, "se_chi": se_chi,
            "mean_chi_hat": m_chh, "se_chi_hat": se_chh}


def empirical_nk_convergence(k: Kernel, vs: VertexSpec, lam: float, n_list, reps: int,
                             k_max: int, seed=0, ts: TypeSpace | None = None,
                             edge_rule: str = CLIP, sampler: Callable | None = None,
                             rho_k=None) -> list:
    """Rows ``{n, k, mean, se, rho_k, gap}`` comparing ``N_k / n`` with ``rho_k``.

    ``rho_k`` defaults to the branching-process values on ``ts`` (or on the
    vertex spec's own space).  ``sampler(n, seed)`` overrides ``sample_graph``.
    """
    from .branching import rho_k_pointwise
    from .operators import discretize

    if rho_k is None:
        space = ts if ts is not None else vs.space
        if space is None:
            raise ValueError("need a TypeSpace for the branching-process prediction")
        rho_k = rho_k_pointwise(discretize(k, space).scaled(lam), k_max).totals
        rho_k = rho_k / space.total_mass
    rows = []
    for i, n in enumerate(n_list):
        def one(ss, n=n):
            g = sampler(n, ss) if sampler else sample_graph(k, vs, n, lam, edge_rule, ss)
            st = components(g)
            return [st.n_k(kk) / n for kk in range(1, k_max + 1)]
        res = np.array(run_replicates(one, [seed, i], reps))
        for kk in range(1, k_max + 1):
            m, se = _mean_se(res[:, kk - 1])
            rows.append({"n": n, "k": kk, "mean": m, "se": se, "rho_k": float(rho_k[kk - 1]),
                         "gap": m - float(rho_k[kk - 1])})
    return rows


def planting_pair(k: Kernel, lam: float, n: int) -> tuple:
    """Types ``(a, b)`` with ``lam kappa(a, b) > n`` for a decreasing ``phi(max)`` kernel."""
    if k.phi is None or k.bounded:
        raise ValueError(f"kernel {k.name} cannot supply lam*kappa(a, b) > n")
    x = 0.5
    while not lam * float(k.phi(x)) > n:
        x /= 2.0
        if x < 1e-300:
            raise ValueError(f"kernel {k.name} cannot supply lam*kappa(a, b) > n")
    return x, x / 2.0


def plant_atoms_experiment(k: Kernel, n_list, lam: float, ts: TypeSpace, reps: int = 20,
                           seed=0, a: float | None = None, b: float | None = None,
                           edge_rule: str = CLIP) -> list:
    """chi of planted-atom graphs next to an unplanted control, per n and replicate."""
    rows = []
    for i, n in enumerate(n_list):
        if a is None or b is None:
            aa, bb = planting_pair(k, lam, n)
        else:
            aa, bb = a, b
        if not lam * float(k(aa, bb)) > n:
            raise ValueError(f"lam*kappa(a, b) = {lam * float(k(aa, bb)):.4g} is not > n = {n}")
        planted = planted_vertices(ts, aa, bb)
        control = iid_vertices(ts)

        def one(ss, n=n, planted=planted, control=control):
            c1, c2 = ss.spawn(2)
            gp = sample_graph(k, planted, n, lam, edge_rule, c1)
            gc = sample_graph(k, control, n, lam, edge_rule, c2)
            return components(gp).chi, components(gc).chi

        for r, (cp, cc) in enumerate(run_replicates(one, [seed, i], reps)):
            rows.append({"n": n, "rep": r, "chi_planted": cp, "chi_control": cc,
                         "bound": n ** 0.4, "planted_per_atom": planted_count(n)})
    return rows


def scan_susceptibility(k: Kernel, vs: VertexSpec, lam_grid, n: int, reps: int, seed=0,
                        ts: TypeSpace | None = None, edge_rule: str = CLIP,
                        sampler: Callable | None = None) -> list:
    """Empirical chi / chi-hat against branching-process predictions on a lambda grid.

    Each lambda is evaluated on its own; sequences lambda_n -> lambda_c are
    not represented.
    """
    from .branching import modified_susceptibility
    from .operators import discretize

    space = ts if ts is not None else vs.space
    base = discretize(k, space) if space is not None else None
    rows = []
    for i, lam in enumerate(lam_grid):
        lam = float(lam)
        if sampler is None:
            fn = lambda ss, lam=lam: sample_graph(k, vs, n, lam, edge_rule, ss)  # noqa: E731
        else:
            fn = lambda ss, lam=lam: sampler(lam, n, ss)  # noqa: E731
        st = replicate_stats(fn, [seed, i], reps)
        pred_chi = pred_hat = math.nan
        status = "no-prediction"
        if base is not None:
            br = modified_susceptibility(base.scaled(lam))
            pred_chi, pred_hat = br.chi, br.chi_hat
            status = "mesh-limited" if any("criticality" in f or "dual critical" in f
                                           for f in br.flags) else "ok"
        rows.append({"lambda": lam, "n": n, "rep_count": reps, "mean_chi": st["mean_chi"],
                     "se_chi": st["se_chi"], "mean_chi_hat": st["mean_chi_hat"],
                     "se_chi_hat": st["se_chi_hat"], "pred_chi": pred_chi,
                     "pred_chi_hat": pred_hat, "status": status})
    return rows
