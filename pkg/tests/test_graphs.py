import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from suskit import graphs as gr
from suskit.branching import rho_k_pointwise
from suskit.kernels import chkns_kernel, constant_kernel, dubins_kernel, e2_kernel, max_kernel
from suskit.operators import discretize
from suskit.typespace import build_finite_space, build_uniform_mesh

ONE = constant_kernel(1.0)


def graph(n, edges):
    e = np.array(sorted(tuple(sorted(p)) for p in edges), dtype=np.int64).reshape(-1, 2)
    return gr.GraphSample(n, np.arange(1, n + 1) / n, e)


def test_components_empty_graph():
    st_ = gr.components(graph(5, []))
    assert list(st_.sizes) == [1] * 5
    assert st_.chi == 1.0 and st_.chi_hat == pytest.approx(4 / 5)
    assert st_.N_k == {1: 5} and st_.largest_root == 0


def test_components_complete_graph():
    st_ = gr.components(graph(4, [(i, j) for i in range(4) for j in range(i + 1, 4)]))
    assert list(st_.sizes) == [4]
    assert st_.chi == 4.0 and st_.chi_hat == 0.0


def test_components_three_two():
    st_ = gr.components(graph(5, [(0, 1), (1, 2), (3, 4)]))
    assert list(st_.sizes) == [3, 2]
    assert st_.chi == pytest.approx(13 / 5)
    assert st_.chi_hat == pytest.approx(4 / 5)
    assert st_.N_k == {2: 2, 3: 3}
    assert st_.chi_trunc(0.5) == pytest.approx(4 / 5)


def test_largest_tie_broken_by_smallest_id():
    st_ = gr.components(graph(6, [(4, 5), (1, 2)]))
    assert st_.largest_root == 1


edge_lists = st.integers(2, 30).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                                             .filter(lambda p: p[0] != p[1]), max_size=60, unique=True)))


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_unionfind_matches_csgraph(data):
    n, edges = data
    g = graph(n, {tuple(sorted(p)) for p in edges})
    a, b = gr.components(g), gr.components(g, "unionfind")
    assert np.array_equal(a.sizes, b.sizes)
    # same partition up to relabelling
    pairs = set(zip(a.labels.tolist(), b.labels.tolist()))
    assert len(pairs) == len(set(a.labels.tolist())) == len(set(b.labels.tolist()))
    assert a.largest_root == b.largest_root


@settings(max_examples=60, deadline=None)
@given(edge_lists)
def test_chi_is_size_biased_sum(data):
    n, edges = data
    s = gr.components(graph(n, {tuple(sorted(p)) for p in edges}))
    assert sum(s.N_k.values()) == n
    assert s.chi == pytest.approx(sum(k * nk for k, nk in s.N_k.items()) / n)
    assert 1 <= s.chi <= n and 0 <= s.chi_hat <= s.chi


@settings(max_examples=60, deadline=None)
@given(edge_lists, st.data())
def test_edge_deletion_does_not_increase_chi(data, draw):
    n, edges = data
    edges = sorted({tuple(sorted(p)) for p in edges})
    if not edges:
        return
    drop = draw.draw(st.integers(0, len(edges) - 1))
    full = gr.components(graph(n, edges)).chi
    less = gr.components(graph(n, edges[:drop] + edges[drop + 1:])).chi
    assert less <= full


def test_count_paths_examples():
    assert gr.count_paths(graph(3, [(0, 1), (1, 2)])) == [3, 4, 2]
    k4 = graph(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    assert gr.count_paths(k4) == [4, 12, 24, 24]
    with pytest.raises(ValueError):
        gr.count_paths(graph(gr.PATH_COUNT_LIMIT + 1, []))


def test_expected_paths_bounded_by_operator_powers():
    # E P_l <= n <T^l 1, 1> for the grid-typed CHKNS graph; the constant-kernel
    # case is exact up to the falling-factorial correction
    n, lam, reps = 10, 0.8, 400
    rng_paths = np.zeros(n)
    for s in range(reps):
        g = gr.sample_graph(ONE, gr.grid_vertices(), n, lam, gr.CLIP, seed=s)
        rng_paths += np.array(gr.count_paths(g))
    mean = rng_paths / reps
    for l in range(1, 5):
        exact = math.perm(n, l + 1) * (lam / n) ** l
        bound = n * lam ** l
        assert exact <= bound
        se = 5 * math.sqrt(exact / reps) * (l + 1)
        assert abs(mean[l] - exact) < se


def test_sampling_deterministic():
    ts = build_uniform_mesh(100)
    for k in (chkns_kernel(), max_kernel("one_minus_x"), e2_kernel(0.3)):
        vs = gr.iid_vertices(ts) if k.matrix is None else gr.iid_vertices(build_finite_space([0.5, 0.5]))
        a = gr.sample_graph(k, vs, 3000, 1.5, seed=9)
        b = gr.sample_graph(k, vs, 3000, 1.5, seed=9)
        c = gr.sample_graph(k, vs, 3000, 1.5, seed=10)
        assert np.array_equal(a.edges, b.edges) and not np.array_equal(a.edges, c.edges)


def _check_edges_valid(g):
    e = g.edges
    assert e.ndim == 2 and e.shape[1] == 2
    assert np.all(e[:, 0] < e[:, 1]) and np.all(e >= 0) and np.all(e < g.n)
    assert np.unique(e[:, 0] * g.n + e[:, 1]).size == e.shape[0]


CASES = [
    ("buckets", e2_kernel(0.4), gr.iid_vertices(build_finite_space([0.3, 0.7])), 3.0),
    ("max-kernel", chkns_kernel(), gr.grid_vertices(), 2.0),
    ("max-kernel", dubins_kernel(), gr.grid_vertices(), 1.0),
    ("thinning", max_kernel("one_minus_x"), gr.grid_vertices(), 3.0),
    ("exact", max_kernel("one_minus_x"), gr.grid_vertices(), 3.0),
]


@pytest.mark.parametrize("strategy,k,vs,lam", CASES, ids=[f"{c[0]}-{c[1].name}" for c in CASES])
@pytest.mark.parametrize("rule", [gr.CLIP, gr.EXPONENTIAL])
def test_edge_count_mean_and_variance(strategy, k, vs, lam, rule):
    n, reps = 600, 200
    got, expect, var = [], 0.0, 0.0
    for s in range(reps):
        g = gr.sample_graph(k, vs, n, lam, rule, seed=s, strategy=strategy)
        assert g.strategy == strategy
        _check_edges_valid(g)
        got.append(g.n_edges)
        i, j = np.triu_indices(n, 1)
        p = gr.edge_probability(k(g.types[i], g.types[j]), lam, n, rule)
        expect += p.sum()
        var += (p * (1 - p)).sum()
    got = np.array(got, dtype=float)
    assert abs(got.sum() - expect) < 4 * math.sqrt(var)
    if vs.mode == gr.GRID:
        v = var / reps
        assert abs(got.var(ddof=1) - v) < 4 * v * math.sqrt(2 / (reps - 1))


@pytest.mark.parametrize("strategy", ["max-kernel", "thinning", "exact"])
def test_pair_marginals_small_graph(strategy):
    # every pair must appear with its own probability, including clipped pairs
    n, lam, reps = 6, 2.5, 3000
    k = max_kernel("one_minus_x") if strategy != "max-kernel" else dubins_kernel()
    types = np.arange(1, n + 1) / n
    i, j = np.triu_indices(n, 1)
    p = gr.edge_probability(k(types[i], types[j]), lam, n)
    hits = np.zeros((n, n))
    for s in range(reps):
        e = gr.sample_graph(k, gr.grid_vertices(), n, lam, seed=s, strategy=strategy).edges
        hits[e[:, 0], e[:, 1]] += 1
    freq = hits[i, j] / reps
    se = np.sqrt(np.maximum(p * (1 - p), 1e-12) / reps)
    assert np.all(np.abs(freq - p) <= 4.5 * se + 1e-12)


def test_naive_sampler_agrees_on_mean():
    k = max_kernel("one_minus_x")
    types = np.arange(1, 401) / 400
    naive = [gr.sample_graph_naive(k, types, 3.0, seed=s).n_edges for s in range(100)]
    fast = [gr.sample_graph(k, gr.grid_vertices(), 400, 3.0, seed=s).n_edges for s in range(100)]
    se = math.sqrt(np.var(naive) / 100 + np.var(fast) / 100)
    assert abs(np.mean(naive) - np.mean(fast)) < 4 * se


def test_skip_positions_edges():
    rng = np.random.default_rng(0)
    assert gr.skip_positions(rng, 10, 1.0).tolist() == list(range(10))
    assert gr.skip_positions(rng, 10, 0.0).size == 0
    assert gr.skip_positions(rng, 0, 0.5).size == 0
    x = gr.skip_positions(rng, 10 ** 6, 0.01)
    assert np.all(np.diff(x) > 0) and x[-1] < 10 ** 6
    assert abs(x.size - 10 ** 4) < 5 * math.sqrt(10 ** 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 12))
def test_triangular_pairs_inverse(t):
    i, j = gr.triangular_pairs(np.array([t]))
    assert 0 <= i[0] < j[0]
    assert j[0] * (j[0] - 1) // 2 + i[0] == t


def test_two_vertices_probability_one():
    # lam kappa / n = 1 forces the single edge under the clip rule
    g = gr.sample_graph(constant_kernel(2.0), gr.grid_vertices(), 2, 1.0, gr.CLIP, seed=0)
    assert g.edges.tolist() == [[0, 1]]


def test_lambda_zero_and_single_vertex():
    assert gr.sample_graph(ONE, gr.grid_vertices(), 50, 0.0, seed=0).n_edges == 0
    assert gr.sample_graph(ONE, gr.grid_vertices(), 1, 5.0, seed=0).n_edges == 0


def test_sample_graph_validation():
    with pytest.raises(ValueError):
        gr.sample_graph(ONE, gr.grid_vertices(), 0)
    with pytest.raises(ValueError):
        gr.sample_graph(ONE, gr.grid_vertices(), 10, -1.0)
    with pytest.raises(ValueError):
        gr.sample_graph(ONE, gr.grid_vertices(), 10, 1.0, edge_rule="bogus")


def test_planted_count_exact():
    assert gr.planted_count(10 ** 4) == 1000
    assert gr.planted_count(16) == 8
    for n in (2, 17, 999, 12345):
        m = gr.planted_count(n)
        assert m ** 4 <= n ** 3 < (m + 1) ** 4


def test_planted_vertices_layout_and_validation():
    ts = build_uniform_mesh(50)
    k = chkns_kernel()
    vs = gr.planted_vertices(ts, 5e-5, 2e-5)
    g = gr.sample_graph(k, vs, 1000, 0.1, seed=1)
    m = gr.planted_count(1000)
    assert np.all(g.types[:m] == 5e-5) and np.all(g.types[m:2 * m] == 2e-5)
    with pytest.raises(ValueError):
        gr.sample_graph(k, gr.planted_vertices(ts, 0.5, 0.4), 1000, 0.1, seed=1)
    with pytest.raises(ValueError):
        gr.planting_pair(max_kernel("one_minus_x"), 1.0, 100)


def test_chkns_growth_delta_zero():
    g = gr.sample_chkns_family("growth", 0.0, 100, seed=0)
    assert g.n_edges == 0 and gr.components(g).chi == 1.0
    with pytest.raises(ValueError):
        gr.sample_chkns_family("growth", 2.0, 10)
    with pytest.raises(ValueError):
        gr.sample_chkns_family("IV", 0.1, 10)


@pytest.mark.parametrize("variant", ["I", "II", "III"])
def test_chkns_variant_edge_means(variant):
    n, lam, reps = 400, 0.4, 100
    j = np.arange(1, n + 1, dtype=float)
    with np.errstate(divide="ignore"):
        inten = {"I": lam * (1 / (j - 1) - 1 / n), "II": lam * (1 / j - 1 / n),
                 "III": lam * (1 / j - 1 / (n + 1))}[variant]
    inten[0] = 0.0
    p = -np.expm1(-np.maximum(inten, 0.0))
    expect = float(np.dot(p, np.arange(n)))
    got = [gr.sample_chkns_family(variant, lam, n, seed=s).n_edges for s in range(reps)]
    var = float(np.dot(p * (1 - p), np.arange(n)))
    assert abs(sum(got) - reps * expect) < 4 * math.sqrt(reps * var)


def test_chkns_variant_ii_matches_grid_sampler_law():
    n, lam = 500, 0.3
    a = [gr.sample_chkns_family("II", lam, n, seed=s).n_edges for s in range(100)]
    b = [gr.sample_graph(chkns_kernel(), gr.grid_vertices(), n, lam, gr.EXPONENTIAL, seed=s).n_edges
         for s in range(100)]
    se = math.sqrt(np.var(a) / 100 + np.var(b) / 100)
    assert abs(np.mean(a) - np.mean(b)) < 4 * se


def test_growth_edge_count():
    g = [gr.sample_chkns_family("growth", 0.6, 2000, seed=s).n_edges for s in range(50)]
    # self-loops are dropped: a step with t vertices gives one with prob 1/t
    assert abs(np.mean(g) - 0.3 * 2000) < 4 * math.sqrt(0.3 * 0.7 * 2000 / 50) + 3


def test_run_replicates_order_and_workers():
    fn = lambda ss: int(np.random.default_rng(ss).integers(1 << 30))  # noqa: E731
    assert gr.run_replicates(fn, 5, 8, workers=1) == gr.run_replicates(fn, 5, 8, workers=3)


def test_replicate_stats_er():
    st_ = gr.replicate_stats(lambda ss: gr.sample_graph(ONE, gr.grid_vertices(), 20_000, 0.5, seed=ss),
                             1, 10)
    assert abs(st_["mean_chi"] - 2.0) < 4 * st_["se_chi"] + 0.02


def test_empirical_nk_rows():
    ts = build_finite_space([1.0])
    rows = gr.empirical_nk_convergence(ONE, gr.iid_vertices(ts), 0.5, [2000, 20000], 5, 3, seed=0)
    assert len(rows) == 6
    for r in rows:
        assert set(r) == {"n", "k", "mean", "se", "rho_k", "gap"}
        assert r["gap"] == pytest.approx(r["mean"] - r["rho_k"])
    big = [r for r in rows if r["n"] == 20000]
    assert all(abs(r["gap"]) < 5 * r["se"] + 5e-3 for r in big)
    assert big[0]["rho_k"] == pytest.approx(math.exp(-0.5))


def test_scan_rows():
    ts = build_finite_space([1.0])
    rows = gr.scan_susceptibility(ONE, gr.iid_vertices(ts), [0.5, 2.0], 5000, 4, seed=0)
    assert [r["lambda"] for r in rows] == [0.5, 2.0]
    assert rows[0]["pred_chi"] == pytest.approx(2.0) and rows[0]["status"] == "ok"
    assert math.isinf(rows[1]["pred_chi"])
    assert rows[1]["mean_chi_hat"] == pytest.approx(rows[1]["pred_chi_hat"], rel=0.15)


def test_plant_atoms_rows():
    rows = gr.plant_atoms_experiment(chkns_kernel(), [1000], 0.1, build_uniform_mesh(50), reps=3, seed=2)
    assert len(rows) == 3
    for r in rows:
        assert r["chi_planted"] > r["bound"] > r["chi_control"]
