import math

import numpy as np
import pytest

from conftest import dense_incidence, dense_preconditioner, random_balanced
from geotransport.errors import InfeasibleFlowError
from geotransport.generators import generate_instance
from geotransport.precond import (
    LAMBDA_CONSTANT,
    apply_B,
    apply_B_norm,
    apply_BA,
    apply_BA_transpose,
    build_context,
    greedy_bound,
    greedy_flow,
    local_incidence,
)
from geotransport.quadtree import QuadtreeParams, build_quadtree
from geotransport.solvers import decompose
from geotransport.solvers.exact_solver import solve_exact
from geotransport.spanner import build_sparse_graph, route_supplies


@pytest.fixture
def ctx(make_tree):
    _, tree, graph = make_tree(24, 2, seed=3)
    return build_context(tree, graph, tree.subtrees[0])


def test_context_covers_the_part(make_tree):
    inst, tree, graph = make_tree(24, 2, seed=3)
    ctx = build_context(tree, graph, tree.subtrees[0])
    assert ctx.num_vertices == len(tree.netpoints)
    np.testing.assert_array_equal(np.sort(ctx.vertices), inst.n + np.arange(len(tree.netpoints)))
    assert ctx.num_edges == graph.num_edges - inst.n
    assert ctx.lam == pytest.approx(LAMBDA_CONSTANT * math.log2(inst.n / tree.eps0))
    assert np.all(ctx.tail != ctx.head)
    np.testing.assert_allclose(ctx.length, graph.length[ctx.edges])
    for i, p in enumerate(ctx.parent.tolist()):
        if p >= 0:
            assert ctx.depth[i] == ctx.depth[p] + 1
            assert ctx.side[p] == pytest.approx(2 * ctx.side[i])


def test_operators_match_dense_matrices(ctx):
    B = dense_preconditioner(ctx)
    A = dense_incidence(ctx.num_vertices, ctx.tail, ctx.head)
    rng = np.random.default_rng(0)
    f = rng.normal(size=ctx.num_edges)
    y = rng.normal(size=ctx.num_vertices)
    b = random_balanced(rng, ctx.num_vertices)
    np.testing.assert_allclose(local_incidence(ctx, f), A @ f, atol=1e-12)
    np.testing.assert_allclose(apply_B(ctx, b), B @ b, atol=1e-12)
    np.testing.assert_allclose(apply_BA(ctx, f), B @ A @ f, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(apply_BA_transpose(ctx, y), (B @ A).T @ y, rtol=1e-10, atol=1e-12)
    norm, terms = apply_B_norm(ctx, b)
    assert norm == pytest.approx(np.abs(B @ b).sum())
    assert terms.shape == (ctx.num_vertices,)


def test_transpose_is_the_adjoint(ctx):
    rng = np.random.default_rng(1)
    for _ in range(5):
        f = rng.normal(size=ctx.num_edges)
        y = rng.normal(size=ctx.num_vertices)
        assert np.dot(apply_BA(ctx, f), y) == pytest.approx(np.dot(f, apply_BA_transpose(ctx, y)))


def test_step_size_sums_match_the_dense_operator(ctx):
    K = np.abs(dense_preconditioner(ctx) @ dense_incidence(ctx.num_vertices, ctx.tail, ctx.head))
    np.testing.assert_allclose(ctx.col_sum, K.sum(axis=0), rtol=1e-12)
    np.testing.assert_allclose(ctx.row_sum, K.sum(axis=1), rtol=1e-12)


def test_apply_count_tracks_operator_calls(ctx):
    before = ctx.apply_count
    apply_BA(ctx, np.zeros(ctx.num_edges))
    apply_BA_transpose(ctx, np.zeros(ctx.num_vertices))
    assert ctx.apply_count == before + 2


@pytest.mark.parametrize("seed", range(4))
def test_greedy_is_feasible_and_within_its_bound(ctx, seed):
    rng = np.random.default_rng(seed)
    b = random_balanced(rng, ctx.num_vertices)
    f = greedy_flow(ctx, b)
    np.testing.assert_allclose(local_incidence(ctx, f), b, atol=1e-9)
    cost = float(np.abs(f) @ ctx.length)
    assert cost <= greedy_bound(ctx, b) * (1 + 1e-9)

    _sandwich(ctx, b)


def _sandwich(ctx, b):
    """||B b||_1 <= OPT <= greedy <= kappa_bound * ||B b||_1."""
    norm, _ = apply_B_norm(ctx, b)
    opt = solve_exact(ctx, b).cost
    f = greedy_flow(ctx, b)
    greedy = float(np.abs(f) @ ctx.length)
    assert norm <= opt * (1 + 1e-9)
    assert opt <= greedy * (1 + 1e-9)
    assert greedy <= ctx.kappa_bound * norm * (1 + 1e-9)


@pytest.mark.parametrize("seed", range(25))
def test_lower_and_upper_bounds_sandwich_the_optimum(seed):
    n = 12 + seed
    inst = generate_instance(n, 2, spread=1e6, supplies="cluster", seed=seed, rule2_exponent=2.0)
    tree = build_quadtree(inst, QuadtreeParams.from_epsilon(0.5, inst.n, seed, rule2_exponent=2.0))
    graph = build_sparse_graph(tree)
    subproblems, _ = decompose(graph, tree, route_supplies(graph, inst)[1])
    assert len(subproblems) >= 2
    rng = np.random.default_rng(seed)
    for sp in subproblems:
        ctx = sp.context
        assert np.all(ctx.col_sum <= ctx.length * (1 + 1e-9))
        _sandwich(ctx, sp.b0)
        _sandwich(ctx, random_balanced(rng, ctx.num_vertices))


def test_greedy_cancels_root_pair_along_one_edge(ctx):
    if len(ctx.roots) < 2:
        pytest.skip("root cell holds a single subcell")
    b = np.zeros(ctx.num_vertices)
    u, v = int(ctx.roots[0]), int(ctx.roots[1])
    b[u], b[v] = 1.0, -1.0
    f = greedy_flow(ctx, b)
    assert np.count_nonzero(f) == 1
    assert np.abs(f).sum() == pytest.approx(1.0)


def test_zero_and_unbalanced_inputs(ctx):
    zero = np.zeros(ctx.num_vertices)
    assert not np.any(greedy_flow(ctx, zero))
    assert apply_B_norm(ctx, zero)[0] == 0.0
    bad = np.zeros(ctx.num_vertices)
    bad[0] = 1.0
    with pytest.raises(InfeasibleFlowError):
        greedy_flow(ctx, bad)
    with pytest.raises(InfeasibleFlowError):
        apply_B_norm(ctx, bad)
    with pytest.raises(ValueError):
        apply_B(ctx, np.zeros(ctx.num_vertices + 1))


@pytest.mark.parametrize("scale", [1.0, 1e-20])
def test_balance_check_is_relative_to_mass(ctx, scale):
    b = np.zeros(ctx.num_vertices)
    b[0], b[-1] = scale, -0.5 * scale
    with pytest.raises(InfeasibleFlowError):
        apply_B_norm(ctx, b)
    with pytest.raises(InfeasibleFlowError):
        greedy_flow(ctx, b)
    with pytest.raises(InfeasibleFlowError):
        solve_exact(ctx, b)
    b[-1] = -scale
    assert apply_B_norm(ctx, b)[0] > 0.0
