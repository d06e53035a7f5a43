import math
from dataclasses import replace

import networkx as nx
import numpy as np
import pytest

from conftest import dense_incidence
from geotransport.core import validate_instance
from geotransport.errors import ConstructionError, InfeasibleFlowError
from geotransport.generators import generate_instance
from geotransport.quadtree import QuadtreeParams, build_quadtree
from geotransport.spanner import (
    EDGE_CLIQUE,
    EDGE_PARENT,
    EDGE_POINT,
    apply_incidence,
    build_sparse_graph,
    check_balanced,
    dump_graph,
    flow_cost,
    graph_distance,
    route_supplies,
)


def _nx_graph(graph):
    g = nx.Graph()
    g.add_nodes_from(range(graph.num_vertices))
    for t, h, w in zip(graph.tail.tolist(), graph.head.tolist(), graph.length.tolist()):
        g.add_edge(t, h, weight=w)
    return g


def test_single_point_graph():
    inst = validate_instance([[0.5, 0.5]], [0.0])
    graph = build_sparse_graph(build_quadtree(inst, QuadtreeParams(eps0=0.25, n=1)))
    assert graph.num_vertices == 2
    assert graph.num_edges == 1
    assert graph.kind[0] == EDGE_POINT


def test_edge_counts_match_the_tree(make_tree):
    inst, tree, graph = make_tree(40, 2, seed=3)
    cliques = sum(len(c.netpoints) * (len(c.netpoints) - 1) // 2 for c in tree.cells)
    links = sum(1 for net in tree.netpoints if net.parent >= 0)
    stats = graph.stats()
    assert stats["point_edges"] == inst.n
    assert stats["clique_edges"] == cliques
    assert stats["parent_edges"] == links
    assert graph.num_vertices == inst.n + len(tree.netpoints)
    assert np.all(graph.tail < graph.head)
    np.testing.assert_array_equal(graph.tail[graph.point_edges], np.arange(inst.n))


def test_every_point_has_exactly_one_edge(make_tree):
    inst, _, graph = make_tree(30, 3, seed=1)
    ends = np.concatenate([graph.tail, graph.head])
    degree = np.bincount(ends, minlength=graph.num_vertices)
    assert np.all(degree[:inst.n] == 1)
    for v in range(inst.n):
        assert graph.incident(v).tolist() == [v]


def test_edge_lengths_are_euclidean(make_tree):
    _, _, graph = make_tree(20, 2, seed=2)
    expected = np.linalg.norm(graph.positions[graph.head] - graph.positions[graph.tail], axis=1)
    np.testing.assert_allclose(graph.length, expected)
    assert set(np.unique(graph.kind).tolist()) <= {EDGE_POINT, EDGE_CLIQUE, EDGE_PARENT}


def test_incidence_matches_a_dense_matrix(make_tree):
    _, _, graph = make_tree(25, 2, seed=4)
    A = dense_incidence(graph.num_vertices, graph.tail, graph.head)
    f = np.random.default_rng(0).normal(size=graph.num_edges)
    div = apply_incidence(graph, f)
    np.testing.assert_allclose(div, A @ f, atol=1e-12)
    assert abs(div.sum()) < 1e-9
    assert flow_cost(graph, f) == pytest.approx(float(np.abs(f) @ graph.length))
    with pytest.raises(ValueError):
        apply_incidence(graph, f[:-1])


def test_route_supplies_moves_mass_to_leaf_net_points(make_tree):
    inst, tree, graph = make_tree(30, 2, seed=5)
    f0, b_prime = route_supplies(graph, inst)
    assert np.all(b_prime[:inst.n] == 0.0)
    assert abs(b_prime.sum()) < 1e-9
    b_star = np.zeros(graph.num_vertices)
    b_star[:inst.n] = inst.supplies
    np.testing.assert_allclose(apply_incidence(graph, f0) + b_prime, b_star, atol=1e-12)
    leaves = inst.n + tree.point_netpoint
    np.testing.assert_allclose(b_prime[leaves], inst.supplies)


def test_route_supplies_for_a_pair(pair_instance):
    tree = build_quadtree(pair_instance, QuadtreeParams(eps0=0.25, n=2))
    graph = build_sparse_graph(tree)
    _, b_prime = route_supplies(graph, pair_instance)
    assert np.count_nonzero(b_prime) == 2
    assert sorted(b_prime[b_prime != 0].tolist()) == [-1.0, 1.0]


def test_graph_distance_matches_networkx_and_dominates_euclid(make_tree):
    inst, _, graph = make_tree(40, 2, seed=6)
    g = _nx_graph(graph)
    rng = np.random.default_rng(1)
    for _ in range(20):
        p, q = (int(x) for x in rng.choice(inst.n, size=2, replace=False))
        dist = graph_distance(graph, p, q)
        assert dist == pytest.approx(nx.dijkstra_path_length(g, p, q))
        assert dist >= np.linalg.norm(inst.points[p] - inst.points[q]) - 1e-12
    assert graph_distance(graph, 0, 0) == 0.0
    with pytest.raises(ValueError):
        graph_distance(graph, 0, graph.num_vertices)


def test_graph_is_connected(make_tree):
    _, _, graph = make_tree(50, 2, seed=7)
    assert nx.is_connected(_nx_graph(graph))


def test_check_balanced_and_dump(make_tree):
    _, _, graph = make_tree(10, 2, seed=8)
    check_balanced(np.array([1.0, -1.0]))
    check_balanced(np.array([1e-20, -1e-20 * (1 + 1e-12)]))
    with pytest.raises(InfeasibleFlowError):
        check_balanced(np.array([1.0, -0.5]))
    with pytest.raises(InfeasibleFlowError):
        check_balanced(np.array([1e-20, -0.5e-20]))
    lines = dump_graph(graph).splitlines()
    assert len(lines) == graph.num_edges
    t, h, w = lines[0].split()
    assert int(t) < int(h) and float(w) >= 0.0


def test_unreachable_vertex_raises(make_tree):
    _, _, graph = make_tree(6, 2, seed=9)
    cut = replace(graph, indptr=np.zeros_like(graph.indptr))
    with pytest.raises(ConstructionError):
        graph_distance(cut, 0, 1)


def test_stretch_over_many_shifts():
    inst = generate_instance(64, 2, supplies="random", seed=13)
    rng = np.random.default_rng(13)
    ratios = []
    for seed in range(20):
        params = QuadtreeParams.from_epsilon(0.5, inst.n, seed)
        graph = build_sparse_graph(build_quadtree(inst, params))
        for _ in range(10):
            p, q = (int(x) for x in rng.choice(inst.n, size=2, replace=False))
            ratios.append(graph_distance(graph, p, q) / np.linalg.norm(inst.points[p] - inst.points[q]))
    assert len(ratios) == 200
    assert min(ratios) >= 1.0 - 1e-9
    assert np.mean(ratios) <= 1.0 + 8.0 * params.eps0 * math.log2(inst.n)
