import math
from fractions import Fraction

import numpy as np
import pytest

from geotransport.core import validate_instance
from geotransport.errors import ConstructionError
from geotransport import quadtree as quadtree_module
from geotransport.generators import generate_instance
from geotransport.quadtree import (
    RULE_COMPRESS,
    RULE_SPLIT,
    QuadtreeParams,
    build_quadtree,
    check_properties,
    dump_quadtree,
    resample,
    simple_subquadtrees,
    subdivide_and_net,
)


def _leaf_of(tree, p):
    for cell in tree.cells:
        if cell.is_leaf and int(tree.perm[cell.point_start]) == p:
            return cell
    raise AssertionError(f"no leaf holds point {p}")


def test_eps0_is_a_power_of_two_below_the_target():
    params = QuadtreeParams.from_epsilon(0.5, 64)
    assert params.eps0 == 1.0 / 16.0
    assert params.grid == 16
    assert params.grid_bits == 4
    assert QuadtreeParams.from_epsilon(1.0, 2).eps0 == 0.5


@pytest.mark.parametrize("eps0", [0.0, 0.3, 0.75])
def test_params_reject_bad_eps0(eps0):
    with pytest.raises(ValueError):
        QuadtreeParams(eps0=eps0, n=4)


def test_single_point_gives_a_unit_leaf():
    inst = validate_instance([[2.0, -1.0]], [0.0])
    tree = subdivide_and_net(build_quadtree(inst, QuadtreeParams(eps0=0.25, n=1)))
    assert len(tree.cells) == 1
    assert tree.root.is_leaf
    assert tree.root.side == pytest.approx(1.0)
    assert len(tree.netpoints) == 1
    assert check_properties(tree).passed


def test_root_square_is_three_times_the_extent():
    inst = validate_instance([[0.0, 0.0], [1.0, 0.5]], [1.0, -1.0])
    tree = build_quadtree(inst, QuadtreeParams(eps0=0.25, n=2, seed=3))
    root = tree.root
    assert root.side == pytest.approx(3.0)
    assert np.all(root.corner <= 0.0)
    assert np.all(root.corner + root.side > 1.0)


@pytest.mark.parametrize("seed", range(8))
def test_pair_separates_at_the_first_level_whose_grid_splits_it(seed):
    inst = validate_instance([[0.0, 0.0], [1.0, 0.0]], [1.0, -1.0])
    tree = build_quadtree(inst, QuadtreeParams(eps0=0.25, n=2, seed=seed))
    frame = tree.subtrees[0]
    origin = [Fraction(c) for c in frame.corner.tolist()]
    side = Fraction(frame.side)
    z = [[(Fraction(x) - o) / side for x, o in zip(p, origin)] for p in inst.points.tolist()]
    level = 0
    while all(math.floor(a * 2**level) == math.floor(b * 2**level) for a, b in zip(*z)):
        level += 1
    assert len(tree.subtrees) == 1
    assert _leaf_of(tree, 0).level == level
    assert _leaf_of(tree, 1).level == level
    assert _leaf_of(tree, 0).parent == _leaf_of(tree, 1).parent


def test_tight_cluster_triggers_a_compressed_child():
    pts = [[0.0, 0.0], [1e-10, 1e-10], [1.0, 0.0], [0.0, 1.0]]
    inst = validate_instance(pts, [1.0, -1.0, 1.0, -1.0])
    tree = build_quadtree(inst, QuadtreeParams(eps0=0.25, n=4, seed=1))
    assert len(tree.subtrees) == 2
    jump = tree.cells[tree.subtrees[1].root_cell]
    assert jump.rule == RULE_COMPRESS
    assert jump.side == pytest.approx(3e-10)
    assert sorted(tree.points_of(jump).tolist()) == [0, 1]
    report = check_properties(tree)
    assert report.rule2_ok
    assert tree.stats()["rule2_jumps"] == 1


def test_nested_cluster_generator_compresses():
    inst = generate_instance(8, 2, spread=1e12, supplies="cluster", seed=0)
    tree = build_quadtree(inst, QuadtreeParams.from_epsilon(0.5, inst.n, 0))
    assert len(tree.subtrees) >= 2


@pytest.mark.parametrize("seed", range(3))
def test_three_nested_levels_give_three_parts(seed):
    inst = generate_instance(32, 2, spread=1e12, supplies="cluster", seed=seed, rule2_exponent=2.0)
    tree = build_quadtree(inst, QuadtreeParams.from_epsilon(0.5, inst.n, seed, rule2_exponent=2.0))
    jumps = sum(1 for c in tree.cells if c.rule == RULE_COMPRESS)
    assert jumps == 2
    assert len(simple_subquadtrees(tree)) == 1 + jumps == 3


@pytest.mark.parametrize("seed", range(4))
def test_cells_partition_their_points(make_tree, seed):
    inst, tree, _ = make_tree(40, 2, seed=seed)
    assert sorted(tree.perm.tolist()) == list(range(inst.n))
    for cell in tree.cells:
        if cell.is_leaf:
            assert cell.npoints == 1
            continue
        kids = [tree.cells[c] for c in cell.children]
        assert kids[0].point_start == cell.point_start
        assert kids[-1].point_end == cell.point_end
        for a, b in zip(kids, kids[1:]):
            assert a.point_end == b.point_start
        if kids[0].rule == RULE_SPLIT:
            assert all(k.side == pytest.approx(cell.side / 2) for k in kids)


def test_points_lie_inside_their_cells_and_subcells(make_tree):
    inst, tree, _ = make_tree(60, 3, seed=2)
    for cell, assigned in zip(tree.cells, tree.cell_assignment):
        pts = inst.points[tree.points_of(cell)]
        slack = 1e-9 * cell.side
        assert np.all(pts >= cell.corner - slack)
        assert np.all(pts < cell.corner + cell.side + slack)
        for p, nid in zip(pts, assigned.tolist()):
            net = tree.netpoints[nid]
            assert np.all(np.abs(p - net.center) <= net.side / 2 + slack)


def test_net_points_nest_in_their_parent_subcell(make_tree):
    _, tree, _ = make_tree(50, 2, seed=4)
    for net in tree.netpoints:
        if net.parent < 0:
            continue
        parent = tree.netpoints[net.parent]
        assert parent.cell == tree.cells[net.cell].parent
        slack = 1e-9 * parent.side
        assert np.all(net.center - net.side / 2 >= parent.center - parent.side / 2 - slack)
        assert np.all(net.center + net.side / 2 <= parent.center + parent.side / 2 + slack)


def test_single_child_chains_stay_short(make_tree):
    inst, tree, _ = make_tree(64, 2, seed=7, supplies="cluster", spread=1e6)
    n, eps0 = inst.n, tree.eps0
    bound = math.ceil(math.log2(3 * n**8 / eps0)) + 1
    longest = 0
    for cell in tree.cells:
        if cell.parent >= 0 and len(tree.cells[cell.parent].children) == 1:
            continue
        length, c = 0, cell
        while len(c.children) == 1 and tree.cells[c.children[0]].rule == RULE_SPLIT:
            length += 1
            c = tree.cells[c.children[0]]
        longest = max(longest, length)
    assert longest <= bound


def test_properties_pass_on_uniform_points(make_tree):
    _, tree, _ = make_tree(100, 2, seed=0)
    report = check_properties(tree)
    assert report.passed, report.witness
    assert report.cell_count <= report.cell_bound


@pytest.mark.slow
def test_properties_hold_for_most_shifts():
    inst = generate_instance(100, 2, seed=11)
    passed = 0
    for seed in range(50):
        tree = build_quadtree(inst, QuadtreeParams.from_epsilon(0.5, inst.n, seed))
        passed += check_properties(tree).passed
    assert passed >= 45


def test_moat_violation_is_reported():
    pts = [[0.0, 0.0], [1.0, 1.0], [0.5 + 1e-10, 0.2]]
    inst = validate_instance(pts, [1.0, -0.5, -0.5])
    tree = build_quadtree(inst, QuadtreeParams(eps0=0.25, n=3, random_shift=False))
    report = check_properties(tree)
    assert not report.moats_ok
    assert not report.passed
    assert report.moat_violations >= 1
    assert "moat" in report.witness


def test_same_seed_same_tree_and_resample_moves_the_grid(make_tree):
    inst, tree, _ = make_tree(30, 2, seed=5)
    again = build_quadtree(inst, tree.params)
    assert dump_quadtree(subdivide_and_net(again)) == dump_quadtree(tree)
    other = resample(tree, seed=99)
    assert other.subdivided
    assert not np.allclose(other.root.corner, tree.root.corner)


def test_parts_are_listed_inner_first():
    pts = [[0.0, 0.0], [1e-10, 1e-10], [1.0, 0.0], [0.0, 1.0]]
    inst = validate_instance(pts, [1.0, -1.0, 1.0, -1.0])
    tree = build_quadtree(inst, QuadtreeParams(eps0=0.25, n=4, seed=1))
    order = [s.id for s in simple_subquadtrees(tree)]
    pos = {sid: i for i, sid in enumerate(order)}
    for sub in tree.subtrees:
        if sub.parent >= 0:
            assert pos[sub.id] < pos[sub.parent]


def test_dump_lists_cells_then_subcells(make_tree):
    _, tree, _ = make_tree(12, 2, seed=1)
    lines = dump_quadtree(tree).splitlines()
    assert len(lines) == len(tree.cells) + len(tree.netpoints)
    assert lines[0].startswith("cell 0 -1 ")
    assert lines[-1].startswith("subcell ")


def test_empty_instance_is_rejected():
    class Empty:
        n = 0

    with pytest.raises(ConstructionError):
        build_quadtree(Empty(), QuadtreeParams(eps0=0.25, n=1))


def test_construction_sorts_once_and_relinks_near_linearly(monkeypatch):
    # a geometric chain keeps peeling one point per level off the largest cell
    n = 40
    points = [[2.0**-i, 3.0**-i] for i in range(n)]
    inst = validate_instance(points, [1.0, -1.0] + [0.0] * (n - 2))
    sort_calls, linked = [], []
    original_link = quadtree_module._TreeBuilder._link

    def counting_sorted(iterable, **kwargs):
        out = sorted(iterable, **kwargs)
        sort_calls.append(len(out))
        return out

    def counting_link(self, j, order):
        linked.append(len(order))
        return original_link(self, j, order)

    monkeypatch.setattr(quadtree_module, "sorted", counting_sorted, raising=False)
    monkeypatch.setattr(quadtree_module._TreeBuilder, "_link", counting_link)
    tree = build_quadtree(inst, QuadtreeParams.from_epsilon(0.5, n, 3))

    assert sort_calls == [n, n]
    assert sum(linked) <= 2 * n * (1 + math.log2(n))
    assert sorted(tree.perm.tolist()) == list(range(n))
    assert check_properties(tree).cells_ok
