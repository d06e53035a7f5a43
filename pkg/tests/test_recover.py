import numpy as np
import pytest

from geotransport.commands import solve_instance
from geotransport.core import TransportationMap, collapse_coincident, map_cost, map_divergence, validate_instance
from geotransport.errors import InfeasibleFlowError
from geotransport.generators import generate_instance
from geotransport.recover import merge_coincident, recover_map
from geotransport.solvers import SolverConfig, run_pipeline


def _recover(instance, config=None, *, debug=False):
    result = run_pipeline(instance, config or SolverConfig(seed=2))
    tmap = recover_map(result.graph, result.tree, result.flow, debug=debug)
    return result, tmap


def test_pair_becomes_a_single_row(pair_instance):
    result, tmap = _recover(pair_instance, debug=True)
    assert list(tmap) == [(0, 1, 1.0)]
    assert map_cost(pair_instance, tmap) <= result.cost + 1e-12


def test_zero_supplies_give_an_empty_map():
    inst = validate_instance([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], [0.0, 0.0, 0.0])
    _, tmap = _recover(inst)
    assert len(tmap) == 0


@pytest.mark.parametrize("seed", range(5))
def test_map_meets_supplies_and_never_costs_more_than_the_flow(seed):
    inst = generate_instance(30, 2, supplies="random", seed=seed)
    result, tmap = _recover(inst, SolverConfig(seed=seed), debug=True)
    np.testing.assert_allclose(map_divergence(inst, tmap), inst.supplies, atol=1e-9)
    assert map_cost(inst, tmap) <= result.cost * (1 + 1e-9)
    assert np.all(tmap.amounts > 0.0)


def test_recovery_through_a_compressed_part():
    pts = [[0.0, 0.0], [1e-10, 1e-10], [1.0, 0.0], [0.0, 1.0], [0.6, 0.7]]
    inst = validate_instance(pts, [2.0, 0.5, -1.0, -1.0, -0.5])
    result, tmap = _recover(inst, SolverConfig(seed=1, epsilon=1.0), debug=True)
    assert len(result.tree.subtrees) >= 2
    np.testing.assert_allclose(map_divergence(inst, tmap), inst.supplies, atol=1e-9)
    assert map_cost(inst, tmap) <= result.cost * (1 + 1e-9)


def test_unit_supplies_in_three_dimensions():
    inst = generate_instance(40, 3, supplies="unit", seed=4)
    result, tmap = _recover(inst, SolverConfig(seed=4, backend="sherman"))
    np.testing.assert_allclose(map_divergence(inst, tmap), inst.supplies, atol=1e-9)
    assert map_cost(inst, tmap) <= result.cost * (1 + 1e-9)


def test_infeasible_flow_is_rejected(pair_instance):
    result = run_pipeline(pair_instance, SolverConfig())
    with pytest.raises(InfeasibleFlowError):
        recover_map(result.graph, result.tree, np.zeros(result.graph.num_edges) + 1.0)
    with pytest.raises(ValueError):
        recover_map(result.graph, result.tree, np.zeros(3))


def test_merge_coincident_is_identity_without_duplicates(pair_instance):
    _, coincidence = collapse_coincident(pair_instance)
    tmap = TransportationMap.from_entries([(0, 1, 1.0)])
    assert merge_coincident(tmap, coincidence) is tmap


def test_merge_coincident_splits_rows_over_group_members():
    inst = validate_instance([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], [1.0, 1.0, -2.0])
    collapsed, coincidence = collapse_coincident(inst)
    tmap = merge_coincident(TransportationMap.from_entries([(0, 1, 2.0)]), coincidence)
    assert sorted(tmap) == [(0, 2, 1.0), (1, 2, 1.0)]
    assert map_cost(inst, tmap) == pytest.approx(2.0)


def test_merge_coincident_settles_opposite_supplies_inside_a_group():
    inst = validate_instance([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [2.0, -1.0, -0.5, -0.5])
    collapsed, coincidence = collapse_coincident(inst)
    np.testing.assert_allclose(collapsed.supplies, [1.0, -0.5, -0.5])
    tmap = merge_coincident(TransportationMap.from_entries([(0, 1, 0.5), (0, 2, 0.5)]), coincidence)
    np.testing.assert_allclose(map_divergence(inst, tmap), inst.supplies, atol=1e-12)
    assert map_cost(inst, tmap) == pytest.approx(0.5 + 1.0)


def test_merge_coincident_forwards_mass_through_a_group():
    inst = validate_instance([[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [1.0, 0.5, -0.5, -1.0])
    _, coincidence = collapse_coincident(inst)
    # representative 1 holds net supply 0 but forwards one unit
    tmap = merge_coincident(TransportationMap.from_entries([(0, 1, 1.0), (1, 2, 1.0)]), coincidence)
    np.testing.assert_allclose(map_divergence(inst, tmap), inst.supplies, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_full_pipeline_with_duplicates(seed):
    rng = np.random.default_rng(seed)
    base = rng.uniform(size=(12, 2))
    pts = np.vstack([base, base[:6]])
    mu = rng.normal(size=18)
    mu -= mu.mean()
    inst = validate_instance(pts, mu)
    tmap, result = solve_instance(inst, SolverConfig(seed=seed, k=2), debug=True)
    assert result.tree.n == 12
    np.testing.assert_allclose(map_divergence(inst, tmap), inst.supplies, atol=1e-9)
    assert map_cost(inst, tmap) <= result.cost * (1 + 1e-9)
