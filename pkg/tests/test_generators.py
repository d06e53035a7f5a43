import math

import numpy as np
import pytest

from geotransport.errors import InstanceValidationError
from geotransport.generators import MAX_SPREAD, SUPPLY_MODES, cluster_gap, generate_instance


@pytest.mark.parametrize("mode", SUPPLY_MODES)
def test_supplies_are_balanced(mode):
    inst = generate_instance(33, 3, supplies=mode, seed=1)
    assert inst.points.shape == (33, 3)
    assert math.fsum(inst.supplies.tolist()) == pytest.approx(0.0, abs=1e-12)


def test_unit_supplies():
    inst = generate_instance(11, 2, supplies="unit", seed=2)
    values = sorted(inst.supplies.tolist())
    assert values.count(1.0) == 5
    assert values.count(-1.0) == 5
    assert values.count(0.0) == 1


def test_same_seed_same_instance():
    a = generate_instance(20, 2, spread=1e6, supplies="cluster", seed=7)
    b = generate_instance(20, 2, spread=1e6, supplies="cluster", seed=7)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.supplies, b.supplies)


def test_spread_squeezes_half_of_the_points():
    inst = generate_instance(40, 2, spread=1e4, supplies="unit", seed=3)
    inner = inst.points[:20]
    assert np.all(inner.max(axis=0) - inner.min(axis=0) <= 1e-4)
    assert np.all(inst.points >= 0.0) and np.all(inst.points <= 1.0)


def test_cluster_mode_reaches_the_requested_scale():
    inst = generate_instance(30, 2, spread=1e12, supplies="cluster", seed=5)
    inner = inst.points[-15:]
    assert np.max(inner.max(axis=0) - inner.min(axis=0)) <= 1e-12


def test_single_point():
    inst = generate_instance(1, 2, supplies="random", seed=0)
    assert inst.supplies.tolist() == [0.0]


@pytest.mark.parametrize(
    "kwargs",
    [dict(n=0), dict(n=5, d=0), dict(n=5, spread=0.5), dict(n=5, spread=float("inf")), dict(n=5, spread=MAX_SPREAD * 10), dict(n=5, supplies="zipf")],
)
def test_rejects_bad_arguments(kwargs):
    with pytest.raises(InstanceValidationError):
        generate_instance(**kwargs)


def test_cluster_gap_follows_the_rule2_threshold():
    # n=32, epsilon=0.5: eps0 = 1/16
    assert cluster_gap(32, epsilon=0.5, rule2_exponent=2.0) == pytest.approx(32.0 * 32**2 * 16)
    assert cluster_gap(32, epsilon=0.5, rule2_exponent=3.0) == pytest.approx(32.0 * 32**3 * 16)


def test_deep_nesting_keeps_points_distinct():
    inst = generate_instance(30, 2, spread=1e36, supplies="cluster", seed=4, rule2_exponent=2.0)
    assert len(np.unique(inst.points, axis=0)) == 30
    assert np.all(inst.points >= 0.0) and np.all(inst.points < 1.0)
    # six levels, 1e6 apart, innermost inside [0, 1e-36)
    inner = inst.points[-4:]
    assert inner.max() < 1e-36
    assert inst.points[:5].min() >= 0.5
