"""Synthetic instances: uniform points or nested clusters, with unit or real supplies."""
from __future__ import annotations

import logging
import math

import numpy as np

from geotransport.config import settings
from geotransport.core import TransportInstance, validate_instance
from geotransport.errors import InstanceValidationError
from geotransport.quadtree import QuadtreeParams

logger = logging.getLogger("geotransport.generators")

SUPPLY_MODES = ("unit", "random", "cluster")
MAX_SPREAD = 1e300


def _unit_supplies(n: int, rng: np.random.Generator) -> np.ndarray:
    mu = np.zeros(n)
    half = n // 2
    mu[:half] = 1.0
    mu[half:2 * half] = -1.0
    return rng.permutation(mu)


def _random_supplies(n: int, rng: np.random.Generator) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    mu = rng.normal(size=n)
    return mu - mu.mean()


def cluster_gap(n: int, *, epsilon: float | None = None, rule2_exponent: float | None = None) -> float:
    """Scale ratio between nested clusters at which Rule 2 compresses the inner one."""
    epsilon = settings.DEFAULT_EPSILON if epsilon is None else epsilon
    exponent = settings.RULE2_EXPONENT if rule2_exponent is None else rule2_exponent
    eps0 = QuadtreeParams.from_epsilon(epsilon, max(n, 2)).eps0
    return 32.0 * float(max(n, 2)) ** exponent / eps0


def _nested_clusters(n: int, d: int, spread: float, gap: float, rng: np.random.Generator) -> np.ndarray:
    """Clusters nested at the origin, ``ratio >= gap`` apart where the spread allows it.

    Level l fills [s/2, s)^d with s = ratio^-l and the innermost level fills [0, 1/spread)^d.
    Coordinates near the origin keep full relative precision at any depth.
    """
    levels = max(1, int(math.log(spread) / math.log(gap) + 1e-9))
    levels = min(levels, max(1, n // 2 - 1))
    ratio = spread ** (1.0 / levels)
    chunks = np.array_split(np.arange(n), levels + 1)
    points = np.empty((n, d))
    for level, idx in enumerate(chunks):
        side = 1.0 / spread if level == levels else ratio ** -level
        low = 0.0 if level == levels else 0.5
        points[idx] = side * (low + (1.0 - low) * rng.uniform(size=(idx.shape[0], d)))
    logger.debug("Nested %d cluster levels at ratio %.3g (Rule-2 gap %.3g)", levels, ratio, gap)
    return points


def generate_instance(
    n: int,
    d: int = 2,
    *,
    spread: float = 1.0,
    supplies: str = "random",
    seed: int = 0,
    epsilon: float | None = None,
    rule2_exponent: float | None = None,
) -> TransportInstance:
    """Random instance; ``spread`` > 1 squeezes part of the points into ever smaller cubes.

    unit: +1/-1 supplies on a uniform cloud; random: balanced normal supplies on a uniform
    cloud; cluster: balanced normal supplies on nested clusters. For unit and random a
    spread above 1 moves half of the points into one cube of side 1/spread. For cluster, the
    scale gap between levels is sized for Rule 2 under ``epsilon`` and ``rule2_exponent``
    (settings defaults), so the spread decides how many levels get compressed.
    """
    if n < 1 or d < 1:
        raise InstanceValidationError(f"Need n >= 1 and d >= 1, got n={n}, d={d}")
    if not 1.0 <= spread <= MAX_SPREAD:
        raise InstanceValidationError(f"Spread must lie in [1, {MAX_SPREAD:g}], got {spread}")
    if supplies not in SUPPLY_MODES:
        raise InstanceValidationError(f"Unknown supply mode {supplies!r} (choose from {', '.join(SUPPLY_MODES)})")

    rng = np.random.default_rng(seed)
    if supplies == "cluster":
        gap = cluster_gap(n, epsilon=epsilon, rule2_exponent=rule2_exponent)
        points = _nested_clusters(n, d, spread, gap, rng)
        mu = _random_supplies(n, rng)
    else:
        points = rng.uniform(size=(n, d))
        if spread > 1.0 and n >= 2:
            half = n // 2
            corner = rng.uniform(size=d) * (1.0 - 1.0 / spread)
            points[:half] = corner + rng.uniform(size=(half, d)) / spread
        mu = _unit_supplies(n, rng) if supplies == "unit" else _random_supplies(n, rng)

    logger.debug("Generated %s instance with n=%d, d=%d, spread=%g", supplies, n, d, spread)
    return validate_instance(points, mu)
