"""Problem instances, transportation maps and their cost accounting."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
import numpy.typing as npt

from geotransport.config import settings
from geotransport.errors import InstanceValidationError

logger = logging.getLogger("geotransport.core")

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


# ---------- Instances ----------

@dataclass(frozen=True)
class TransportInstance:
    """Points in R^d with one real supply each; supplies sum to zero."""
    points: FloatArray
    supplies: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", _frozen(np.array(self.points, dtype=np.float64)))
        object.__setattr__(self, "supplies", _frozen(np.array(self.supplies, dtype=np.float64)))

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])

    @property
    def total_mass(self) -> float:
        """Sum of |mu| over all points."""
        return math.fsum(np.abs(self.supplies).tolist())


def validate_instance(
    raw_points: Sequence[Sequence[float]] | np.ndarray,
    raw_supplies: Sequence[float] | np.ndarray,
    tolerance: float | None = None,
    *,
    max_dimension: int | None = None,
) -> TransportInstance:
    """Check raw input and return a normalized instance whose supplies sum to zero.

    Args:
        raw_points: n coordinate tuples, all of the same length d.
        raw_supplies: n real supplies.
        tolerance: allowed |sum(mu)| relative to sum(|mu|); the residual is folded into
            the point with the largest |mu|.
        max_dimension: cap on d.
    """
    tolerance = settings.SUPPLY_TOLERANCE if tolerance is None else tolerance
    max_dimension = settings.MAX_DIMENSION if max_dimension is None else max_dimension

    try:
        points = np.array(raw_points, dtype=np.float64)
        supplies = np.array(raw_supplies, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InstanceValidationError(f"Dimension mismatch in instance input: {exc}") from exc

    if points.ndim != 2:
        raise InstanceValidationError(f"Points must form an n x d table, got shape {points.shape}")
    n, d = points.shape
    if n < 1:
        raise InstanceValidationError("Instance must contain at least one point")
    if d < 1:
        raise InstanceValidationError("Points must have at least one coordinate")
    if d > max_dimension:
        raise InstanceValidationError(f"Dimension d={d} exceeds the supported maximum {max_dimension}")
    if supplies.shape != (n,):
        raise InstanceValidationError(f"Expected {n} supplies, got shape {supplies.shape}")
    if not np.all(np.isfinite(points)):
        raise InstanceValidationError("Point coordinates must be finite")
    if not np.all(np.isfinite(supplies)):
        raise InstanceValidationError("Supplies must be finite")

    values = supplies.tolist()
    residual = math.fsum(values)
    mass = math.fsum(abs(v) for v in values)
    if abs(residual) > tolerance * mass:
        raise InstanceValidationError(
            f"Supplies are unbalanced: sum={residual:.3e} exceeds tolerance {tolerance:g} * {mass:.3e}"
        )
    if residual != 0.0:
        k = int(np.argmax(np.abs(supplies)))
        supplies[k] = -math.fsum(values[:k] + values[k + 1:])
        logger.debug("Folded supply residual %.3e into point %d", residual, k)

    return TransportInstance(points=points, supplies=supplies)


# ---------- Coincident points ----------

@dataclass(frozen=True)
class CoincidenceMap:
    """Representative index -> original point indices it stands for."""
    groups: tuple[IntArray, ...]
    original_supplies: FloatArray

    @property
    def n_original(self) -> int:
        return int(self.original_supplies.shape[0])

    @property
    def is_identity(self) -> bool:
        return len(self.groups) == self.n_original


def collapse_coincident(instance: TransportInstance) -> tuple[TransportInstance, CoincidenceMap]:
    """Merge duplicate points into one representative each (first-occurrence order)."""
    slots: dict[tuple[float, ...], int] = {}
    members: list[list[int]] = []
    for i, row in enumerate(instance.points.tolist()):
        key = tuple(row)
        slot = slots.get(key)
        if slot is None:
            slots[key] = len(members)
            members.append([i])
        else:
            members[slot].append(i)

    groups = tuple(_frozen(np.array(m, dtype=np.int64)) for m in members)
    coincidence = CoincidenceMap(groups=groups, original_supplies=instance.supplies)
    if coincidence.is_identity:
        return instance, coincidence

    supplies = instance.supplies.tolist()
    points = instance.points[[m[0] for m in members]]
    merged = [math.fsum(supplies[i] for i in m) for m in members]
    logger.info("Collapsed %d points into %d distinct locations", instance.n, len(members))
    return TransportInstance(points=points, supplies=np.array(merged)), coincidence


# ---------- Transportation maps ----------

@dataclass(frozen=True)
class TransportationMap:
    """Sparse rows (source, destination, amount) between input points."""
    sources: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    targets: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    amounts: FloatArray = field(default_factory=lambda: np.zeros(0, dtype=np.float64))

    def __post_init__(self) -> None:
        sources = np.asarray(self.sources, dtype=np.int64)
        targets = np.asarray(self.targets, dtype=np.int64)
        amounts = np.asarray(self.amounts, dtype=np.float64)
        if not (sources.shape == targets.shape == amounts.shape) or sources.ndim != 1:
            raise InstanceValidationError("Map columns must be 1-D arrays of equal length")
        if np.any(amounts <= 0.0) or not np.all(np.isfinite(amounts)):
            raise InstanceValidationError("Map amounts must be positive and finite")
        if np.any(sources == targets):
            raise InstanceValidationError("Map must not contain self-loops")
        object.__setattr__(self, "sources", _frozen(sources))
        object.__setattr__(self, "targets", _frozen(targets))
        object.__setattr__(self, "amounts", _frozen(amounts))

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, float]]) -> "TransportationMap":
        """Build a map, summing repeated (src, dst) rows and dropping non-positive ones."""
        merged: dict[tuple[int, int], float] = {}
        for src, dst, amount in entries:
            key = (int(src), int(dst))
            merged[key] = merged.get(key, 0.0) + float(amount)
        rows = [(s, t, a) for (s, t), a in merged.items() if a > 0.0 and s != t]
        if not rows:
            return cls()
        src, dst, amt = zip(*rows)
        return cls(np.array(src), np.array(dst), np.array(amt))

    def __len__(self) -> int:
        return int(self.amounts.shape[0])

    def __iter__(self) -> Iterator[tuple[int, int, float]]:
        return zip(self.sources.tolist(), self.targets.tolist(), self.amounts.tolist())


def _check_indices(instance: TransportInstance, tmap: TransportationMap) -> None:
    if len(tmap) == 0:
        return
    lo = min(int(tmap.sources.min()), int(tmap.targets.min()))
    hi = max(int(tmap.sources.max()), int(tmap.targets.max()))
    if lo < 0 or hi >= instance.n:
        raise InstanceValidationError(f"Map index out of range for an instance of {instance.n} points")


def map_cost(instance: TransportInstance, tmap: TransportationMap) -> float:
    """Sum of amount * Euclidean distance over all rows."""
    _check_indices(instance, tmap)
    if len(tmap) == 0:
        return 0.0
    lengths = np.linalg.norm(instance.points[tmap.targets] - instance.points[tmap.sources], axis=1)
    return float(np.dot(tmap.amounts, lengths))


def map_divergence(instance: TransportInstance, tmap: TransportationMap) -> FloatArray:
    """Per-point outflow minus inflow."""
    _check_indices(instance, tmap)
    out = np.bincount(tmap.sources, weights=tmap.amounts, minlength=instance.n)
    inc = np.bincount(tmap.targets, weights=tmap.amounts, minlength=instance.n)
    return (out - inc).astype(np.float64)
