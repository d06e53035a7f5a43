from __future__ import annotations


class GeoTransportError(Exception):
    """Base class for every error raised by geotransport."""


class InstanceValidationError(GeoTransportError, ValueError):
    """Input points, supplies or files do not describe a valid transport instance."""


class ConstructionError(GeoTransportError, RuntimeError):
    """A quadtree or graph invariant does not hold after construction."""


class InfeasibleFlowError(GeoTransportError, RuntimeError):
    """Divergences are unbalanced or a flow does not meet its demands."""


class OracleCapacityError(GeoTransportError, ValueError):
    """The exact oracle was asked to solve an instance above its point cap."""


class QualityGateError(GeoTransportError):
    """A comparison run exceeded its allowed approximation ratio."""


class PrefixSplitError(GeoTransportError, ValueError):
    """Invalid operation on a prefix split tree."""
