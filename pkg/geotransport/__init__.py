"""Approximate geometric transportation via compressed quadtrees and sparse Steiner graphs."""
from geotransport.core import (
    CoincidenceMap,
    TransportInstance,
    TransportationMap,
    collapse_coincident,
    map_cost,
    map_divergence,
    validate_instance,
)
from geotransport.errors import (
    ConstructionError,
    GeoTransportError,
    InfeasibleFlowError,
    InstanceValidationError,
    OracleCapacityError,
    PrefixSplitError,
    QualityGateError,
)
from geotransport.oracle import ExactResult, certify, exact_transport
from geotransport.psplit import PrefixSplitTree, PSTNode
from geotransport.quadtree import Quadtree, QuadtreeParams, build_quadtree, check_properties, subdivide_and_net
from geotransport.recover import merge_coincident, recover_map
from geotransport.spanner import SparseGraph, apply_incidence, build_sparse_graph, flow_cost, route_supplies

__all__ = [
    "CoincidenceMap",
    "ConstructionError",
    "ExactResult",
    "GeoTransportError",
    "InfeasibleFlowError",
    "InstanceValidationError",
    "OracleCapacityError",
    "PSTNode",
    "PrefixSplitError",
    "PrefixSplitTree",
    "QualityGateError",
    "Quadtree",
    "QuadtreeParams",
    "SparseGraph",
    "TransportInstance",
    "TransportationMap",
    "apply_incidence",
    "build_quadtree",
    "build_sparse_graph",
    "certify",
    "check_properties",
    "collapse_coincident",
    "exact_transport",
    "flow_cost",
    "map_cost",
    "map_divergence",
    "merge_coincident",
    "recover_map",
    "route_supplies",
    "subdivide_and_net",
    "validate_instance",
]
