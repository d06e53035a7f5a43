import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from geotransport.core import validate_instance  # noqa: E402
from geotransport.generators import generate_instance  # noqa: E402
from geotransport.precond import PreconditionerContext  # noqa: E402
from geotransport.quadtree import QuadtreeParams, build_quadtree  # noqa: E402
from geotransport.spanner import build_sparse_graph  # noqa: E402


@pytest.fixture
def pair_instance():
    return validate_instance([[0.0, 0.0], [3.0, 4.0]], [1.0, -1.0])


@pytest.fixture
def make_tree():
    """Tree and graph over a generated instance, eps0 derived from epsilon."""

    def _make(n=24, d=2, *, seed=0, epsilon=0.5, supplies="random", spread=1.0, **params):
        instance = generate_instance(n, d, spread=spread, supplies=supplies, seed=seed)
        qp = QuadtreeParams.from_epsilon(epsilon, instance.n, seed, **params)
        tree = build_quadtree(instance, qp)
        graph = build_sparse_graph(tree)
        return instance, tree, graph

    return _make


def dense_incidence(num_vertices, tail, head):
    A = np.zeros((num_vertices, len(tail)))
    A[tail, np.arange(len(tail))] = 1.0
    A[head, np.arange(len(head))] = -1.0
    return A


def dense_preconditioner(ctx: PreconditionerContext):
    """B[nu, v] = side(nu) / Lambda when nu is v or one of its ancestors."""
    B = np.zeros((ctx.num_vertices, ctx.num_vertices))
    w = ctx.weights
    for v in range(ctx.num_vertices):
        nu = v
        while nu >= 0:
            B[nu, v] = w[nu]
            nu = int(ctx.parent[nu])
    return B


def random_balanced(rng, size):
    b = rng.normal(size=size)
    b -= b.mean()
    b[-1] = -b[:-1].sum()
    return b
