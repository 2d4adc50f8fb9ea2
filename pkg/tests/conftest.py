import numpy as np
import pytest

from sheaf_kg.sheaf import SheafOnGraph


def random_sheaf(rng, n_vertices=None, max_vertex_dim=5, max_edge_dim=4, n_edges=None,
                 allow_self_loops=True):
    """A random dense sheaf on a random connected-ish multigraph."""
    if n_vertices is None:
        n_vertices = int(rng.integers(2, 9))
    vertex_dims = tuple(int(d) for d in rng.integers(1, max_vertex_dim + 1, size=n_vertices))
    if n_edges is None:
        n_edges = int(rng.integers(n_vertices - 1, 2 * n_vertices + 1))
    edges = []
    for i in range(n_edges):
        if i < n_vertices - 1:
            u, v = i, int(rng.integers(i + 1, n_vertices))  # keeps things connected
        else:
            u, v = int(rng.integers(0, n_vertices)), int(rng.integers(0, n_vertices))
            if u == v and not allow_self_loops:
                v = (u + 1) % n_vertices
        edges.append((u, v))
    edge_dims = tuple(int(d) for d in rng.integers(1, max_edge_dim + 1, size=n_edges))
    head_maps = tuple(
        rng.normal(size=(edge_dims[e], vertex_dims[u])) for e, (u, v) in enumerate(edges)
    )
    tail_maps = tuple(
        rng.normal(size=(edge_dims[e], vertex_dims[v])) for e, (u, v) in enumerate(edges)
    )
    return SheafOnGraph(vertex_dims, tuple(edges), edge_dims, head_maps, tail_maps)


def random_cochain0(rng, sheaf, columns=None):
    if columns is None:
        return [rng.normal(size=d) for d in sheaf.vertex_dims]
    return [rng.normal(size=(d, columns)) for d in sheaf.vertex_dims]


def random_cochain1(rng, sheaf, columns=None):
    if columns is None:
        return [rng.normal(size=d) for d in sheaf.edge_dims]
    return [rng.normal(size=(d, columns)) for d in sheaf.edge_dims]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
