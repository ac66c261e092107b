"""Communication graph for decentralized consensus.

Graphs are undirected, unweighted and connected. Matrices are assembled from
integer adjacency data before conversion to float so that the Laplacian is
exactly symmetric with exactly zero row sums.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Graph",
    "GraphError",
    "SelfLoopError",
    "DuplicateEdgeError",
    "NodeRangeError",
    "DisconnectedGraphError",
    "RetryLimitError",
    "build_graph",
    "laplacian",
    "signless_laplacian",
    "laplacian_pseudoinverse",
    "random_connected_graph",
    "complete_graph",
    "path_graph",
    "ring_graph",
    "parse_edge_list",
    "read_edge_file",
]


class GraphError(ValueError):
    """Base class for graph validation failures."""


class SelfLoopError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class NodeRangeError(GraphError):
    pass


class DisconnectedGraphError(GraphError):
    pass


class RetryLimitError(GraphError):
    pass


@dataclass(frozen=True)
class Graph:
    """Validated undirected connected graph.

    Use :func:`build_graph` to construct one; the constructor itself does not
    validate.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    @cached_property
    def adjacency_int(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=np.int64)
        for i, j in self.edges:
            a[i, j] = 1
            a[j, i] = 1
        a.setflags(write=False)
        return a

    @property
    def adjacency(self) -> np.ndarray:
        return self.adjacency_int.astype(float)

    @cached_property
    def degrees(self) -> np.ndarray:
        deg = self.adjacency_int.sum(axis=1)
        deg.setflags(write=False)
        return deg

    @cached_property
    def _neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(n)) for n in nbrs)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self._neighbors[i]

    def is_bipartite(self) -> bool:
        """True if the graph has no odd cycle (D+A is then singular)."""
        color = [-1] * self.n_nodes
        color[0] = 0
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self._neighbors[u]:
                if color[v] < 0:
                    color[v] = 1 - color[u]
                    stack.append(v)
                elif color[v] == color[u]:
                    return False
        return True

    def relabel(self, perm: Sequence[int]) -> "Graph":
        """Graph with node ``i`` renamed to ``perm[i]``."""
        return build_graph(self.n_nodes, [(perm[i], perm[j]) for i, j in self.edges])


def build_graph(n_nodes: int, edge_list: Iterable[Sequence[int]]) -> Graph:
    """Validate an edge list and return a :class:`Graph`.

    Raises
    ------
    NodeRangeError
        ``n_nodes < 2`` or an endpoint outside ``[0, n_nodes)``.
    SelfLoopError, DuplicateEdgeError, DisconnectedGraphError
        On the respective defects. ``(i, j)`` and ``(j, i)`` count as duplicates.
    """
    if int(n_nodes) != n_nodes or n_nodes < 2:
        raise NodeRangeError(f"n_nodes must be an integer >= 2, got {n_nodes}")
    n_nodes = int(n_nodes)
    seen: set[tuple[int, int]] = set()
    for edge in edge_list:
        if len(edge) != 2:
            raise GraphError(f"edge must have two endpoints, got {edge!r}")
        i, j = (int(v) for v in edge)
        for v in (i, j):
            if not 0 <= v < n_nodes:
                raise NodeRangeError(f"endpoint {v} of edge ({i}, {j}) not in [0, {n_nodes})")
        if i == j:
            raise SelfLoopError(f"self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdgeError(f"duplicate edge {key}")
        seen.add(key)

    edges = tuple(sorted(seen))
    if _n_components(n_nodes, edges) != 1:
        raise DisconnectedGraphError(f"graph with {n_nodes} nodes and edges {list(edges)} is not connected")
    return Graph(n_nodes, edges)


def _n_components(n_nodes: int, edges: Sequence[tuple[int, int]]) -> int:
    if not edges:
        return n_nodes
    rows, cols = zip(*edges)
    m = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n_nodes, n_nodes))
    n, _ = connected_components(m, directed=False)
    return int(n)


def laplacian(graph: Graph) -> np.ndarray:
    """D - A as a float matrix."""
    a = graph.adjacency_int
    return (np.diag(a.sum(axis=1)) - a).astype(float)


def signless_laplacian(graph: Graph) -> np.ndarray:
    """D + A as a float matrix."""
    a = graph.adjacency_int
    return (np.diag(a.sum(axis=1)) + a).astype(float)


def laplacian_pseudoinverse(graph: Graph, rank_tolerance: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse of D - A via the symmetric eigendecomposition.

    Eigenvalues below ``rank_tolerance`` are treated as zero. The default is
    ``1e-9`` times the largest eigenvalue.
    """
    if rank_tolerance is not None and rank_tolerance <= 0:
        raise ValueError("rank_tolerance must be positive")
    w, v = np.linalg.eigh(laplacian(graph))
    tol = 1e-9 * w.max() if rank_tolerance is None else rank_tolerance
    inv = np.zeros_like(w)
    keep = w > tol
    inv[keep] = 1.0 / w[keep]
    pinv = (v * inv) @ v.T
    return 0.5 * (pinv + pinv.T)


def random_connected_graph(
    n_nodes: int, edge_probability: float, seed: int, max_tries: int = 10_000
) -> Graph:
    """Erdos-Renyi G(n, p), resampled until connected.

    Deterministic for a fixed ``seed``. Raises :class:`RetryLimitError` when
    no connected sample turns up within ``max_tries`` draws.
    """
    if n_nodes < 2:
        raise NodeRangeError(f"n_nodes must be >= 2, got {n_nodes}")
    if not 0 < edge_probability <= 1:
        raise ValueError(f"edge_probability must lie in (0, 1], got {edge_probability}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n_nodes, k=1)
    for _ in range(max_tries):
        mask = rng.random(iu.size) < edge_probability
        edges = list(zip(iu[mask].tolist(), ju[mask].tolist()))
        if _n_components(n_nodes, edges) == 1:
            return build_graph(n_nodes, edges)
    raise RetryLimitError(
        f"no connected G({n_nodes}, {edge_probability}) sample in {max_tries} tries; "
        "edge_probability is probably too small"
    )


def complete_graph(n_nodes: int) -> Graph:
    return build_graph(n_nodes, [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)])


def path_graph(n_nodes: int) -> Graph:
    return build_graph(n_nodes, [(i, i + 1) for i in range(n_nodes - 1)])


def ring_graph(n_nodes: int) -> Graph:
    if n_nodes < 3:
        return path_graph(n_nodes)
    return build_graph(n_nodes, [(i, (i + 1) % n_nodes) for i in range(n_nodes)])


def parse_edge_list(text: str) -> list[tuple[int, int]]:
    """Parse ``"i j"`` pairs separated by newlines or semicolons.

    Blank lines and ``#`` comments are skipped.
    """
    edges = []
    for lineno, raw in enumerate(text.replace(";", "\n").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise GraphError(f"edge entry {lineno}: expected 'i j', got {raw.strip()!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphError(f"edge entry {lineno}: non-integer endpoint in {raw.strip()!r}") from None
    return edges


def read_edge_file(path: str | Path, n_nodes: int | None = None) -> Graph:
    """Load an edge-list file. ``n_nodes`` defaults to ``1 + max endpoint``."""
    edges = parse_edge_list(Path(path).read_text())
    if n_nodes is None:
        n_nodes = 1 + max((max(e) for e in edges), default=0)
    return build_graph(n_nodes, edges)
