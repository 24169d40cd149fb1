"""Weighted undirected communication graphs and their Laplacian spectra."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

CONNECTIVITY_TOL = 1e-10


class GraphError(ValueError):
    """Invalid graph construction input."""


class DisconnectedGraph(ValueError):
    """Raised when spectral bounds are requested for a disconnected graph."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph stored as a symmetric nonnegative weight matrix."""

    n_agents: int
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (self.n_agents, self.n_agents):
            raise GraphError(f"weights must be {self.n_agents}x{self.n_agents}, got {w.shape}")
        if not np.array_equal(w, w.T):
            raise GraphError("weights must be symmetric")
        if np.any(np.diag(w) != 0.0):
            raise GraphError("weights must have a zero diagonal")
        if np.any(w < 0.0):
            raise GraphError("weights must be nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n_agents == other.n_agents and np.array_equal(self.weights, other.weights)

    def edges(self) -> list[tuple[int, int, float]]:
        """Edge list with i < j, in row-major order."""
        n = self.n_agents
        return [(i, j, float(self.weights[i, j]))
                for i in range(n) for j in range(i + 1, n) if self.weights[i, j] > 0]


@dataclass(frozen=True)
class SpectralBounds:
    lambda2: float
    lambdaN: float
    lambdaN_L2: float


def build_graph(n: int, edges: Iterable[Sequence[float]]) -> Graph:
    """Assemble a graph from (i, j, weight) triples; each edge is stored symmetrically."""
    if int(n) != n or n < 1:
        raise GraphError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    w = np.zeros((n, n))
    seen: set[tuple[int, int]] = set()
    for edge in edges:
        if len(edge) != 3:
            raise GraphError(f"edge must be (i, j, weight), got {edge!r}")
        i, j, weight = int(edge[0]), int(edge[1]), float(edge[2])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) has an index outside [0, {n})")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        if not weight > 0.0:
            raise GraphError(f"edge ({i}, {j}) has nonpositive weight {weight}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
        w[i, j] = w[j, i] = weight
    return Graph(n, w)


def path_graph(n: int) -> Graph:
    return build_graph(n, [(i, i + 1, 1.0) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    return build_graph(n, [(i, (i + 1) % n, 1.0) for i in range(n)])


def laplacian(g: Graph) -> NDArray[np.float64]:
    """L = diag(row sums) - weights, so every row sums to exactly zero."""
    lap = -np.array(g.weights, dtype=np.float64)
    for i in range(g.n_agents):
        lap[i, i] = -np.sum(lap[i])
    return lap


def is_connected(g: Graph) -> bool:
    """Breadth-first reachability over positive-weight edges."""
    n = g.n_agents
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(g.weights[i] > 0):
            if not seen[j]:
                seen[j] = True
                queue.append(int(j))
    return bool(seen.all())


def spectral_bounds(g: Graph) -> SpectralBounds:
    """Second-smallest and largest Laplacian eigenvalues of a connected graph."""
    if g.n_agents < 2:
        raise DisconnectedGraph("a single node has no algebraic connectivity")
    eig = np.linalg.eigvalsh(laplacian(g))
    lam2 = float(eig[1])
    if lam2 <= CONNECTIVITY_TOL or not is_connected(g):
        raise DisconnectedGraph(f"graph is disconnected (lambda2 = {lam2:.3e})")
    lam_n = float(eig[-1])
    return SpectralBounds(lambda2=lam2, lambdaN=lam_n, lambdaN_L2=lam_n * lam_n)


def kron_laplacian(g: Graph, dim: int) -> NDArray[np.float64]:
    """L ⊗ I_dim for agents with dim-dimensional states."""
    return np.kron(laplacian(g), np.eye(dim))
