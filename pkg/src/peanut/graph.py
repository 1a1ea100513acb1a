"""Graph containers, adjacency normalization, and virtual-node block insertion.

A :class:`Graph` stores an undirected attributed graph; a
:class:`Perturbation` stores the real-to-virtual connection matrix of an
injection attack.  Both are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Adjacency matrices are materialized dense up to this many nodes; above it
# products go through the coordinate-list kernel instead.
DENSE_NODE_CAP = 4096


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CooMatrix:
    """Symmetric sparse matrix in coordinate form with dense matmul support.

    Used for graphs above :data:`DENSE_NODE_CAP`, where message passing
    multiplies a sparse operator into a dense feature block.
    """

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    shape: tuple[int, int]

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        other = np.asarray(other, dtype=float)
        if other.ndim == 1:
            out = np.zeros(self.shape[0])
            np.add.at(out, self.rows, self.vals * other[self.cols])
            return out
        if other.shape[0] != self.shape[1]:
            raise ValueError(
                f"cannot multiply {self.shape} by {other.shape}"
            )
        out = np.zeros((self.shape[0], other.shape[1]))
        np.add.at(out, self.rows, self.vals[:, None] * other[self.cols])
        return out

    @property
    def T(self) -> "CooMatrix":
        return CooMatrix(self.cols, self.rows, self.vals,
                         (self.shape[1], self.shape[0]))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.vals)
        return out


def canonical_edges(edges) -> tuple[tuple[int, int, float], ...]:
    """Normalize an undirected edge list to sorted (i, j, w) with i < j.

    Accepts (i, j) or (i, j, w) items in either orientation.  Duplicate
    mentions of the same pair must carry the same weight.
    """
    seen: dict[tuple[int, int], float] = {}
    for item in edges:
        if len(item) == 2:
            i, j = item
            w = 1.0
        else:
            i, j, w = item
        i, j, w = int(i), int(j), float(w)
        if i == j:
            raise ValueError(f"self-loop on node {i} is not allowed")
        if w < 0:
            raise ValueError(f"negative edge weight {w} on ({i}, {j})")
        key = (min(i, j), max(i, j))
        if key in seen and seen[key] != w:
            raise ValueError(
                f"conflicting weights for edge {key}: {seen[key]} vs {w}"
            )
        seen[key] = w
    return tuple((i, j, seen[(i, j)]) for i, j in sorted(seen))


@dataclass(frozen=True)
class Graph:
    """Undirected attributed graph.

    Edges hold each undirected pair once as (i, j, weight) with i < j and
    weight >= 0; the materialized adjacency is symmetric by construction.
    ``features`` is an N x D real matrix; ``node_labels`` are per-node class
    ids (node tasks) and ``graph_target`` is a scalar class id or regression
    target (graph tasks).
    """

    num_nodes: int
    edges: tuple[tuple[int, int, float], ...]
    features: np.ndarray
    node_labels: np.ndarray | None = None
    graph_target: float | None = None

    def __post_init__(self):
        if self.num_nodes < 0:
            raise ValueError("num_nodes must be non-negative")
        edges = canonical_edges(self.edges)
        for i, j, _ in edges:
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
        object.__setattr__(self, "edges", edges)
        feats = _frozen_array(self.features)
        if feats.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if feats.shape[0] != self.num_nodes:
            raise ValueError(
                f"features have {feats.shape[0]} rows for "
                f"{self.num_nodes} nodes"
            )
        object.__setattr__(self, "features", feats)
        if self.node_labels is not None:
            labels = _frozen_array(self.node_labels, dtype=int)
            if labels.shape != (self.num_nodes,):
                raise ValueError("node_labels must have one entry per node")
            object.__setattr__(self, "node_labels", labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self, weighted: bool = False) -> np.ndarray:
        """Per-node degree: edge count, or incident weight sum if weighted."""
        deg = np.zeros(self.num_nodes)
        for i, j, w in self.edges:
            inc = w if weighted else 1.0
            deg[i] += inc
            deg[j] += inc
        return deg

    def average_degree(self) -> float:
        """Mean unweighted degree, 2|E|/N."""
        if self.num_nodes == 0:
            return 0.0
        return 2.0 * self.num_edges / self.num_nodes

    def adjacency(self, max_dense: int = DENSE_NODE_CAP):
        """Symmetric adjacency: dense ndarray up to max_dense nodes, else COO."""
        n = self.num_nodes
        if n <= max_dense:
            a = np.zeros((n, n))
            for i, j, w in self.edges:
                a[i, j] = w
                a[j, i] = w
            return a
        rows, cols, vals = [], [], []
        for i, j, w in self.edges:
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        return CooMatrix(np.array(rows, dtype=int), np.array(cols, dtype=int),
                         np.array(vals), (n, n))


def symmetric_normalize(a: np.ndarray, add_self_loops: bool = False) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} for a dense symmetric matrix.

    Rows/columns of zero-degree nodes are zeroed out (the D_ii^{-1/2} = 0
    convention), which keeps the result finite on graphs with isolated nodes.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("adjacency must be square")
    if add_self_loops:
        a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return (inv_sqrt[:, None] * a) * inv_sqrt[None, :]


def normalized_adjacency(g: Graph, add_self_loops: bool = False,
                         max_dense: int = DENSE_NODE_CAP):
    """Degree-normalized adjacency of a graph.

    Dense result for graphs up to ``max_dense`` nodes, COO above it.  With
    ``add_self_loops`` the identity is added before degrees are computed.
    """
    n = g.num_nodes
    if n <= max_dense:
        return symmetric_normalize(g.adjacency(max_dense), add_self_loops)
    deg = g.degrees(weighted=True)
    rows, cols, vals = [], [], []
    for i, j, w in g.edges:
        rows += [i, j]
        cols += [j, i]
        vals += [w, w]
    if add_self_loops:
        deg = deg + 1.0
        for i in range(n):
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
    rows = np.array(rows, dtype=int)
    cols = np.array(cols, dtype=int)
    vals = np.array(vals)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return CooMatrix(rows, cols, vals * inv_sqrt[rows] * inv_sqrt[cols], (n, n))


def discrete_column_count(delta: float, n_v: int) -> int:
    """Edges per virtual node for discretized perturbations.

    k = max(round(delta / n_v), 1), rounding half away from zero, so every
    virtual node keeps at least one edge.
    """
    if n_v < 1:
        raise ValueError("n_v must be >= 1 for a discrete perturbation")
    return max(int(math.floor(delta / n_v + 0.5)), 1)


@dataclass(frozen=True)
class Perturbation:
    """Real-to-virtual connection matrix of a virtual-node injection.

    ``connections`` is N x n_v; the virtual-virtual block is implicitly
    zero and never stored.  Continuous perturbations respect the Frobenius
    budget ||C C^T||_F <= budget; discrete ones are binary with exactly
    ``discrete_column_count(budget, n_v)`` ones per column.
    ``normalized_domain`` records whether the connections perturb the
    normalized operator directly rather than the raw adjacency.
    """

    connections: np.ndarray
    n_v: int
    budget: float
    is_discrete: bool = False
    normalized_domain: bool = False

    def __post_init__(self):
        conn = _frozen_array(self.connections)
        if conn.ndim != 2:
            raise ValueError("connections must be a 2-D matrix")
        if conn.shape[1] != self.n_v:
            raise ValueError(
                f"connections have {conn.shape[1]} columns for n_v={self.n_v}"
            )
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        object.__setattr__(self, "connections", conn)
        if self.is_discrete:
            if conn.size and np.any((conn != 0.0) & (conn != 1.0)):
                raise ValueError("discrete perturbation entries must be 0 or 1")
            k = discrete_column_count(self.budget, self.n_v)
            col_sums = conn.sum(axis=0)
            if conn.size and np.any(col_sums != k):
                raise ValueError(
                    f"discrete perturbation needs exactly {k} ones per column"
                )
        else:
            gram = float(np.linalg.norm(conn @ conn.T))
            if gram > self.budget * (1.0 + 1e-9) + 1e-12:
                raise ValueError(
                    f"perturbation exceeds budget: ||CC^T||_F={gram} "
                    f"> {self.budget}"
                )

    @property
    def num_real_nodes(self) -> int:
        return self.connections.shape[0]

    def gram_norm(self) -> float:
        """||C C^T||_F of the connection matrix."""
        return float(np.linalg.norm(self.connections @ self.connections.T))

    def realized_budget(self) -> float:
        """Spent budget: injected edge count if discrete, else gram norm."""
        if self.is_discrete:
            return float(self.connections.sum())
        return self.gram_norm()

    def is_zero(self) -> bool:
        return self.connections.size == 0 or not np.any(self.connections)


@dataclass(frozen=True)
class PerturbedGraph:
    """A base graph plus an injection; virtual features are all zeros."""

    base: Graph
    perturbation: Perturbation

    def __post_init__(self):
        if self.perturbation.num_real_nodes != self.base.num_nodes:
            raise ValueError(
                "perturbation rows must match the base graph's node count"
            )

    @property
    def total_nodes(self) -> int:
        return self.base.num_nodes + self.perturbation.n_v

    def feature_matrix(self) -> np.ndarray:
        """Base features stacked over n_v all-zero virtual rows."""
        zeros = np.zeros((self.perturbation.n_v, self.base.feature_dim))
        return np.vstack([self.base.features, zeros])

    def adjacency(self, max_dense: int = DENSE_NODE_CAP) -> np.ndarray:
        base = self.base.adjacency(max_dense)
        if isinstance(base, CooMatrix):
            base = base.to_dense()
        return build_perturbed_adjacency(base, self.perturbation)


def build_perturbed_adjacency(base: np.ndarray, p: Perturbation) -> np.ndarray:
    """Block matrix [[base, C], [C^T, 0]] inserting n_v virtual nodes."""
    base = np.asarray(base, dtype=float)
    if base.ndim != 2 or base.shape[0] != base.shape[1]:
        raise ValueError("base adjacency must be square")
    n = base.shape[0]
    if p.connections.shape[0] != n:
        raise ValueError(
            f"perturbation has {p.connections.shape[0]} rows for an "
            f"{n}-node base"
        )
    out = np.zeros((n + p.n_v, n + p.n_v))
    out[:n, :n] = base
    out[:n, n:] = p.connections
    out[n:, :n] = p.connections.T
    return out


def real_node_rows(m: np.ndarray, n: int) -> np.ndarray:
    """Top-n row slice of a matrix, the real-node block of a perturbed output."""
    m = np.asarray(m)
    if n < 0:
        raise ValueError("n must be non-negative")
    if n > m.shape[0]:
        raise ValueError(f"cannot take {n} rows from a {m.shape[0]}-row matrix")
    return m[:n]
