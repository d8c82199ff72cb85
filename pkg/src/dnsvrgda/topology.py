"""Communication graphs, Metropolis-Hastings mixing matrices and gossip averaging."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.sparse.csgraph import connected_components

KINDS = ("line", "ring", "complete", "star", "custom")

# dense eigensolve up to this size, power iteration with deflation above
DENSE_EIG_MAX_K = 64
EIG_TOL = 1e-10


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    kind: str
    K: int
    adjacency: np.ndarray = field(repr=False)

    def neighbors(self, k: int) -> list[int]:
        """Neighbors of worker ``k`` (0-based), including ``k`` itself."""
        return [int(j) for j in np.flatnonzero(self.adjacency[k])]

    def degrees(self) -> np.ndarray:
        # self loops are not counted
        return self.adjacency.sum(axis=1) - 1


def _check_adjacency(adj: np.ndarray) -> np.ndarray:
    adj = np.asarray(adj, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise TopologyError(f"adjacency must be square, got shape {adj.shape}")
    if adj.shape[0] == 0:
        raise TopologyError("adjacency must have at least one worker")
    if not np.array_equal(adj, adj.T):
        raise TopologyError("adjacency must be symmetric")
    adj = adj.copy()
    np.fill_diagonal(adj, True)
    n_comp, _ = connected_components(adj.astype(np.int8), directed=False)
    if n_comp != 1:
        raise TopologyError(f"graph is disconnected ({n_comp} components)")
    return adj


def build_topology(kind: str, K: int, adjacency: np.ndarray | None = None) -> Topology:
    if kind not in KINDS:
        raise TopologyError(f"unknown topology kind {kind!r}; expected one of {KINDS}")
    if kind == "custom":
        if adjacency is None:
            raise TopologyError("custom topology needs an adjacency matrix")
        adj = _check_adjacency(adjacency)
        if K and adj.shape[0] != K:
            raise TopologyError(f"adjacency has {adj.shape[0]} workers but K={K}")
        return Topology("custom", adj.shape[0], adj)

    if not isinstance(K, (int, np.integer)) or K < 1:
        raise TopologyError(f"K must be a positive integer, got {K!r}")
    K = int(K)
    adj = np.eye(K, dtype=bool)
    idx = np.arange(K - 1)
    if kind == "line":
        adj[idx, idx + 1] = adj[idx + 1, idx] = True
    elif kind == "ring":
        if K < 3:
            raise TopologyError(f"ring needs K >= 3, got {K}")
        adj[idx, idx + 1] = adj[idx + 1, idx] = True
        adj[0, K - 1] = adj[K - 1, 0] = True
    elif kind == "complete":
        adj[:] = True
    elif kind == "star":
        adj[0, :] = adj[:, 0] = True
    return Topology(kind, K, _check_adjacency(adj))


def read_adjacency(path: str | Path) -> np.ndarray:
    """Read a custom adjacency file: first line K, then K rows of space-separated 0/1.

    Blank lines are ignored; errors name the file line they refer to.
    """
    path = Path(path)
    lines = [(i, ln.strip()) for i, ln in enumerate(path.read_text().splitlines(), start=1) if ln.strip()]
    if not lines:
        raise TopologyError(f"{path}:1: empty adjacency file")
    first_no, first = lines[0]
    try:
        K = int(first)
    except ValueError:
        raise TopologyError(f"{path}:{first_no}: expected worker count, got {first!r}") from None
    rows = []
    for lineno, ln in lines[1:]:
        toks = ln.split()
        if len(rows) == K:
            raise TopologyError(f"{path}:{lineno}: more than {K} matrix rows")
        if len(toks) != K or any(t not in ("0", "1") for t in toks):
            raise TopologyError(f"{path}:{lineno}: expected {K} entries of 0/1")
        rows.append([t == "1" for t in toks])
    if len(rows) != K:
        last = lines[-1][0] + 1
        raise TopologyError(f"{path}:{last}: expected {K} matrix rows, found {len(rows)}")
    return np.array(rows, dtype=bool)


@dataclass(frozen=True)
class MixingMatrix:
    weights: np.ndarray = field(repr=False)
    lam: float
    rule: str = "metropolis-hastings"

    @property
    def K(self) -> int:
        return self.weights.shape[0]


def _second_eigen_magnitude(W: np.ndarray) -> float:
    K = W.shape[0]
    if K == 1:
        return 0.0
    if K <= DENSE_EIG_MAX_K:
        ev = np.linalg.eigvalsh(W)
        mags = np.sort(np.abs(ev))[::-1]
        return float(mags[1])
    # deflate the consensus direction: W - 11^T/K has spectral radius |lambda_2|;
    # Lanczos on the deflated operator instead of a dense eigensolve
    A = W - np.full_like(W, 1.0 / K)
    v0 = np.random.default_rng(0).standard_normal(K)
    try:
        vals = eigsh(A, k=1, which="LM", v0=v0, tol=EIG_TOL, return_eigenvectors=False)
    except ArpackNoConvergence as e:
        raise np.linalg.LinAlgError(f"iterative lambda_2 solve did not converge: {e}") from None
    return float(abs(vals[0]))


def metropolis_weights(topology: Topology) -> MixingMatrix:
    adj = topology.adjacency
    deg = topology.degrees()
    K = topology.K
    W = np.zeros((K, K))
    i, j = np.nonzero(adj & ~np.eye(K, dtype=bool))
    W[i, j] = 1.0 / (1.0 + np.maximum(deg[i], deg[j]))
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    W.setflags(write=False)
    return MixingMatrix(W, _second_eigen_magnitude(W))


def spectral_gap(matrix: MixingMatrix) -> float:
    return 1.0 - matrix.lam


def mix(vectors, matrix: MixingMatrix) -> np.ndarray:
    """Synchronous gossip step: row k of the result is sum_j W[k, j] * vectors[j]."""
    V = np.asarray(vectors, dtype=float)
    if V.shape[0] != matrix.K:
        raise ValueError(f"expected {matrix.K} worker vectors, got {V.shape[0]}")
    if V.ndim == 1:
        return matrix.weights @ V
    return (matrix.weights @ V.reshape(V.shape[0], -1)).reshape(V.shape)
