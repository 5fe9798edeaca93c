"""Weighted undirected communication graph among aggregators.

The solver and the step-size bounds consume the graph through its Laplacian
and through per-node neighbor lists; both are precomputed here. Instances
are immutable after construction and safe to share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GraphError

_CONNECTIVITY_GAP = 1e-10


@dataclass(frozen=True)
class CommGraph:
    """Connected weighted undirected graph over ``n_nodes`` agents.

    ``edges`` holds one (u, v, weight) triple per undirected link with
    u < v. ``neighbors[n]`` / ``weights[n]`` give node n's adjacency as
    index and weight arrays in a fixed deterministic order.
    """

    n_nodes: int
    edges: tuple
    laplacian: np.ndarray
    lambda_max: float
    fiedler: float
    neighbors: tuple = field(repr=False)
    weights: tuple = field(repr=False)

    def degree(self, n: int) -> float:
        return float(self.laplacian[n, n])


def build_graph(n_nodes: int, edges) -> CommGraph:
    """Validate an edge list and precompute Laplacian and spectral data.

    Parameters
    ----------
    n_nodes : int
        Number of agents (>= 2); node indices are 0-based.
    edges : iterable of (u, v, weight)
        Undirected links with strictly positive weights.

    Raises
    ------
    GraphError
        On bad indices, nonpositive weights, duplicate or self links, or a
        disconnected graph.
    """
    if n_nodes < 2:
        raise GraphError(f"need at least two nodes, got {n_nodes}")
    canon = {}
    for u, v, w in edges:
        u, v, w = int(u), int(v), float(w)
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise GraphError(f"edge ({u}, {v}) has a node index outside 0..{n_nodes - 1}")
        if u == v:
            raise GraphError(f"self-link at node {u} is not allowed")
        if not w > 0:
            raise GraphError(f"edge ({u}, {v}) must have a positive weight, got {w}")
        key = (min(u, v), max(u, v))
        if key in canon:
            raise GraphError(f"duplicate edge ({key[0]}, {key[1]})")
        canon[key] = w

    lap = np.zeros((n_nodes, n_nodes))
    for (u, v), w in canon.items():
        lap[u, u] += w
        lap[v, v] += w
        lap[u, v] -= w
        lap[v, u] -= w

    eigvals = np.linalg.eigvalsh(lap)
    fiedler = float(eigvals[1])
    if fiedler <= _CONNECTIVITY_GAP:
        raise GraphError(
            "communication graph is disconnected "
            f"(second-smallest Laplacian eigenvalue {fiedler:.3e})"
        )

    nbrs = [[] for _ in range(n_nodes)]
    for (u, v), w in sorted(canon.items()):
        nbrs[u].append((v, w))
        nbrs[v].append((u, w))
    neighbor_idx = tuple(np.array([m for m, _ in lst], dtype=np.intp) for lst in nbrs)
    neighbor_w = tuple(np.array([w for _, w in lst]) for lst in nbrs)

    return CommGraph(
        n_nodes=n_nodes,
        edges=tuple((u, v, w) for (u, v), w in sorted(canon.items())),
        laplacian=lap,
        lambda_max=float(eigvals[-1]),
        fiedler=fiedler,
        neighbors=neighbor_idx,
        weights=neighbor_w,
    )


def neighbor_mix(g: CommGraph, values) -> np.ndarray:
    """Weighted neighbor differences: node n gets sum_m w_nm (v_n - v_m).

    ``values`` is (n_nodes,) or (n_nodes, width); the result matches the
    dense Laplacian (Kronecker-extended across the width) applied to the
    stacked values.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != g.n_nodes:
        raise ValueError(
            f"expected one row per node ({g.n_nodes}), got shape {values.shape}"
        )
    out = np.zeros_like(values)
    for n in range(g.n_nodes):
        idx = g.neighbors[n]
        if idx.size == 0:
            continue
        diff = values[n] - values[idx]
        out[n] = g.weights[n] @ diff if values.ndim > 1 else float(g.weights[n] @ diff)
    return out
