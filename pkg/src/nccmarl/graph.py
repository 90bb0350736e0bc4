"""Agent topology and the neighborhood-normalized graph convolution.

Node features are aggregated over each agent's closed neighborhood with
symmetric degree normalization 1/sqrt(d_i * d_j), where degrees are
self-inclusive (d_i = |N(i)| + 1). That convention is total (isolated
agents reduce to the identity aggregation) and down-weights high-degree
neighbors.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .layers import apply_activation


class AgentGraph:
    """Undirected agent adjacency with no self-edges.

    Neighborhoods are derived from the boolean matrix; they are never
    stored separately.
    """

    def __init__(self, adjacency: np.ndarray) -> None:
        adj = np.asarray(adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got {adj.shape}")
        if np.any(adj != adj.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(adj)):
            raise ValueError("adjacency must have a false diagonal (no self-edges)")
        self.adjacency = adj

    @classmethod
    def from_edges(cls, n_agents: int, edges: Sequence[tuple[int, int]]) -> "AgentGraph":
        adj = np.zeros((n_agents, n_agents), dtype=bool)
        for i, j in edges:
            if i == j:
                raise ValueError(f"self-edge ({i}, {j}) not allowed")
            adj[i, j] = adj[j, i] = True
        return cls(adj)

    @classmethod
    def complete(cls, n_agents: int) -> "AgentGraph":
        adj = np.ones((n_agents, n_agents), dtype=bool)
        np.fill_diagonal(adj, False)
        return cls(adj)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Agents adjacent to i, ascending, excluding i itself."""
        if not 0 <= i < self.n_agents:
            raise IndexError(f"agent index {i} out of range [0, {self.n_agents})")
        return tuple(int(j) for j in np.flatnonzero(self.adjacency[i]))

    def closed_neighborhood(self, i: int) -> tuple[int, ...]:
        """Neighbors of i plus i itself, ascending."""
        return tuple(sorted(self.neighbors(i) + (i,)))

    def degree(self, i: int) -> int:
        """Self-inclusive degree |N(i)| + 1."""
        return len(self.neighbors(i)) + 1

    def permuted(self, perm: Sequence[int]) -> "AgentGraph":
        """Graph with agent i relabeled to perm[i]."""
        p = np.asarray(perm, dtype=int)
        n = self.n_agents
        if sorted(p.tolist()) != list(range(n)):
            raise ValueError("perm must be a permutation of agent indices")
        adj = np.zeros_like(self.adjacency)
        adj[np.ix_(p, p)] = self.adjacency
        return AgentGraph(adj)


def neighbors(graph: AgentGraph, i: int) -> tuple[int, ...]:
    return graph.neighbors(i)


class GcnLayer:
    """One graph convolution: shared weight matrix plus activation."""

    def __init__(self, weight: Tensor, activation: str = "relu") -> None:
        if weight.data.ndim != 2:
            raise ShapeError("GcnLayer weight", weight.shape)
        if activation not in ("relu", "tanh", "identity"):
            raise ValueError(f"unknown GCN activation '{activation}'")
        self.weight = weight
        self.activation = activation

    @classmethod
    def create(
        cls, d_in: int, d_out: int, rng: np.random.Generator, activation: str = "relu"
    ) -> "GcnLayer":
        from .layers import glorot_uniform

        return cls(ad.parameter(glorot_uniform(rng, d_in, d_out)), activation)

    @property
    def params(self) -> list[Tensor]:
        return [self.weight]


def gcn_forward(
    layer: GcnLayer,
    graph: AgentGraph,
    features: Sequence[Tensor],
    nodes: Optional[Sequence[int]] = None,
) -> list[Tensor]:
    """Aggregate each node's closed neighborhood and project through W.

    ``features[j]`` is agent j's (batch, d_in) feature block; all agents
    must share d_in. Output i depends only on features inside i's closed
    neighborhood, and the aggregation order is value-canonical, so agent
    relabeling permutes outputs bit-exactly. ``nodes`` restricts which
    outputs are computed (all agents by default).
    """
    if len(features) != graph.n_agents:
        raise ShapeError("gcn_forward features", (len(features),), (graph.n_agents,))
    d_in = layer.weight.shape[0]
    base = features[0].shape
    for j, h in enumerate(features):
        if h.data.ndim != 2 or h.shape[1] != d_in:
            raise ShapeError(f"gcn_forward feature[{j}] vs weight", h.shape, layer.weight.shape)
        if h.shape != base:
            raise ShapeError("gcn_forward feature batch", base, h.shape)

    targets = range(graph.n_agents) if nodes is None else nodes
    return [_node_output(layer, graph, features.__getitem__, i) for i in targets]


def gcn_forward_scoped(layer: GcnLayer, graph: AgentGraph, features, node: int):
    """Single-node convolution from a mapping that covers the node's closed
    neighborhood (used by neighborhood-scoped critics)."""
    return _node_output(layer, graph, features.__getitem__, node)


def _node_output(layer: GcnLayer, graph: AgentGraph, feature_of, i: int):
    d_i = graph.degree(i)
    terms = [
        ad.scale(feature_of(j), 1.0 / np.sqrt(d_i * graph.degree(j)))
        for j in graph.closed_neighborhood(i)
    ]
    agg = ad.sum_tensors(terms)
    return apply_activation(layer.activation, ad.matmul(agg, layer.weight))
