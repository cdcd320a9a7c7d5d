"""Directed graphs in compressed in-adjacency form and the aggregation kernels.

Messages flow along ``src -> dst``; the neighbourhood of a node is its
in-neighbourhood. Parallel edges are kept, so a neighbourhood is a multiset.
Aggregation is expressed as a product with a constant sparse incidence
matrix whose rows list a node's incoming edges in canonical CSR order
(destination, then source, then original edge index).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .tensor import DimensionError, Tensor, _result, gather_rows, scale_rows, sparse_matmul


class GraphValidationError(ValueError):
    """Malformed graph input."""


@dataclass(frozen=True, eq=False)
class NodeGraph:
    """Immutable directed multigraph with node features.

    ``node_targets`` holds per-node labels (``-1`` marks unlabelled nodes for
    integer targets); ``graph_target`` is an optional scalar label.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray
    node_targets: Optional[np.ndarray] = None
    graph_target: Optional[float] = None
    in_offsets: np.ndarray = field(init=False, repr=False)
    csr_edge_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        src = np.array(self.src, dtype=np.int64).reshape(-1)
        dst = np.array(self.dst, dtype=np.int64).reshape(-1)
        feats = np.array(self.features, dtype=np.float64)
        n = int(self.num_nodes)
        if n < 1:
            raise GraphValidationError("a graph needs at least one node")
        if src.shape != dst.shape:
            raise GraphValidationError("src and dst must have equal length")
        if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
            raise GraphValidationError(f"edge endpoint out of range [0, {n})")
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphValidationError(f"features must have shape ({n}, d), got {feats.shape}")
        if not np.isfinite(feats).all():
            raise GraphValidationError("features contain non-finite values")
        targets = self.node_targets
        if targets is not None:
            targets = np.asarray(targets)
            if targets.shape[0] != n:
                raise GraphValidationError("node_targets length must equal num_nodes")
        order = np.lexsort((np.arange(src.size), src, dst))
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(dst, minlength=n), out=offsets[1:])
        for name, value in (("num_nodes", n), ("src", src), ("dst", dst), ("features", feats),
                            ("node_targets", targets), ("in_offsets", offsets),
                            ("csr_edge_ids", order)):
            object.__setattr__(self, name, value)
        for arr in (src, dst, feats, offsets, order):
            arr.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.src.size)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.src.tolist(), self.dst.tolist()))

    @cached_property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_offsets)

    def in_neighbors(self, u: int) -> np.ndarray:
        """Sources of the edges into ``u`` (sorted, with multiplicity)."""
        ids = self.csr_edge_ids[self.in_offsets[u]:self.in_offsets[u + 1]]
        return self.src[ids]

    def in_edges(self, u: int) -> np.ndarray:
        return self.csr_edge_ids[self.in_offsets[u]:self.in_offsets[u + 1]]

    @cached_property
    def in_incidence(self) -> sp.csr_matrix:
        """``(num_nodes, num_edges)`` 0/1 matrix; row ``u`` selects edges into ``u``."""
        return sp.csr_matrix(
            (np.ones(self.num_edges), self.csr_edge_ids.copy(), self.in_offsets.copy()),
            shape=(self.num_nodes, self.num_edges),
        )

    @cached_property
    def out_incidence(self) -> sp.csr_matrix:
        order = np.lexsort((np.arange(self.num_edges), self.dst, self.src))
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.src, minlength=self.num_nodes), out=offsets[1:])
        return sp.csr_matrix((np.ones(self.num_edges), order, offsets),
                             shape=(self.num_nodes, self.num_edges))

    def x(self) -> Tensor:
        return Tensor(self.features)

    def to_json_dict(self) -> dict[str, Any]:
        targets = None if self.node_targets is None else self.node_targets.tolist()
        return {
            "num_nodes": self.num_nodes,
            "edges": [[s, d] for s, d in self.edges],
            "features": self.features.tolist(),
            "node_targets": targets,
            "graph_target": self.graph_target,
        }

    @classmethod
    def from_json_dict(cls, obj: dict[str, Any]) -> "NodeGraph":
        try:
            edges = obj["edges"]
            n = obj["num_nodes"]
            feats = obj["features"]
        except KeyError as exc:
            raise GraphValidationError(f"missing key {exc}") from None
        if not isinstance(n, int):
            raise GraphValidationError("num_nodes must be an integer")
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        targets = obj.get("node_targets")
        return build_graph(n, edges, feats,
                           node_targets=None if targets is None else np.asarray(targets),
                           graph_target=obj.get("graph_target"))


def build_graph(num_nodes: int, edge_list, features, node_targets=None,
                graph_target: Optional[float] = None) -> NodeGraph:
    edges = np.asarray(edge_list, dtype=np.int64).reshape(-1, 2)
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats.reshape(num_nodes, -1) if feats.size else np.zeros((num_nodes, 0))
    return NodeGraph(num_nodes, edges[:, 0], edges[:, 1], feats, node_targets, graph_target)


@dataclass(frozen=True, eq=False)
class BatchedGraph(NodeGraph):
    """Disjoint union of graphs; ``segment_ids[v]`` is the source graph of node ``v``."""

    segment_ids: np.ndarray = None
    num_graphs: int = 1
    node_offsets: np.ndarray = None
    edge_offsets: np.ndarray = None
    graph_targets: Optional[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        seg = np.asarray(self.segment_ids, dtype=np.int64)
        if seg.shape != (self.num_nodes,):
            raise GraphValidationError("segment_ids must have one entry per node")
        if np.any(np.diff(seg) < 0) or seg[0] != 0 or seg[-1] != self.num_graphs - 1:
            raise GraphValidationError("segment_ids must be non-decreasing and cover all graphs")
        if self.num_edges and np.any(seg[self.src] != seg[self.dst]):
            raise GraphValidationError("edge crosses a graph boundary")
        object.__setattr__(self, "segment_ids", seg)

    @cached_property
    def segment_matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (np.ones(self.num_nodes), np.arange(self.num_nodes), self.node_offsets.copy()),
            shape=(self.num_graphs, self.num_nodes),
        )

    def unbatch(self) -> list[NodeGraph]:
        graphs = []
        for g in range(self.num_graphs):
            lo, hi = self.node_offsets[g], self.node_offsets[g + 1]
            elo, ehi = self.edge_offsets[g], self.edge_offsets[g + 1]
            targets = None if self.node_targets is None else self.node_targets[lo:hi]
            gt = None
            if self.graph_targets is not None and not np.isnan(self.graph_targets[g]):
                gt = self.graph_targets[g].item()
            graphs.append(NodeGraph(int(hi - lo), self.src[elo:ehi] - lo, self.dst[elo:ehi] - lo,
                                    self.features[lo:hi], targets, gt))
        return graphs


def batch_graphs(graphs: Sequence[NodeGraph]) -> BatchedGraph:
    if not graphs:
        raise GraphValidationError("cannot batch an empty sequence of graphs")
    dims = {g.feature_dim for g in graphs}
    if len(dims) != 1:
        raise GraphValidationError(f"mixed feature dimensions {sorted(dims)}")
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    esizes = np.array([g.num_edges for g in graphs], dtype=np.int64)
    node_offsets = np.concatenate([[0], np.cumsum(sizes)])
    edge_offsets = np.concatenate([[0], np.cumsum(esizes)])
    shift = np.repeat(node_offsets[:-1], esizes)
    src = np.concatenate([g.src for g in graphs]) + shift
    dst = np.concatenate([g.dst for g in graphs]) + shift
    feats = np.concatenate([g.features for g in graphs], axis=0)
    if all(g.node_targets is not None for g in graphs):
        targets = np.concatenate([g.node_targets for g in graphs])
    else:
        targets = None
    if any(g.graph_target is not None for g in graphs):
        graph_targets = np.array([np.nan if g.graph_target is None else g.graph_target
                                  for g in graphs], dtype=np.float64)
    else:
        graph_targets = None
    return BatchedGraph(
        int(node_offsets[-1]), src, dst, feats, targets, None,
        segment_ids=np.repeat(np.arange(len(graphs)), sizes),
        num_graphs=len(graphs),
        node_offsets=node_offsets,
        edge_offsets=edge_offsets,
        graph_targets=graph_targets,
    )


# ---------------------------------------------------------------------------
# Aggregation kernels
# ---------------------------------------------------------------------------


def _check_edge_rows(graph: NodeGraph, t: Tensor, name: str) -> None:
    if t.ndim != 2 or t.shape[0] != graph.num_edges:
        raise DimensionError(f"{name}: expected {graph.num_edges} edge rows, got shape {t.shape}")


def gather_src(graph: NodeGraph, h: Tensor) -> Tensor:
    """Row ``e`` is ``h[src[e]]``."""
    return gather_rows(h, graph.src, graph.out_incidence)


def gather_dst(graph: NodeGraph, h: Tensor) -> Tensor:
    """Row ``e`` is ``h[dst[e]]``."""
    return gather_rows(h, graph.dst, graph.in_incidence)


def scatter_sum(graph: NodeGraph, edge_messages: Tensor) -> Tensor:
    _check_edge_rows(graph, edge_messages, "scatter_sum")
    return sparse_matmul(graph.in_incidence, edge_messages, op="scatter_sum")


def scatter_mean(graph: NodeGraph, edge_messages: Tensor) -> Tensor:
    total = scatter_sum(graph, edge_messages)
    deg = graph.in_degree
    inv = np.divide(1.0, deg, out=np.zeros(graph.num_nodes), where=deg > 0)
    return scale_rows(total, Tensor(inv))


def edge_softmax(graph: NodeGraph, edge_logits: Tensor) -> Tensor:
    """Softmax of edge logits over each destination's incoming edges."""
    _check_edge_rows(graph, edge_logits, "edge_softmax")
    if edge_logits.shape[1] != 1:
        raise DimensionError("edge_softmax expects one logit per edge")
    logits = edge_logits.data[:, 0]
    if graph.num_edges == 0:
        return _result(np.zeros((0, 1)), (edge_logits,), lambda g: (g,), "edge_softmax")
    deg = graph.in_degree
    occupied = deg > 0
    node_max = np.zeros(graph.num_nodes)
    node_max[occupied] = np.maximum.reduceat(logits[graph.csr_edge_ids],
                                             graph.in_offsets[:-1][occupied])
    ex = np.exp(logits - node_max[graph.dst])
    denom = graph.in_incidence @ ex
    alpha = (ex / denom[graph.dst])[:, None]
    inc = graph.in_incidence

    def vjp(g):
        weighted = inc @ (alpha * g)
        return (alpha * (g - weighted[graph.dst]),)

    return _result(alpha, (edge_logits,), vjp, "edge_softmax")


def segment_sum(batch: BatchedGraph, node_values: Tensor) -> Tensor:
    if node_values.ndim != 2 or node_values.shape[0] != batch.num_nodes:
        raise DimensionError(f"segment_sum: expected {batch.num_nodes} rows, got {node_values.shape}")
    return sparse_matmul(batch.segment_matrix, node_values, op="segment_sum")


def as_batch(graph: NodeGraph) -> BatchedGraph:
    return graph if isinstance(graph, BatchedGraph) else batch_graphs([graph])
