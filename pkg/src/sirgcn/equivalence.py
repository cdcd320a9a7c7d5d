"""SIR-GCN configurations that reproduce GIN, GraphSAGE and GATv2 logits.

The GIN and GraphSAGE reductions divide by a node's in-degree, which the
query map reads from a designated feature coordinate (see
:func:`with_degree_feature`). Degrees are treated as constants: no gradient
flows into that coordinate through the division.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .graph import NodeGraph
from .layers import (LEAKY_SLOPE, Gatv2Layer, GinLayer, GraphSageLayer, MlpBlock, SirGcnLayer,
                     init_weight, resolve_activation)
from .tensor import (DimensionError, Tensor, concat, leaky_relu, matmul, parameter, reshape,
                     scale_rows, slice_cols)


class DomainError(ValueError):
    """Input lies outside the domain where a construction is defined."""


def with_degree_feature(graph: NodeGraph) -> tuple[NodeGraph, int]:
    """Copy of ``graph`` with in-degree appended as the last feature column."""
    feats = np.concatenate([graph.features, graph.in_degree[:, None].astype(np.float64)], axis=1)
    out = NodeGraph(graph.num_nodes, graph.src, graph.dst, feats, graph.node_targets,
                    graph.graph_target)
    return out, feats.shape[1] - 1


def _degrees(h: Tensor, index: int) -> np.ndarray:
    deg = h.data[:, index]
    if np.any(deg <= 0):
        raise DomainError("construction requires every node to have in-degree >= 1")
    return deg


class _Map:
    """Feature map defined by a tensor function, with optional owned parameters."""

    def __init__(self, fn: Callable[[Tensor], Tensor], in_dim: Optional[int] = None,
                 out_dim: Optional[int] = None, params=()):
        self.fn = fn
        self.in_dim = in_dim
        self.out_dim = out_dim
        self._params = list(params)

    def parameters(self) -> list[Tensor]:
        return self._params

    def __call__(self, h: Tensor) -> Tensor:
        return self.fn(h)


class GinAsSirGcn:
    """Wraps the SIR-GCN reduction of GIN and checks the graph is admissible."""

    def __init__(self, layer: SirGcnLayer, degree_feature_index: int):
        self.layer = layer
        self.degree_feature_index = degree_feature_index

    def parameters(self) -> list[Tensor]:
        return self.layer.parameters()

    def __call__(self, graph: NodeGraph, h: Tensor) -> Tensor:
        if np.any(graph.in_degree == 0):
            raise DomainError("GIN reduction undefined for nodes without in-edges")
        if not np.array_equal(h.data[:, self.degree_feature_index], graph.in_degree):
            raise DomainError("degree feature does not match the graph's in-degrees")
        return self.layer(graph, h)


def make_sirgcn_as_gin(epsilon: float, mlp, degree_feature_index: int
                       ) -> tuple[SirGcnLayer, GinAsSirGcn]:
    """mlp_q(h_u) = (1 + eps) h_u / |N(u)|, mlp_k = mlp_a = identity, sigma = GIN's MLP.

    Summing over the ``|N(u)|`` in-edges gives ``(1 + eps) h_u + sum_v h_v``.
    """
    width = getattr(mlp, "in_dim", None)
    scale = 1.0 + float(epsilon)

    def query(h: Tensor) -> Tensor:
        deg = _degrees(h, degree_feature_index)
        return scale_rows(h, Tensor(scale / deg))

    mlp_q = _Map(query, width, width)
    ident = MlpBlock.identity(width) if width else _Map(lambda h: h)
    layer = SirGcnLayer(mlp_q, ident, ident, sigma=mlp, in_dim=width)
    return layer, GinAsSirGcn(layer, degree_feature_index)


def make_sirgcn_as_graphsage(w: Tensor, degree_feature_index: int,
                             sigma="relu") -> SirGcnLayer:
    """Reduction of mean-aggregator GraphSAGE.

    mlp_q(h_u) = [0; h_u; N], mlp_k(h_v) = [h_v; 0; 0] and
    mlp_a([x; y; N]) = (x / (N + 1) + y / (N (N + 1))) W.
    """
    d = w.shape[0]

    def query(h: Tensor) -> Tensor:
        deg = _degrees(h, degree_feature_index)
        return concat([Tensor(np.zeros((h.shape[0], d))), h, Tensor(deg[:, None])])

    def key(h: Tensor) -> Tensor:
        return concat([h, Tensor(np.zeros((h.shape[0], d + 1)))])

    def relation(x: Tensor) -> Tensor:
        n = x.data[:, 2 * d]
        mixed = scale_rows(slice_cols(x, 0, d), Tensor(1.0 / (n + 1.0)))
        mixed = mixed + scale_rows(slice_cols(x, d, 2 * d), Tensor(1.0 / (n * (n + 1.0))))
        return matmul(mixed, w)

    return SirGcnLayer(_Map(query, d, 2 * d + 1), _Map(key, d, 2 * d + 1),
                       _Map(relation, 2 * d + 1, w.shape[1], params=[w]),
                       sigma=resolve_activation(sigma), in_dim=d)


def make_sirgcn_as_gatv2_logits(w_q: Tensor, w_k: Tensor, a: Tensor,
                                slope: float = LEAKY_SLOPE) -> SirGcnLayer:
    """mlp_q = W_Q, mlp_k = W_K, mlp_a(x) = a . leaky_relu(x), sigma = identity.

    Per-edge messages are the GATv2 logits; the layer output is their sum.
    """
    if w_q.shape != w_k.shape or a.shape != (w_q.shape[1],):
        raise DimensionError("w_q, w_k and a must share the attention width")
    d, k = w_q.shape

    def score(x: Tensor) -> Tensor:
        return matmul(leaky_relu(x, slope), reshape(a, (k, 1)))

    return SirGcnLayer(_Map(lambda h: matmul(h, w_q), d, k, params=[w_q]),
                       _Map(lambda h: matmul(h, w_k), d, k, params=[w_k]),
                       _Map(score, k, 1, params=[a]),
                       sigma="identity", in_dim=d)


# ---------------------------------------------------------------------------
# Numerical checks
# ---------------------------------------------------------------------------

TOLERANCE = {"gin": 1e-10, "sage": 1e-10, "gatv2": 1e-12}


def random_graph(rng: np.random.Generator, width: int = 3, min_nodes: int = 3,
                 max_nodes: int = 12) -> NodeGraph:
    """Random multigraph in which every node has at least one in-edge from another node."""
    n = int(rng.integers(min_nodes, max_nodes + 1))
    src, dst = [], []
    for u in range(n):
        for _ in range(int(rng.integers(1, 4))):
            src.append(int((u + rng.integers(1, n)) % n))
            dst.append(u)
    return NodeGraph(n, np.array(src), np.array(dst), rng.uniform(-2.0, 2.0, size=(n, width)))


def _deviation(a: Tensor, b: Tensor) -> float:
    return float(np.abs(a.data - b.data).max()) if a.data.size else 0.0


def check_equivalence(which: str, num_graphs: int = 20, seed: int = 0, width: int = 3,
                      hidden: int = 4) -> dict:
    """Max deviation between a reference layer and its SIR-GCN reduction.

    ``which`` is ``"gin"`` or ``"sage"`` (node outputs) or ``"gatv2"`` (per-edge
    logits). Each graph gets freshly drawn weights.
    """
    if which not in TOLERANCE:
        raise ValueError(f"which must be one of {sorted(TOLERANCE)}, got {which!r}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_graphs):
        graph, deg_idx = with_degree_feature(random_graph(rng, width))
        h = Tensor(graph.features)
        d = graph.feature_dim
        if which == "gin":
            mlp = MlpBlock([d, hidden, hidden], rng=rng)
            eps = float(rng.uniform(-0.5, 0.5))
            _, wrapped = make_sirgcn_as_gin(eps, mlp, deg_idx)
            dev = _deviation(GinLayer(mlp, eps)(graph, h), wrapped(graph, h))
        elif which == "sage":
            w = init_weight(rng, d, hidden)
            layer = make_sirgcn_as_graphsage(w, deg_idx)
            dev = _deviation(GraphSageLayer(w)(graph, h), layer(graph, h))
        else:
            ref = Gatv2Layer.build(d, hidden, rng=rng)
            a = parameter(rng.uniform(-1.0, 1.0, size=hidden))
            ref.a = a
            layer = make_sirgcn_as_gatv2_logits(ref.w_q, ref.w_k, a, ref.slope)
            dev = _deviation(ref.logits(graph, h), layer.messages(graph, h))
        worst = max(worst, dev)
    tol = TOLERANCE[which]
    return {"which": which, "graphs": num_graphs, "max_deviation": worst, "tolerance": tol,
            "pass": bool(worst <= tol)}
