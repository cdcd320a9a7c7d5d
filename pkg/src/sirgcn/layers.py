"""Single message-passing layers: SIR-GCN, GraphSAGE (mean), GATv2, GIN, and
the sum-pooling graph readout.

Weight matrices are stored ``(in, out)`` and applied on the right, so a node
feature matrix ``h`` of shape ``(N, d)`` maps to ``h @ W``.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from .graph import (BatchedGraph, NodeGraph, edge_softmax, gather_dst, gather_src, scatter_sum,
                    segment_sum)
from .tensor import (DimensionError, Tensor, add, leaky_relu, linear, matmul, parameter, relu,
                     reshape, scale_rows)

LEAKY_SLOPE = 0.2

Activation = Union[str, Callable[[Tensor], Tensor]]


def resolve_activation(name: Activation) -> Callable[[Tensor], Tensor]:
    if callable(name):
        return name
    if name == "relu":
        return relu
    if name == "leaky_relu":
        return lambda t: leaky_relu(t, LEAKY_SLOPE)
    if name == "identity":
        return lambda t: t
    raise ValueError(f"unknown activation {name!r}")


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)))


def _params_of(obj) -> list[Tensor]:
    fn = getattr(obj, "parameters", None)
    return list(fn()) if fn is not None else []


def _check_width(h: Tensor, width: Optional[int], name: str) -> None:
    if h.ndim != 2 or (width is not None and h.shape[1] != width):
        raise DimensionError(f"{name}: expected features of width {width}, got shape {h.shape}")


class MlpBlock:
    """Stack of affine maps with an activation between consecutive maps.

    ``widths=[d]`` (no affine maps) is the identity and owns no parameters.
    ``out_activation`` is applied after the last affine map; a single map
    followed by ``relu`` is the one-layer feed-forward network.
    """

    def __init__(self, widths: Sequence[int], activation: str = "relu",
                 out_activation: str = "identity", bias: bool = True,
                 rng: Optional[np.random.Generator] = None):
        widths = [int(w) for w in widths]
        if not widths or any(w < 1 for w in widths):
            raise ValueError(f"invalid widths {widths}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.widths = widths
        self.activation_name = activation
        self.out_activation_name = out_activation
        self.act = resolve_activation(activation)
        self.out_act = resolve_activation(out_activation)
        self.weights = [init_weight(rng, a, b) for a, b in zip(widths[:-1], widths[1:])]
        self.biases = [parameter(np.zeros(b)) if bias else None for b in widths[1:]]

    @classmethod
    def identity(cls, width: int) -> "MlpBlock":
        return cls([width], activation="identity")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def is_identity(self) -> bool:
        return self.num_layers == 0

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair if p is not None]

    def hidden(self, h: Tensor, upto: int) -> Tensor:
        """Apply maps ``0..upto-1`` with activations between them (none after the last)."""
        for i in range(upto):
            if i:
                h = self.act(h)
            h = linear(h, self.weights[i], self.biases[i])
        return h

    def __call__(self, h: Tensor) -> Tensor:
        _check_width(h, self.in_dim, "MlpBlock")
        if self.is_identity:
            return h
        return self.out_act(self.hidden(h, self.num_layers))


class SirGcnLayer:
    """h*_u = sigma( sum_{v -> u} mlp_a( mlp_k(h_v) + mlp_q(h_u) ) ).

    ``mlp_q``/``mlp_k``/``mlp_a`` are :class:`MlpBlock` instances or any
    callable on node/edge feature tensors exposing ``parameters()``.
    ``sigma`` is an activation name or a callable.
    """

    def __init__(self, mlp_q, mlp_k, mlp_a, sigma: Activation = "identity",
                 in_dim: Optional[int] = None):
        q_out = getattr(mlp_q, "out_dim", None)
        k_out = getattr(mlp_k, "out_dim", None)
        a_in = getattr(mlp_a, "in_dim", None)
        if q_out is not None and k_out is not None and q_out != k_out:
            raise DimensionError(f"mlp_q width {q_out} != mlp_k width {k_out}")
        if a_in is not None and (k_out or q_out) is not None and a_in != (k_out or q_out):
            raise DimensionError(f"mlp_a expects width {a_in}, keys/queries give {k_out or q_out}")
        self.mlp_q, self.mlp_k, self.mlp_a = mlp_q, mlp_k, mlp_a
        self.sigma = sigma
        self._sigma = resolve_activation(sigma)
        self.in_dim = in_dim if in_dim is not None else getattr(mlp_k, "in_dim", None)

    @classmethod
    def build(cls, in_dim: int, a_widths: Sequence[int], *, a_activation: str = "relu",
              a_out_activation: str = "identity", sigma: str = "identity",
              rng: Optional[np.random.Generator] = None) -> "SirGcnLayer":
        """Identity key/query maps and a learnable ``mlp_a`` of the given widths."""
        widths = [in_dim, *a_widths]
        return cls(MlpBlock.identity(in_dim), MlpBlock.identity(in_dim),
                   MlpBlock(widths, a_activation, a_out_activation, rng=rng), sigma)

    @property
    def out_dim(self) -> Optional[int]:
        return getattr(self.mlp_a, "out_dim", None)

    def parameters(self) -> list[Tensor]:
        params = _params_of(self.mlp_q) + _params_of(self.mlp_k) + _params_of(self.mlp_a)
        if not isinstance(self.sigma, str):
            params += _params_of(self.sigma)
        return params

    def messages(self, graph: NodeGraph, h: Tensor) -> Tensor:
        """Per-edge messages in edge order, fully materialised."""
        _check_width(h, self.in_dim, "sirgcn")
        return self.mlp_a(add(gather_src(graph, self.mlp_k(h)), gather_dst(graph, self.mlp_q(h))))

    def aggregate(self, graph: NodeGraph, h: Tensor) -> Tensor:
        """Pre-activation sum of messages per node.

        When ``mlp_a`` is an :class:`MlpBlock`, its first affine map is applied
        per node before the gather, and a trailing affine map with no output
        activation is applied after the scatter (adding ``in_degree * bias``),
        so the per-edge work is only the activations in between.
        """
        _check_width(h, self.in_dim, "sirgcn")
        a = self.mlp_a
        if not isinstance(a, MlpBlock) or a.is_identity:
            return scatter_sum(graph, self.messages(graph, h))
        keys = matmul(self.mlp_k(h), a.weights[0])
        queries = linear(self.mlp_q(h), a.weights[0], a.biases[0])
        z = add(gather_src(graph, keys), gather_dst(graph, queries))
        hoist_last = a.num_layers > 1 and a.out_activation_name == "identity"
        stop = a.num_layers - 1 if hoist_last else a.num_layers
        for i in range(1, stop):
            z = linear(a.act(z), a.weights[i], a.biases[i])
        if not hoist_last:
            return scatter_sum(graph, a.out_act(z))
        summed = scatter_sum(graph, a.act(z))
        out = matmul(summed, a.weights[-1])
        if a.biases[-1] is not None:
            deg = Tensor(graph.in_degree.astype(np.float64)[:, None])
            out = add(out, matmul(deg, reshape(a.biases[-1], (1, a.out_dim))))
        return out

    def __call__(self, graph: NodeGraph, h: Tensor) -> Tensor:
        return self._sigma(self.aggregate(graph, h))


def sirgcn_forward(layer: SirGcnLayer, graph: NodeGraph, h: Tensor) -> Tensor:
    return layer(graph, h)


class GraphSageLayer:
    """h*_u = sigma( mean over N(u) + {u} of h_v W )."""

    def __init__(self, w: Tensor, sigma: Activation = "relu"):
        self.w = w
        self.sigma = sigma
        self._sigma = resolve_activation(sigma)

    @classmethod
    def build(cls, in_dim: int, out_dim: int, sigma: str = "relu",
              rng: Optional[np.random.Generator] = None) -> "GraphSageLayer":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(init_weight(rng, in_dim, out_dim), sigma)

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w]

    def __call__(self, graph: NodeGraph, h: Tensor) -> Tensor:
        _check_width(h, self.in_dim, "graphsage")
        hw = matmul(h, self.w)
        total = add(scatter_sum(graph, gather_src(graph, hw)), hw)
        inv = Tensor(1.0 / (graph.in_degree + 1.0))
        return self._sigma(scale_rows(total, inv))


def graphsage_forward(layer: GraphSageLayer, graph: NodeGraph, h: Tensor) -> Tensor:
    return layer(graph, h)


class Gatv2Layer:
    """Single-head GATv2.

    e_uv = a . leaky_relu(h_u W_q + h_v W_k); alpha = softmax of e over the
    edges into u; h*_u = sigma( sum_v alpha_uv h_v W ).
    """

    def __init__(self, w: Tensor, w_q: Tensor, w_k: Tensor, a: Tensor,
                 sigma: Activation = "relu", slope: float = LEAKY_SLOPE):
        if w_q.shape[1] != w_k.shape[1] or a.shape != (w_q.shape[1],):
            raise DimensionError("w_q, w_k and a must share the attention width")
        if not (w.shape[0] == w_q.shape[0] == w_k.shape[0]):
            raise DimensionError("w, w_q and w_k must share the input width")
        self.w, self.w_q, self.w_k, self.a = w, w_q, w_k, a
        self.slope = slope
        self.sigma = sigma
        self._sigma = resolve_activation(sigma)

    @classmethod
    def build(cls, in_dim: int, out_dim: int, attn_dim: Optional[int] = None,
              sigma: str = "relu", rng: Optional[np.random.Generator] = None) -> "Gatv2Layer":
        rng = rng if rng is not None else np.random.default_rng(0)
        attn_dim = attn_dim or out_dim
        bound = np.sqrt(1.0 / attn_dim)
        a = parameter(rng.uniform(-bound, bound, size=attn_dim))
        return cls(init_weight(rng, in_dim, out_dim), init_weight(rng, in_dim, attn_dim),
                   init_weight(rng, in_dim, attn_dim), a, sigma)

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.w, self.w_q, self.w_k, self.a]

    def logits(self, graph: NodeGraph, h: Tensor) -> Tensor:
        """Unnormalised attention scores, one row per edge."""
        _check_width(h, self.in_dim, "gatv2")
        pre = add(gather_dst(graph, matmul(h, self.w_q)), gather_src(graph, matmul(h, self.w_k)))
        return matmul(leaky_relu(pre, self.slope), reshape(self.a, (self.a.shape[0], 1)))

    def attention(self, graph: NodeGraph, h: Tensor) -> Tensor:
        return edge_softmax(graph, self.logits(graph, h))

    def __call__(self, graph: NodeGraph, h: Tensor) -> Tensor:
        alpha = self.attention(graph, h)
        values = gather_src(graph, matmul(h, self.w))
        return self._sigma(scatter_sum(graph, scale_rows(values, alpha)))


def gatv2_forward(layer: Gatv2Layer, graph: NodeGraph, h: Tensor) -> Tensor:
    return layer(graph, h)


class GinLayer:
    """h*_u = mlp( (1 + eps) h_u + sum_v h_v ) with a fixed ``eps``."""

    def __init__(self, mlp, epsilon: float = 0.0):
        self.mlp = mlp
        self.epsilon = float(epsilon)

    @property
    def in_dim(self) -> Optional[int]:
        return getattr(self.mlp, "in_dim", None)

    @property
    def out_dim(self) -> Optional[int]:
        return getattr(self.mlp, "out_dim", None)

    def parameters(self) -> list[Tensor]:
        return _params_of(self.mlp)

    def __call__(self, graph: NodeGraph, h: Tensor) -> Tensor:
        _check_width(h, self.in_dim, "gin")
        neigh = scatter_sum(graph, gather_src(graph, h))
        return self.mlp(add(h * (1.0 + self.epsilon), neigh))


def gin_forward(layer: GinLayer, graph: NodeGraph, h: Tensor) -> Tensor:
    return layer(graph, h)


class ReadoutHead:
    """Graph-level output: ``(sum_v mlp_r(h_v)) @ W + b``.

    Passing ``out_dim=None`` drops the final affine map.
    """

    def __init__(self, mlp_r, out_dim: Optional[int], in_dim: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        self.mlp_r = mlp_r
        width = getattr(mlp_r, "out_dim", None) or in_dim
        if out_dim is None:
            self.w = self.b = None
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            self.w = init_weight(rng, width, out_dim)
            self.b = parameter(np.zeros(out_dim))

    def parameters(self) -> list[Tensor]:
        own = [] if self.w is None else [self.w, self.b]
        return _params_of(self.mlp_r) + own

    def __call__(self, batch: BatchedGraph, h: Tensor) -> Tensor:
        if h.ndim != 2 or h.shape[0] != batch.num_nodes:
            raise DimensionError(f"readout: expected {batch.num_nodes} rows, got {h.shape}")
        pooled = segment_sum(batch, self.mlp_r(h))
        return pooled if self.w is None else linear(pooled, self.w, self.b)


def readout_forward(head: ReadoutHead, batch: BatchedGraph, h: Tensor) -> Tensor:
    return head(batch, h)
