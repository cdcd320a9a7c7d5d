"""One-layer GNN models with a task head, built from a declarative spec."""

from __future__ import annotations

from dataclasses import asdict, dataclass
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .graph import BatchedGraph
from .layers import GinLayer, Gatv2Layer, GraphSageLayer, MlpBlock, ReadoutHead, SirGcnLayer, init_weight
from .tensor import Tensor, linear, parameter

ARCHS = ("sirgcn", "sage", "gatv2", "gin")
ARCH_LABELS = {"sirgcn": "SIR-GCN", "sage": "GraphSAGE", "gatv2": "GATv2", "gin": "GIN"}


@dataclass(frozen=True)
class ModelSpec:
    """``readout="none"`` gives node-level outputs; ``"sum"`` pools over each graph.

    ``mlp_layers`` is the depth of GIN's MLP and of SIR-GCN's relational MLP.
    When omitted it is 2 for node-level models (hidden activation, linear
    output) and 1 for graph-level models (one affine map followed by ReLU).
    """

    arch: str
    in_dim: int
    hidden: int
    out_dim: int
    readout: str = "none"
    seed: int = 0
    mlp_layers: Optional[int] = None

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.readout not in ("sum", "none"):
            raise ValueError(f"readout must be 'sum' or 'none', got {self.readout!r}")
        for name in ("in_dim", "hidden", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def depth(self) -> int:
        if self.mlp_layers is not None:
            return self.mlp_layers
        return 2 if self.readout == "none" else 1

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if not (k == "mlp_layers" and v is None)}
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls(**json.loads(text))


def _mlp(spec: ModelSpec, rng: np.random.Generator) -> MlpBlock:
    widths = [spec.in_dim] + [spec.hidden] * spec.depth
    out_act = "identity" if spec.depth > 1 else "relu"
    return MlpBlock(widths, activation="relu", out_activation=out_act, rng=rng)


def build_layer(spec: ModelSpec, rng: np.random.Generator):
    if spec.arch == "sirgcn":
        mlp_a = _mlp(spec, rng)
        ident = MlpBlock.identity(spec.in_dim)
        return SirGcnLayer(ident, ident, mlp_a, sigma="identity")
    if spec.arch == "gin":
        return GinLayer(_mlp(spec, rng), epsilon=0.0)
    if spec.arch == "sage":
        return GraphSageLayer.build(spec.in_dim, spec.hidden, sigma="relu", rng=rng)
    return Gatv2Layer.build(spec.in_dim, spec.hidden, sigma="relu", rng=rng)


class GnnModel:
    """A single GNN layer followed by an affine node head or a sum readout."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        self.layer = build_layer(spec, rng)
        if spec.readout == "sum":
            self.head = ReadoutHead(MlpBlock.identity(spec.hidden), spec.out_dim, rng=rng)
            self.w_out = self.b_out = None
        else:
            self.head = None
            self.w_out = init_weight(rng, spec.hidden, spec.out_dim)
            self.b_out = parameter(np.zeros(spec.out_dim))

    def parameters(self) -> list[Tensor]:
        params = self.layer.parameters()
        params += self.head.parameters() if self.head is not None else [self.w_out, self.b_out]
        return params

    def __call__(self, batch: BatchedGraph) -> Tensor:
        h = self.layer(batch, Tensor(batch.features))
        if self.head is not None:
            return self.head(batch, h)
        return linear(h, self.w_out, self.b_out)

    def save(self, path: Union[str, Path]) -> None:
        arrays = {f"p{i}": p.data for i, p in enumerate(self.parameters())}
        np.savez(path, spec=np.array(self.spec.to_json()), **arrays)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GnnModel":
        with np.load(path) as z:
            model = cls(ModelSpec.from_json(str(z["spec"])))
            for i, p in enumerate(model.parameters()):
                p.data[...] = z[f"p{i}"]
        return model
