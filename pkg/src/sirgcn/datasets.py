"""Synthetic benchmarks: DictionaryLookup and GraphHeterophily.

Generation draws only integers from per-instance child streams of a
``numpy.random.SeedSequence``, so a dataset is a pure function of its
arguments.

DictionaryLookup node layout: keys occupy nodes ``0..n-1`` and queries nodes
``n..2n-1``. Features are ``onehot(attribute) ++ onehot(value) ++ [is_key]``
(queries carry a zero value block). Only key -> query edges exist, all ``n^2``
of them. Node targets are the 0-based value class for queries and ``-1`` for
keys.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .graph import GraphValidationError, NodeGraph

TASKS = ("dictlookup", "heterophily")
MIN_NODES, MAX_NODES = 5, 50
EDGE_PERMILLE = (100, 500)


class DatasetError(ValueError):
    """Invalid generator arguments, or a dataset that fails validation."""


class ParseError(DatasetError):
    pass


@dataclass(frozen=True)
class DictLookupInstance:
    n: int
    key_values: tuple[int, ...]

    @property
    def key_attributes(self) -> tuple[int, ...]:
        return tuple(range(1, self.n + 1))

    @property
    def query_attributes(self) -> tuple[int, ...]:
        return tuple(range(1, self.n + 1))

    def query_targets(self) -> list[int]:
        """Value of the key that shares each query's attribute."""
        lookup = dict(zip(self.key_attributes, self.key_values))
        return [lookup[a] for a in self.query_attributes]

    def graph(self) -> NodeGraph:
        n = self.n
        feats = np.zeros((2 * n, 2 * n + 1))
        idx = np.arange(n)
        feats[idx, np.asarray(self.key_attributes) - 1] = 1.0
        feats[idx, n + np.asarray(self.key_values) - 1] = 1.0
        feats[idx, 2 * n] = 1.0
        feats[n + idx, np.asarray(self.query_attributes) - 1] = 1.0
        src = np.repeat(idx, n)
        dst = n + np.tile(idx, n)
        targets = np.concatenate([np.full(n, -1), np.asarray(self.query_targets()) - 1])
        return NodeGraph(2 * n, src, dst, feats, targets)

    @classmethod
    def from_graph(cls, g: NodeGraph) -> "DictLookupInstance":
        """Decode a graph and re-check it against the lookup rule."""
        n = (g.feature_dim - 1) // 2
        if g.feature_dim != 2 * n + 1 or g.num_nodes != 2 * n:
            raise DatasetError(f"not a DictionaryLookup graph: {g.num_nodes} nodes, "
                               f"width {g.feature_dim}")
        f = g.features
        if not (np.all(f[:n, 2 * n] == 1) and np.all(f[n:, 2 * n] == 0)):
            raise DatasetError("key/query flags out of place")
        if np.any(f[:n, :n].argmax(1) != np.arange(n)) or np.any(f[n:, :n].argmax(1) != np.arange(n)):
            raise DatasetError("attributes must be 1..n in node order")
        inst = cls(n, tuple(int(v) + 1 for v in f[:n, n:2 * n].argmax(1)))
        if sorted(inst.key_values) != list(range(1, n + 1)):
            raise DatasetError("key values are not a permutation of 1..n")
        expected = np.concatenate([np.full(n, -1), np.asarray(inst.query_targets()) - 1])
        if g.node_targets is None or not np.array_equal(np.asarray(g.node_targets), expected):
            raise DatasetError("query targets violate the lookup rule")
        return inst


@dataclass(frozen=True)
class HeterophilyInstance:
    c: int
    classes: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    graph_target: int

    @property
    def num_nodes(self) -> int:
        return len(self.classes)

    def graph(self) -> NodeGraph:
        feats = np.zeros((self.num_nodes, self.c))
        feats[np.arange(self.num_nodes), np.asarray(self.classes)] = 1.0
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        return NodeGraph(self.num_nodes, e[:, 0], e[:, 1], feats, None, float(self.graph_target))

    @classmethod
    def from_graph(cls, g: NodeGraph) -> "HeterophilyInstance":
        f = g.features
        if not np.all((f == 0) | (f == 1)) or not np.all(f.sum(1) == 1):
            raise DatasetError("heterophily features must be one-hot class indicators")
        if g.graph_target is None:
            raise DatasetError("heterophily graph lacks graph_target")
        inst = cls(g.feature_dim, tuple(int(k) for k in f.argmax(1)), tuple(g.edges),
                   int(round(g.graph_target)))
        if inst.graph_target != g.graph_target or count_hetero_edges(inst) != inst.graph_target:
            raise DatasetError(f"stored target {g.graph_target} != recount {count_hetero_edges(inst)}")
        return inst


Instance = Union[DictLookupInstance, HeterophilyInstance]


def _streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def gen_dictionary_lookup(n: int, count: int, seed: int) -> list[DictLookupInstance]:
    if n < 2:
        raise DatasetError("DictionaryLookup needs n >= 2")
    if count < 1:
        raise DatasetError("count must be positive")
    return [DictLookupInstance(n, tuple(int(v) + 1 for v in rng.permutation(n)))
            for rng in _streams(seed, count)]


def _random_heterophily(c: int, rng: np.random.Generator) -> HeterophilyInstance:
    num = int(rng.integers(MIN_NODES, MAX_NODES + 1))
    permille = int(rng.integers(EDGE_PERMILLE[0], EDGE_PERMILLE[1] + 1))
    classes = rng.integers(0, c, size=num)
    draws = rng.integers(0, 1000, size=(num, num))
    mask = draws < permille
    np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    edges = tuple(zip(src.tolist(), dst.tolist()))
    target = int(np.count_nonzero(classes[src] != classes[dst]))
    return HeterophilyInstance(c, tuple(classes.tolist()), edges, target)


def gen_graph_heterophily(c: int, count: int, seed: int) -> list[HeterophilyInstance]:
    if c < 1:
        raise DatasetError("GraphHeterophily needs c >= 1")
    if count < 1:
        raise DatasetError("count must be positive")
    return [_random_heterophily(c, rng) for rng in _streams(seed, count)]


def count_hetero_edges(instance: HeterophilyInstance) -> int:
    """Number of directed edges whose endpoints carry different classes."""
    cls = instance.classes
    return sum(1 for u, v in instance.edges if cls[u] != cls[v])


# ---------------------------------------------------------------------------
# Dataset bundles and serialization
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    task: str
    size: int
    seed: int
    train: list
    test: list

    def graphs(self, split: str) -> list[NodeGraph]:
        return [inst.graph() for inst in getattr(self, split)]


def split_seed(seed: int, split: str) -> int:
    index = {"train": 0, "test": 1}[split]
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1)[0])


def generate(task: str, size: int, seed: int, train_count: int, test_count: int) -> Dataset:
    if task == "dictlookup":
        gen = gen_dictionary_lookup
    elif task == "heterophily":
        gen = gen_graph_heterophily
    else:
        raise DatasetError(f"unknown task {task!r}")
    return Dataset(task, size, seed,
                   gen(size, train_count, split_seed(seed, "train")),
                   gen(size, test_count, split_seed(seed, "test")))


def _decode(task: str, g: NodeGraph) -> Instance:
    if task == "dictlookup":
        return DictLookupInstance.from_graph(g)
    return HeterophilyInstance.from_graph(g)


def _dumps(inst: Instance) -> str:
    return json.dumps(inst.graph().to_json_dict(), separators=(",", ":"))


def serialize(dataset: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "task": dataset.task,
        "n_or_c": dataset.size,
        "count": {"train": len(dataset.train), "test": len(dataset.test)},
        "seed": dataset.seed,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for split in ("train", "test"):
        with open(path / f"{split}.jsonl", "w") as fh:
            for inst in getattr(dataset, split):
                fh.write(_dumps(inst) + "\n")
    return path


def read_jsonl(path: Union[str, Path], task: str) -> list[Instance]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                g = NodeGraph.from_json_dict(json.loads(line))
                out.append(_decode(task, g))
            except (json.JSONDecodeError, GraphValidationError, DatasetError,
                    TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return out


def deserialize(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        task, size, seed = manifest["task"], int(manifest["n_or_c"]), int(manifest["seed"])
        counts = manifest["count"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path / 'manifest.json'}: {exc}") from None
    if task not in TASKS:
        raise ParseError(f"{path / 'manifest.json'}: unknown task {task!r}")
    splits = {s: read_jsonl(path / f"{s}.jsonl", task) for s in ("train", "test")}
    for split, items in splits.items():
        if len(items) != counts.get(split):
            raise DatasetError(f"manifest lists {counts.get(split)} {split} graphs, "
                               f"file holds {len(items)}")
        for inst in items:
            got = inst.n if task == "dictlookup" else inst.c
            if got != size:
                raise DatasetError(f"{split} instance has size {got}, manifest says {size}")
    return Dataset(task, size, seed, splits["train"], splits["test"])


def check_oracles(instances: Iterable[Instance]) -> int:
    """Re-derive every label from scratch; returns the number of instances checked."""
    checked = 0
    for inst in instances:
        if isinstance(inst, HeterophilyInstance):
            if count_hetero_edges(inst) != inst.graph_target:
                raise DatasetError(f"heterophily target mismatch in instance {checked}")
        else:
            g = inst.graph()
            queries = np.arange(inst.n, 2 * inst.n)
            for q in queries:
                attr = int(g.features[q, :inst.n].argmax())
                keys = [k for k in g.in_neighbors(q) if g.features[k, attr] == 1]
                if len(keys) != 1:
                    raise DatasetError("query must match exactly one key")
                value = int(g.features[keys[0], inst.n:2 * inst.n].argmax())
                if g.node_targets[q] != value:
                    raise DatasetError(f"dictlookup target mismatch in instance {checked}")
        checked += 1
    return checked
