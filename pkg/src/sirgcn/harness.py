"""Training, evaluation and table reproduction for the synthetic benchmarks."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import logging
import os
from pathlib import Path
import time
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .datasets import Dataset, generate
from .graph import NodeGraph, batch_graphs
from .models import ARCH_LABELS, ARCHS, GnnModel, ModelSpec
from .optim import Adam, PlateauScheduler
from .tensor import (DimensionError, NonFiniteError, Tensor, backward, cross_entropy, gather_rows,
                     mse_loss)

log = logging.getLogger(__name__)

RESULTS_ENV = "SIRGCN_RESULTS_DIR"
SCALES = {
    "desk": {"train_count": 1000, "test_count": 250, "trials": 3},
    "full": {"train_count": 4000, "test_count": 1000, "trials": 10},
}
TABLE_TASK = {1: "dictlookup", 2: "heterophily"}
TABLE_SIZES = {1: (10, 20, 30, 40, 50), 2: (2, 4, 6, 8, 10)}


@dataclass(frozen=True)
class TrainConfig:
    arch: str
    task: str
    task_size: int
    hidden: Optional[int] = None
    batch_size: int = 256
    max_epochs: int = 500
    lr: float = 0.001
    decay_factor: float = 0.5
    patience: int = 10
    seed: int = 0
    train_count: int = 4000
    test_count: int = 1000
    early_stop_loss: float = 1e-6

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.task not in TABLE_TASK.values():
            raise ValueError(f"unknown task {self.task!r}")
        if self.hidden is None:
            width = 5 * self.task_size if self.task == "dictlookup" else 10 * self.task_size
            object.__setattr__(self, "hidden", width)
        for name in ("task_size", "hidden", "batch_size", "max_epochs", "patience",
                     "train_count", "test_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")

    def model_spec(self) -> ModelSpec:
        if self.task == "dictlookup":
            n = self.task_size
            return ModelSpec(self.arch, 2 * n + 1, self.hidden, n, readout="none", seed=self.seed)
        return ModelSpec(self.arch, self.task_size, self.hidden, 1, readout="sum", seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class MetricsRecord:
    arch: str
    task: str
    task_size: int
    seed: int
    config_hash: str
    metric_name: str
    test_metric: float = float("nan")
    train_losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    epochs_run: int = 0
    status: str = "ok"
    message: str = ""
    wall_time: float = 0.0

    def to_dict(self, timing: bool = True) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("wall_time")
        return d


class DivergenceError(RuntimeError):
    """Training produced a non-finite value; ``record`` holds the run up to that point."""

    def __init__(self, record: MetricsRecord):
        super().__init__(record.message)
        self.record = record


def _metric_name(task: str) -> str:
    return "accuracy" if task == "dictlookup" else "mse"


def batch_loss(model: Callable, batch, task: str) -> Tensor:
    out = model(batch)
    if task == "dictlookup":
        rows = np.flatnonzero(batch.node_targets >= 0)
        return cross_entropy(gather_rows(out, rows), batch.node_targets[rows])
    return mse_loss(out, batch.graph_targets)


def _predict(model: Callable, batch) -> np.ndarray:
    out = model(batch)
    return out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)


def evaluate(model: Callable, graphs: Sequence[NodeGraph], task: str,
             batch_size: int = 256) -> float:
    """Query-node accuracy (dictlookup) or mean squared error over graphs (heterophily).

    ``model`` is any callable mapping a batched graph to node logits or graph
    predictions. Argmax ties resolve to the lowest class index.
    """
    correct = total = 0
    sq_err = 0.0
    for lo in range(0, len(graphs), batch_size):
        batch = batch_graphs(graphs[lo:lo + batch_size])
        pred = _predict(model, batch)
        if task == "dictlookup":
            targets = batch.node_targets
            rows = targets >= 0
            n_classes = int(graphs[0].feature_dim - 1) // 2
            if pred.ndim != 2 or pred.shape != (batch.num_nodes, n_classes):
                raise DimensionError(f"expected logits of shape ({batch.num_nodes}, {n_classes}), "
                                     f"got {pred.shape}")
            correct += int(np.count_nonzero(pred[rows].argmax(axis=1) == targets[rows]))
            total += int(rows.sum())
        else:
            if pred.size != batch.num_graphs:
                raise DimensionError(f"expected {batch.num_graphs} graph predictions, got {pred.shape}")
            sq_err += float(((pred.reshape(-1) - batch.graph_targets) ** 2).sum())
            total += batch.num_graphs
    return correct / total if task == "dictlookup" else sq_err / total


def train(config: TrainConfig, dataset: Optional[Dataset] = None
          ) -> tuple[GnnModel, MetricsRecord]:
    """Mini-batch Adam with a plateau schedule on the epoch-mean training loss."""
    start = time.perf_counter()
    if dataset is None:
        dataset = generate(config.task, config.task_size, config.seed,
                           config.train_count, config.test_count)
    train_graphs = dataset.graphs("train")
    test_graphs = dataset.graphs("test")
    model = GnnModel(config.model_spec())
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    sched = PlateauScheduler(config.decay_factor, config.patience)
    shuffle = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5EED]))
    record = MetricsRecord(config.arch, config.task, config.task_size, config.seed,
                           config.config_hash(), _metric_name(config.task))
    count = len(train_graphs)
    for epoch in range(config.max_epochs):
        order = shuffle.permutation(count)
        total = 0.0
        try:
            for lo in range(0, count, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                batch = batch_graphs([train_graphs[i] for i in idx])
                opt.zero_grad()
                loss = batch_loss(model, batch, config.task)
                backward(loss)
                opt.step()
                total += loss.item() * len(idx)
        except NonFiniteError as exc:
            record.status = "diverged"
            record.message = f"epoch {epoch}: {exc}"
            record.epochs_run = epoch
            record.wall_time = time.perf_counter() - start
            raise DivergenceError(record) from exc
        epoch_loss = total / count
        record.train_losses.append(epoch_loss)
        record.learning_rates.append(opt.lr)
        sched.step(epoch_loss, opt.state)
        record.epochs_run = epoch + 1
        if epoch % 50 == 0:
            log.debug("%s %s=%d epoch %d loss %.6g lr %.3g", config.arch, config.task,
                      config.task_size, epoch, epoch_loss, opt.lr)
        if epoch_loss < config.early_stop_loss:
            break
    record.test_metric = evaluate(model, test_graphs, config.task, config.batch_size)
    record.wall_time = time.perf_counter() - start
    return model, record


# ---------------------------------------------------------------------------
# Table reproduction
# ---------------------------------------------------------------------------


@dataclass
class ResultsTable:
    table: int
    scale: str
    archs: list[str]
    sizes: list[int]
    rows: list[tuple[int, str, int, float]] = field(default_factory=list)
    records: list[MetricsRecord] = field(default_factory=list)

    def cell(self, size: int, arch: str) -> np.ndarray:
        return np.array([m for s, a, _, m in self.rows if s == size and a == arch])

    def summary(self) -> dict:
        """``{size: {arch: {"mean", "std"}}}`` with sizes as rows and archs as columns."""
        out = {}
        for size in self.sizes:
            out[str(size)] = {}
            for arch in self.archs:
                vals = self.cell(size, arch)
                out[str(size)][arch] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def format(self) -> str:
        label = "n" if self.table == 1 else "c"
        head = f"{'':>8}" + "".join(f"{ARCH_LABELS[a]:>22}" for a in self.archs)
        lines = [head]
        summ = self.summary()
        for size in self.sizes:
            cells = []
            for arch in self.archs:
                s = summ[str(size)][arch]
                cells.append(f"{s['mean']:.4g} ± {s['std']:.2g}".rjust(22))
            lines.append(f"{label}={size:<6}" + "".join(cells))
        return "\n".join(lines)

    def write(self, out_dir: Union[str, Path]) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = f"table{self.table}_{self.scale}"
        csv_path = out_dir / f"{stem}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["size", "arch", "trial", "metric"])
            for size, arch, trial, metric in self.rows:
                w.writerow([size, arch, trial, repr(float(metric))])
        json_path = out_dir / f"{stem}_summary.json"
        payload = {
            "table": self.table,
            "scale": self.scale,
            "metric": "accuracy" if self.table == 1 else "mse",
            "summary": self.summary(),
            "runs": [r.to_dict(timing=True) for r in self.records],
        }
        json_path.write_text(json.dumps(payload, indent=2) + "\n")
        return csv_path, json_path


def results_dir(default: Union[str, Path] = "results") -> Path:
    return Path(os.environ.get(RESULTS_ENV, default))


def run_experiment(table: int, archs: Sequence[str] = ARCHS, sizes: Optional[Sequence[int]] = None,
                   trials: Optional[int] = None, scale: str = "desk", base_seed: int = 0,
                   **overrides) -> ResultsTable:
    """Train every (size, arch, trial) cell; trial ``t`` uses seed ``base_seed + t``.

    All architectures within a trial see the same generated dataset.
    """
    if table not in TABLE_TASK:
        raise ValueError("table must be 1 or 2")
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    task = TABLE_TASK[table]
    preset = SCALES[scale]
    trials = preset["trials"] if trials is None else trials
    sizes = list(TABLE_SIZES[table] if sizes is None else sizes)
    counts = {"train_count": preset["train_count"], "test_count": preset["test_count"]}
    counts.update({k: overrides.pop(k) for k in list(overrides) if k in counts})
    result = ResultsTable(table, scale, list(archs), sizes)
    for size in sizes:
        for trial in range(trials):
            seed = base_seed + trial
            data = generate(task, size, seed, counts["train_count"], counts["test_count"])
            for arch in archs:
                config = TrainConfig(arch, task, size, seed=seed, **counts, **overrides)
                _, record = train(config, data)
                log.info("table %d %s=%d %s trial %d: %s %.6g (%d epochs, %.1fs)", table,
                         "n" if table == 1 else "c", size, arch, trial, record.metric_name,
                         record.test_metric, record.epochs_run, record.wall_time)
                result.rows.append((size, arch, trial, record.test_metric))
                result.records.append(record)
    return result
