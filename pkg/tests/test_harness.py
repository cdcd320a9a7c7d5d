import json

import numpy as np
import pytest

from sirgcn.datasets import generate
from sirgcn.graph import batch_graphs
from sirgcn.harness import (RESULTS_ENV, DivergenceError, ResultsTable, TrainConfig, evaluate,
                            results_dir, run_experiment, train)
from sirgcn.models import ARCHS, GnnModel, ModelSpec
from sirgcn.tensor import DimensionError, Tensor

SMALL = dict(train_count=16, test_count=8, max_epochs=3, batch_size=8)


@pytest.fixture(scope="module")
def dict_data():
    return generate("dictlookup", 4, seed=0, train_count=16, test_count=8)


@pytest.fixture(scope="module")
def het_data():
    return generate("heterophily", 2, seed=0, train_count=16, test_count=8)


def oracle_logits(batch):
    n = (batch.feature_dim - 1) // 2
    out = np.zeros((batch.num_nodes, n))
    rows = batch.node_targets >= 0
    out[np.flatnonzero(rows), batch.node_targets[rows]] = 1.0
    return Tensor(out)


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig("sirgcn", "dictlookup", 10)
        assert (cfg.hidden, cfg.batch_size, cfg.max_epochs, cfg.lr) == (50, 256, 500, 0.001)
        assert (cfg.decay_factor, cfg.patience) == (0.5, 10)
        assert (cfg.train_count, cfg.test_count) == (4000, 1000)
        assert TrainConfig("gin", "heterophily", 4).hidden == 40

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig("gcn", "dictlookup", 10)
        with pytest.raises(ValueError):
            TrainConfig("gin", "dictlookup", 10, batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"arch": "gin", "task": "dictlookup", "task_size": 3, "bogus": 1})

    def test_hash_stable(self):
        a = TrainConfig("gin", "heterophily", 2, seed=3)
        b = TrainConfig.from_dict(json.loads(json.dumps(a.to_dict())))
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != TrainConfig("gin", "heterophily", 2, seed=4).config_hash()
        assert TrainConfig("sirgcn", "dictlookup", 10).config_hash() == \
            TrainConfig("sirgcn", "dictlookup", 10, hidden=50).config_hash()
        # frozen value guards against accidental changes to the hashing scheme
        assert TrainConfig("sirgcn", "dictlookup", 10).config_hash() == "7dbd0e87f5071a57"


class TestEvaluate:
    def test_oracle_predictor(self, dict_data):
        assert evaluate(oracle_logits, dict_data.graphs("test"), "dictlookup") == 1.0

    def test_zero_predictor_mse(self, het_data):
        graphs = het_data.graphs("test")
        zero = lambda batch: Tensor(np.zeros((batch.num_graphs, 1)))
        expect = np.mean([inst.graph_target ** 2 for inst in het_data.test])
        assert evaluate(zero, graphs, "heterophily", batch_size=3) == pytest.approx(expect)

    def test_random_classifier_near_chance(self):
        data = generate("dictlookup", 10, seed=1, train_count=1, test_count=400)
        rng = np.random.default_rng(0)
        rand = lambda batch: Tensor(rng.normal(size=(batch.num_nodes, 10)))
        assert evaluate(rand, data.graphs("test"), "dictlookup") == pytest.approx(0.1, abs=0.02)

    def test_ties_go_to_lowest_class(self, dict_data):
        graphs = dict_data.graphs("test")
        flat = lambda batch: Tensor(np.zeros((batch.num_nodes, 4)))
        targets = np.concatenate([g.node_targets[g.node_targets >= 0] for g in graphs])
        assert evaluate(flat, graphs, "dictlookup") == pytest.approx(np.mean(targets == 0))

    def test_width_mismatch(self, dict_data, het_data):
        wide = lambda batch: Tensor(np.zeros((batch.num_nodes, 5)))
        with pytest.raises(DimensionError):
            evaluate(wide, dict_data.graphs("test"), "dictlookup")
        many = lambda batch: Tensor(np.zeros((batch.num_graphs + 1, 1)))
        with pytest.raises(DimensionError):
            evaluate(many, het_data.graphs("test"), "heterophily")


class TestModel:
    @pytest.mark.parametrize("arch", ARCHS)
    def test_output_shapes(self, arch, dict_data, het_data):
        b = batch_graphs(dict_data.graphs("train")[:3])
        assert GnnModel(ModelSpec(arch, 9, 20, 4))(b).shape == (b.num_nodes, 4)
        b = batch_graphs(het_data.graphs("train")[:3])
        assert GnnModel(ModelSpec(arch, 2, 20, 1, "sum"))(b).shape == (3, 1)

    def test_spec_json(self):
        spec = ModelSpec("gatv2", 9, 20, 4, "none", seed=2)
        assert json.loads(spec.to_json()) == {"arch": "gatv2", "in_dim": 9, "hidden": 20,
                                              "out_dim": 4, "readout": "none", "seed": 2}
        assert ModelSpec.from_json(spec.to_json()) == spec

    def test_save_load(self, tmp_path, dict_data):
        model = GnnModel(ModelSpec("sirgcn", 9, 20, 4, seed=5))
        for p in model.parameters():
            p.data += 0.1
        model.save(tmp_path / "m.npz")
        back = GnnModel.load(tmp_path / "m.npz")
        b = batch_graphs(dict_data.graphs("test"))
        np.testing.assert_array_equal(model(b).data, back(b).data)


class TestTrain:
    @pytest.mark.parametrize("arch", ARCHS)
    @pytest.mark.parametrize("task,size", [("dictlookup", 4), ("heterophily", 2)])
    def test_runs_and_is_finite(self, arch, task, size):
        _, rec = train(TrainConfig(arch, task, size, **SMALL))
        assert rec.epochs_run == 3 and len(rec.train_losses) == 3
        assert np.all(np.isfinite(rec.train_losses)) and np.isfinite(rec.test_metric)
        assert rec.metric_name == ("accuracy" if task == "dictlookup" else "mse")

    def test_deterministic(self):
        cfg = TrainConfig("gatv2", "dictlookup", 4, **SMALL)
        a, b = train(cfg)[1], train(cfg)[1]
        assert a.to_dict(timing=False) == b.to_dict(timing=False)

    def test_zero_lr_is_untrained_baseline(self, het_data):
        cfg = TrainConfig("gin", "heterophily", 2, lr=0.0, **SMALL)
        model, rec = train(cfg, het_data)
        fresh = GnnModel(cfg.model_spec())
        for p, q in zip(model.parameters(), fresh.parameters()):
            np.testing.assert_array_equal(p.data, q.data)
        assert rec.test_metric == evaluate(fresh, het_data.graphs("test"), "heterophily")

    def test_loss_decreases(self):
        cfg = TrainConfig("sirgcn", "heterophily", 2, train_count=64, test_count=8,
                          max_epochs=15, batch_size=16)
        rec = train(cfg)[1]
        assert rec.train_losses[-1] < rec.train_losses[0]

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_aborts_with_record(self):
        cfg = TrainConfig("sage", "heterophily", 2, lr=1e150, train_count=16, test_count=4,
                          max_epochs=50, batch_size=4)
        with pytest.raises(DivergenceError) as info:
            train(cfg)
        assert info.value.record.status == "diverged"
        assert info.value.record.epochs_run < 50


class TestExperiment:
    def test_table_layout_and_outputs(self, tmp_path):
        table = run_experiment(2, archs=["gin", "sirgcn"], sizes=[2], trials=2, scale="desk",
                               train_count=8, test_count=4, max_epochs=2)
        assert [(s, a, t) for s, a, t, _ in table.rows] == [
            (2, "gin", 0), (2, "sirgcn", 0), (2, "gin", 1), (2, "sirgcn", 1)]
        csv_path, json_path = table.write(tmp_path)
        assert csv_path.name == "table2_desk.csv"
        assert csv_path.read_text().splitlines()[0] == "size,arch,trial,metric"
        summary = json.loads(json_path.read_text())["summary"]
        assert set(summary["2"]) == {"gin", "sirgcn"}

    def test_single_trial_std_zero(self):
        table = run_experiment(1, archs=["sage"], sizes=[3], trials=1, train_count=8,
                               test_count=4, max_epochs=1)
        assert table.summary()["3"]["sage"]["std"] == 0.0
        assert "GraphSAGE" in table.format()

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            run_experiment(3)
        with pytest.raises(ValueError):
            run_experiment(1, scale="huge")

    def test_results_dir_env(self, monkeypatch, tmp_path):
        monkeypatch.setenv(RESULTS_ENV, str(tmp_path))
        assert results_dir() == tmp_path
        monkeypatch.delenv(RESULTS_ENV)
        assert str(results_dir()) == "results"

    def test_summary_statistics(self):
        t = ResultsTable(1, "desk", ["gin"], [10], rows=[(10, "gin", 0, 0.2), (10, "gin", 1, 0.4)])
        s = t.summary()["10"]["gin"]
        assert s["mean"] == pytest.approx(0.3) and s["std"] == pytest.approx(0.1)
