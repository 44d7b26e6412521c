import numpy as np
import pytest

from queryts import tensor as T
from queryts.data import SyntheticConfig, generate_synthetic
from queryts.errors import NumericalError, ValidationError
from queryts.params import ParamStore
from queryts.train import TrainConfig, split_instances, train_model
from queryts import config as C
from queryts import workflows as W


class ScriptedModel:
    """Loss follows a script; one trainable parameter so Adam has work."""

    def __init__(self, val_script):
        self.params = ParamStore(0)
        self.p = self.params.add("w", [1.0])
        self.val_script = list(val_script)
        self.calls = {"train": 0, "val": 0}


def scripted_loss_fn(model):
    def fn(m, items):
        # items tagged "train" or "val"; val losses follow the script
        if items[0] == "train":
            model.calls["train"] += 1
            value = 1.0
        else:
            idx = model.calls["val"]
            model.calls["val"] += 1
            value = model.val_script[min(idx, len(model.val_script) - 1)]
        loss = T.scale(T.tsum(model.p), 0.0) + value
        return loss, 1.0
    return fn


class TestEarlyStopping:
    def test_stops_at_first_patience_run(self):
        # improvements at epochs 0 and 1; epochs 2 and 3 flat -> stop at 3
        model = ScriptedModel([1.0, 0.9, 0.9, 0.9, 0.8])
        tc = TrainConfig(epochs=50, patience=2, batch_size=1, seeds=(1,))
        result = train_model(model, scripted_loss_fn(model), ["train"], ["val"], tc, 1)
        assert result.stopped_epoch == 3
        assert result.best_epoch == 1
        assert result.best_val == 0.9

    def test_no_stop_when_strictly_improving(self):
        script = [1.0 - 0.01 * k for k in range(30)]
        model = ScriptedModel(script)
        tc = TrainConfig(epochs=20, patience=50, batch_size=1, seeds=(1,))
        result = train_model(model, scripted_loss_fn(model), ["train"], ["val"], tc, 1)
        assert result.stopped_epoch == 19  # epoch cap, not patience
        assert result.best_epoch == 19

    def test_equal_loss_counts_as_no_improvement(self):
        model = ScriptedModel([0.5, 0.5, 0.5])
        tc = TrainConfig(epochs=50, patience=2, batch_size=1, seeds=(1,))
        result = train_model(model, scripted_loss_fn(model), ["train"], ["val"], tc, 1)
        assert result.stopped_epoch == 2
        assert result.best_epoch == 0

    def test_best_checkpoint_retained(self):
        # parameter moves during training; the restored state is the best-val one
        cfg = C.load_config(overrides={"data.num_instances": "12",
                                       "train.epochs": "4", "train.seeds": "1"})
        data = W.prepare_forecast_data(cfg)
        run = W.run_forecast_seed(cfg, data, 1)
        best = run.result.best_arrays
        for name, p in run.model.params.items():
            assert np.array_equal(p.data, best[name])


class TestTrainingBasics:
    def test_lr_zero_parameters_unchanged(self):
        cfg = C.load_config(overrides={"data.num_instances": "10",
                                       "train.epochs": "3", "train.seeds": "1",
                                       "train.learning_rate": "0.0"})
        data = W.prepare_forecast_data(cfg)
        model, mcfg, kind, predict = W.build_forecaster(cfg, 1, data.num_variables)
        before = model.params.state_arrays()
        from queryts.train import forecast_loss_fn
        tc = W.train_config(cfg)
        train_model(model, forecast_loss_fn(mcfg, predict), data.train,
                    data.val, tc, 1)
        for name, p in model.params.items():
            assert np.array_equal(p.data, before[name])

    def test_determinism_same_seed(self):
        cfg = C.load_config(overrides={"data.num_instances": "12",
                                       "train.epochs": "4", "train.seeds": "1"})
        runs = []
        for _ in range(2):
            data = W.prepare_forecast_data(cfg)
            runs.append(W.run_forecast_seed(cfg, data, 1))
        assert runs[0].mse == runs[1].mse
        assert runs[0].result.curve == runs[1].result.curve
        for name in runs[0].model.params.names():
            assert np.array_equal(runs[0].model.params[name].data,
                                  runs[1].model.params[name].data)

    def test_seed_changes_run(self):
        cfg = C.load_config(overrides={"data.num_instances": "12",
                                       "train.epochs": "3", "train.seeds": "1"})
        data = W.prepare_forecast_data(cfg)
        a = W.run_forecast_seed(cfg, data, 1)
        b = W.run_forecast_seed(cfg, data, 2)
        assert a.mse != b.mse

    def test_divergence_aborts_with_epoch(self):
        # Adam steps are bounded by lr and layer norm renormalizes, so only an
        # absurd rate actually overflows float64 in the unnormalized head
        cfg = C.load_config(overrides={"data.num_instances": "10",
                                       "train.epochs": "5", "train.seeds": "1",
                                       "train.learning_rate": "1e100"})
        data = W.prepare_forecast_data(cfg)
        with pytest.raises(NumericalError, match="epoch"):
            W.run_forecast_seed(cfg, data, 1)

    def test_training_loss_decreases_on_benchmark(self):
        cfg = C.load_config(overrides={"data.num_instances": "20",
                                       "train.epochs": "30", "train.seeds": "1"})
        data = W.prepare_forecast_data(cfg)
        run = W.run_forecast_seed(cfg, data, 1)
        curve = run.result.curve
        assert curve[-1][1] < curve[0][1]


class TestSplitInstances:
    def test_partition_and_determinism(self):
        insts = generate_synthetic(SyntheticConfig(num_instances=20, seed=3))
        a = split_instances(insts, 0.2, 0.1, 5)
        b = split_instances(insts, 0.2, 0.1, 5)
        ids = lambda group: [i.instance_id for i in group]
        assert ids(a[0]) == ids(b[0]) and ids(a[1]) == ids(b[1]) and ids(a[2]) == ids(b[2])
        all_ids = sorted(ids(a[0]) + ids(a[1]) + ids(a[2]))
        assert all_ids == sorted(i.instance_id for i in insts)

    def test_fractions(self):
        insts = generate_synthetic(SyntheticConfig(num_instances=20, seed=3))
        train, val, test = split_instances(insts, 0.2, 0.1, 5)
        assert len(test) == 4
        assert len(val) == 2
        assert len(train) == 14

    def test_too_few_instances(self):
        insts = generate_synthetic(SyntheticConfig(num_instances=2, seed=3))
        with pytest.raises(ValidationError):
            split_instances(insts, 0.2, 0.1, 5)


class TestTrainConfig:
    def test_patience_validated(self):
        with pytest.raises(ValidationError):
            TrainConfig(patience=0)

    def test_seeds_nonempty(self):
        with pytest.raises(ValidationError):
            TrainConfig(seeds=())

    def test_unknown_task(self):
        with pytest.raises(ValidationError):
            TrainConfig(task="regress")
