import os

import numpy as np

from queryts import tensor
from queryts.cli import main

FAST = ["--data.num_instances", "12", "--train.epochs", "3", "--train.seeds", "1",
        "--model.dim", "8", "--model.heads", "2"]


def run(args):
    return main(args)


class TestGen:
    def test_writes_csv_and_manifest(self, tmp_path):
        assert run(["gen", "--out", str(tmp_path), "--data.num_instances", "5"]) == 0
        assert (tmp_path / "dataset.csv").exists()
        assert (tmp_path / "dataset.manifest").exists()
        text = (tmp_path / "dataset.csv").read_text()
        assert text.startswith("# config-hash: ")

    def test_byte_identical_reruns(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(["gen", "--out", str(d), "--data.num_instances", "5"]) == 0
        assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()

    def test_unknown_key_exit_1(self, tmp_path, capsys):
        assert run(["gen", "--out", str(tmp_path), "--data.bogus", "1"]) == 1
        assert "unknown config key" in capsys.readouterr().err


class TestTrainEval:
    def test_train_writes_artifacts(self, tmp_path):
        assert run(["train", "--out", str(tmp_path)] + FAST) == 0
        files = os.listdir(tmp_path)
        assert any(f.endswith("_metrics.csv") for f in files)
        assert any(f.endswith("_s1_loss.csv") for f in files)
        assert any(f.endswith("_s1.manifest.txt") for f in files)
        assert any(f.endswith("_s1.params.bin") for f in files)

    def test_eval_roundtrip(self, tmp_path, capsys):
        assert run(["train", "--out", str(tmp_path)] + FAST) == 0
        prefix = [str(tmp_path / f)[:-len(".manifest.txt")]
                  for f in os.listdir(tmp_path) if f.endswith(".manifest.txt")][0]
        assert run(["eval", "--out", str(tmp_path), "--checkpoint", prefix] + FAST) == 0
        out = capsys.readouterr().out
        assert "mse=" in out and "mae=" in out

    def test_eval_requires_checkpoint(self, tmp_path):
        assert run(["eval", "--out", str(tmp_path)] + FAST) == 1

    def test_config_file_plus_override(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("data.num_instances = 12\ntrain.epochs = 2\n"
                            "train.seeds = 1\nmodel.dim = 8\nmodel.heads = 2\n")
        assert run(["train", "--config", str(cfg_file), "--out", str(tmp_path),
                    "--train.epochs", "1"]) == 0

    def test_classify_task(self, tmp_path, capsys):
        args = [a if a != "12" else "16" for a in FAST]  # both classes in test split
        clf = ["--train.task", "classify", "--data.class_offset", "1.0"]
        assert run(["train", "--out", str(tmp_path)] + clf + args) == 0
        out = capsys.readouterr().out
        assert "auroc" in out
        prefix = [str(tmp_path / f)[:-len(".manifest.txt")]
                  for f in os.listdir(tmp_path) if f.endswith(".manifest.txt")][0]
        assert run(["eval", "--out", str(tmp_path), "--checkpoint", prefix]
                   + clf + args) == 0
        assert "accuracy=" in capsys.readouterr().out

    def test_end_to_end_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(["train", "--out", str(d)] + FAST) == 0
        for name in sorted(os.listdir(a)):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name


class TestAblateSweepGrid:
    def test_ablate_schema(self, tmp_path):
        assert run(["ablate", "--out", str(tmp_path)] + FAST) == 0
        path = [tmp_path / f for f in os.listdir(tmp_path) if f.endswith("_ablation.csv")][0]
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# config-hash: ")
        assert lines[1] == "variant,mse_mean,mse_std,mae_mean,mae_std"
        assert len(lines) == 2 + 4  # add, concat, meanpool, query

    def test_sweep_monotone_schema(self, tmp_path):
        assert run(["sweep-sparsity", "--out", str(tmp_path),
                    "--sweep.ratios", "0,0.5"] + FAST) == 0
        path = [tmp_path / f for f in os.listdir(tmp_path) if f.endswith("_sparsity.csv")][0]
        lines = path.read_text().splitlines()
        assert lines[1] == "ratio,mse_median,mse_mean,mse_std"
        assert len(lines) == 4

    def test_sweep_rejects_ratio_one(self, tmp_path):
        assert run(["sweep-sparsity", "--out", str(tmp_path),
                    "--sweep.ratios", "0,1.0"] + FAST) == 1

    def test_grid_search(self, tmp_path):
        assert run(["grid-search", "--out", str(tmp_path), "--grid.dims", "8",
                    "--grid.layers", "1", "--grid.heads", "2"] + FAST) == 0
        path = [tmp_path / f for f in os.listdir(tmp_path) if f.endswith("_grid.csv")][0]
        lines = path.read_text().splitlines()
        assert len(lines) == 3


class TestGradCheckCmd:
    def test_ops_scope_passes(self, capsys):
        assert run(["grad-check", "--scope", "ops"]) == 0
        assert "all" in capsys.readouterr().out

    def test_mutation_detected(self, monkeypatch, capsys):
        # corrupt the sine gradient; the report must name the op and exit 2
        original = tensor.sin

        def bad_sin(a):
            a = tensor._wrap(a)
            return tensor._make(np.sin(a.data), (a,),
                                lambda g: (g * np.cos(a.data) * 1.01,))

        monkeypatch.setattr(tensor, "sin", bad_sin)
        try:
            code = run(["grad-check", "--scope", "ops"])
        finally:
            monkeypatch.setattr(tensor, "sin", original)
        assert code == 2
        captured = capsys.readouterr()
        assert "sin" in captured.err


class TestCostCmd:
    def test_cost_outputs(self, tmp_path, capsys):
        assert run(["cost", "--out", str(tmp_path), "--data.num_instances", "6"]) == 0
        out = capsys.readouterr().out
        assert "parameters=" in out
        assert "query_variable_macs=" in out


class TestEmitPlots:
    def test_artifacts_after_train(self, tmp_path):
        assert run(["train", "--out", str(tmp_path)] + FAST) == 0
        assert run(["emit-plots", "--out", str(tmp_path)] + FAST) == 0
        files = os.listdir(tmp_path)
        run_files = [f for f in files if f.endswith("_traces.csv")]
        assert run_files
        emb_files = [f for f in files if f.endswith("_embeddings.csv")]
        assert emb_files

    def test_trace_rows_equal_query_count(self, tmp_path):
        assert run(["train", "--out", str(tmp_path)] + FAST) == 0
        assert run(["emit-plots", "--out", str(tmp_path)] + FAST) == 0
        trace = [tmp_path / f for f in os.listdir(tmp_path)
                 if f.endswith("_traces.csv")][0]
        rows = [l for l in trace.read_text().splitlines()
                if l and not l.startswith("#")][1:]
        from queryts import config as C, workflows as W
        cfg = C.load_config(overrides={k.lstrip("-"): v for k, v in
                                       zip(FAST[::2], FAST[1::2])})
        data = W.prepare_forecast_data(cfg)
        q_total = sum(len(s.targets) for s in data.test)
        assert len(rows) == q_total

    def test_empty_run_header_only_loss_file(self, tmp_path):
        assert run(["emit-plots", "--out", str(tmp_path)] + FAST) == 0
        files = os.listdir(tmp_path)
        loss = [f for f in files if f.endswith("_loss.csv")]
        assert loss
        lines = (tmp_path / loss[0]).read_text().splitlines()
        assert len(lines) == 2  # hash comment + header
        assert not any(f.endswith("_traces.csv") for f in files)

    def test_reemission_byte_identical(self, tmp_path):
        assert run(["train", "--out", str(tmp_path)] + FAST) == 0
        assert run(["emit-plots", "--out", str(tmp_path)] + FAST) == 0
        trace = [tmp_path / f for f in os.listdir(tmp_path)
                 if f.endswith("_traces.csv")][0]
        first = trace.read_bytes()
        assert run(["emit-plots", "--out", str(tmp_path)] + FAST) == 0
        assert trace.read_bytes() == first
