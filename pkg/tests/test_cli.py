import csv
import json
from pathlib import Path

import pytest

from annotmix.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from annotmix.pipeline import verify_manifest

TINY = {"hidden": [16, 16], "annotator_hidden": 16}


def _config(root: Path, name: str, **sections) -> Path:
    doc = {
        "data": {"train_features": "data/train_features.csv", "train_labels": "data/train_labels.csv",
                 "val_features": "data/val_features.csv", "val_labels": "data/val_labels.csv",
                 "test_features": "data/test_features.csv", "test_labels": "data/test_labels.csv",
                 "annotations": "sim/annotations.csv", "test_annotator_table": "sim/annotator_table_test.csv",
                 "num_classes": 4, "num_annotators": 4},
        "train": {"epochs": 2, "batch_size": 32},
        "models": TINY,
        "sim": {"num_annotators": 4, "epochs_range": [1, 3]},
    }
    for key, value in sections.items():
        doc.setdefault(key, {}).update(value)
    path = root / name
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n-train", "120", "--n-test", "80", "--n-val", "40"]) == 0
    cfg = _config(root, "run.json")
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "sim")]) == EXIT_OK
    return root


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_outputs(self, workspace):
        sim = workspace / "sim"
        for name in ("annotations.csv", "sim_report.json", "annotator_table_test.csv", "manifest.json"):
            assert (sim / name).exists()
        report = json.loads((sim / "sim_report.json").read_text())
        assert report["avg_labels_per_instance"] == 2.0
        assert verify_manifest(sim) == []

    def test_rerun_is_byte_identical(self, workspace, tmp_path):
        cfg = workspace / "run.json"
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again")]) == EXIT_OK
        assert (tmp_path / "again" / "annotations.csv").read_bytes() == \
            (workspace / "sim" / "annotations.csv").read_bytes()

    def test_missing_dataset_names_key(self, workspace, tmp_path, capsys):
        cfg = _config(workspace, "broken.json", data={"train_features": "data/nope.csv"})
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_INPUT
        assert "data.train_features" in capsys.readouterr().err


class TestTrain:
    def test_metrics_rows(self, workspace, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--config", str(workspace / "run.json"), "--out", str(out)]) == EXIT_OK
        rows = _rows(out / "metrics.csv")
        assert len(rows) == 2
        assert list(rows[0])[:5] == ["epoch", "train_loss", "annot_acc_train", "clf_acc_val", "lr"]
        assert (out / "last.ckpt").exists() and (out / "best.ckpt").exists()

    def test_true_base_without_labels(self, workspace, tmp_path):
        cfg = _config(workspace, "tb.json", data={"train_labels": None}, train={"method": "true_base"})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "tb")]) == EXIT_INPUT

    def test_identical_reruns(self, workspace, tmp_path):
        cfg = str(workspace / "run.json")
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "3"]) == EXIT_OK
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "3"]) == EXIT_OK
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()

    def test_refuses_non_empty_out(self, workspace, tmp_path, capsys):
        (tmp_path / "keep.txt").write_text("x")
        assert main(["train", "--config", str(workspace / "run.json"), "--out", str(tmp_path)]) == EXIT_INPUT
        assert "--out" in capsys.readouterr().err

    def test_unknown_config_key(self, workspace, tmp_path, capsys):
        cfg = _config(workspace, "typo.json", train={"epocs": 2})
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t")]) == EXIT_INPUT
        assert "train.epocs" in capsys.readouterr().err

    def test_divergence_exit_code(self, workspace, tmp_path):
        cfg = _config(workspace, "nan.json", train={"learning_rate": 1e308})
        with pytest.warns(RuntimeWarning):
            code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "d")])
        assert code == EXIT_NUMERIC


def test_evaluate(workspace, tmp_path):
    run = tmp_path / "run"
    cfg = str(workspace / "run.json")
    assert main(["train", "--config", cfg, "--out", str(run)]) == EXIT_OK
    assert main(["evaluate", "--config", cfg, "--run", str(run), "--out", str(tmp_path / "ev")]) == EXIT_OK
    doc = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert 0.0 <= doc["last"]["clf_acc"] <= 1.0
    assert 0.0 <= doc["last"]["perf_auroc"] <= 1.0
    assert doc["best"] is not None
    assert (tmp_path / "ev" / "curves.png").exists()


def test_benchmark_grid(workspace, tmp_path):
    cfg = _config(workspace, "bench.json", benchmark={"variants": ["annot-mix", "mv-base"], "seeds": [0, 1, 2]},
                  train={"epochs": 1})
    out = tmp_path / "bench"
    assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    cells = sorted(p.relative_to(out).as_posix() for p in out.glob("cells/*/seed_*"))
    assert len(cells) == 6
    rows = _rows(out / "summary.csv")
    assert [(r["variant"], r["policy"]) for r in rows] == [("annot-mix", "last"), ("annot-mix", "best"),
                                                          ("mv-base", "last"), ("mv-base", "best")]
    assert all(r["n_ok"] == "3" for r in rows)
    for name in ("summary.txt", "summary.png", "curves.png"):
        assert (out / name).exists()


def test_benchmark_single_seed_warns(workspace, tmp_path):
    cfg = _config(workspace, "one.json", benchmark={"variants": ["mv-base"], "seeds": [0]}, train={"epochs": 1})
    out = tmp_path / "one"
    assert main(["benchmark", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    last = _rows(out / "summary.csv")[0]
    assert float(last["clf_acc_std"]) == 0.0
    assert "single seed" in last["warning"]


def test_schema_prints_json(capsys):
    assert main(["schema"]) == EXIT_OK
    assert "properties" in json.loads(capsys.readouterr().out)


def test_bad_arguments():
    assert main(["train"]) == EXIT_INPUT
