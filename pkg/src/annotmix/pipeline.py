"""End-to-end drivers behind the CLI subcommands.

Each driver writes into a fresh run directory and finishes by writing a
``manifest.json`` listing the config, seed, timestamps and a checksum for
every artifact and input file.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import math
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .annosim import (
    mask_table,
    noise_summary,
    participation_probabilities,
    prediction_table,
    table_to_annotations,
    train_annotator_models,
    STREAM_MASK,
)
from .config import MixupConfig, RunConfig, Variant
from .data import AnnotationSet, Dataset, build_triples, file_checksum, load_annotations, load_dataset, save_annotations
from .errors import ConfigError, NotComputable
from .evaluation import MetricsReport, annot_acc, clf_acc, mean_std, perf_auroc
from .models import ModelPair, load_checkpoint, save_checkpoint
from .numerics import Rng
from .plotting import plot_learning_curves, plot_summary
from .training import TrainState, train

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "train_loss", "annot_acc_train", "clf_acc_val", "lr"]


# --- run directories and manifests ------------------------------------------


def prepare_run_dir(out) -> Path:
    """Create ``out``; refuse to reuse a directory that already has content."""
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        raise ConfigError("run directory already exists and is not empty; use a fresh one", field="--out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def build_id() -> str:
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out: Path, cfg: RunConfig, seed: int, started: str, artifacts: list[str],
                   inputs: list[str | None], extra: dict | None = None) -> Path:
    doc = {
        "config": cfg.model_dump(mode="json"),
        "config_hash": cfg.digest(),
        "seed": seed,
        "build": build_id(),
        "started": started,
        "finished": _now(),
        "artifacts": {a: {"path": a, "sha256": file_checksum(out / a)} for a in artifacts if (out / a).exists()},
        "inputs": {str(p): file_checksum(p) for p in inputs if p},
    }
    if extra:
        doc.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_manifest(run_dir) -> list[str]:
    """Names of artifacts whose files are missing or whose checksum changed."""
    run_dir = Path(run_dir)
    doc = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    bad = []
    for name, entry in doc["artifacts"].items():
        p = run_dir / entry["path"]
        if not p.exists() or file_checksum(p) != entry["sha256"]:
            bad.append(name)
    return bad


# --- inputs ------------------------------------------------------------------


def resolve_paths(cfg: RunConfig, base: Path) -> RunConfig:
    """Make relative data paths relative to ``base`` (the config file's folder)."""
    data = cfg.data.model_copy()
    for key, value in data.model_dump().items():
        if isinstance(value, str) and not Path(value).is_absolute():
            setattr(data, key, str((base / value).resolve()))
    return cfg.model_copy(update={"data": data})


def _require(cfg: RunConfig, key: str) -> str:
    value = getattr(cfg.data, key)
    if not value:
        raise ConfigError("required for this command", field=f"data.{key}")
    if not Path(value).exists():
        raise ConfigError(f"file not found: {value}", field=f"data.{key}")
    return value


def _optional(cfg: RunConfig, key: str) -> str | None:
    value = getattr(cfg.data, key)
    if value and not Path(value).exists():
        raise ConfigError(f"file not found: {value}", field=f"data.{key}")
    return value or None


@dataclass
class Inputs:
    train: Dataset
    annotations: AnnotationSet | None
    val: Dataset | None
    test: Dataset | None
    test_table: AnnotationSet | None
    paths: list[str]


def load_inputs(cfg: RunConfig, need_annotations=True, need_train_labels=False, with_table=True) -> Inputs:
    d = cfg.data
    train_x = _require(cfg, "train_features")
    train_y = _require(cfg, "train_labels") if need_train_labels else _optional(cfg, "train_labels")
    train_ds = load_dataset(train_x, train_y, d.num_classes, "train")
    c = train_ds.num_classes
    paths = [train_x, train_y]
    ann = None
    if need_annotations:
        ann_path = _require(cfg, "annotations")
        if d.num_annotators is None:
            raise ConfigError("required when annotations are used", field="data.num_annotators")
        ann = load_annotations(ann_path, d.num_annotators, train_ds.n, c)
        paths.append(ann_path)
    val = test = table = None
    if _optional(cfg, "val_features"):
        val = load_dataset(d.val_features, _require(cfg, "val_labels"), c, "validation")
        paths += [d.val_features, d.val_labels]
    if _optional(cfg, "test_features"):
        test = load_dataset(d.test_features, _optional(cfg, "test_labels"), c, "test")
        paths += [d.test_features, d.test_labels]
    table_key = "test_annotator_table" if cfg.eval.perf_auroc_support == "all" else "test_annotations"
    if with_table and test is not None and _optional(cfg, table_key) and d.num_annotators:
        table = load_annotations(getattr(d, table_key), d.num_annotators, test.n, c)
        paths.append(getattr(d, table_key))
    return Inputs(train_ds, ann, val, test, table, paths)


# --- simulate ----------------------------------------------------------------


def run_simulation(cfg: RunConfig, out) -> Path:
    started = _now()
    out = prepare_run_dir(out)
    inp = load_inputs(cfg, need_annotations=False, need_train_labels=True, with_table=False)
    sim = cfg.sim
    models = train_annotator_models(inp.train, sim)
    participation = participation_probabilities(sim)
    table = prediction_table(models, inp.train)
    ann = mask_table(table, participation, sim.target_avg_labels_per_instance, Rng(sim.seed, STREAM_MASK))
    save_annotations(ann, out / "annotations.csv")
    report = noise_summary(ann, inp.train).to_dict()
    report["participation"] = participation.tolist()
    artifacts = ["annotations.csv", "sim_report.json"]
    if inp.test is not None:
        test_table = prediction_table(models, inp.test)
        save_annotations(table_to_annotations(test_table), out / "annotator_table_test.csv")
        test_ann = mask_table(test_table, participation, sim.target_avg_labels_per_instance,
                              Rng(sim.seed, (STREAM_MASK, 1)))
        save_annotations(test_ann, out / "annotations_test.csv")
        artifacts += ["annotator_table_test.csv", "annotations_test.csv"]
        if inp.test.true_labels is not None:
            report["test"] = noise_summary(test_ann, inp.test).to_dict()
    (out / "sim_report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    write_manifest(out, cfg, sim.seed, started, artifacts, inp.paths, {"command": "simulate"})
    return out


# --- train -------------------------------------------------------------------


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics(rows: list[dict], path) -> None:
    cols = list(METRIC_COLUMNS)
    if any("clf_acc_test" in r for r in rows):
        cols.append("clf_acc_test")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def read_metrics(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k == "epoch" else (float(v) if v != "" else None)) for k, v in r.items()})
    return out


def train_from_config(cfg: RunConfig, inp: Inputs, mixup: MixupConfig | None = None) -> TrainState:
    tc = cfg.train
    if tc.method == "true_base" and inp.train.true_labels is None:
        raise ConfigError("true_base needs data.train_labels", field="data.train_labels")
    ann = inp.annotations
    if ann is None:
        raise ConfigError("required for this command", field="data.annotations")
    mix = mixup or cfg.mixup
    if tc.method == "mv_mixup" and mix.mode != "vanilla":
        mix = mix.model_copy(update={"mode": "vanilla"})
    if tc.method == "mv_base":
        mix = MixupConfig(mode="off")
    if tc.method == "true_base":
        mix = MixupConfig(mode="off")
    return train(inp.train, ann, tc, mix, cfg.models, inp.val, inp.test)


def run_training(cfg: RunConfig, out, mixup: MixupConfig | None = None, inp: Inputs | None = None,
                 fresh: bool = True) -> tuple[Path, TrainState]:
    started = _now()
    out = prepare_run_dir(out) if fresh else Path(out)
    inp = inp or load_inputs(cfg, need_annotations=True, need_train_labels=cfg.train.method == "true_base")
    state = train_from_config(cfg, inp, mixup)
    write_metrics(state.log, out / "metrics.csv")
    meta = {"method": cfg.train.method, "seed": cfg.train.seed, "epochs": state.epoch,
            "best_epoch": state.best_epoch, **state.meta}
    save_checkpoint(state.model, out / "last.ckpt", meta)
    artifacts = ["metrics.csv", "last.ckpt"]
    if state.best_model is not None:
        save_checkpoint(state.best_model, out / "best.ckpt", meta)
        artifacts.append("best.ckpt")
    write_manifest(out, cfg, cfg.train.seed, started, artifacts, inp.paths, {"command": "train", "train_meta": meta})
    return out, state


# --- evaluate ----------------------------------------------------------------


def evaluate_model(model: ModelPair, inp: Inputs, cfg: RunConfig, policy: str) -> MetricsReport:
    if inp.test is None:
        raise ConfigError("required for evaluation", field="data.test_features")
    report = MetricsReport(clf_acc=clf_acc(model, inp.test), method=cfg.train.method, seed=cfg.train.seed,
                           config_hash=cfg.digest(), policy=policy)
    if model.annotator is not None:
        if inp.annotations is not None and len(inp.annotations):
            report.annot_acc = annot_acc(model, build_triples(inp.train, inp.annotations), inp.train)
        try:
            report.perf_auroc = perf_auroc(model, inp.test, inp.test_table)
        except NotComputable as exc:
            report.extra["perf_auroc"] = f"not computable: {exc}"
    return report


def run_evaluation(cfg: RunConfig, run_dir, out, inp: Inputs | None = None, fresh: bool = True,
                   variant: str | None = None) -> dict:
    started = _now()
    run_dir = Path(run_dir)
    out = prepare_run_dir(out) if fresh else Path(out)
    inp = inp or load_inputs(cfg, need_annotations=bool(cfg.data.annotations))
    doc = {"last": evaluate_model(load_checkpoint(run_dir / "last.ckpt"), inp, cfg, "last").to_dict(), "best": None}
    if (run_dir / "best.ckpt").exists():
        doc["best"] = evaluate_model(load_checkpoint(run_dir / "best.ckpt"), inp, cfg, "best").to_dict()
    (out / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    artifacts = ["report.json"]
    metrics_path = run_dir / "metrics.csv"
    if metrics_path.exists():
        name = variant or cfg.train.method
        curves = [{"variant": name, "epoch": r["epoch"], "annot_acc_train": r.get("annot_acc_train"),
                   "clf_acc_test": r.get("clf_acc_test")} for r in read_metrics(metrics_path)]
        write_curves(curves, out / "curves.csv")
        plot_learning_curves(curves, out / "curves.png")
        artifacts += ["curves.csv", "curves.png"]
    write_manifest(out, cfg, cfg.train.seed, started, artifacts, inp.paths + [str(run_dir / "last.ckpt")],
                   {"command": "evaluate"})
    return doc


def write_curves(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "epoch", "annot_acc_train", "clf_acc_test"])
        for r in rows:
            w.writerow([r["variant"], r["epoch"], _fmt(r.get("annot_acc_train")), _fmt(r.get("clf_acc_test"))])


# --- benchmark ---------------------------------------------------------------


def _cell_config(cfg: RunConfig, variant: Variant, seed: int) -> tuple[RunConfig, MixupConfig | None]:
    train_cfg = cfg.train.model_copy(update={"method": variant.method, "seed": seed})
    return cfg.model_copy(update={"train": train_cfg}), variant.mixup


def run_cell(cfg: RunConfig, variant: Variant, seed: int, cell_dir: str) -> dict:
    """Train and evaluate one (variant, seed) cell; failures are reported, not raised."""
    cell_cfg, mixup = _cell_config(cfg, variant, seed)
    cell = Path(cell_dir)
    try:
        inp = load_inputs(cell_cfg, need_annotations=True, need_train_labels=variant.method == "true_base")
        run_training(cell_cfg, cell, mixup, inp)
        report = run_evaluation(cell_cfg, cell, cell, inp, fresh=False, variant=variant.name)
        return {"variant": variant.name, "seed": seed, "status": "ok", "report": report, "dir": str(cell)}
    except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the grid
        log.warning("cell %s/seed %d failed: %s", variant.name, seed, exc)
        return {"variant": variant.name, "seed": seed, "status": "failed", "error": f"{type(exc).__name__}: {exc}",
                "dir": str(cell)}


def summarize(cells: list[dict], variants: list[str]) -> list[dict]:
    rows = []
    for name in variants:
        mine = [c for c in cells if c["variant"] == name]
        ok = [c for c in mine if c["status"] == "ok"]
        for policy in ("last", "best"):
            reports = [c["report"][policy] for c in ok if c["report"].get(policy)]
            row = {"variant": name, "policy": policy, "n_ok": len(reports), "n_failed": len(mine) - len(ok)}
            warnings = []
            for metric in ("clf_acc", "annot_acc", "perf_auroc"):
                mean, std, single = mean_std([r.get(metric) for r in reports])
                row[f"{metric}_mean"], row[f"{metric}_std"] = mean, std
                if single and not math.isnan(mean) and metric == "clf_acc":
                    warnings.append("single seed: std reported as 0")
            if not reports:
                warnings.append("no results" if policy == "last" else "no validation set: best epoch unavailable")
            if row["n_failed"]:
                warnings.append(f"{row['n_failed']} failed cell(s)")
            row["warning"] = "; ".join(warnings)
            rows.append(row)
    return rows


SUMMARY_COLUMNS = ["variant", "policy", "n_ok", "n_failed", "clf_acc_mean", "clf_acc_std", "annot_acc_mean",
                   "annot_acc_std", "perf_auroc_mean", "perf_auroc_std", "warning"]


def format_table(rows: list[dict]) -> str:
    """Plain-text table: one row per variant, last/best epoch clf-acc in percent."""

    def pct(row, metric):
        if row is None or row["n_ok"] == 0 or math.isnan(row[f"{metric}_mean"]):
            return "n/a"
        return f"{100 * row[f'{metric}_mean']:.1f} +- {100 * row[f'{metric}_std']:.1f}"

    variants = list(dict.fromkeys(r["variant"] for r in rows))
    header = ["variant", "clf-acc last [%]", "clf-acc best [%]", "perf-auroc last [%]"]
    body = []
    for v in variants:
        last = next(r for r in rows if r["variant"] == v and r["policy"] == "last")
        best = next(r for r in rows if r["variant"] == v and r["policy"] == "best")
        body.append([v, pct(last, "clf_acc"), pct(best, "clf_acc"), pct(last, "perf_auroc")])
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = [" | ".join(str(x).ljust(w) for x, w in zip(line, widths)) for line in [header, *body]]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def run_benchmark(cfg: RunConfig, out, jobs: int = 1) -> list[dict]:
    started = _now()
    out = prepare_run_dir(out)
    variants = cfg.benchmark.variants
    if not variants:
        raise ConfigError("at least one variant is required", field="benchmark.variants")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise ConfigError("variant names must be unique", field="benchmark.variants")
    # fail fast on unusable inputs before launching the grid
    load_inputs(cfg, need_annotations=True)
    grid = [(v, s, str(out / "cells" / v.name / f"seed_{s}")) for v in variants for s in cfg.benchmark.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_cell, cfg, v, s, d) for v, s, d in grid]
            cells = [f.result() for f in futures]
    else:
        cells = [run_cell(cfg, v, s, d) for v, s, d in grid]

    rows = summarize(cells, names)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SUMMARY_COLUMNS])
    (out / "summary.txt").write_text(format_table(rows), encoding="utf-8")
    (out / "cells.json").write_text(json.dumps(cells, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    plot_summary(rows, out / "summary.png")
    curves = _mean_curves(cells)
    artifacts = ["summary.csv", "summary.txt", "summary.png", "cells.json"]
    if curves:
        write_curves(curves, out / "curves.csv")
        plot_learning_curves(curves, out / "curves.png")
        artifacts += ["curves.csv", "curves.png"]
    write_manifest(out, cfg, cfg.train.seed, started, artifacts, [], {"command": "benchmark",
                                                                     "cells": [c["dir"] for c in cells]})
    return rows


def _mean_curves(cells: list[dict]) -> list[dict]:
    """Per-variant learning curves averaged over the seeds that finished."""
    by_variant: dict[str, list[list[dict]]] = {}
    for c in cells:
        path = Path(c["dir"]) / "metrics.csv"
        if c["status"] == "ok" and path.exists():
            by_variant.setdefault(c["variant"], []).append(read_metrics(path))
    out = []
    for name, logs in by_variant.items():
        for epoch in range(min(len(lg) for lg in logs)):
            row = {"variant": name, "epoch": epoch}
            for metric in ("annot_acc_train", "clf_acc_test"):
                vals = [lg[epoch].get(metric) for lg in logs]
                row[metric] = float(np.mean(vals)) if all(v is not None for v in vals) else None
            out.append(row)
    return out
