"""Run configuration.

A single JSON file drives a whole pipeline. Its top-level sections are
``data``, ``train``, ``mixup``, ``models``, ``sim``, ``eval`` and
``benchmark``; :func:`json_schema` publishes the schema.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MixupConfig(_Section):
    mode: Literal["off", "vanilla", "triple", "same_instance_only"] = "triple"
    alpha: float = Field(1.0, gt=0)
    per_row: bool = False
    # pins every mixing coefficient; used to check boundary behaviour
    fixed_lambda: Optional[float] = Field(None, ge=0, le=1)


class ModelConfig(_Section):
    hidden: list[int] = Field(default_factory=lambda: [128, 128])
    annotator_hidden: int = Field(128, ge=1)
    eta: float = Field(0.9, gt=0, lt=1)
    detach_embedding: bool = False
    slope: float = Field(0.01, ge=0)


class TrainConfig(_Section):
    method: Literal["annot_mix", "mv_base", "mv_mixup", "true_base"] = "annot_mix"
    epochs: int = Field(50, ge=1)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(1e-2, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    seed: int = 0
    # lr floor of the cosine schedule, as a fraction of the initial lr
    min_lr_ratio: float = Field(1e-3, ge=0, le=1)


class DataConfig(_Section):
    train_features: Optional[str] = None
    train_labels: Optional[str] = None
    annotations: Optional[str] = None
    val_features: Optional[str] = None
    val_labels: Optional[str] = None
    test_features: Optional[str] = None
    test_labels: Optional[str] = None
    # full annotator prediction table on the test split (simulated annotators only)
    test_annotator_table: Optional[str] = None
    # the subset of that table that survived the participation mask
    test_annotations: Optional[str] = None
    num_classes: Optional[int] = Field(None, ge=2)
    num_annotators: Optional[int] = Field(None, ge=1)


class SimConfig(_Section):
    num_annotators: int = Field(10, ge=1)
    epochs_range: tuple[int, int] = (1, 10)
    lr_range: tuple[float, float] = (1e-4, 1e-2)
    subsample_range: tuple[float, float] = (0.005, 0.05)
    hidden: int = Field(32, ge=1)
    batch_size: int = Field(64, ge=1)
    target_avg_labels_per_instance: float = Field(2.0, gt=0)
    # Beta prior over per-annotator participation before rescaling to the budget
    participation_prior: tuple[float, float] = (2.0, 6.0)
    # explicit per-annotator participation probabilities; overrides the prior
    participation: Optional[list[float]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        for name in ("epochs_range", "lr_range", "subsample_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < low <= high")
        if self.subsample_range[1] > 1:
            raise ValueError("subsample_range must lie in (0, 1]")
        if self.target_avg_labels_per_instance > self.num_annotators:
            raise ValueError("target_avg_labels_per_instance exceeds num_annotators")
        if self.participation is not None:
            if len(self.participation) != self.num_annotators:
                raise ValueError("participation needs one probability per annotator")
            if any(not 0 < p <= 1 for p in self.participation):
                raise ValueError("participation probabilities must lie in (0, 1]")
        return self


class EvalConfig(_Section):
    perf_auroc_support: Literal["all", "annotated"] = "all"


class Variant(_Section):
    """One benchmark row: a training method plus optional overrides."""

    name: str
    method: Literal["annot_mix", "mv_base", "mv_mixup", "true_base"]
    mixup: Optional[MixupConfig] = None


class BenchmarkConfig(_Section):
    variants: list[Variant] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=lambda: [0])


class RunConfig(_Section):
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    mixup: MixupConfig = Field(default_factory=MixupConfig)
    models: ModelConfig = Field(default_factory=ModelConfig)
    sim: SimConfig = Field(default_factory=SimConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]


PRESET_VARIANTS = {
    "annot-mix": Variant(name="annot-mix", method="annot_mix"),
    "annot-mix-erm": Variant(name="annot-mix-erm", method="annot_mix", mixup=MixupConfig(mode="off")),
    "annot-mix-same-instance": Variant(name="annot-mix-same-instance", method="annot_mix",
                                       mixup=MixupConfig(mode="same_instance_only")),
    "mv-base": Variant(name="mv-base", method="mv_base", mixup=MixupConfig(mode="off")),
    "mv-mixup": Variant(name="mv-mixup", method="mv_mixup", mixup=MixupConfig(mode="vanilla")),
    "true-base": Variant(name="true-base", method="true_base", mixup=MixupConfig(mode="off")),
}


def _field_path(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(raw: dict) -> RunConfig:
    bench = raw.get("benchmark") if isinstance(raw, dict) else None
    if isinstance(bench, dict) and isinstance(bench.get("variants"), list):
        # allow preset names as shorthand for full variant objects
        bench["variants"] = [PRESET_VARIANTS[v].model_dump() if isinstance(v, str) and v in PRESET_VARIANTS else v
                             for v in bench["variants"]]
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise ConfigError(first["msg"], field=_field_path(first)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config file not found", field=str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}", field=str(path)) from None
    return parse_config(raw)


def json_schema() -> dict:
    return RunConfig.model_json_schema()
