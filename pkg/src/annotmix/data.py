"""Instances, true labels, sparse annotator labels, and the triple population.

Labels are kept as integer class indices and only expanded to one-hot rows
at the numerics boundary (:func:`one_hot`). A missing annotation is simply
an absent record; there is no sentinel class.

File formats (UTF-8, LF, zero-based indices):

* features CSV: header ``f0,...,f{D-1}``, one instance per line
* labels CSV: header ``label``, one class index per line
* annotations CSV: header ``instance,annotator,label``
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ContractError, IngestionError
from .numerics import Rng

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    num_classes: int
    true_labels: np.ndarray | None = None
    split_tag: str = "train"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ContractError(f"features must be N x D, got shape {feats.shape}")
        if not np.all(np.isfinite(feats)):
            bad = int(np.argwhere(~np.isfinite(feats))[0, 0])
            raise ContractError(f"non-finite feature value in instance {bad}")
        if self.num_classes < 2:
            raise ContractError("num_classes must be at least 2")
        if self.split_tag not in SPLITS:
            raise ContractError(f"split_tag must be one of {SPLITS}")
        object.__setattr__(self, "features", feats)
        if self.true_labels is not None:
            labels = np.asarray(self.true_labels, dtype=np.int64)
            if labels.shape != (feats.shape[0],):
                raise ContractError("true_labels length must equal the number of instances")
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise ContractError("true label out of range")
            object.__setattr__(self, "true_labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.true_labels is not None


@dataclass(frozen=True)
class AnnotationSet:
    """Sparse noisy labels: parallel arrays of instance, annotator, and label indices."""

    instances: np.ndarray
    annotators: np.ndarray
    labels: np.ndarray
    num_annotators: int

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.int64).reshape(-1) for a in (self.instances, self.annotators, self.labels)]
        if not (len(arrays[0]) == len(arrays[1]) == len(arrays[2])):
            raise ContractError("instance/annotator/label arrays differ in length")
        inst, annot, _ = arrays
        if self.num_annotators < 1:
            raise ContractError("num_annotators must be positive")
        if annot.size and (annot.min() < 0 or annot.max() >= self.num_annotators):
            raise ContractError("annotator index out of range")
        if inst.size and inst.min() < 0:
            raise ContractError("negative instance index")
        keys = inst * self.num_annotators + annot
        if np.unique(keys).size != keys.size:
            raise ContractError("more than one record for an (instance, annotator) pair")
        for name, arr in zip(("instances", "annotators", "labels"), arrays):
            object.__setattr__(self, name, arr)

    @classmethod
    def from_records(cls, records, num_annotators: int) -> "AnnotationSet":
        records = list(records)
        if not records:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), num_annotators)
        inst, annot, lab = zip(*records)
        return cls(np.array(inst), np.array(annot), np.array(lab), num_annotators)

    def __len__(self) -> int:
        return int(self.instances.size)

    def records(self) -> list[tuple[int, int, int]]:
        return list(zip(self.instances.tolist(), self.annotators.tolist(), self.labels.tolist()))

    def annotators_of(self, n: int) -> list[int]:
        """The annotators who labeled instance ``n``."""
        return sorted(self.annotators[self.instances == n].tolist())

    def votes(self, n: int) -> list[int]:
        return self.labels[self.instances == n].tolist()

    def validate_for(self, ds: Dataset) -> None:
        if len(self) == 0:
            return
        if self.instances.max() >= ds.n:
            raise ContractError(f"annotation refers to instance {int(self.instances.max())} but dataset has {ds.n}")
        if self.labels.min() < 0 or self.labels.max() >= ds.num_classes:
            raise ContractError("annotated class label out of range")

    def labels_per_instance(self, n_instances: int) -> np.ndarray:
        return np.bincount(self.instances, minlength=n_instances)


class Triple(NamedTuple):
    instance: int
    annotator: int
    label: int


@dataclass(frozen=True)
class TripleSet:
    """One (instance, annotator, noisy label) triple per annotation record."""

    instances: np.ndarray
    annotators: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.instances.size)

    def __getitem__(self, i) -> Triple:
        return Triple(int(self.instances[i]), int(self.annotators[i]), int(self.labels[i]))

    def __iter__(self) -> Iterator[Triple]:
        return (self[i] for i in range(len(self)))


def build_triples(ds: Dataset, ann: AnnotationSet) -> TripleSet:
    """Triples in record order (deterministic until the first shuffle)."""
    ann.validate_for(ds)
    return TripleSet(ann.instances.copy(), ann.annotators.copy(), ann.labels.copy())


def one_hot(indices, size: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((indices.size, size))
    out[np.arange(indices.size), indices] = 1.0
    return out


def batch_slices(n: int, batch_size: int) -> list[slice]:
    """Consecutive batches over ``n`` items; the trailing partial batch is kept."""
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    return [slice(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def paired_epoch_stream(ts: TripleSet | int, batch_size: int, rng: Rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Zip two independent shuffles of the triple indices into batch pairs.

    ``ts`` may also be a plain count. The first permutation is always drawn
    before the second, so the first stream does not depend on whether the
    caller uses the second one.
    """
    n = ts if isinstance(ts, int) else len(ts)
    if n == 0:
        raise ContractError("no triples to train on")
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    first = rng.permutation(n)
    second = rng.permutation(n)
    return [(first[s], second[s]) for s in batch_slices(n, batch_size)]


# --- file I/O --------------------------------------------------------------


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise IngestionError("file not found", path=path) from None
    if not rows:
        raise IngestionError("missing header row", path=path)
    return [h.strip() for h in rows[0]], rows[1:]


def _parse_numeric(path, rows, width, cast):
    out = []
    for i, row in enumerate(rows, start=1):
        if not row:
            continue
        if len(row) != width:
            raise IngestionError(f"expected {width} columns, got {len(row)}", path=path, row=i)
        try:
            vals = [cast(v) for v in row]
        except ValueError:
            raise IngestionError(f"non-numeric cell in {row}", path=path, row=i) from None
        if cast is float and not all(math.isfinite(v) for v in vals):
            raise IngestionError("non-finite value", path=path, row=i)
        out.append(vals)
    return out


def _int(cell: str) -> int:
    value = float(cell)
    if not value.is_integer():
        raise ValueError(cell)
    return int(value)


def load_dataset(features_path, labels_path=None, num_classes: int | None = None, split_tag: str = "train") -> Dataset:
    features_path = Path(features_path)
    header, rows = _read_rows(features_path)
    feats = _parse_numeric(features_path, rows, len(header), float)
    features = np.array(feats, dtype=np.float64).reshape(len(feats), len(header))
    labels = None
    if labels_path is not None:
        labels_path = Path(labels_path)
        lheader, lrows = _read_rows(labels_path)
        if lheader != ["label"]:
            raise IngestionError("labels header must be 'label'", path=labels_path)
        parsed = _parse_numeric(labels_path, lrows, 1, _int)
        labels = np.array([r[0] for r in parsed], dtype=np.int64)
        if labels.size != features.shape[0]:
            raise IngestionError(f"{labels.size} labels for {features.shape[0]} instances", path=labels_path)
        for i, lab in enumerate(labels, start=1):
            if lab < 0 or (num_classes is not None and lab >= num_classes):
                raise IngestionError(f"label {lab} out of range [0, {num_classes})", path=labels_path, row=i)
    if num_classes is None:
        if labels is None or labels.size == 0:
            raise IngestionError("num_classes must be given when no labels are available", path=features_path)
        num_classes = int(labels.max()) + 1
    return Dataset(features, int(num_classes), labels, split_tag)


def load_annotations(path, num_annotators: int, num_instances: int | None = None,
                     num_classes: int | None = None) -> AnnotationSet:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise IngestionError("file not found", path=path) from None
    if not text.strip():
        return AnnotationSet.from_records([], num_annotators)
    header, rows = _read_rows(path)
    if header != ["instance", "annotator", "label"]:
        raise IngestionError("header must be 'instance,annotator,label'", path=path)
    seen = set()
    records = []
    for i, (n, m, c) in enumerate(_parse_numeric(path, rows, 3, _int), start=1):
        if n < 0 or (num_instances is not None and n >= num_instances):
            raise IngestionError(f"instance index {n} out of range", path=path, row=i)
        if m < 0 or m >= num_annotators:
            raise IngestionError(f"annotator index {m} out of range [0, {num_annotators})", path=path, row=i)
        if c < 0 or (num_classes is not None and c >= num_classes):
            raise IngestionError(f"label {c} out of range", path=path, row=i)
        if (n, m) in seen:
            raise IngestionError(f"duplicate annotation for instance {n}, annotator {m}", path=path, row=i)
        seen.add((n, m))
        records.append((n, m, c))
    return AnnotationSet.from_records(records, num_annotators)


def save_dataset(ds: Dataset, features_path, labels_path=None) -> None:
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.dim)])
        for row in ds.features:
            w.writerow([repr(float(v)) for v in row])
    if labels_path is not None:
        if ds.true_labels is None:
            raise ContractError("dataset has no true labels to save")
        with open(labels_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label"])
            for lab in ds.true_labels:
                w.writerow([int(lab)])


def save_annotations(ann: AnnotationSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "annotator", "label"])
        w.writerows(ann.records())


def file_checksum(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_blobs(n: int, num_classes: int = 4, dim: int = 2, spread: float = 1.0, separation: float = 3.0,
               seed: int = 0, split_tag: str = "train") -> Dataset:
    """Balanced Gaussian blobs with class means on a circle (first two axes).

    Means depend only on ``num_classes``, ``dim`` and ``separation``, so splits
    drawn with different seeds share the same class-conditional distribution.
    """
    rng = Rng(seed, 7)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = separation * np.cos(angles)
    if dim > 1:
        means[:, 1] = separation * np.sin(angles)
    labels = np.arange(n) % num_classes
    labels = labels[rng.permutation(n)]
    features = means[labels] + spread * rng.normal((n, dim))
    return Dataset(features, num_classes, labels, split_tag)
