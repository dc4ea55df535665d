"""Evaluation scores: test accuracy, annotation accuracy, and annotator-performance AUROC."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AnnotationSet, Dataset, TripleSet
from .errors import ContractError, NotComputable
from .models import ModelPair, annotator_encoding, classifier_forward, pair_forward

_CHUNK = 4096


def _chunks(n):
    return (slice(i, min(i + _CHUNK, n)) for i in range(0, n, _CHUNK))


def clf_acc(model: ModelPair, test: Dataset) -> float:
    """Fraction of instances whose arg-max class equals the true label."""
    if test.n == 0:
        raise ContractError("empty test set")
    if test.true_labels is None:
        raise ContractError("test set has no true labels")
    clf = model.classifier if isinstance(model, ModelPair) else model
    hits = 0
    for s in _chunks(test.n):
        probs, _ = classifier_forward(clf, test.features[s])
        hits += int(np.sum(np.argmax(probs, axis=1) == test.true_labels[s]))
    return hits / test.n


def annot_acc(model: ModelPair, triples: TripleSet, ds: Dataset) -> float:
    """Fraction of triples whose predicted annotation equals the observed label."""
    n = len(triples)
    if n == 0:
        raise ContractError("no triples to evaluate")
    m = model.annotator.num_annotators
    hits = 0
    for s in _chunks(n):
        x = ds.features[triples.instances[s]]
        a = annotator_encoding(triples.annotators[s], m)
        _, _, ann_probs = pair_forward(model, x, a)
        hits += int(np.sum(np.argmax(ann_probs, axis=1) == triples.labels[s]))
    return hits / n


def correctness_probability(model: ModelPair, x, a) -> np.ndarray:
    """Estimated chance that annotator ``a`` labels ``x`` correctly.

    Class probabilities dotted with the diagonal of the confusion matrix.
    """
    probs, conf, _ = pair_forward(model, np.atleast_2d(x), a)
    diag = np.diagonal(conf, axis1=1, axis2=2)
    return np.clip(np.sum(probs * diag, axis=1), 0.0, 1.0)


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with midranks: P(pos > neg) + P(pos == neg) / 2."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels differ in length")
    pos = labels.astype(bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise NotComputable("AUROC needs at least one positive and one negative label")
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    # midrank of each distinct value, 1-based
    upper = np.cumsum(counts)
    midranks = upper - (counts - 1) / 2.0
    rank_sum = float(np.sum(midranks[inverse][pos]))
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def perf_auroc(model: ModelPair, test: Dataset, table: AnnotationSet | None) -> float:
    """AUROC of the correctness probability against whether each annotator label is right.

    ``table`` holds the simulated annotators' labels on the test instances:
    either the full prediction table or only the pairs that were annotated.
    """
    if table is None or len(table) == 0:
        raise NotComputable("no annotator labels for the test set")
    if test.true_labels is None:
        raise ContractError("test set has no true labels")
    table.validate_for(test)
    correct = table.labels == test.true_labels[table.instances]
    scores = np.empty(len(table))
    m = model.annotator.num_annotators
    for s in _chunks(len(table)):
        scores[s] = correctness_probability(model, test.features[table.instances[s]],
                                            annotator_encoding(table.annotators[s], m))
    return auroc(scores, correct)


@dataclass
class MetricsReport:
    clf_acc: float
    annot_acc: float | None = None
    perf_auroc: float | None = None
    method: str = ""
    seed: int | None = None
    config_hash: str = ""
    policy: str = "last"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def mean_std(values) -> tuple[float, float, bool]:
    """Mean, sample standard deviation, and a flag set when only one value exists."""
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return float("nan"), float("nan"), True
    if len(vals) == 1:
        return float(vals[0]), 0.0, True
    return float(np.mean(vals)), float(np.std(vals, ddof=1)), False
