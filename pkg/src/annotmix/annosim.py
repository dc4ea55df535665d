"""Simulated error-prone annotators.

Each annotator is a small network trained on its own class-stratified
subsample with its own initialization, epoch count and learning rate. Its
predictions form a full label table; a participation mask then keeps only
a budget of labels, with some annotators labeling far more than others.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .config import SimConfig
from .data import AnnotationSet, Dataset, batch_slices, one_hot
from .errors import ConfigError, ContractError
from .models import ClassifierNet, forward_graph, ModelPair, predict_class
from .numerics import Rng, sample_gamma
from .training import AdamState, cross_entropy_graph, optimizer_step

STREAM_ANNOTATOR = 11
STREAM_PARTICIPATION = 12
STREAM_MASK = 13


@dataclass
class AnnotatorSpec:
    epochs: int
    learning_rate: float
    subsample_ratio: float


@dataclass
class SimReport:
    avg_labels_per_instance: float
    false_label_fraction: float | None
    num_labels: int
    per_annotator_counts: list[int]
    per_annotator_correct: list[int] | None
    per_annotator_accuracy: list[float | None] | None

    def to_dict(self) -> dict:
        return asdict(self)


def draw_annotator_specs(cfg: SimConfig) -> list[AnnotatorSpec]:
    specs = []
    for m in range(cfg.num_annotators):
        rng = Rng(cfg.seed, (STREAM_ANNOTATOR, m, 0))
        lo, hi = cfg.epochs_range
        epochs = int(rng.integers(lo, hi + 1))
        llo, lhi = (math.log(v) for v in cfg.lr_range)
        lr = math.exp(rng.uniform(llo, lhi))
        ratio = float(rng.uniform(*cfg.subsample_range))
        specs.append(AnnotatorSpec(epochs, lr, ratio))
    return specs


def stratified_subsample(labels: np.ndarray, ratio: float, num_classes: int, rng: Rng) -> np.ndarray:
    """At least one and about ``ratio`` of the instances of every present class."""
    picked = []
    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            continue
        k = max(1, int(round(ratio * members.size)))
        picked.append(members[rng.permutation(members.size)[:k]])
    return np.sort(np.concatenate(picked))


def train_weak_annotator(ds: Dataset, spec: AnnotatorSpec, hidden: int, batch_size: int, rng: Rng) -> ClassifierNet:
    idx = stratified_subsample(ds.true_labels, spec.subsample_ratio, ds.num_classes, rng.child(1))
    net = ClassifierNet.create([ds.dim, hidden, ds.num_classes], rng.child(2))
    pair = ModelPair(net)
    moments = AdamState.zeros_like(pair.parameters())
    x_all = ds.features[idx]
    y_all = one_hot(ds.true_labels[idx], ds.num_classes)
    shuffle = rng.child(3)
    for _ in range(spec.epochs):
        order = shuffle.permutation(idx.size)
        for s in batch_slices(idx.size, batch_size):
            rows = order[s]
            graph = forward_graph(pair, x_all[rows])
            loss = cross_entropy_graph(graph.probs, y_all[rows])
            grads = nx.backward(graph.tape, loss)
            pair.set_parameters(optimizer_step(pair.parameters(), grads, moments, spec.learning_rate))
    return pair.classifier


def train_annotator_models(ds: Dataset, cfg: SimConfig) -> list[ClassifierNet]:
    if ds.true_labels is None:
        raise ContractError("annotator simulation needs true labels")
    return [
        train_weak_annotator(ds, spec, cfg.hidden, cfg.batch_size, Rng(cfg.seed, (STREAM_ANNOTATOR, m)))
        for m, spec in enumerate(draw_annotator_specs(cfg))
    ]


def prediction_table(annotators: list[ClassifierNet], ds: Dataset) -> np.ndarray:
    """``N x M`` matrix of every annotator's label for every instance."""
    return np.stack([predict_class(net, ds.features) for net in annotators], axis=1)


def _beta(rng: Rng, a: float, b: float) -> float:
    x = sample_gamma(rng, a)
    y = sample_gamma(rng, b)
    return x / (x + y)


def participation_probabilities(cfg: SimConfig) -> np.ndarray:
    if cfg.participation is not None:
        return np.asarray(cfg.participation, dtype=np.float64)
    rng = Rng(cfg.seed, STREAM_PARTICIPATION)
    a, b = cfg.participation_prior
    p = np.array([_beta(rng, a, b) for _ in range(cfg.num_annotators)])
    return np.maximum(p, 1e-6)


def mask_table(table: np.ndarray, participation: np.ndarray, target_avg: float, rng: Rng) -> AnnotationSet:
    """Keep exactly ``round(target_avg * N)`` labels, favouring active annotators.

    Each pair gets the key ``u / p_m`` with ``u`` uniform; the smallest keys
    survive. This is a global rescaling of the participation probabilities
    that lands on the label budget exactly.
    """
    n, m = table.shape
    if target_avg > m:
        raise ConfigError(f"target of {target_avg} labels per instance exceeds {m} annotators",
                          field="sim.target_avg_labels_per_instance")
    budget = int(round(target_avg * n))
    keys = rng.uniform(size=(n, m)) / participation[None, :]
    flat = np.argsort(keys, axis=None, kind="stable")[:budget]
    flat.sort()
    inst, annot = np.unravel_index(flat, (n, m))
    return AnnotationSet(inst, annot, table[inst, annot], m)


def noise_summary(ann: AnnotationSet, ds: Dataset) -> SimReport:
    counts = np.bincount(ann.annotators, minlength=ann.num_annotators)
    avg = len(ann) / ds.n if ds.n else 0.0
    if ds.true_labels is None:
        return SimReport(avg, None, len(ann), counts.tolist(), None, None)
    right = ann.labels == ds.true_labels[ann.instances]
    correct = np.bincount(ann.annotators, weights=right, minlength=ann.num_annotators).astype(int)
    acc = [float(c / k) if k else None for c, k in zip(correct, counts)]
    false_frac = float(1.0 - right.mean()) if len(ann) else 0.0
    return SimReport(avg, false_frac, len(ann), counts.tolist(), correct.tolist(), acc)


def simulate_annotators(ds: Dataset, cfg: SimConfig) -> tuple[AnnotationSet, SimReport]:
    """Train ``M`` weak annotators, label everything, and mask down to the budget."""
    models = train_annotator_models(ds, cfg)
    table = prediction_table(models, ds)
    ann = mask_table(table, participation_probabilities(cfg), cfg.target_avg_labels_per_instance,
                     Rng(cfg.seed, STREAM_MASK))
    return ann, noise_summary(ann, ds)


def table_to_annotations(table: np.ndarray) -> AnnotationSet:
    """Every (instance, annotator) cell of a full prediction table as a record."""
    n, m = table.shape
    inst, annot = np.divmod(np.arange(n * m), m)
    return AnnotationSet(inst, annot, table.reshape(-1), m)
