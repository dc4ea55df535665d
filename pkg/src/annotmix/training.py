"""Training loops for annot-mix and the two-stage baselines.

annot-mix fits the classifier and annotator networks jointly by minimizing
the cross-entropy between the predicted annotation distribution
``p(x)^T P(h(x), a)`` and the observed (possibly mixed) noisy label. The
baselines train the classifier alone on majority-vote labels (optionally
with vanilla mixup) or, as an upper bound, on the true labels.

Random streams are split by purpose so that, for one seed, parameter init,
shuffling, mixing coefficients, same-instance pairing and vote tie-breaking
never consume each other's draws.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .config import MixupConfig, ModelConfig, TrainConfig
from .data import AnnotationSet, Dataset, build_triples, one_hot, paired_epoch_stream
from .errors import ConfigError, ContractError, DivergenceError
from .evaluation import annot_acc, clf_acc
from .mixup import draw_lambda, encode_triples, mix_triple_batch, mix_vanilla_batch, pair_same_instance, subset
from .models import AnnotatorNet, ClassifierNet, ModelPair, forward_graph
from .numerics import Node, Rng

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12

STREAM_INIT_CLF = 0
STREAM_INIT_ANN = 1
STREAM_SHUFFLE = 2
STREAM_LAMBDA = 3
STREAM_VOTE = 4
STREAM_PAIRING = 5


# --- loss ------------------------------------------------------------------


def cross_entropy_graph(probs: Node, targets: np.ndarray, floor: float = PROB_FLOOR) -> Node:
    """Mean over rows of ``-sum_c t_c log(max(p_c, floor))`` as a tape node."""
    if probs.shape != targets.shape:
        raise ContractError(f"probabilities {probs.shape} and targets {targets.shape} differ in shape")
    tape = probs.tape
    weighted = nx.mul(nx.log(probs, floor), tape.constant(targets))
    return nx.scale(nx.sum_all(weighted), -1.0 / probs.shape[0])


def annotmix_loss(annotation_probs, z, floor: float = PROB_FLOOR) -> float:
    """Array version of :func:`cross_entropy_graph`."""
    p = np.asarray(annotation_probs, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if p.shape != z.shape or p.ndim != 2:
        raise ContractError(f"probabilities {p.shape} and targets {z.shape} differ in shape")
    return float(-np.sum(z * np.log(np.maximum(p, floor))) / p.shape[0])


# --- optimizer and schedule ------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def optimizer_step(params: list[np.ndarray], grads: list[np.ndarray], moments: AdamState, lr: float,
                   weight_decay: float = 0.0) -> list[np.ndarray]:
    """One Adam step with decoupled weight decay; returns the new parameters.

    ``moments`` is updated in place.
    """
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    moments.t += 1
    b1, b2 = moments.beta1, moments.beta2
    c1 = 1.0 - b1**moments.t
    c2 = 1.0 - b2**moments.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g
        moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * (g * g)
        step = (moments.m[i] / c1) / (np.sqrt(moments.v[i] / c2) + moments.eps)
        out.append(p * (1.0 - lr * weight_decay) - lr * step)
    return out


def cosine_lr(epoch: int, epochs: int, base_lr: float, min_ratio: float = 1e-3) -> float:
    """Cosine annealing from ``base_lr`` at epoch 0 to ``min_ratio * base_lr`` at the last epoch."""
    if epochs <= 1:
        return base_lr
    floor = min_ratio * base_lr
    return floor + (base_lr - floor) * 0.5 * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


# --- state -----------------------------------------------------------------


@dataclass
class TrainState:
    model: ModelPair
    moments: AdamState
    epoch: int = 0
    steps: int = 0
    log: list[dict] = field(default_factory=list)
    best_model: ModelPair | None = None
    best_epoch: int | None = None
    best_val: float = -math.inf
    meta: dict = field(default_factory=dict)

    def record_epoch(self, row: dict, val_acc: float | None) -> None:
        self.log.append(row)
        if val_acc is not None and val_acc > self.best_val:
            self.best_val = val_acc
            self.best_epoch = row["epoch"]
            self.best_model = self.model.copy()


EpochHook = Callable[[TrainState, dict], None]


def _build_classifier(dim: int, num_classes: int, mcfg: ModelConfig, seed: int) -> ClassifierNet:
    return ClassifierNet.create([dim, *mcfg.hidden, num_classes], Rng(seed, STREAM_INIT_CLF), mcfg.slope)


def _check_finite(loss: float, epoch: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}", epoch=epoch)


def _epoch_row(state, epoch, losses, sizes, lr, annot, val, test):
    row = {
        "epoch": epoch,
        "train_loss": float(np.dot(losses, sizes) / np.sum(sizes)),
        "annot_acc_train": annot,
        "clf_acc_val": clf_acc(state.model, val) if val is not None else None,
        "lr": lr,
    }
    if test is not None:
        row["clf_acc_test"] = clf_acc(state.model, test)
    return row


# --- annot-mix -------------------------------------------------------------


def train_annotmix(ds: Dataset, ann: AnnotationSet, cfg: TrainConfig, mixup: MixupConfig | None = None,
                   models: ModelConfig | None = None, val: Dataset | None = None, test: Dataset | None = None,
                   on_epoch: EpochHook | None = None) -> TrainState:
    mixup = mixup or MixupConfig()
    models = models or ModelConfig()
    if mixup.mode == "vanilla":
        raise ConfigError("vanilla mixup applies to the majority-vote baseline, not annot-mix", field="mixup.mode")
    ts = build_triples(ds, ann)
    if len(ts) == 0:
        raise ContractError("annotation set is empty; nothing to train on")
    m = ann.num_annotators
    clf = _build_classifier(ds.dim, ds.num_classes, models, cfg.seed)
    annotator = AnnotatorNet.create(clf.embedding_dim, m, ds.num_classes, Rng(cfg.seed, STREAM_INIT_ANN),
                                    hidden=models.annotator_hidden, eta=models.eta, slope=models.slope)
    pair = ModelPair(clf, annotator, models.detach_embedding)
    state = TrainState(pair, AdamState.zeros_like(pair.parameters()))
    state.meta["unannotated_instances"] = int(np.sum(ann.labels_per_instance(ds.n) == 0))
    state.meta["triples"] = len(ts)

    shuffle_rng = Rng(cfg.seed, STREAM_SHUFFLE)
    lambda_rng = Rng(cfg.seed, STREAM_LAMBDA)
    pairing_rng = Rng(cfg.seed, STREAM_PAIRING)

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate, cfg.min_lr_ratio)
        batches = paired_epoch_stream(ts, cfg.batch_size, shuffle_rng.child(epoch))
        partner = None
        if mixup.mode == "same_instance_only":
            partner = np.array([j for _, j in pair_same_instance(ts, pairing_rng.child(epoch))], dtype=np.int64)
        losses, sizes = [], []
        for idx1, idx2 in batches:
            b1 = subset(ts, idx1)
            if mixup.mode == "off":
                x, a, z = encode_triples(b1, ds, m)
            else:
                b2 = subset(ts, partner[idx1] if partner is not None else idx2)
                lam = draw_lambda(mixup, lambda_rng, len(b1))
                mixed = mix_triple_batch(b1, b2, lam, ds, m)
                x, a, z = mixed.x, mixed.a, mixed.z
            graph = forward_graph(state.model, x, a)
            loss = cross_entropy_graph(graph.annotation_probs, z)
            value = float(loss.value[0, 0])
            _check_finite(value, epoch)
            grads = nx.backward(graph.tape, loss)
            try:
                new = optimizer_step(state.model.parameters(), grads, state.moments, lr, cfg.weight_decay)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), epoch=epoch) from None
            state.model.set_parameters(new)
            state.steps += 1
            losses.append(value)
            sizes.append(len(b1))
        state.epoch = epoch + 1
        row = _epoch_row(state, epoch, losses, sizes, lr, annot_acc(state.model, ts, ds), val, test)
        state.record_epoch(row, row["clf_acc_val"])
        log.debug("epoch %d loss %.5f annot_acc %.4f", epoch, row["train_loss"], row["annot_acc_train"])
        if on_epoch is not None:
            on_epoch(state, row)
    return state


# --- majority vote and two-stage baselines ---------------------------------


def majority_vote(ann: AnnotationSet, n: int, rng: Rng, num_classes: int | None = None) -> int | None:
    """Modal label of instance ``n``; ties are broken uniformly at random.

    Returns ``None`` when nobody labeled the instance.
    """
    votes = ann.votes(n)
    if not votes:
        return None
    return _vote(np.asarray(votes), rng, num_classes)


def _vote(votes: np.ndarray, rng: Rng, num_classes: int | None) -> int:
    counts = np.bincount(votes, minlength=num_classes or 0)
    winners = np.flatnonzero(counts == counts.max())
    if winners.size == 1:
        return int(winners[0])
    return int(winners[rng.integers(0, winners.size)])


def majority_vote_all(ann: AnnotationSet, num_instances: int, rng: Rng,
                      num_classes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Voted labels for every annotated instance, in instance order.

    Returns ``(instances, labels)``; unannotated instances are left out.
    """
    order = np.argsort(ann.instances, kind="stable")
    inst = ann.instances[order]
    labs = ann.labels[order]
    bounds = np.flatnonzero(np.diff(inst)) + 1
    voted_inst, voted_lab = [], []
    for group_inst, group_lab in zip(np.split(inst, bounds), np.split(labs, bounds)):
        if group_inst.size == 0 or group_inst[0] >= num_instances:
            continue
        voted_inst.append(int(group_inst[0]))
        voted_lab.append(_vote(group_lab, rng, num_classes))
    return np.array(voted_inst, dtype=np.int64), np.array(voted_lab, dtype=np.int64)


def train_two_stage(ds: Dataset, ann: AnnotationSet, cfg: TrainConfig, mixup: MixupConfig | None = None,
                    models: ModelConfig | None = None, val: Dataset | None = None, test: Dataset | None = None,
                    on_epoch: EpochHook | None = None) -> TrainState:
    """Classifier-only training on aggregated labels (``mv_base``/``mv_mixup``) or true labels (``true_base``)."""
    models = models or ModelConfig()
    if cfg.method == "mv_base":
        mixup = MixupConfig(mode="off")
    mixup = mixup or MixupConfig(mode="vanilla" if cfg.method == "mv_mixup" else "off")
    if mixup.mode not in ("off", "vanilla"):
        raise ConfigError(f"mixup mode {mixup.mode!r} does not apply to {cfg.method}", field="mixup.mode")
    if cfg.method == "mv_mixup" and mixup.mode != "vanilla":
        raise ConfigError("mv_mixup requires mixup.mode = 'vanilla'", field="mixup.mode")
    ann.validate_for(ds)
    if cfg.method == "true_base":
        if ds.true_labels is None:
            raise ContractError("true_base needs true labels for the training set")
        instances = np.flatnonzero(ann.labels_per_instance(ds.n) > 0)
        labels = ds.true_labels[instances]
    elif cfg.method in ("mv_base", "mv_mixup"):
        instances, labels = majority_vote_all(ann, ds.n, Rng(cfg.seed, STREAM_VOTE), ds.num_classes)
    else:
        raise ConfigError(f"train_two_stage does not handle method {cfg.method!r}", field="train.method")
    if instances.size == 0:
        raise ContractError("no annotated instances to train on")

    clf = _build_classifier(ds.dim, ds.num_classes, models, cfg.seed)
    pair = ModelPair(clf, None)
    state = TrainState(pair, AdamState.zeros_like(pair.parameters()))
    state.meta["unannotated_instances"] = int(ds.n - instances.size)
    state.meta["training_instances"] = int(instances.size)
    if cfg.method != "true_base" and ds.true_labels is not None:
        state.meta["aggregate_label_accuracy"] = float(np.mean(labels == ds.true_labels[instances]))

    feats = ds.features[instances]
    shuffle_rng = Rng(cfg.seed, STREAM_SHUFFLE)
    lambda_rng = Rng(cfg.seed, STREAM_LAMBDA)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.learning_rate, cfg.min_lr_ratio)
        losses, sizes = [], []
        for idx1, idx2 in paired_epoch_stream(int(instances.size), cfg.batch_size, shuffle_rng.child(epoch)):
            if mixup.mode == "off":
                x, y = feats[idx1], one_hot(labels[idx1], ds.num_classes)
            else:
                lam = draw_lambda(mixup, lambda_rng, idx1.size)
                x, y = mix_vanilla_batch(feats[idx1], labels[idx1], feats[idx2], labels[idx2], lam, ds.num_classes)
            graph = forward_graph(state.model, x)
            loss = cross_entropy_graph(graph.probs, y)
            value = float(loss.value[0, 0])
            _check_finite(value, epoch)
            grads = nx.backward(graph.tape, loss)
            try:
                new = optimizer_step(state.model.parameters(), grads, state.moments, lr, cfg.weight_decay)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), epoch=epoch) from None
            state.model.set_parameters(new)
            state.steps += 1
            losses.append(value)
            sizes.append(idx1.size)
        state.epoch = epoch + 1
        row = _epoch_row(state, epoch, losses, sizes, lr, None, val, test)
        state.record_epoch(row, row["clf_acc_val"])
        if on_epoch is not None:
            on_epoch(state, row)
    return state


def train(ds: Dataset, ann: AnnotationSet, cfg: TrainConfig, mixup: MixupConfig | None = None,
          models: ModelConfig | None = None, val: Dataset | None = None, test: Dataset | None = None,
          on_epoch: EpochHook | None = None) -> TrainState:
    """Dispatch on ``cfg.method``."""
    fn = train_annotmix if cfg.method == "annot_mix" else train_two_stage
    return fn(ds, ann, cfg, mixup, models, val, test, on_epoch)
