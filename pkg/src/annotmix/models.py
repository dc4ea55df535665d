"""Classifier and annotator networks.

The classifier maps instances to class probabilities and exposes its last
hidden layer as an embedding. The annotator network reads that embedding
concatenated with an annotator encoding and emits one row-stochastic
``C x C`` confusion matrix per row, flattened row-major into ``C*C``
columns. Multiplying class probabilities into the confusion matrix gives
the probability of each label the annotator might report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, IngestionError, ShapeError
from .numerics import Node, Rng, Tape

CHECKPOINT_VERSION = 1


def _init_layers(sizes, rng: Rng) -> list[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, (1, fan_out)))
    return params


def _mlp(tape: Tape, x: Node, weights: list[Node], slope: float) -> tuple[Node, Node]:
    """Run an MLP; returns (output logits, last hidden activations)."""
    h = x
    n_layers = len(weights) // 2
    for i in range(n_layers):
        h_in = h
        h = nx.add(nx.matmul(h, weights[2 * i]), weights[2 * i + 1])
        if i < n_layers - 1:
            h = nx.leaky_relu(h, slope)
        else:
            return h, h_in
    raise ContractError("network has no layers")


@dataclass
class ClassifierNet:
    sizes: list[int]
    params: list[np.ndarray]
    slope: float = 0.01

    @classmethod
    def create(cls, sizes, rng: Rng, slope: float = 0.01) -> "ClassifierNet":
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or sizes[-1] < 2:
            raise ConfigError("classifier needs at least input and output sizes with C >= 2")
        return cls(sizes, _init_layers(sizes, rng), slope)

    @property
    def num_classes(self) -> int:
        return self.sizes[-1]

    @property
    def embedding_dim(self) -> int:
        return self.sizes[-2]

    def copy(self) -> "ClassifierNet":
        return ClassifierNet(list(self.sizes), [p.copy() for p in self.params], self.slope)


@dataclass
class AnnotatorNet:
    """MLP over ``[embedding, annotator encoding]`` with a ``C*C`` logit head."""

    embedding_dim: int
    num_annotators: int
    num_classes: int
    hidden: int
    params: list[np.ndarray]
    eta: float
    slope: float = 0.01

    @classmethod
    def create(cls, embedding_dim, num_annotators, num_classes, rng: Rng, hidden=128, eta=0.9,
               slope=0.01) -> "AnnotatorNet":
        sizes = [embedding_dim + num_annotators, hidden, num_classes * num_classes]
        net = cls(embedding_dim, num_annotators, num_classes, hidden, _init_layers(sizes, rng), eta, slope)
        init_confusion_bias(net, eta, num_classes)
        return net

    def copy(self) -> "AnnotatorNet":
        return AnnotatorNet(self.embedding_dim, self.num_annotators, self.num_classes, self.hidden,
                            [p.copy() for p in self.params], self.eta, self.slope)


def confusion_prior(eta: float, num_classes: int) -> np.ndarray:
    """Diagonal ``eta``, off-diagonal ``(1 - eta) / (C - 1)``."""
    off = (1.0 - eta) / (num_classes - 1)
    return np.full((num_classes, num_classes), off) + (eta - off) * np.eye(num_classes)


def init_confusion_bias(net: AnnotatorNet, eta: float, num_classes: int, weight_scale: float = 0.01) -> None:
    """Make every output confusion matrix start close to the diagonally dominant prior.

    The output bias is set to the log of the prior matrix (softmax is shift
    invariant per row) and the output weights are shrunk so the inputs only
    perturb it slightly.
    """
    if not (1.0 / num_classes < eta < 1.0):
        raise ConfigError(f"eta must lie in (1/C, 1) = ({1.0 / num_classes:.4g}, 1), got {eta}", field="models.eta")
    if num_classes != net.num_classes:
        raise ShapeError("num_classes does not match the annotator network")
    net.params[-2] = net.params[-2] * weight_scale
    net.params[-1] = np.log(confusion_prior(eta, num_classes)).reshape(1, -1)
    net.eta = float(eta)


@dataclass
class ModelPair:
    classifier: ClassifierNet
    annotator: AnnotatorNet | None = None
    detach_embedding: bool = False

    @property
    def num_classes(self) -> int:
        return self.classifier.num_classes

    def parameters(self) -> list[np.ndarray]:
        return self.classifier.params + (self.annotator.params if self.annotator else [])

    def set_parameters(self, params: list[np.ndarray]) -> None:
        k = len(self.classifier.params)
        self.classifier.params = list(params[:k])
        if self.annotator is not None:
            self.annotator.params = list(params[k:])

    def copy(self) -> "ModelPair":
        return ModelPair(self.classifier.copy(), self.annotator.copy() if self.annotator else None,
                         self.detach_embedding)


@dataclass
class Graph:
    """Nodes produced by one forward pass over a batch."""

    tape: Tape
    weights: list[Node]
    probs: Node
    embedding: Node
    confusion: Node | None = None
    annotation_probs: Node | None = None
    extras: dict = field(default_factory=dict)


def classifier_graph(net: ClassifierNet, tape: Tape, x: Node, weights: list[Node]) -> tuple[Node, Node]:
    logits, embedding = _mlp(tape, x, weights, net.slope)
    if logits.shape[1] != net.num_classes:
        raise ShapeError("classifier output width differs from num_classes")
    return nx.softmax_rows(logits), embedding


def annotator_graph(net: AnnotatorNet, tape: Tape, embedding: Node, a: Node, weights: list[Node]) -> Node:
    if embedding.shape[1] != net.embedding_dim or a.shape[1] != net.num_annotators:
        raise ShapeError(f"annotator input shapes {embedding.shape}, {a.shape} do not match the network")
    if embedding.shape[0] != a.shape[0]:
        raise ShapeError("embedding and annotator batches differ in length")
    c = net.num_classes
    logits, _ = _mlp(tape, nx.concat_cols(embedding, a), weights, net.slope)
    b = logits.shape[0]
    return nx.reshape(nx.softmax_rows(nx.reshape(logits, b * c, c)), b, c * c)


def forward_graph(pair: ModelPair, x: np.ndarray, a: np.ndarray | None = None, tape: Tape | None = None) -> Graph:
    """Build the full forward graph with the model parameters as tape variables."""
    tape = tape or Tape()
    weights = [tape.variable(p) for p in pair.parameters()]
    k = len(pair.classifier.params)
    x_node = tape.constant(x)
    if x_node.shape[1] != pair.classifier.sizes[0]:
        raise ShapeError(f"input has {x_node.shape[1]} features, classifier expects {pair.classifier.sizes[0]}")
    probs, emb = classifier_graph(pair.classifier, tape, x_node, weights[:k])
    graph = Graph(tape, weights, probs, emb)
    if a is not None and pair.annotator is not None:
        emb_in = tape.constant(emb.value) if pair.detach_embedding else emb
        conf = annotator_graph(pair.annotator, tape, emb_in, tape.constant(a), weights[k:])
        graph.confusion = conf
        graph.annotation_probs = nx.vecmat_rows(probs, conf)
    return graph


# --- array-level API -------------------------------------------------------


def classifier_forward(net: ClassifierNet, x) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities (``B x C``) and embeddings (``B x H``)."""
    tape = Tape()
    x_node = tape.constant(x)
    if x_node.shape[1] != net.sizes[0]:
        raise ShapeError(f"input has {x_node.shape[1]} features, classifier expects {net.sizes[0]}")
    probs, emb = classifier_graph(net, tape, x_node, [tape.constant(p) for p in net.params])
    return probs.value, emb.value


def annotator_forward(net: AnnotatorNet, embedding, a) -> np.ndarray:
    """Confusion matrices, shape ``B x C x C``."""
    tape = Tape()
    conf = annotator_graph(net, tape, tape.constant(embedding), tape.constant(a),
                           [tape.constant(p) for p in net.params])
    c = net.num_classes
    return conf.value.reshape(-1, c, c)


def combine(probs, confusion) -> np.ndarray:
    """Row ``i`` is ``probs[i] @ confusion[i]``."""
    probs = np.asarray(probs, dtype=np.float64)
    confusion = np.asarray(confusion, dtype=np.float64)
    b, c = probs.shape
    if confusion.shape != (b, c, c):
        raise ShapeError(f"combine: probs {probs.shape} with confusion {confusion.shape}")
    return np.einsum("bk,bkj->bj", probs, confusion)


def predict_class(net: ClassifierNet, x) -> np.ndarray:
    """Arg-max class per row; ``np.argmax`` breaks ties toward the lowest index."""
    probs, _ = classifier_forward(net, x)
    return np.argmax(probs, axis=1)


def annotator_encoding(a, num_annotators: int) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 1 and np.issubdtype(a.dtype, np.integer):
        out = np.zeros((a.size, num_annotators))
        out[np.arange(a.size), a] = 1.0
        return out
    return np.atleast_2d(np.asarray(a, dtype=np.float64))


def pair_forward(pair: ModelPair, x, a):
    """Class probabilities, confusion matrices, and annotation probabilities."""
    if pair.annotator is None:
        raise ContractError("model has no annotator network")
    probs, emb = classifier_forward(pair.classifier, x)
    conf = annotator_forward(pair.annotator, emb, annotator_encoding(a, pair.annotator.num_annotators))
    return probs, conf, combine(probs, conf)


def predict_annotation(pair: ModelPair, x, a) -> np.ndarray:
    """Most likely label each annotator ``a`` assigns to each instance ``x``."""
    return np.argmax(pair_forward(pair, x, a)[2], axis=1)


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(pair: ModelPair, path, meta: dict | None = None) -> None:
    clf = pair.classifier
    doc = {
        "version": CHECKPOINT_VERSION,
        "classifier": {"sizes": clf.sizes, "slope": clf.slope, "params": [p.tolist() for p in clf.params]},
        "annotator": None,
        "detach_embedding": pair.detach_embedding,
        "meta": meta or {},
    }
    if pair.annotator is not None:
        ann = pair.annotator
        doc["annotator"] = {
            "embedding_dim": ann.embedding_dim,
            "num_annotators": ann.num_annotators,
            "num_classes": ann.num_classes,
            "hidden": ann.hidden,
            "eta": ann.eta,
            "slope": ann.slope,
            "params": [p.tolist() for p in ann.params],
        }
    # json writes floats with repr(), which round-trips float64 exactly
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def _arrays(raw) -> list[np.ndarray]:
    return [np.array(p, dtype=np.float64).reshape(len(p), -1) for p in raw]


def load_checkpoint(path) -> ModelPair:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise IngestionError("checkpoint not found", path=path) from None
    if doc.get("version") != CHECKPOINT_VERSION:
        raise IngestionError(f"unsupported checkpoint version {doc.get('version')}", path=path)
    c = doc["classifier"]
    clf = ClassifierNet([int(s) for s in c["sizes"]], _arrays(c["params"]), float(c["slope"]))
    ann = None
    if doc["annotator"] is not None:
        a = doc["annotator"]
        ann = AnnotatorNet(int(a["embedding_dim"]), int(a["num_annotators"]), int(a["num_classes"]),
                           int(a["hidden"]), _arrays(a["params"]), float(a["eta"]), float(a["slope"]))
    return ModelPair(clf, ann, bool(doc.get("detach_embedding", False)))
