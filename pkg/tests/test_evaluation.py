import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from annotmix.data import AnnotationSet, Dataset, TripleSet
from annotmix.errors import ContractError, NotComputable
from annotmix.evaluation import (annot_acc, auroc, clf_acc, correctness_probability, mean_std, perf_auroc)
from annotmix.models import AnnotatorNet, ClassifierNet, ModelPair
from annotmix.numerics import Rng

from oracles import brute_force_auroc


def _fixed_classifier(probs_row):
    """A classifier whose output ignores the input."""
    c = len(probs_row)
    net = ClassifierNet.create([2, 3, c], Rng(0))
    net.params[-2] = np.zeros_like(net.params[-2])
    net.params[-1] = np.log(np.array([probs_row], dtype=float))
    return net


def _fixed_pair(probs_row, confusion):
    clf = _fixed_classifier(probs_row)
    c = len(probs_row)
    ann = AnnotatorNet.create(clf.embedding_dim, 2, c, Rng(1), hidden=4)
    ann.params[-2] = np.zeros_like(ann.params[-2])
    with np.errstate(divide="ignore"):
        ann.params[-1] = np.log(np.asarray(confusion, dtype=float)).reshape(1, -1)
    return ModelPair(clf, ann)


class TestClfAcc:
    def test_all_correct(self):
        ds = Dataset(np.zeros((3, 2)), 3, np.array([1, 1, 1]))
        assert clf_acc(ModelPair(_fixed_classifier([0.1, 0.8, 0.1])), ds) == 1.0

    def test_one_of_four(self):
        ds = Dataset(np.zeros((4, 2)), 3, np.array([1, 0, 2, 0]))
        assert clf_acc(ModelPair(_fixed_classifier([0.1, 0.8, 0.1])), ds) == 0.25

    def test_uniform_classifier_chance(self):
        labels = np.random.default_rng(0).permutation(np.arange(10_000) % 4)
        ds = Dataset(np.random.default_rng(1).normal(size=(10_000, 2)), 4, labels)
        assert abs(clf_acc(ModelPair(_fixed_classifier([0.25] * 4)), ds) - 0.25) <= 0.02

    def test_needs_labels(self):
        with pytest.raises(ContractError):
            clf_acc(ModelPair(_fixed_classifier([0.5, 0.5])), Dataset(np.zeros((1, 2)), 2))


class TestAnnotAcc:
    def test_memorizing_model(self):
        pair = _fixed_pair([0.9, 0.1], [[1.0, 0.0], [0.0, 1.0]])
        ds = Dataset(np.zeros((2, 2)), 2)
        ts = TripleSet(np.array([0, 1]), np.array([0, 1]), np.array([0, 0]))
        assert annot_acc(pair, ts, ds) == 1.0

    def test_single_wrong(self):
        pair = _fixed_pair([0.9, 0.1], [[1.0, 0.0], [0.0, 1.0]])
        ds = Dataset(np.zeros((1, 2)), 2)
        assert annot_acc(pair, TripleSet(np.array([0]), np.array([0]), np.array([1])), ds) == 0.0


class TestCorrectnessProbability:
    def test_identity_confusion(self):
        pair = _fixed_pair([0.3, 0.7], [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(correctness_probability(pair, np.zeros((1, 2)), [0]), [1.0], atol=1e-12)

    def test_selection(self):
        pair = _fixed_pair([1.0, 1e-300], [[0.7, 0.3], [0.4, 0.6]])
        np.testing.assert_allclose(correctness_probability(pair, np.zeros((1, 2)), [0]), [0.7], atol=1e-12)

    def test_dot_product(self):
        pair = _fixed_pair([0.6, 0.4], [[0.9, 0.1], [0.2, 0.8]])
        np.testing.assert_allclose(correctness_probability(pair, np.zeros((1, 2)), [1]), [0.86], atol=1e-12)


class TestAuroc:
    def test_separated(self):
        assert auroc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_tied(self):
        assert auroc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_hand_example(self):
        assert auroc([0.8, 0.6, 0.7, 0.3], [1, 1, 0, 0]) == 0.75

    def test_single_class(self):
        with pytest.raises(NotComputable):
            auroc([0.1, 0.2], [1, 1])

    @given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=60))
    def test_matches_brute_force(self, pairs):
        scores = [s / 5 for s, _ in pairs]
        labels = [int(b) for _, b in pairs]
        if len(set(labels)) < 2:
            return
        assert auroc(scores, labels) == brute_force_auroc(scores, labels)


class TestPerfAuroc:
    def test_constant_scorer(self):
        pair = _fixed_pair([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]])
        test = Dataset(np.zeros((3, 2)), 2, np.array([0, 1, 0]))
        table = AnnotationSet.from_records([(0, 0, 0), (1, 0, 0), (2, 1, 0), (1, 1, 1)], 2)
        assert perf_auroc(pair, test, table) == 0.5

    def test_missing_table(self):
        pair = _fixed_pair([0.5, 0.5], [[0.9, 0.1], [0.1, 0.9]])
        with pytest.raises(NotComputable):
            perf_auroc(pair, Dataset(np.zeros((1, 2)), 2, np.array([0])), None)


class TestMeanStd:
    def test_single_value_flagged(self):
        assert mean_std([0.7]) == (0.7, 0.0, True)

    def test_sample_std(self):
        mean, std, single = mean_std([1.0, 2.0, 3.0])
        assert (mean, std, single) == (2.0, 1.0, False)

    def test_ignores_missing(self):
        assert mean_std([None, 0.5, float("nan")])[0] == 0.5
