import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from annotmix import numerics as nx
from annotmix.errors import ContractError, DomainError, ShapeError
from annotmix.numerics import Rng, Tape, sample_beta, sample_gamma, softmax_rows_array

from conftest import central_difference, rel_error


def _value(fn, *arrays):
    tape = Tape()
    return fn(*[tape.constant(a) for a in arrays]).value


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.5, -2.0], [0.25, 4.0]])
        np.testing.assert_array_equal(_value(nx.matmul, np.eye(2), m), m)

    def test_hand_computed(self):
        out = _value(nx.matmul, [[0.6, 0.4]], [[0.9, 0.1], [0.2, 0.8]])
        np.testing.assert_allclose(out, [[0.62, 0.38]], atol=1e-15)

    def test_zero_annihilates(self):
        m = np.random.default_rng(0).normal(size=(3, 3))
        np.testing.assert_array_equal(_value(nx.matmul, np.zeros((2, 3)), m), np.zeros((2, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            _value(nx.matmul, np.ones((2, 3)), np.ones((2, 3)))


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax_rows_array(np.zeros((1, 2))), [[0.5, 0.5]])

    def test_no_overflow(self):
        out = softmax_rows_array(np.array([[1000.0, 0.0]]))
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0)
        assert out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_log_two(self):
        np.testing.assert_allclose(softmax_rows_array(np.array([[math.log(2.0), 0.0]])), [[2 / 3, 1 / 3]], rtol=1e-15)

    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                  elements=st.floats(-700, 700, allow_nan=False)))
    def test_rows_on_simplex(self, m):
        out = softmax_rows_array(m)
        assert np.all(out >= 0) and np.all(out <= 1)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-9)


class TestBackward:
    def test_sum_gives_ones(self):
        tape = Tape()
        p = tape.variable(np.arange(6.0).reshape(2, 3))
        (g,) = nx.backward(tape, nx.sum_all(p))
        np.testing.assert_array_equal(g, np.ones((2, 3)))

    def test_half_squared_norm(self):
        tape = Tape()
        value = np.array([[1.0, -2.0, 0.5]])
        p = tape.variable(value)
        loss = nx.scale(nx.sum_all(nx.mul(p, p)), 0.5)
        (g,) = nx.backward(tape, loss)
        np.testing.assert_allclose(g, value, rtol=1e-15)

    def test_unused_variable_gets_zero(self):
        tape = Tape()
        p = tape.variable(np.ones((2, 2)))
        tape.variable(np.ones((3, 1)))
        gp, gq = nx.backward(tape, nx.sum_all(p))
        np.testing.assert_array_equal(gq, np.zeros((3, 1)))

    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        p = tape.variable(np.ones((2, 2)))
        with pytest.raises(ContractError):
            nx.backward(tape, p)

    def test_reused_node_accumulates(self):
        tape = Tape()
        p = tape.variable([[3.0]])
        loss = nx.sum_all(nx.add(nx.mul(p, p), p))
        (g,) = nx.backward(tape, loss)
        assert g[0, 0] == pytest.approx(7.0)

    def test_two_layer_net_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(3, 2))
        w1, b1, w2 = rng.normal(size=(2, 2)), rng.normal(size=(1, 2)), rng.normal(size=(2, 1))

        def loss_of(params):
            tape = Tape()
            nodes = [tape.variable(p) for p in params]
            h = nx.leaky_relu(nx.add(nx.matmul(tape.constant(x), nodes[0]), nodes[1]))
            out = nx.sum_all(nx.mul(nx.matmul(h, nodes[2]), nx.matmul(h, nodes[2])))
            return tape, out

        tape, loss = loss_of([w1, b1, w2])
        grads = nx.backward(tape, loss)
        flat = np.concatenate([w1.ravel(), b1.ravel(), w2.ravel()])
        assert flat.size == 8  # plus shared structure, well under 10 params

        def f(v):
            parts = [v[:4].reshape(2, 2), v[4:6].reshape(1, 2), v[6:].reshape(2, 1)]
            return loss_of(parts)[1].value[0, 0]

        fd = central_difference(f, flat)
        analytic = np.concatenate([g.ravel() for g in grads])
        assert rel_error(analytic, fd) < 1e-4


def _random_op_case(rng, which):
    """Builds (list of input arrays, fn(tape, nodes) -> scalar node) for one op."""
    r, c = rng.integers(1, 5), rng.integers(1, 5)
    k = rng.integers(1, 5)
    weights = rng.normal(size=(r, c))

    def scalarize(tape, node, w):
        return nx.sum_all(nx.mul(node, tape.constant(w)))

    if which == "matmul":
        ins = [rng.normal(size=(r, k)), rng.normal(size=(k, c))]
        return ins, lambda t, n: scalarize(t, nx.matmul(*n), weights)
    if which == "add_row":
        ins = [rng.normal(size=(r, c)), rng.normal(size=(1, c))]
        return ins, lambda t, n: scalarize(t, nx.add(*n), weights)
    if which == "mul":
        ins = [rng.normal(size=(r, c)), rng.normal(size=(r, c))]
        return ins, lambda t, n: scalarize(t, nx.mul(*n), weights)
    if which == "mul_row":
        ins = [rng.normal(size=(r, c)), rng.normal(size=(1, c))]
        return ins, lambda t, n: scalarize(t, nx.mul(*n), weights)
    if which == "leaky_relu":
        x = rng.normal(size=(r, c))
        x[np.abs(x) < 1e-3] = 0.5  # keep finite differences away from the kink
        return [x], lambda t, n: scalarize(t, nx.leaky_relu(n[0], 0.01), weights)
    if which == "softmax_rows":
        return [rng.normal(size=(r, c))], lambda t, n: scalarize(t, nx.softmax_rows(n[0]), weights)
    if which == "log":
        return [rng.uniform(0.1, 2.0, size=(r, c))], lambda t, n: scalarize(t, nx.log(n[0]), weights)
    if which == "scale":
        return [rng.normal(size=(r, c))], lambda t, n: scalarize(t, nx.scale(n[0], -1.7), weights)
    if which == "reshape":
        return [rng.normal(size=(r, c))], lambda t, n: scalarize(t, nx.reshape(n[0], c, r), weights.T.copy())
    if which == "concat_cols":
        ins = [rng.normal(size=(r, c)), rng.normal(size=(r, k))]
        w = rng.normal(size=(r, c + k))
        return ins, lambda t, n: scalarize(t, nx.concat_cols(*n), w)
    if which == "vecmat_rows":
        ins = [rng.normal(size=(r, c)), rng.normal(size=(r, c * c))]
        return ins, lambda t, n: scalarize(t, nx.vecmat_rows(*n), weights)
    raise ValueError(which)


OPS = ["matmul", "add_row", "mul", "mul_row", "leaky_relu", "softmax_rows", "log", "scale", "reshape",
       "concat_cols", "vecmat_rows"]


@pytest.mark.parametrize("op", OPS)
def test_op_gradients_match_finite_differences(op):
    rng = np.random.default_rng(abs(hash(op)) % 2**32)
    worst = 0.0
    for _ in range(100):
        ins, fn = _random_op_case(rng, op)

        def run(arrays):
            tape = Tape()
            nodes = [tape.variable(a) for a in arrays]
            return tape, fn(tape, nodes)

        tape, loss = run(ins)
        grads = nx.backward(tape, loss)
        for i, a in enumerate(ins):
            def f(v, i=i):
                arrays = [x if j != i else v for j, x in enumerate(ins)]
                return run(arrays)[1].value[0, 0]

            worst = max(worst, rel_error(grads[i], central_difference(f, a)))
    assert worst < 1e-4


def test_row_broadcast_only():
    tape = Tape()
    with pytest.raises(ShapeError):
        nx.add(tape.constant(np.ones((2, 3))), tape.constant(np.ones((2, 1))))


def test_mixing_tapes_rejected():
    a, b = Tape(), Tape()
    with pytest.raises(ContractError):
        nx.add(a.constant([[1.0]]), b.constant([[1.0]]))


class TestSampling:
    def test_same_seed_same_stream(self):
        a, b = Rng(42), Rng(42)
        assert [sample_beta(a, 0.7) for _ in range(50)] == [sample_beta(b, 0.7) for _ in range(50)]

    def test_substreams_differ(self):
        assert Rng(1, 0).uniform() != Rng(1, 1).uniform()

    def test_uniform_mean_and_variance(self):
        rng = Rng(0)
        draws = np.array([sample_beta(rng, 1.0) for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 0.01
        assert abs(draws.var() - 1 / 12) < 0.005

    def test_alpha_four_variance(self):
        rng = Rng(1)
        draws = np.array([sample_beta(rng, 4.0) for _ in range(100_000)])
        assert abs(draws.var() - 1 / (4 * (2 * 4 + 1))) < 0.005

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0, 4.0])
    def test_kolmogorov_smirnov(self, alpha):
        rng = Rng(17)
        draws = [sample_beta(rng, alpha) for _ in range(5000)]
        assert stats.kstest(draws, stats.beta(alpha, alpha).cdf).pvalue > 0.01

    def test_symmetry(self):
        rng = Rng(5)
        draws = np.array([sample_beta(rng, 0.5) for _ in range(20_000)])
        assert stats.ks_2samp(draws, 1.0 - draws).pvalue > 0.01

    @pytest.mark.parametrize("shape", [0.3, 1.0, 5.0])
    def test_gamma_mean(self, shape):
        rng = Rng(8)
        draws = np.array([sample_gamma(rng, shape) for _ in range(40_000)])
        assert abs(draws.mean() - shape) < 0.05 * max(shape, 1)

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_nonpositive_alpha(self, alpha):
        with pytest.raises(DomainError):
            sample_beta(Rng(0), alpha)
