import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import forward_loops, softmax_list
from shiftcal.errors import DivergedError, InvalidInputError, ShapeError
from shiftcal.numerics import (
    LOSSES,
    DenseNet,
    Layer,
    SgdConfig,
    backprop_grad,
    flatten_grads,
    forward,
    gradient_check,
    loss_and_grad,
    sgd_train,
    sigmoid,
    softmax,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)

    @given(arrays(np.float64, st.integers(1, 8), elements=finite), finite)
    def test_shift_invariance(self, z, c):
        np.testing.assert_allclose(softmax(z), softmax(z + c), atol=1e-12)

    @given(arrays(np.float64, st.integers(1, 8), elements=finite))
    def test_simplex(self, z):
        p = softmax(z)
        assert (p >= 0).all()
        assert abs(p.sum() - 1) <= 1e-12

    def test_interior_for_moderate_logits(self):
        p = softmax([30.0, -30.0, 0.0])
        assert (p > 0).all() and (p < 1).all()

    def test_matches_list_oracle(self, rng):
        z = rng.normal(size=6) * 4
        np.testing.assert_allclose(softmax(z), softmax_list(list(z)), rtol=1e-13)

    def test_overflow_safe(self):
        p = softmax([1000.0, 999.0])
        assert np.isfinite(p).all()

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(InvalidInputError):
            softmax([0.0, bad])


def test_sigmoid_stable_at_extremes():
    s = sigmoid(np.array([-800.0, 0.0, 800.0]))
    np.testing.assert_allclose(s, [0.0, 0.5, 1.0])


class TestDenseNet:
    def test_layers_must_chain(self):
        with pytest.raises(ShapeError):
            DenseNet([Layer(np.zeros((3, 2)), np.zeros(3)), Layer(np.zeros((1, 4)), np.zeros(1))])

    def test_unknown_activation(self):
        with pytest.raises(InvalidInputError):
            Layer(np.zeros((1, 1)), np.zeros(1), "gelu")

    def test_glorot_bounds(self, rng):
        net = DenseNet.init([5, 7, 2], ["relu", "identity"], rng)
        for l in net.layers:
            a = math.sqrt(6 / (l.in_dim + l.out_dim))
            assert np.abs(l.weight).max() <= a
            assert (l.bias == 0).all()
        assert net.n_params == 5 * 7 + 7 + 7 * 2 + 2

    def test_flat_round_trip(self, rng):
        net = DenseNet.init([3, 4, 2], ["tanh", "identity"], rng)
        theta = rng.normal(size=net.n_params)
        net.set_flat(theta)
        np.testing.assert_array_equal(net.get_flat(), theta)

    def test_dict_round_trip_is_bit_exact(self, rng):
        net = DenseNet.init([3, 4, 2], ["relu", "identity"], rng)
        back = DenseNet.from_dict(net.to_dict())
        np.testing.assert_array_equal(back.get_flat(), net.get_flat())


class TestForward:
    def test_identity_layer(self):
        net = DenseNet([Layer(np.eye(3), np.zeros(3))])
        x = np.array([0.5, -2.0, 3.0])
        np.testing.assert_array_equal(forward(net, x), x)

    @pytest.mark.parametrize("act,fn", [("relu", lambda b: np.maximum(b, 0)), ("tanh", np.tanh), ("identity", lambda b: b)])
    def test_zero_weights_give_activated_bias(self, act, fn):
        b = np.array([-1.0, 0.5])
        net = DenseNet([Layer(np.zeros((2, 3)), b, act)])
        for x in ([0, 0, 0], [5, -5, 1]):
            np.testing.assert_array_equal(forward(net, np.array(x, float)), fn(b))

    def test_matches_loop_oracle(self, rng):
        net = DenseNet.init([4, 6, 3], ["tanh", "identity"], rng)
        net.layers[0].bias[:] = rng.normal(size=6)
        X = rng.normal(size=(5, 4))
        layers = [(l.weight.tolist(), l.bias.tolist(), l.activation) for l in net.layers]
        expect = np.array([forward_loops(layers, x) for x in X])
        np.testing.assert_allclose(forward(net, X), expect, atol=1e-12, rtol=0)

    def test_dimension_mismatch(self, rng):
        net = DenseNet.init([4, 2], ["identity"], rng)
        with pytest.raises(ShapeError):
            forward(net, np.zeros(3))


class TestLoss:
    def test_zero_weights_zero_gradient(self, rng):
        net = DenseNet.init([3, 5, 2], ["relu", "identity"], rng)
        X = rng.normal(size=(6, 3))
        Y = np.eye(2)[rng.integers(0, 2, 6)]
        g = flatten_grads(backprop_grad(net, X, Y, np.zeros(6)))
        assert (g == 0).all()

    def test_single_parameter_closed_form(self):
        # one bias parameter theta, squared loss (theta - 1)^2 at theta = 0
        net = DenseNet([Layer(np.zeros((1, 1)), np.zeros(1))])
        grads = backprop_grad(net, np.zeros((1, 1)), np.ones((1, 1)), loss="squared")
        assert grads[0][1][0] == -2.0

    def test_negative_weights_rejected(self):
        with pytest.raises(InvalidInputError):
            loss_and_grad(np.zeros((2, 2)), np.eye(2), np.array([1.0, -1.0]), "squared")

    def test_non_finite_output_diverges(self):
        with pytest.raises(DivergedError):
            loss_and_grad(np.array([[np.inf, 0.0]]), np.eye(2)[:1], None, "softmax_squared")

    def test_unknown_kind(self):
        with pytest.raises(InvalidInputError):
            loss_and_grad(np.zeros((1, 2)), np.eye(2)[:1], None, "hinge")

    @pytest.mark.parametrize("kind", LOSSES)
    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_check(self, kind, seed):
        rng = np.random.default_rng(seed)
        out = 1 if kind == "sigmoid_squared" else 3
        net = DenseNet.init([3, 5, out], ["tanh", "identity"], rng)
        X = rng.normal(size=(7, 3))
        Y = (rng.random((7, 1)) < 0.5).astype(float) if out == 1 else np.eye(3)[rng.integers(0, 3, 7)]
        w = rng.uniform(0, 2, 7)
        assert gradient_check(net, X, Y, w, kind) <= 1e-4


class TestSgd:
    def test_collinear_regression(self):
        X = np.array([[0.0], [1.0], [2.0]])
        Y = 2 * X + 1
        net = DenseNet([Layer(np.zeros((1, 1)), np.zeros(1))])
        _, trace = sgd_train(net, X, Y, "squared", SgdConfig(lr=0.1, epochs=2000, batch_size=3))
        assert trace[-1] <= 1e-8

    def test_separable_logistic(self):
        X = np.array([[-1.0], [1.0]])
        s = np.array([0.0, 1.0])
        net = DenseNet([Layer(np.zeros((1, 1)), np.zeros(1))])
        trained, _ = sgd_train(net, X, s, "sigmoid_squared", SgdConfig(lr=1.0, epochs=200, batch_size=2))
        pred = sigmoid(forward(trained, X)[:, 0]) > 0.5
        np.testing.assert_array_equal(pred, [False, True])

    def test_convex_quadratic_reaches_analytic_minimum(self, rng):
        # least squares on a full-rank design: minimum = residual of the normal equations
        X = rng.normal(size=(20, 3))
        y = X @ np.array([1.0, -2.0, 0.5]) + 0.3 + rng.normal(size=20) * 0.1
        A = np.hstack([X, np.ones((20, 1))])
        beta = np.linalg.lstsq(A, y, rcond=None)[0]
        best = float(np.mean((A @ beta - y) ** 2))
        net = DenseNet([Layer(np.zeros((1, 3)), np.zeros(1))])
        _, trace = sgd_train(net, X, y, "squared", SgdConfig(lr=0.1, epochs=3000, batch_size=20))
        assert trace[-1] - best <= 1e-6

    def test_bit_identical_per_seed(self, rng):
        X = rng.normal(size=(50, 2))
        Y = np.eye(2)[(X[:, 0] > 0).astype(int)]
        net = DenseNet.init([2, 4, 2], ["relu", "identity"], np.random.default_rng(1))
        cfg = SgdConfig(lr=0.3, epochs=5, batch_size=8, seed=9, dropout=0.2)
        a, ta = sgd_train(net, X, Y, "softmax_squared", cfg)
        b, tb = sgd_train(net, X, Y, "softmax_squared", cfg)
        assert a.get_flat().tobytes() == b.get_flat().tobytes()
        assert ta == tb

    def test_zero_epochs_is_identity(self, rng):
        net = DenseNet.init([2, 2], ["identity"], rng)
        out, trace = sgd_train(net, np.zeros((3, 2)), np.zeros((3, 2)), "squared", SgdConfig(epochs=0))
        np.testing.assert_array_equal(out.get_flat(), net.get_flat())
        assert trace == []

    def test_divergence_names_epoch(self):
        X = np.array([[1e3], [-1e3]])
        Y = np.array([[2e3], [-2e3]])
        net = DenseNet([Layer(np.ones((1, 1)), np.zeros(1))])
        with pytest.raises(DivergedError) as info:
            sgd_train(net, X, Y, "squared", SgdConfig(lr=10.0, epochs=50, batch_size=2))
        assert info.value.epoch is not None
        assert f"epoch {info.value.epoch}" in str(info.value)

    @pytest.mark.parametrize("kw", [{"lr": 0}, {"epochs": -1}, {"batch_size": 0}, {"dropout": 1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidInputError):
            SgdConfig(**kw)
