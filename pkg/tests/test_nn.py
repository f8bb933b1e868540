import math

import numpy as np
import pytest

from depthinit.data import gen_synthetic
from depthinit.errors import InvalidArgument
from depthinit.nn import (DenseNetwork, GradientSet, backward, forward, gradcheck_finite_diff,
                          init_network, loss_softmax_ce, sgd_step)
from depthinit.scheme import (ConstantScaled, DepthwiseLog, Direction, Distribution, Glorot, He,
                              NetworkSpec, build_plan, gain_product)
from depthinit.train import train


def make_net(depth, width, input_dim=None, output_dim=None, scheme=None, seed=0):
    spec = NetworkSpec.uniform(depth, width, input_dim=input_dim, output_dim=output_dim)
    return init_network(spec, build_plan(spec, scheme or He()), seed)


def with_random_biases(net, seed, scale=0.1):
    """Move pre-activations off the exact-zero ReLU kink that zero biases can produce."""
    rng = np.random.default_rng(seed)
    net.biases = [rng.normal(scale=scale, size=b.shape) for b in net.biases]
    return net


def manual_logits(net, x):
    """Row-by-row, unit-by-unit evaluation of the layer chain."""
    out = []
    L = len(net.weights)
    for row in x:
        a = list(row)
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            y = [sum(w[r, c] * a[c] for c in range(len(a))) + b[r] for r in range(w.shape[0])]
            a = y if i == L - 1 else [max(v, 0.0) for v in y]
        out.append(a)
    return np.array(out)


class TestInit:
    def test_deterministic(self):
        a, b = make_net(4, 8, seed=3), make_net(4, 8, seed=3)
        for wa, wb in zip(a.weights, b.weights):
            assert np.array_equal(wa, wb)
        assert not np.array_equal(a.weights[0], make_net(4, 8, seed=4).weights[0])

    def test_zero_variance(self):
        spec = NetworkSpec.uniform(3, 4)
        plan = build_plan(spec, He())
        plan = type(plan)(**{**plan.__dict__, "weight_variance": (0.0,) * 3})
        net = init_network(spec, plan, 0)
        assert all(not w.any() for w in net.weights)

    def test_shapes_and_bias(self):
        net = make_net(3, 5, input_dim=7, output_dim=2)
        assert [w.shape for w in net.weights] == [(5, 7), (5, 5), (2, 5)]
        assert all(not b.any() for b in net.biases)

    @pytest.mark.parametrize("dist", list(Distribution))
    def test_he_sample_variance(self, dist):
        net = make_net(54, 64, scheme=He(dist), seed=11)
        for w in net.weights:
            assert abs(w.var() / 0.03125 - 1) < 0.15

    def test_plan_mismatch(self):
        plan = build_plan(NetworkSpec.uniform(3, 4), He())
        with pytest.raises(InvalidArgument):
            init_network(NetworkSpec.uniform(4, 4), plan, 0)


class TestForward:
    def test_relu_clips(self):
        spec = NetworkSpec(input_dim=2, layer_widths=(2, 2))
        net = DenseNetwork(spec, [np.eye(2), np.eye(2)], [np.zeros(2), np.zeros(2)])
        acts = forward(net, np.array([[1.0, -1.0]]))
        assert np.array_equal(acts.inputs[1], [[1.0, 0.0]])

    def test_zero_weights(self):
        net = make_net(4, 6)
        net.weights = [np.zeros_like(w) for w in net.weights]
        assert not forward(net, np.ones((3, 6))).logits.any()

    def test_output_layer_is_linear(self):
        net = make_net(3, 6, seed=2)
        logits = forward(net, np.random.default_rng(0).normal(size=(50, 6))).logits
        assert (logits < 0).any()

    def test_matches_manual_chain(self):
        net = make_net(3, 5, input_dim=4, output_dim=3, seed=9)
        net.biases = [np.random.default_rng(i).normal(size=b.shape) for i, b in enumerate(net.biases)]
        x = np.random.default_rng(1).normal(size=(6, 4))
        np.testing.assert_allclose(forward(net, x).logits, manual_logits(net, x), rtol=1e-12,
                                   atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            forward(make_net(3, 5), np.ones((2, 4)))


class TestLoss:
    def test_uniform_logits(self):
        assert loss_softmax_ce(np.zeros((4, 10)), np.arange(4)) == pytest.approx(math.log(10),
                                                                                 rel=1e-15)

    def test_margin_lowers_loss(self):
        logits = np.zeros((1, 10))
        logits[0, 3] = 2.0
        assert loss_softmax_ce(logits, np.array([3])) < math.log(10)

    def test_matches_direct_formula(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(scale=3.0, size=(16, 5))
        labels = rng.integers(0, 5, size=16)
        expected = -sum(math.log(math.exp(row[y]) / sum(math.exp(v) for v in row))
                        for row, y in zip(logits, labels)) / 16
        assert loss_softmax_ce(logits, labels) == pytest.approx(expected, rel=1e-12)

    def test_stable_for_large_logits(self):
        assert loss_softmax_ce(np.array([[1000.0, 0.0]]), np.array([0])) == 0.0

    @pytest.mark.parametrize("labels", [[0, 5], [-1, 0]])
    def test_label_range(self, labels):
        with pytest.raises(InvalidArgument):
            loss_softmax_ce(np.zeros((2, 5)), np.array(labels))


class TestBackward:
    def test_saturated_softmax(self):
        spec = NetworkSpec(input_dim=2, layer_widths=(2, 2))
        net = DenseNetwork(spec, [np.eye(2), 100 * np.eye(2)], [np.zeros(2), np.zeros(2)])
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        g = backward(net, forward(net, x), np.array([0, 1]))
        assert max(np.abs(gw).max() for gw in g.weights) < 1e-30

    def test_dead_layer_blocks_gradient(self):
        net = make_net(4, 6, seed=1)
        net.biases[1] = np.full(6, -1e6)
        x = np.random.default_rng(0).normal(size=(8, 6))
        g = backward(net, forward(net, x), np.zeros(8, dtype=int))
        assert not g.weights[0].any() and not g.weights[1].any()
        assert not g.d_pre[1].any()

    def test_relu_gate(self):
        net = make_net(3, 6, seed=4)
        x = np.random.default_rng(3).normal(size=(10, 6))
        acts = forward(net, x)
        g = backward(net, acts, np.arange(10) % 6)
        for i in range(2):
            assert not g.d_pre[i][acts.pre[i] <= 0].any()

    @pytest.mark.parametrize("seed", range(5))
    def test_gradcheck_small(self, seed):
        net = with_random_biases(
            make_net(3, 5, input_dim=4, output_dim=3, scheme=Glorot(), seed=seed), seed)
        rng = np.random.default_rng(100 + seed)
        x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, size=8)
        assert gradcheck_finite_diff(net, x, y) < 1e-5

    def test_mismatched_activations(self):
        net = make_net(3, 5)
        acts = forward(make_net(4, 5), np.ones((2, 5)))
        with pytest.raises(InvalidArgument):
            backward(net, acts, np.zeros(2, dtype=int))


class TestGradcheck:
    def test_two_layer(self):
        # a 2-layer net has no ReLU fed by ReLU, so zero biases are safe here
        net = make_net(2, 4, seed=0)
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(8, 4)), rng.integers(0, 4, size=8)
        assert gradcheck_finite_diff(net, x, y) < 1e-5

    def test_zero_loss(self):
        spec = NetworkSpec(input_dim=2, layer_widths=(2, 2))
        net = DenseNetwork(spec, [np.eye(2), 1e3 * np.eye(2)], [np.zeros(2), np.zeros(2)])
        err = gradcheck_finite_diff(net, np.eye(2), np.array([0, 1]))
        assert math.isfinite(err) and err == 0.0

    @pytest.mark.parametrize("eps", [0.0, -1e-5])
    def test_bad_epsilon(self, eps):
        net = make_net(2, 3)
        with pytest.raises(InvalidArgument):
            gradcheck_finite_diff(net, np.ones((1, 3)), np.zeros(1, dtype=int), eps)

    def test_detects_wrong_gradient(self, monkeypatch):
        import depthinit.nn as nn

        real = nn.backward

        def broken(net, acts, labels):
            g = real(net, acts, labels)
            g.weights[0] = g.weights[0] * 1.01
            return g

        monkeypatch.setattr(nn, "backward", broken)
        net = make_net(2, 4, seed=0)
        rng = np.random.default_rng(0)
        assert nn.gradcheck_finite_diff(net, rng.normal(size=(8, 4)),
                                        rng.integers(0, 4, size=8)) > 5e-3


class TestSGD:
    def _one_param(self, w, g):
        spec = NetworkSpec(input_dim=1, layer_widths=(1, 1))
        net = DenseNetwork(spec, [np.array([[w]]), np.array([[w]])], [np.zeros(1), np.zeros(1)])
        grads = GradientSet([np.array([[g]])] * 2, [np.zeros(1)] * 2, [], [])
        return net, grads

    def test_update(self):
        net, grads = self._one_param(1.0, 0.5)
        assert sgd_step(net, grads, 0.1).weights[0][0, 0] == pytest.approx(0.95, rel=1e-15)

    def test_zero_gradient(self):
        net, grads = self._one_param(1.0, 0.0)
        out = sgd_step(net, grads, 0.1)
        assert all(np.array_equal(a, b) for a, b in zip(out.weights, net.weights))

    @pytest.mark.parametrize("lr", [0.0, -0.1])
    def test_bad_lr(self, lr):
        net, grads = self._one_param(1.0, 0.5)
        with pytest.raises(InvalidArgument):
            sgd_step(net, grads, lr)

    def test_does_not_mutate(self):
        net, grads = self._one_param(1.0, 0.5)
        sgd_step(net, grads, 0.1)
        assert net.weights[0][0, 0] == 1.0

    def test_two_steps_differ_from_summed_step(self):
        net = make_net(3, 6, seed=5)
        rng = np.random.default_rng(5)
        x, y = rng.normal(size=(16, 6)), rng.integers(0, 6, size=16)
        lr = 0.5
        g1 = backward(net, forward(net, x), y)
        step1 = sgd_step(net, g1, lr)
        g2 = backward(step1, forward(step1, x), y)
        two = sgd_step(step1, g2, lr)
        frozen = GradientSet([a + b for a, b in zip(g1.weights, g1.weights)],
                             [a + b for a, b in zip(g1.biases, g1.biases)], [], [])
        one = sgd_step(net, frozen, lr)
        assert not np.allclose(two.weights[0], one.weights[0], rtol=0, atol=1e-9)


class TestProperties:
    @pytest.mark.parametrize("depth", [2, 4, 6])
    @pytest.mark.parametrize("seed", range(4))
    def test_gradcheck_up_to_six_layers(self, depth, seed):
        net = with_random_biases(make_net(depth, 8, seed=seed), seed)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(8, 8)), rng.integers(0, 8, size=8)
        assert gradcheck_finite_diff(net, x, y) < 1e-4

    @pytest.mark.parametrize("dist", list(Distribution))
    def test_relu_zero_fraction(self, dist):
        net = make_net(6, 128, scheme=He(dist), seed=1)
        acts = forward(net, np.random.default_rng(1).normal(size=(64, 128)))
        for x in acts.inputs[1:]:
            assert abs(np.mean(x == 0) - 0.5) < 0.05

    @pytest.mark.parametrize("scheme", [
        He(), Glorot(), ConstantScaled(0.5), ConstantScaled(40.0), DepthwiseLog(variance=2.0),
        DepthwiseLog(variance=20.0, direction=Direction.DECREASING),
        He(Distribution.UNIFORM),
    ], ids=repr)
    def test_loss_decreases_on_separable_task(self, scheme):
        data = gen_synthetic(1, 400, 8, 3, 6.0)
        spec = NetworkSpec.uniform(3, 16, input_dim=8, output_dim=3)
        plan = build_plan(spec, scheme)
        assert 0.5 <= gain_product(plan, spec, "backward") <= 50 or isinstance(scheme, Glorot)
        report = train(spec, scheme, data, 10, 0.05, 32, 0)
        assert report["epochs"][-1]["loss"] < report["initial"]["loss"]


def test_gradcheck_resolves_tiny_gradients():
    # this net has a weight gradient near 4e-8; float64 differences would put it at ~3e-4
    spec = NetworkSpec.uniform(2, 8)
    net = init_network(spec, build_plan(spec, ConstantScaled(3.0, Distribution.UNIFORM)), 0)
    rng = np.random.default_rng(1000)
    x, y = rng.normal(size=(4, 8)), rng.integers(0, 8, 4)
    g = backward(net, forward(net, x), y)
    assert np.abs(g.weights[1]).min() < 1e-7
    assert gradcheck_finite_diff(net, x, y) < 1e-4
