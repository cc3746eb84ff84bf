"""Forward/backward/SGD core: hand oracles, finite differences, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clbench import nn_core
from clbench.errors import ConfigError, NumericsError
from clbench.nn_core import Batch, LossSpec, Network, QuadraticPenalty

from helpers import finite_difference_grads, grad_rel_error, loss_value, random_loss_case


def hand_net_222():
    """2-2-2 net with hand-set weights for the forward oracle."""
    w1 = np.array([[1.0, 2.0], [3.0, 4.0]])
    b1 = np.array([0.5, -1.0])
    w2 = np.array([[1.0, -1.0], [2.0, 0.0]])
    b2 = np.array([0.0, 1.0])
    return Network((2, 2, 2), (w1, w2), (b1, b2))


class TestForward:
    def test_identity_single_layer(self):
        net = Network((2, 2), (np.eye(2),), (np.zeros(2),))
        out = nn_core.forward(net, np.array([[1.0, 2.0]]))
        assert np.array_equal(out, [[1.0, 2.0]])

    def test_zero_gates_yield_output_bias(self):
        net = Network.init([3, 4, 2], seed=7)
        x = np.random.default_rng(0).standard_normal((5, 3))
        out = nn_core.forward(net, x, gates=np.zeros(4))
        assert np.array_equal(out, np.tile(net.biases[-1], (5, 1)))

    def test_hand_arithmetic_222(self):
        # x=(1,0): z1=(1.5, 1.0) -> relu -> z2=(1.5*1+1.0*2, -1.5+1) = (3.5, -0.5)
        out = nn_core.forward(hand_net_222(), np.array([[1.0, 0.0]]))
        assert np.allclose(out, [[3.5, -0.5]], atol=1e-15)

    def test_dimension_mismatch(self):
        net = Network.init([3, 4, 2], seed=0)
        with pytest.raises(ConfigError):
            nn_core.forward(net, np.zeros((1, 5)))
        with pytest.raises(ConfigError):
            nn_core.forward(net, np.zeros((2, 3)), gates=np.ones(3))

    def test_gate_multiplies_after_relu(self):
        net = hand_net_222()
        gates = np.array([0.5, 0.25])
        out = nn_core.forward(net, np.array([[1.0, 0.0]]), gates=gates)
        h = np.array([1.5 * 0.5, 1.0 * 0.25])
        assert np.allclose(out, [h @ net.weights[1] + net.biases[1]])

    def test_determinism_bitwise(self):
        net = Network.init([6, 10, 4], seed=3)
        x = np.random.default_rng(1).standard_normal((9, 6))
        a = nn_core.forward(net, x)
        b = nn_core.forward(net, x)
        assert np.array_equal(a, b)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        assert nn_core.softmax_cross_entropy(np.zeros(4), 1) == pytest.approx(np.log(4), abs=1e-12)

    def test_saturated(self):
        assert nn_core.softmax_cross_entropy(np.array([100.0, 0.0]), 0) < 1e-6

    def test_hand_arithmetic(self):
        # -ln(e^0 / (e^1 + e^0)) = ln(1 + e)
        expected = float(np.log1p(np.e))
        assert nn_core.softmax_cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(
            expected, abs=1e-12
        )
        assert expected == pytest.approx(1.3132616875182228, abs=1e-12)

    def test_nonfinite_logits(self):
        with pytest.raises(NumericsError):
            nn_core.softmax_cross_entropy(np.array([np.inf, 0.0]), 0)

    def test_bad_label(self):
        with pytest.raises(ConfigError):
            nn_core.softmax_cross_entropy(np.zeros(3), 3)

    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8))
    def test_nonnegative_and_rows_sum_to_one(self, logits):
        z = np.array(logits)
        assert nn_core.softmax_cross_entropy(z, 0) >= 0.0
        assert abs(nn_core.softmax(z).sum() - 1.0) < 1e-12


class TestDistillation:
    def test_identity_is_exactly_zero(self):
        z = np.array([1.0, -2.0, 0.3])
        for t in (0.5, 1.0, 2.0, 10.0):
            assert nn_core.distillation_loss(z, z.copy(), t) == 0.0

    def test_hand_arithmetic(self):
        # KL(softmax((1,0)) || softmax((0,0))) at T=1, recomputed from raw
        # probabilities as the independent oracle.
        p = np.exp([1.0, 0.0]) / np.exp([1.0, 0.0]).sum()
        q = np.array([0.5, 0.5])
        expected = float(np.sum(p * np.log(p / q)))
        got = nn_core.distillation_loss(np.array([0.0, 0.0]), np.array([1.0, 0.0]), 1.0)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.11094407167172735, abs=1e-12)

    def test_infinite_temperature_flattens(self):
        loss = nn_core.distillation_loss(np.array([3.0, -1.0]), np.array([-2.0, 5.0]), 1e6)
        assert abs(loss) < 1e-6

    def test_length_mismatch(self):
        with pytest.raises(ConfigError):
            nn_core.distillation_loss(np.zeros(3), np.zeros(2), 1.0)

    def test_nonpositive_temperature(self):
        with pytest.raises(ConfigError):
            nn_core.distillation_loss(np.zeros(2), np.ones(2), 0.0)


class TestBackward:
    def test_gradients_vanish_at_optimum(self):
        # Logits with a huge margin on the correct class for every row.
        net = Network((2, 2), (200.0 * np.eye(2),), (np.zeros(2),))
        batch = Batch(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]))
        _, grads = nn_core.backward(net, batch, LossSpec())
        assert np.max(np.abs(grads)) < 1e-8

    def test_matches_finite_differences_random_343(self):
        for seed in range(6):
            r = np.random.default_rng(seed)
            net = Network.init([3, 4, 3], seed)
            batch = Batch(r.standard_normal((8, 3)), r.integers(0, 3, 8))
            _, grads = nn_core.backward(net, batch, LossSpec())
            fd = finite_difference_grads(net, batch, LossSpec())
            assert grad_rel_error(grads, fd) < 1e-4

    def test_composite_loss_matches_finite_differences(self):
        for seed in range(8):
            net, batch, spec, gates = random_loss_case(seed)
            _, grads = nn_core.backward(net, batch, spec, gates=gates)
            fd = finite_difference_grads(net, batch, spec, gates=gates)
            assert grad_rel_error(grads, fd) < 1e-4

    def test_doubling_weights_doubles_gradients(self):
        net, batch, spec, gates = random_loss_case(3)
        _, g1 = nn_core.backward(net, batch, spec, gates=gates)
        doubled = LossSpec(
            ce_weight=2 * spec.ce_weight,
            distill_weight=2 * spec.distill_weight,
            distill_targets=spec.distill_targets,
            distill_classes=spec.distill_classes,
            temperature=spec.temperature,
            penalties=tuple(
                QuadraticPenalty(2 * p.weight, p.importance, p.anchor) for p in spec.penalties
            ),
        )
        _, g2 = nn_core.backward(net, batch, doubled, gates=gates)
        assert np.array_equal(g2, 2.0 * g1)

    def test_gate_grad_matches_finite_differences(self):
        net, batch, spec, _ = random_loss_case(2)
        gates = np.random.default_rng(5).random(net.num_hidden_units)
        _, _, gate_grad = nn_core.backward(net, batch, spec, gates=gates, return_gate_grad=True)
        h = 1e-5
        fd = np.zeros_like(gates)
        for k in range(gates.size):
            gp, gm = gates.copy(), gates.copy()
            gp[k] += h
            gm[k] -= h
            fd[k] = (loss_value(net, batch, spec, gp) - loss_value(net, batch, spec, gm)) / (2 * h)
        assert grad_rel_error(gate_grad, fd) < 1e-4

    def test_zero_gate_blocks_incoming_weight_influence(self):
        net = Network.init([3, 4, 2], seed=11)
        batch = Batch(np.random.default_rng(0).standard_normal((6, 3)),
                      np.array([0, 1, 0, 1, 0, 1]))
        gates = np.ones(4)
        gates[2] = 0.0
        base = loss_value(net, batch, LossSpec(), gates)
        bumped_w = [w.copy() for w in net.weights]
        bumped_w[0][:, 2] += 7.5  # incoming weights of the gated-off unit
        bumped_b = [b.copy() for b in net.biases]
        bumped_b[0][2] -= 3.0
        net2 = Network(net.layer_dims, tuple(bumped_w), tuple(bumped_b))
        assert loss_value(net2, batch, LossSpec(), gates) == base

    def test_restricted_ce_columns(self):
        net = Network.init([3, 5, 4], seed=2)
        r = np.random.default_rng(4)
        x = r.standard_normal((6, 3))
        cols = np.array([1, 3])
        y = cols[r.integers(0, 2, 6)]
        batch = Batch(x, y)
        spec = LossSpec(ce_classes=cols)
        loss, grads = nn_core.backward(net, batch, spec)
        fd = finite_difference_grads(net, batch, spec)
        assert grad_rel_error(grads, fd) < 1e-4
        # loss equals CE computed on the restricted columns only
        sub = nn_core.forward(net, x)[:, cols]
        expected = np.mean([nn_core.softmax_cross_entropy(sub[i], int(np.where(cols == y[i])[0][0]))
                            for i in range(6)])
        assert loss == pytest.approx(expected, abs=1e-12)
        with pytest.raises(ConfigError):
            nn_core.backward(net, Batch(x, np.full(6, 2)), spec)


class TestSgdStep:
    def test_rejects_nonpositive_lr(self):
        net = Network.init([2, 2], seed=0)
        g = np.zeros(net.param_count)
        with pytest.raises(ConfigError):
            nn_core.sgd_step(net, g, 0.0)
        with pytest.raises(ConfigError):
            nn_core.sgd_step(net, g, -0.1)

    def test_hand_arithmetic(self):
        net = Network((1, 1), (np.array([[1.0]]),), (np.array([0.0]),))
        grads = np.array([2.0, 0.0])
        out = nn_core.sgd_step(net, grads, 0.1, grad_gate=np.array([1.0, 1.0]))
        assert out.weights[0][0, 0] == pytest.approx(0.8, abs=1e-15)

    def test_zero_gate_is_bit_identical(self):
        net = Network.init([4, 6, 3], seed=9)
        grads = np.random.default_rng(2).standard_normal(net.param_count)
        out = nn_core.sgd_step(net, grads, 0.5, grad_gate=np.zeros(net.param_count))
        assert all(np.array_equal(a, b) for a, b in zip(out.weights, net.weights))
        assert all(np.array_equal(a, b) for a, b in zip(out.biases, net.biases))

    def test_shape_mismatch(self):
        net = Network.init([2, 2], seed=0)
        with pytest.raises(ConfigError):
            nn_core.sgd_step(net, np.zeros(3), 0.1)


class TestParamLayout:
    def test_flat_roundtrip_and_order(self):
        net = hand_net_222()
        flat = net.to_flat()
        expected = np.concatenate([
            net.weights[0].ravel(), net.biases[0], net.weights[1].ravel(), net.biases[1],
        ])
        assert np.array_equal(flat, expected)
        back = net.with_flat(flat.copy())
        assert all(np.array_equal(a, b) for a, b in zip(back.weights, net.weights))

    def test_invalid_shapes_rejected(self):
        with pytest.raises(ConfigError):
            Network((2, 3), (np.zeros((2, 2)),), (np.zeros(3),))
        with pytest.raises(NumericsError):
            Network((2, 2), (np.full((2, 2), np.nan),), (np.zeros(2),))

    def test_batch_validation(self):
        with pytest.raises(ConfigError):
            Batch(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        with pytest.raises(ConfigError):
            Batch(np.zeros((2, 3)), np.zeros(3, dtype=np.int64))
        with pytest.raises(NumericsError):
            Batch(np.array([[np.inf, 0.0]]), np.array([0]))


class TestPerSampleHelpers:
    def test_per_sample_grads_match_singleton_backward(self):
        net = Network.init([4, 6, 3], seed=5)
        r = np.random.default_rng(8)
        x = r.standard_normal((7, 4))
        y = r.integers(0, 3, 7)
        rows = nn_core.per_sample_grads(net, x, y)
        for i in range(7):
            _, g = nn_core.backward(net, Batch(x[i : i + 1], y[i : i + 1]), LossSpec())
            assert np.allclose(rows[i], g, atol=1e-12)

    def test_squared_grad_means_match_loop(self):
        net = Network.init([5, 7, 4], seed=6)
        r = np.random.default_rng(9)
        x = r.standard_normal((11, 5))
        y = r.integers(0, 4, 11)
        fast = nn_core.squared_grad_means(net, x, y)
        slow = (nn_core.per_sample_grads(net, x, y) ** 2).mean(axis=0)
        assert np.allclose(fast, slow, atol=1e-12)

    def test_grad_dot_kernel_matches_materialized(self):
        net = Network.init([6, 8, 8, 4], seed=3)
        r = np.random.default_rng(0)
        xa, ya = r.standard_normal((5, 6)), r.integers(0, 4, 5)
        xb, yb = r.standard_normal((7, 6)), r.integers(0, 4, 7)
        ga = nn_core.per_sample_grads(net, xa, ya)
        gb = nn_core.per_sample_grads(net, xb, yb)
        dots, sqa, sqb = nn_core.per_sample_grad_dots(net, xa, ya, xb, yb)
        assert np.allclose(dots, ga @ gb.T, atol=1e-10)
        assert np.allclose(sqa, (ga**2).sum(axis=1), atol=1e-10)
        assert np.allclose(sqb, (gb**2).sum(axis=1), atol=1e-10)
