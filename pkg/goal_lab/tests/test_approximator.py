import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from goal_lab.analysis import check_gradients
from goal_lab.approximator import (
    AdamState, DenseNet, Normalizer, adam_step, backward, forward, init_params, load_checkpoint,
    param_count, save_checkpoint,
)
from goal_lab.exceptions import DimensionError, NonFiniteError


def hand_net(head="linear", scale=1.0):
    # W1 = identity, b1 = (0, -1), W2 = (2, 3)^T, b2 = 0.5
    return DenseNet([2, 2, 1], head=head, scale=scale, params=[1, 0, 0, 1, 0, -1, 2, 3, 0.5])


def loop_forward(net, x):
    """Row-major flat weights walked one unit at a time."""
    params, offset, hidden = net.params, 0, [float(v) for v in x]
    dims = net.layer_dims
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        weights = params[offset:offset + fan_in * fan_out]
        offset += fan_in * fan_out
        bias = params[offset:offset + fan_out]
        offset += fan_out
        out = [bias[j] + sum(hidden[i] * weights[i * fan_out + j] for i in range(fan_in)) for j in range(fan_out)]
        hidden = out if layer == len(dims) - 2 else [max(v, 0.0) for v in out]
    if net.head == "bounded":
        return [net.scale * np.tanh(v) for v in hidden]
    return hidden


class DenseNetTests(SimpleTestCase):
    def test_param_count(self):
        self.assertEqual(param_count([2, 3, 1]), 13)
        self.assertEqual(DenseNet([4, 8, 8, 8, 2], seed=0).n_params, param_count([4, 8, 8, 8, 2]))

    def test_forward_by_hand(self):
        net = hand_net()
        self.assertAlmostEqual(float(forward(net, [1.0, 3.0])[0]), 8.5)
        # second hidden unit is cut by the ReLU
        self.assertAlmostEqual(float(forward(net, [1.0, 0.5])[0]), 2.5)

    def test_bounded_head(self):
        net = hand_net(head="bounded", scale=2.0)
        self.assertAlmostEqual(float(net([1.0, 3.0])[0]), 2.0 * np.tanh(8.5))
        outputs = DenseNet([3, 16, 2], head="bounded", scale=1.5, seed=1)(np.random.default_rng(0).normal(size=(50, 3)) * 10)
        self.assertTrue(np.all(np.abs(outputs) < 1.5))

    def test_saturated_bounded_head_stays_inside_its_scale(self):
        net = DenseNet([2, 2, 1], head="bounded", scale=2.0, params=[1, 0, 0, 1, 0, -1, 2, 3, 1e6])
        out = float(net([1.0, 3.0])[0])
        self.assertLess(out, 2.0)
        self.assertAlmostEqual(out, 2.0)
        net = DenseNet([2, 2, 1], head="bounded", params=[1, 0, 0, 1, 0, -1, 2, 3, -1e6])
        self.assertGreater(float(net([1.0, 3.0])[0]), -1.0)

    def test_matches_a_loop_implementation(self):
        rng = np.random.default_rng(6)
        for head in ("linear", "bounded"):
            net = DenseNet([3, 5, 4, 2], head=head, scale=1.5, seed=2)
            for row in rng.normal(size=(4, 3)):
                assert_allclose(forward(net, row), loop_forward(net, row), rtol=1e-12, atol=1e-12)

    def test_same_seed_same_initial_weights(self):
        dims = [4, 8, 8, 2]
        assert_array_equal(init_params(dims, np.random.default_rng(4)), init_params(dims, np.random.default_rng(4)))
        assert_array_equal(DenseNet(dims, seed=9).params, DenseNet(dims, seed=9).params)
        self.assertFalse(np.array_equal(DenseNet(dims, seed=9).params, DenseNet(dims, seed=10).params))

    def test_batch_matches_single_rows(self):
        net = DenseNet([3, 5, 5, 2], seed=3)
        batch = np.random.default_rng(1).normal(size=(4, 3))
        stacked = np.stack([forward(net, row) for row in batch])
        assert_allclose(forward(net, batch), stacked)

    def test_rejects_wrong_input_size(self):
        with self.assertRaises(DimensionError):
            forward(hand_net(), [1.0, 2.0, 3.0])
        with self.assertRaises(DimensionError):
            DenseNet([2, 2, 1], params=np.zeros(5))

    def test_backward_by_hand(self):
        net = hand_net()
        grad, input_grad = backward(net, [1.0, 3.0], [1.0])
        # hidden = (1, 2): dW1 = x outer (2, 3), db1 = (2, 3), dW2 = hidden, db2 = 1
        assert_allclose(grad, [2, 3, 6, 9, 2, 3, 1, 2, 1])
        assert_allclose(input_grad, [2.0, 3.0])

    def test_backward_matches_finite_differences(self):
        result = check_gradients(n_nets=10, rng=np.random.default_rng(11))
        self.assertGreater(result.n_checked, 0)
        self.assertLess(result.max_rel_error, 1e-4)


class AdamTests(SimpleTestCase):
    def test_first_step_moves_by_learning_rate(self):
        params = np.array([1.0, -1.0])
        state = AdamState.zeros_like(params)
        new_params, new_state = adam_step(params, np.array([0.5, -2.0]), state, lr=0.1)
        assert_allclose(new_params, [0.9, -0.9], atol=1e-6)
        self.assertEqual(new_state.t, 1)
        assert_array_equal(params, [1.0, -1.0])

    def test_first_step_with_unit_gradient(self):
        new_params, state = adam_step(np.zeros(1), np.ones(1), AdamState.zeros_like(np.zeros(1)), lr=1e-3)
        assert_allclose(new_params, [-1e-3 / (1.0 + 1e-8)], rtol=1e-12)
        assert_allclose((state.m, state.v), ([0.1], [0.001]))

    def test_moments_after_two_equal_gradients(self):
        grad = np.array([2.0, -0.5])
        params, state = adam_step(np.zeros(2), grad, AdamState.zeros_like(np.zeros(2)), lr=1e-3)
        params, state = adam_step(params, grad, state, lr=1e-3)
        self.assertEqual(state.t, 2)
        assert_allclose(state.m, 0.19 * grad)
        assert_allclose(state.v, 0.001999 * grad ** 2)

    def test_zero_gradient_leaves_parameters(self):
        params = np.array([0.3, -1.2, 4.0])
        new_params, state = adam_step(params, np.zeros(3), AdamState.zeros_like(params), lr=0.1)
        assert_array_equal(new_params, params)
        self.assertEqual(state.t, 1)

    def test_non_finite_gradient_aborts(self):
        params = np.zeros(3)
        with self.assertLogs("goal_lab.approximator", level="ERROR"):
            with self.assertRaises(NonFiniteError):
                adam_step(params, np.array([0.0, np.nan, 1.0]), AdamState.zeros_like(params), lr=0.1)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            adam_step(np.zeros(3), np.zeros(2), AdamState.zeros_like(np.zeros(3)), lr=0.1)


class NormalizerTests(SimpleTestCase):
    def test_empty_normalizer_is_identity_inside_clip(self):
        norm = Normalizer(2)
        assert_allclose(norm.normalize([0.5, -2.0]), [0.5, -2.0])

    def test_running_statistics(self):
        norm = Normalizer(2)
        norm.update([[1.0, 2.0], [3.0, 4.0]])
        assert_allclose(norm.mean, [2.0, 3.0])
        assert_allclose(norm.std, [1.0, 1.0])
        assert_allclose(norm.normalize([3.0, 4.0]), [1.0, 1.0])

    def test_std_floor_and_clip(self):
        norm = Normalizer(1)
        norm.update(np.ones((10, 1)))
        self.assertAlmostEqual(float(norm.std[0]), 0.01)
        self.assertAlmostEqual(float(norm.normalize([100.0])[0]), 5.0)

    def test_raw_observations_are_clipped_before_the_statistics(self):
        norm = Normalizer(1)
        norm.update([[1000.0]])
        assert_allclose(norm.mean, [200.0])
        self.assertEqual(norm.count, 1)


class CheckpointTests(SimpleTestCase):
    def test_round_trip(self):
        actor = DenseNet([4, 6, 2], head="bounded", scale=2.0, seed=5)
        norm = Normalizer(4)
        norm.update(np.random.default_rng(0).normal(size=(20, 4)))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(Path(tmp) / "agent.json", {"actor": actor}, {"state": norm})
            networks, normalizers = load_checkpoint(path)

        restored = networks["actor"]
        self.assertEqual(restored.layer_dims, actor.layer_dims)
        self.assertEqual(restored.head, "bounded")
        x = np.random.default_rng(1).normal(size=(3, 4))
        assert_array_equal(restored(x), actor(x))
        assert_array_equal(normalizers["state"].mean, norm.mean)
        self.assertEqual(normalizers["state"].count, 20)
