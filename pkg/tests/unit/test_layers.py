"""Unit tests for layers, losses and the Adam optimizer."""

import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from fuselab import autodiff as ad
from fuselab.autodiff import Tensor
from fuselab.errors import DimensionError, InvalidArgumentError, OptimizerError
from fuselab.gradcheck import run_gradcheck
from fuselab.layers import (
    Adam, Affine, AdamState, BatchNorm, LSTMCell, LSTMParams, Module, Parameter,
    adam_step, affine, batch_norm, count_parameters, dropout, frozen, lstm_step,
    multiclass_hinge, softmax_cross_entropy,
)


class TestAffine(unittest.TestCase):

    def setUp(self):
        ad.reset_graph()

    def test_identity_weights(self):
        x = Tensor([[1.0, -2.0], [3.0, 0.5]])
        out = affine(x, Tensor(np.eye(2)), Tensor(np.zeros(2)))
        assert_array_equal(out.data, x.data)

    def test_hand_arithmetic(self):
        out = affine(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
        assert_array_equal(out.data, [[6.0]])

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            affine(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))

    def test_count_parameters(self):
        self.assertEqual(count_parameters(Affine(10, 5, np.random.default_rng(0))), 55)
        self.assertEqual(count_parameters(Module()), 0)


class TestLSTM(unittest.TestCase):

    def setUp(self):
        ad.reset_graph()

    def test_zero_case(self):
        zeros = Tensor(np.zeros((2, 3)))
        params = LSTMParams(Tensor(np.zeros((4, 12))), Tensor(np.zeros((3, 12))), Tensor(np.zeros(12)))
        h, c = lstm_step(Tensor(np.zeros((2, 4))), zeros, zeros, params)
        assert_array_equal(h.data, 0.0)
        assert_array_equal(c.data, 0.0)

    def test_saturated_forget_gate_keeps_cell(self):
        hidden = 2
        bias = np.zeros(4 * hidden)
        bias[:hidden] = -50.0            # input gate closed
        bias[hidden:2 * hidden] = 50.0   # forget gate open
        params = LSTMParams(Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8))), Tensor(bias))
        c = Tensor([[0.7, -1.3]])
        _, c_next = lstm_step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 2))), c, params)
        assert_allclose(c_next.data, c.data, atol=1e-12)

    def test_forget_bias_initialized_to_one(self):
        cell = LSTMCell(4, 3, np.random.default_rng(0))
        assert_array_equal(cell.bias.value.data[3:6], 1.0)
        assert_array_equal(cell.bias.value.data[:3], 0.0)

    def test_unrolled_sequence_gradients(self):
        from fuselab.gradcheck import check_gradients
        rng = np.random.default_rng(3)

        def unrolled(t):
            params = LSTMParams(t[1], t[2], t[3])
            h = c = Tensor(np.zeros((2, 3)))
            for step in range(3):
                h, c = lstm_step(ad.narrow(t[0], 2 * step, 2, axis=1), h, c, params)
            return h

        arrays = [rng.uniform(-2, 2, (2, 6)), 0.5 * rng.normal(size=(2, 12)),
                  0.5 * rng.normal(size=(3, 12)), rng.normal(size=(12,))]
        self.assertLess(check_gradients(unrolled, arrays, rng), 1e-4)


class TestBatchNorm(unittest.TestCase):

    def setUp(self):
        ad.reset_graph()

    def test_train_statistics(self):
        # output variance is var / (var + eps); a wide input keeps that within 1e-6 of one
        x = Tensor(np.random.default_rng(0).normal(3.0, 20.0, size=(64, 5)))
        out, _, _ = batch_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)), True, np.zeros(5), np.ones(5))
        self.assertLess(np.abs(out.data.mean(axis=0)).max(), 1e-10)
        self.assertLess(np.abs(out.data.var(axis=0) - 1.0).max(), 1e-6)

    def test_constant_batch_gives_beta(self):
        beta = np.array([0.5, -1.0])
        out, _, _ = batch_norm(Tensor(np.full((4, 2), 7.0)), Tensor(np.ones(2)), Tensor(beta),
                               True, np.zeros(2), np.ones(2))
        assert_allclose(out.data, np.tile(beta, (4, 1)))

    def test_running_statistics_and_eval_mode(self):
        bn = BatchNorm(2)
        x = Tensor(np.array([[1.0, 2.0], [3.0, 6.0]]))
        bn(x)
        assert_allclose(bn.buffer("running_mean"), [0.2, 0.4])
        bn.eval()
        out = bn(Tensor(np.array([[0.2, 0.4]])))
        assert_allclose(out.data, [[0.0, 0.0]], atol=1e-12)

    def test_single_sample_in_train_mode(self):
        with self.assertRaises(DimensionError):
            batch_norm(Tensor(np.zeros((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                       True, np.zeros(2), np.ones(2))


class TestDropout(unittest.TestCase):

    def test_identity_cases(self):
        x = Tensor(np.ones((3, 3)))
        self.assertIs(dropout(x, 0.0, True, np.random.default_rng(0)), x)
        self.assertIs(dropout(x, 0.9, False, None), x)

    def test_expected_value(self):
        x = Tensor(np.ones(10000))
        out = dropout(x, 0.3, True, np.random.default_rng(0))
        self.assertAlmostEqual(out.data.mean(), 1.0, delta=0.02)

    def test_probability_range(self):
        with self.assertRaises(InvalidArgumentError):
            dropout(Tensor(np.ones(2)), 1.0, True, np.random.default_rng(0))


class TestLosses(unittest.TestCase):

    def setUp(self):
        ad.reset_graph()

    def test_uniform_logits(self):
        loss = softmax_cross_entropy(Tensor(np.zeros((3, 8))), [0, 4, 7])
        self.assertAlmostEqual(loss.item(), math.log(8), places=12)

    def test_large_margin_goes_to_zero(self):
        logits = np.zeros((1, 4))
        logits[0, 2] = 60.0
        self.assertLess(softmax_cross_entropy(Tensor(logits), [2]).item(), 1e-20)

    def test_gradient_is_softmax_minus_onehot(self):
        raw = np.array([[0.1, 0.5, -1.0]])
        logits = Tensor(raw, requires_grad=True)
        ad.backward(softmax_cross_entropy(logits, [1]))
        probs = np.exp(raw) / np.exp(raw).sum()
        assert_allclose(logits.grad, probs - np.array([[0.0, 1.0, 0.0]]))

    def test_ignore_index_rows_get_no_gradient(self):
        logits = Tensor(np.zeros((3, 4)), requires_grad=True)
        loss = softmax_cross_entropy(logits, [0, 2, 0], ignore_index=0)
        ad.backward(loss)
        self.assertAlmostEqual(loss.item(), math.log(4))
        assert_array_equal(logits.grad[[0, 2]], 0.0)

    def test_target_out_of_range(self):
        with self.assertRaises(InvalidArgumentError):
            softmax_cross_entropy(Tensor(np.zeros((1, 3))), [3])

    def test_hinge(self):
        logits = Tensor([[2.0, 0.5, 1.5]])
        # margins: 1 + 0.5 - 2 = -0.5 -> 0, 1 + 1.5 - 2 = 0.5
        self.assertAlmostEqual(multiclass_hinge(logits, [0]).item(), 0.5)


class TestAdam(unittest.TestCase):

    def setUp(self):
        ad.reset_graph()

    def test_first_step_moves_by_lr(self):
        param = Parameter("x", np.array([1.0]))
        param.value.grad = np.array([4.0])
        adam_step([param], AdamState(lr=0.01))
        assert_allclose(param.value.data, [0.99], rtol=1e-6)

    def test_zero_gradient_leaves_parameter(self):
        param = Parameter("x", np.array([1.0, 2.0]))
        param.value.grad = np.zeros(2)
        adam_step([param], AdamState())
        assert_array_equal(param.value.data, [1.0, 2.0])

    def test_missing_gradient_names_parameter(self):
        with self.assertRaises(OptimizerError) as ctx:
            adam_step([Parameter("encoders.text.W", np.zeros(2))], AdamState())
        self.assertIn("encoders.text.W", str(ctx.exception))

    def test_minimizes_quadratic(self):
        param = Parameter("x", np.array([0.0]))
        optimizer = Adam([param], lr=0.05)
        for _ in range(5000):
            optimizer.zero_grad()
            diff = param.value - 3.0
            ad.backward(ad.sum(diff * diff))
            optimizer.step()
        self.assertLess(abs(param.value.data[0] - 3.0), 1e-6)

    def test_registration_order_invariant(self):
        def run(order):
            a, b = Parameter("a", np.array([1.0])), Parameter("b", np.array([-2.0]))
            a.value.grad, b.value.grad = np.array([0.3]), np.array([-0.7])
            params = [a, b] if order else [b, a]
            adam_step(params, AdamState())
            return a.value.data, b.value.data

        for x, y in zip(run(True), run(False)):
            assert_array_equal(x, y)

    def test_duplicate_names_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            Adam([Parameter("w", np.zeros(1)), Parameter("w", np.zeros(1))])

    def test_step_rejects_shared_moment_keys(self):
        a, b = Parameter("w", np.zeros((3, 6))), Parameter("w", np.zeros((6, 3)))
        a.value.grad, b.value.grad = np.ones((3, 6)), np.ones((6, 3))
        with self.assertRaises(OptimizerError):
            adam_step([a, b], AdamState())

    def test_standalone_module_keeps_separate_moments(self):
        """Sibling layers of a module that is nobody's child still get distinct moment buffers."""
        root = Module()
        first = root.add_module("first", Affine(3, 6, np.random.default_rng(0)))
        second = root.add_module("second", Affine(6, 3, np.random.default_rng(1)))
        self.assertEqual([p.name for p in root.parameters()],
                         ["first.W", "first.b", "second.W", "second.b"])

        optimizer = Adam(root.parameters(), lr=0.01)
        for param in root.parameters():
            param.value.grad = np.ones(param.shape)
        optimizer.step()
        self.assertEqual(optimizer.state.m["first.W"].shape, (3, 6))
        self.assertEqual(optimizer.state.m["second.W"].shape, (6, 3))
        assert_allclose(first.weight.value.data + 0.01, Affine(3, 6, np.random.default_rng(0)).weight.value.data,
                        rtol=0, atol=1e-9)


class TestModule(unittest.TestCase):

    def test_dotted_names_and_state_dict(self):
        root = Module()
        child = root.add_module("enc", Affine(3, 2, np.random.default_rng(0)))
        root.add_module("bn", BatchNorm(2))
        root.bind_names()
        self.assertEqual(child.weight.name, "enc.W")
        state = root.state_dict()
        self.assertEqual(set(state), {"enc.W", "enc.b", "bn.gamma", "bn.beta",
                                      "bn.running_mean", "bn.running_var"})
        state["enc.b"] = np.array([1.0, 2.0])
        root.load_state_dict(state)
        assert_array_equal(child.bias.value.data, [1.0, 2.0])

    def test_load_rejects_wrong_shape(self):
        layer = Affine(3, 2, np.random.default_rng(0))
        state = layer.state_dict()
        state["W"] = np.zeros((2, 3))
        with self.assertRaises(DimensionError):
            layer.load_state_dict(state)

    def test_frozen_module_collects_no_gradient(self):
        ad.reset_graph()
        layer = Affine(2, 1, np.random.default_rng(0))
        x = Tensor(np.ones((1, 2)), requires_grad=True)
        with frozen(layer):
            out = layer(x)
        ad.backward(ad.sum(out))
        self.assertIsNone(layer.weight.grad)
        self.assertIsNotNone(x.grad)
        self.assertTrue(layer.weight.value.requires_grad)


class TestLayerGradcheck(unittest.TestCase):

    def test_layer_cases(self):
        for result in run_gradcheck(["affine", "lstm_step", "batch_norm", "cross_entropy"], trials=3):
            self.assertTrue(result.passed, f"{result.name}: {result.max_rel_error:.2e}")


if __name__ == '__main__':
    unittest.main()
