"""Unit and gradient tests for the feed-forward layers."""

import numpy as np
import pytest

from audioretrieval.errors import DegenerateBatch, ShapeMismatch
from audioretrieval.nnet import layers

from fdcheck import REL_TOL, check_grads

N_GRAD_SEEDS = 20


def probe_weights(rng, shape):
    return rng.normal(size=shape)


class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(2, 1, 5, 6))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out, _ = layers.conv2d_forward(x, w, np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_zero_kernel(self):
        x = np.random.default_rng(1).normal(size=(1, 2, 4, 4))
        out, _ = layers.conv2d_forward(x, np.zeros((3, 2, 3, 3)), np.zeros(3))
        np.testing.assert_array_equal(out, np.zeros((1, 3, 4, 4)))

    def test_shape_mismatch(self):
        x = np.zeros((1, 2, 4, 4))
        with pytest.raises(ShapeMismatch):
            layers.conv2d_forward(x, np.zeros((3, 1, 3, 3)), np.zeros(3))

    @pytest.mark.parametrize("seed", range(N_GRAD_SEEDS))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        probe = probe_weights(rng, (1, 3, 5, 6))

        def f():
            out, _ = layers.conv2d_forward(x, w, b)
            return float(np.sum(out * probe))

        _, cache = layers.conv2d_forward(x, w, b)
        d_x, d_w, d_b = layers.conv2d_backward(probe, cache)
        assert check_grads(f, [(x, d_x), (w, d_w), (b, d_b)]) < REL_TOL


class TestBatchNorm:
    def _params(self, c):
        return np.ones(c), np.zeros(c), np.zeros(c), np.ones(c)

    def test_train_statistics(self):
        rng = np.random.default_rng(2)
        x = rng.normal(loc=3.0, scale=2.0, size=(4, 3, 6, 5))
        gamma, beta, rm, rv = self._params(3)
        out, _ = layers.batchnorm_forward(x, gamma, beta, rm, rv, "train")
        assert np.all(np.abs(out.mean(axis=(0, 2, 3))) < 1e-9)
        assert np.all(np.abs(out.var(axis=(0, 2, 3)) - 1.0) < 1e-4)

    def test_standardized_fixpoint(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(8, 2, 10, 10))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        gamma, beta, rm, rv = self._params(2)
        out, _ = layers.batchnorm_forward(x, gamma, beta, rm, rv, "train")
        assert np.max(np.abs(out - x)) < 1e-4

    def test_running_stats_update(self):
        rng = np.random.default_rng(4)
        x = rng.normal(loc=1.0, size=(4, 2, 5, 5))
        gamma, beta, rm, rv = self._params(2)
        layers.batchnorm_forward(x, gamma, beta, rm, rv, "train")
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
        np.testing.assert_allclose(
            rv, 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3)), atol=1e-12
        )

    def test_degenerate_batch(self):
        gamma, beta, rm, rv = self._params(3)
        with pytest.raises(DegenerateBatch):
            layers.batchnorm_forward(np.ones((1, 3, 1, 1)), gamma, beta, rm, rv, "train")

    @pytest.mark.parametrize("mode", ["train", "eval"])
    @pytest.mark.parametrize("seed", range(N_GRAD_SEEDS))
    def test_gradients(self, seed, mode):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(2, 3, 4, 5))
        gamma = rng.normal(size=3)
        beta = rng.normal(size=3)
        rm = rng.normal(size=3)
        rv = rng.uniform(0.5, 2.0, size=3)
        probe = probe_weights(rng, (2, 3, 4, 5))

        def f():
            out, _ = layers.batchnorm_forward(
                x, gamma, beta, rm.copy(), rv.copy(), mode
            )
            return float(np.sum(out * probe))

        _, cache = layers.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), mode)
        d_x, d_gamma, d_beta = layers.batchnorm_backward(probe, cache)
        assert check_grads(f, [(x, d_x), (gamma, d_gamma), (beta, d_beta)]) < REL_TOL


class TestLeakyRelu:
    def test_values(self):
        out, _ = layers.leaky_relu_forward(np.array([2.0, -2.0, 0.0]))
        np.testing.assert_allclose(out, [2.0, -0.2, 0.0])

    @pytest.mark.parametrize("seed", range(N_GRAD_SEEDS))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 7))
        x[np.abs(x) < 1e-3] = 0.5  # keep coordinates away from the kink
        probe = probe_weights(rng, x.shape)

        def f():
            out, _ = layers.leaky_relu_forward(x)
            return float(np.sum(out * probe))

        _, cache = layers.leaky_relu_forward(x)
        d_x = layers.leaky_relu_backward(probe, cache)
        assert check_grads(f, [(x, d_x)]) < REL_TOL


class TestLpPool:
    def test_constant_input(self):
        x = np.full((1, 1, 8, 2), 3.0)
        out, _ = layers.lp_pool_time_forward(x)
        np.testing.assert_allclose(out, np.full((1, 1, 2, 2), 3.0), atol=1e-12)

    def test_single_spike_window(self):
        x = np.zeros((1, 1, 4, 1))
        x[0, 0, 0, 0] = 1.0
        out, _ = layers.lp_pool_time_forward(x)
        np.testing.assert_allclose(out[0, 0, 0, 0], 0.25**0.25, atol=1e-12)

    def test_ragged_tail(self):
        x = np.full((1, 1, 6, 1), 2.0)
        out, _ = layers.lp_pool_time_forward(x)
        # tail window covers 2 steps only; the mean is over its true width
        assert out.shape == (1, 1, 2, 1)
        np.testing.assert_allclose(out, 2.0, atol=1e-12)

    def test_output_length(self):
        for t, expected in [(1, 1), (4, 1), (5, 2), (8, 2), (9, 3)]:
            x = np.ones((1, 1, t, 1))
            out, _ = layers.lp_pool_time_forward(x)
            assert out.shape[2] == expected

    @pytest.mark.parametrize("seed", range(N_GRAD_SEEDS))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        # bounded away from 0: |v| in [0.5, 1.5]
        x = rng.uniform(0.5, 1.5, size=(2, 2, 7, 3)) * rng.choice([-1.0, 1.0], size=(2, 2, 7, 3))
        probe = probe_weights(rng, (2, 2, 2, 3))

        def f():
            out, _ = layers.lp_pool_time_forward(x)
            return float(np.sum(out * probe))

        _, cache = layers.lp_pool_time_forward(x)
        d_x = layers.lp_pool_time_backward(probe, cache)
        assert check_grads(f, [(x, d_x)]) < 1e-5


class TestDropout:
    def test_eval_identity(self):
        x = np.random.default_rng(5).normal(size=(4, 4))
        out, _ = layers.dropout_forward(x, 0.3, "eval")
        assert out is x

    def test_zero_rate_identity(self):
        x = np.random.default_rng(6).normal(size=(4, 4))
        out, _ = layers.dropout_forward(x, 0.0, "train", np.random.default_rng(0))
        assert out is x

    def test_drop_fraction(self):
        rng = np.random.default_rng(7)
        x = np.ones((200, 500))
        out, _ = layers.dropout_forward(x, 0.3, "train", rng)
        dropped = np.mean(out == 0.0)
        assert abs(dropped - 0.3) < 0.02

    def test_deterministic_given_seed(self):
        x = np.ones((10, 10))
        out1, _ = layers.dropout_forward(x, 0.3, "train", np.random.default_rng(42))
        out2, _ = layers.dropout_forward(x, 0.3, "train", np.random.default_rng(42))
        np.testing.assert_array_equal(out1, out2)

    def test_backward_uses_mask(self):
        x = np.ones((6, 6))
        out, cache = layers.dropout_forward(x, 0.5, "train", np.random.default_rng(1))
        d = layers.dropout_backward(np.ones_like(x), cache)
        np.testing.assert_array_equal(d, cache)


class TestUpsample:
    def test_repeat(self):
        x = np.arange(2, dtype=np.float64).reshape(1, 2, 1)
        out, _ = layers.upsample_time(x, 64, 128)
        assert out.shape == (1, 128, 1)
        np.testing.assert_array_equal(out[0, :64, 0], 0.0)
        np.testing.assert_array_equal(out[0, 64:, 0], 1.0)

    def test_single_step_broadcast(self):
        x = np.full((1, 1, 3), 7.0)
        out, _ = layers.upsample_time(x, 64, 49)
        assert out.shape == (1, 49, 3)
        np.testing.assert_array_equal(out, 7.0)

    def test_truncation(self):
        x = np.arange(3, dtype=np.float64).reshape(1, 3, 1)
        out, _ = layers.upsample_time(x, 4, 10)
        np.testing.assert_array_equal(out[0, :, 0], [0, 0, 0, 0, 1, 1, 1, 1, 2, 2])

    def test_backward_counts(self):
        x = np.zeros((1, 3, 1))
        _, src = layers.upsample_time(x, 4, 10)
        d = layers.upsample_time_backward(np.ones((1, 10, 1)), src, 3)
        np.testing.assert_array_equal(d[0, :, 0], [4.0, 4.0, 2.0])


class TestMaskedHelpers:
    def test_masked_reverse_is_involution(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(3, 6, 2))
        lengths = np.array([6, 3, 1])
        twice = layers.masked_reverse_time(layers.masked_reverse_time(x, lengths), lengths)
        np.testing.assert_array_equal(twice, x)

    def test_masked_reverse_prefix_only(self):
        x = np.arange(10, dtype=np.float64).reshape(1, 10, 1)
        out = layers.masked_reverse_time(x, np.array([4]))
        np.testing.assert_array_equal(out[0, :4, 0], [3, 2, 1, 0])
        np.testing.assert_array_equal(out[0, 4:, 0], x[0, 4:, 0])

    def test_masked_mean_ignores_padding(self):
        x = np.zeros((2, 5, 3))
        x[0, :2] = 1.0
        x[0, 2:] = 99.0
        x[1, :] = 2.0
        out = layers.masked_time_mean(x, np.array([2, 5]))
        np.testing.assert_allclose(out[0], 1.0)
        np.testing.assert_allclose(out[1], 2.0)

    def test_masked_mean_backward(self):
        d = np.ones((2, 4))
        out = layers.masked_time_mean_backward(d, 5, np.array([2, 5]))
        np.testing.assert_allclose(out[0, :2], 0.5)
        np.testing.assert_allclose(out[0, 2:], 0.0)
        np.testing.assert_allclose(out[1], 0.2)
