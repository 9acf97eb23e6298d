"""GRU scan and bidirectional wrapper: unit cases and BPTT gradient checks."""

import numpy as np
import pytest

from audioretrieval.errors import ShapeMismatch
from audioretrieval.nnet import bigru_backward, bigru_forward, gru_backward, gru_forward
from audioretrieval.nnet.gru import GRU_PARAM_KEYS

from fdcheck import check_grads

N_GRAD_SEEDS = 20
GRU_REL_TOL = 1e-5


def make_params(rng, d_in, hidden, zero_bias=False):
    p = {}
    for key in GRU_PARAM_KEYS:
        if key.startswith("w"):
            p[key] = rng.normal(scale=0.5, size=(hidden, d_in))
        elif key.startswith("u"):
            p[key] = rng.normal(scale=0.5, size=(hidden, hidden))
        else:
            p[key] = np.zeros(hidden) if zero_bias else rng.normal(scale=0.5, size=hidden)
    return p


class TestGruForward:
    def test_zero_fixpoint(self):
        rng = np.random.default_rng(0)
        p = make_params(rng, 3, 2, zero_bias=True)
        x = np.zeros((2, 5, 3))
        out, _ = gru_forward(x, p)
        np.testing.assert_array_equal(out, np.zeros((2, 5, 2)))

    def test_shape_checks(self):
        rng = np.random.default_rng(1)
        p = make_params(rng, 3, 2)
        with pytest.raises(ShapeMismatch):
            gru_forward(np.zeros((2, 5, 4)), p)
        with pytest.raises(ShapeMismatch):
            gru_forward(np.zeros((2, 5)), p)

    def test_batch_rows_independent(self):
        rng = np.random.default_rng(2)
        p = make_params(rng, 3, 4)
        x = rng.normal(size=(3, 6, 3))
        full, _ = gru_forward(x, p)
        for i in range(3):
            single, _ = gru_forward(x[i : i + 1], p)
            np.testing.assert_allclose(single[0], full[i], atol=1e-12)

    @pytest.mark.parametrize("seed", range(N_GRAD_SEEDS))
    def test_gradients(self, seed):
        rng = np.random.default_rng(seed)
        p = make_params(rng, 3, 2)
        x = rng.normal(size=(1, 4, 3))
        probe = rng.normal(size=(1, 4, 2))

        def f():
            out, _ = gru_forward(x, p)
            return float(np.sum(out * probe))

        _, cache = gru_forward(x, p)
        d_x, grads = gru_backward(probe, cache)
        pairs = [(x, d_x)] + [(p[k], grads[k]) for k in GRU_PARAM_KEYS]
        assert check_grads(f, pairs) < GRU_REL_TOL


class TestBiGru:
    def test_direction_symmetry(self):
        # with identical parameters in both directions, reversing the input
        # swaps the two output halves (time-reversed)
        rng = np.random.default_rng(3)
        p = make_params(rng, 3, 2)
        p_copy = {k: v.copy() for k, v in p.items()}
        x = rng.normal(size=(2, 5, 3))
        out, _ = bigru_forward(x, p, p_copy)
        out_rev, _ = bigru_forward(x[:, ::-1], p, p_copy)
        h = 2
        np.testing.assert_allclose(out_rev[:, ::-1, :h], out[:, :, h:], atol=1e-12)
        np.testing.assert_allclose(out_rev[:, ::-1, h:], out[:, :, :h], atol=1e-12)

    def test_output_dim(self):
        rng = np.random.default_rng(4)
        out, _ = bigru_forward(
            rng.normal(size=(2, 6, 3)), make_params(rng, 3, 5), make_params(rng, 3, 5)
        )
        assert out.shape == (2, 6, 10)

    def test_masked_prefix_matches_unpadded(self):
        # valid outputs of a padded sequence equal the unpadded run
        rng = np.random.default_rng(5)
        p_f = make_params(rng, 3, 4)
        p_b = make_params(rng, 3, 4)
        x_short = rng.normal(size=(1, 3, 3))
        x_padded = np.zeros((1, 8, 3))
        x_padded[:, :3] = x_short
        out_short, _ = bigru_forward(x_short, p_f, p_b)
        out_padded, _ = bigru_forward(x_padded, p_f, p_b, lengths=np.array([3]))
        np.testing.assert_allclose(out_padded[:, :3], out_short, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_with_lengths(self, seed):
        rng = np.random.default_rng(seed)
        p_f = make_params(rng, 2, 2)
        p_b = make_params(rng, 2, 2)
        x = rng.normal(size=(2, 4, 2))
        lengths = np.array([4, 2])
        # zero probe on pad outputs: they are unspecified by contract
        probe = rng.normal(size=(2, 4, 4))
        probe[1, 2:] = 0.0

        def f():
            out, _ = bigru_forward(x, p_f, p_b, lengths)
            return float(np.sum(out * probe))

        _, cache = bigru_forward(x, p_f, p_b, lengths)
        d_x, grads_f, grads_b = bigru_backward(probe, cache)
        pairs = [(x, d_x)]
        pairs += [(p_f[k], grads_f[k]) for k in GRU_PARAM_KEYS]
        pairs += [(p_b[k], grads_b[k]) for k in GRU_PARAM_KEYS]
        assert check_grads(f, pairs) < GRU_REL_TOL
