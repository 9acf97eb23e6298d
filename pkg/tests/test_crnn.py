"""Encoder assembly: shape contracts, padding invariance, end-to-end gradients,
checkpoint round-trips."""

import numpy as np
import pytest

from audioretrieval.errors import CheckpointMismatch, ShapeMismatch
from audioretrieval.nnet import (
    CrnnConfig,
    crnn_backward,
    crnn_forward,
    init_crnn,
    load_checkpoint,
    save_checkpoint,
)

from fdcheck import check_grads

TINY = CrnnConfig(channels=(2, 2, 2, 2, 2), gru_hidden=3, dropout_rate=0.3)


def tiny_model(seed=0):
    return init_crnn(TINY, seed)


class TestConfig:
    def test_defaults(self):
        cfg = CrnnConfig()
        assert cfg.n_blocks == 5
        assert cfg.embedding_dim == 300
        assert cfg.total_pool == 64
        assert cfg.gru_input_dim == 128 * 64

    def test_pool_position_validation(self):
        with pytest.raises(ValueError):
            CrnnConfig(channels=(4, 4), pool_positions=(1, 3))

    def test_init_shapes(self):
        params, buffers = tiny_model()
        assert params["block1.conv.w"].shape == (2, 1, 3, 3)
        assert params["block3.bn.gamma"].shape == (2,)
        assert params["gru.fwd.w_z"].shape == (3, 2 * 64)
        assert buffers["block1.bn.running_var"].shape == (1,)

    def test_init_deterministic(self):
        p1, _ = tiny_model(7)
        p2, _ = tiny_model(7)
        for key in p1:
            np.testing.assert_array_equal(p1[key], p2[key])


class TestForward:
    def test_output_shapes(self):
        params, buffers = tiny_model()
        rng = np.random.default_rng(0)
        for t in (1, 8, 49, 70):
            feats = rng.normal(size=(2, t, 64))
            frames, clips, _ = crnn_forward(params, buffers, feats, config=TINY)
            assert frames.shape == (2, t, TINY.embedding_dim)
            assert clips.shape == (2, TINY.embedding_dim)

    def test_bad_feature_dim(self):
        params, buffers = tiny_model()
        with pytest.raises(ShapeMismatch):
            crnn_forward(params, buffers, np.zeros((1, 8, 32)), config=TINY)

    def test_eval_deterministic_and_rowwise(self):
        params, buffers = tiny_model()
        rng = np.random.default_rng(1)
        clip = rng.normal(size=(10, 64))
        feats = np.stack([clip, clip])
        _, clips_a, _ = crnn_forward(params, buffers, feats, config=TINY)
        _, clips_b, _ = crnn_forward(params, buffers, feats, config=TINY)
        np.testing.assert_array_equal(clips_a, clips_b)
        assert np.max(np.abs(clips_a[0] - clips_a[1])) < 1e-12

    def test_padding_does_not_change_embedding(self):
        # a clip embedded alone equals the same clip inside a longer padded batch
        params, buffers = tiny_model()
        rng = np.random.default_rng(2)
        short = rng.normal(size=(9, 64))
        long = rng.normal(size=(70, 64))
        _, clips_alone, _ = crnn_forward(params, buffers, short[None], config=TINY)
        batch = np.zeros((2, 70, 64))
        batch[0, :9] = short
        batch[1] = long
        _, clips_batch, _ = crnn_forward(
            params, buffers, batch, lengths=np.array([9, 70]), config=TINY
        )
        assert np.max(np.abs(clips_batch[0] - clips_alone[0])) < 1e-9

    def test_train_mode_updates_running_stats(self):
        params, buffers = tiny_model()
        before = buffers["block1.bn.running_mean"].copy()
        feats = np.random.default_rng(3).normal(loc=2.0, size=(2, 12, 64))
        crnn_forward(
            params, buffers, feats, config=TINY, mode="train",
            dropout_rng=np.random.default_rng(0),
        )
        assert not np.array_equal(before, buffers["block1.bn.running_mean"])


class TestBackward:
    @pytest.mark.parametrize("seed", range(20))
    def test_end_to_end_gradients(self, seed):
        # eval mode isolates the gradient path from batch statistics and dropout
        params, buffers = tiny_model(seed)
        rng = np.random.default_rng(1000 + seed)
        feats = rng.normal(size=(1, 8, 64))
        probe = rng.normal(size=(1, TINY.embedding_dim))

        def f():
            _, clips, _ = crnn_forward(params, buffers, feats, config=TINY)
            return float(np.sum(clips * probe))

        _, _, cache = crnn_forward(params, buffers, feats, config=TINY)
        grads, d_feats = crnn_backward(probe, cache)
        pairs = [(feats, d_feats)] + [(params[k], grads[k]) for k in sorted(params)]
        assert check_grads(f, pairs) < 1e-5

    def test_train_mode_gradients(self):
        # one seed with batch statistics in the loop (running stats restored
        # around every probe evaluation)
        params, buffers = tiny_model(3)
        rng = np.random.default_rng(42)
        feats = rng.normal(size=(2, 8, 64))
        probe = rng.normal(size=(2, TINY.embedding_dim))
        cfg = CrnnConfig(channels=TINY.channels, gru_hidden=TINY.gru_hidden, dropout_rate=0.0)

        def f():
            buf = {k: v.copy() for k, v in buffers.items()}
            _, clips, _ = crnn_forward(params, buf, feats, config=cfg, mode="train")
            return float(np.sum(clips * probe))

        buf = {k: v.copy() for k, v in buffers.items()}
        _, _, cache = crnn_forward(params, buf, feats, config=cfg, mode="train")
        grads, d_feats = crnn_backward(probe, cache)
        pairs = [(feats, d_feats)] + [(params[k], grads[k]) for k in sorted(params)]
        assert check_grads(f, pairs) < 1e-5


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params, buffers = tiny_model(11)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, TINY, params, buffers, meta={"seed": 11})
        config, params2, buffers2, meta = load_checkpoint(path)
        assert config == TINY
        assert meta == {"seed": 11}
        assert set(params2) == set(params)
        assert set(buffers2) == set(buffers)
        for key in params:
            np.testing.assert_array_equal(params[key], params2[key])
        for key in buffers:
            np.testing.assert_array_equal(buffers[key], buffers2[key])

    def test_config_mismatch(self, tmp_path):
        params, buffers = tiny_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, TINY, params, buffers)
        other = CrnnConfig(channels=(4, 4, 4, 4, 4), gru_hidden=3)
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(path, expected_config=other)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bogus.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(path)
