"""CRNN audio encoder: five conv blocks, BiGRU, temporal upsampling.

Each block is batch normalization -> padded 3x3 convolution -> LeakyReLU;
Lp time-subsampling (factor 4) follows blocks 1, 3 and 5, dropout sits between
the last subsampling and the BiGRU, and a nearest-neighbor upsample restores
the input's temporal length before the masked mean that yields the clip
embedding.

Batches are padded to the longest clip and carry per-clip frame counts. So
that a clip's embedding does not depend on how much trailing padding its batch
happens to carry, activations beyond each clip's valid length are masked to
zero around every convolution, pooling windows divide by each clip's own valid
width, and the backward GRU scans each valid prefix in reverse. Batch-norm
statistics in train mode do include pad frames; that approximation is accepted
for training.
"""

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import CheckpointMismatch, ShapeMismatch
from . import layers
from .gru import GRU_PARAM_KEYS, bigru_backward, bigru_forward

CHECKPOINT_MAGIC = b"CRNN"


@dataclass(frozen=True)
class CrnnConfig:
    n_mels: int = 64
    channels: tuple[int, ...] = (32, 64, 128, 128, 128)
    leaky_slope: float = 0.1
    pool_positions: tuple[int, ...] = (1, 3, 5)
    pool_factor: int = 4
    pool_p: int = 4
    dropout_rate: float = 0.3
    gru_hidden: int = 150

    def __post_init__(self):
        if not self.channels:
            raise ValueError("channels must be non-empty")
        bad = [p for p in self.pool_positions if not 1 <= p <= self.n_blocks]
        if bad:
            raise ValueError(f"pool positions {bad} outside 1..{self.n_blocks}")
        if self.gru_hidden < 1:
            raise ValueError("gru_hidden must be >= 1")

    @property
    def n_blocks(self) -> int:
        return len(self.channels)

    @property
    def embedding_dim(self) -> int:
        return 2 * self.gru_hidden

    @property
    def total_pool(self) -> int:
        return self.pool_factor ** len(self.pool_positions)

    @property
    def gru_input_dim(self) -> int:
        return self.channels[-1] * self.n_mels


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_crnn(config: CrnnConfig, seed: int):
    """Create (params, buffers) for a fresh encoder, deterministically from seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    c_in = 1
    for b, c_out in enumerate(config.channels, start=1):
        params[f"block{b}.bn.gamma"] = np.ones(c_in)
        params[f"block{b}.bn.beta"] = np.zeros(c_in)
        buffers[f"block{b}.bn.running_mean"] = np.zeros(c_in)
        buffers[f"block{b}.bn.running_var"] = np.ones(c_in)
        params[f"block{b}.conv.w"] = _glorot(
            rng, (c_out, c_in, 3, 3), fan_in=c_in * 9, fan_out=c_out * 9
        )
        params[f"block{b}.conv.b"] = np.zeros(c_out)
        c_in = c_out
    d_in = config.gru_input_dim
    h = config.gru_hidden
    for direction in ("fwd", "bwd"):
        for key in GRU_PARAM_KEYS:
            name = f"gru.{direction}.{key}"
            if key.startswith("w"):
                params[name] = _glorot(rng, (h, d_in), fan_in=d_in, fan_out=h)
            elif key.startswith("u"):
                params[name] = _glorot(rng, (h, h), fan_in=h, fan_out=h)
            else:
                params[name] = np.zeros(h)
    return params, buffers


def _gru_subset(params, direction):
    return {k: params[f"gru.{direction}.{k}"] for k in GRU_PARAM_KEYS}


def _time_mask(n, t, lengths):
    """(N,1,T,1) indicator of each sequence's valid time steps."""
    return (
        (np.arange(t)[None, :] < np.asarray(lengths)[:, None])
        .astype(np.float64)[:, None, :, None]
    )


def crnn_forward(
    params,
    buffers,
    feats,
    lengths=None,
    config: CrnnConfig = CrnnConfig(),
    mode: str = "eval",
    dropout_rng=None,
):
    """Encode a padded batch of log-mel features.

    feats: (N, T, n_mels); lengths: per-clip valid frame counts (default: all T).
    Returns (frame_embeddings (N, T, 2H), clip_embeddings (N, 2H), cache).
    """
    if feats.ndim != 3 or feats.shape[2] != config.n_mels:
        raise ShapeMismatch(f"crnn: need (N,T,{config.n_mels}) features, got {feats.shape}")
    n, t_in, _ = feats.shape
    if lengths is None:
        lengths = np.full(n, t_in, dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (n,) or lengths.min() < 1 or lengths.max() > t_in:
            raise ShapeMismatch(f"crnn: bad lengths {lengths} for T={t_in}")

    x = feats[:, None, :, :]
    cur_lengths = lengths
    masks = []
    block_caches = []
    for b in range(1, config.n_blocks + 1):
        mask = _time_mask(n, x.shape[2], cur_lengths)
        x, bn_cache = layers.batchnorm_forward(
            x,
            params[f"block{b}.bn.gamma"],
            params[f"block{b}.bn.beta"],
            buffers[f"block{b}.bn.running_mean"],
            buffers[f"block{b}.bn.running_var"],
            mode,
        )
        x = x * mask
        x, conv_cache = layers.conv2d_forward(
            x, params[f"block{b}.conv.w"], params[f"block{b}.conv.b"]
        )
        x, act_cache = layers.leaky_relu_forward(x, config.leaky_slope)
        x = x * mask
        pool_cache = None
        if b in config.pool_positions:
            x, pool_cache = layers.lp_pool_time_forward(
                x, p=config.pool_p, factor=config.pool_factor, lengths=cur_lengths
            )
            cur_lengths = -(-cur_lengths // config.pool_factor)
        masks.append(mask)
        block_caches.append((bn_cache, conv_cache, act_cache, pool_cache))

    x, drop_cache = layers.dropout_forward(x, config.dropout_rate, mode, dropout_rng)

    n_, c, t_pooled, f = x.shape
    seq = x.transpose(0, 2, 1, 3).reshape(n, t_pooled, c * f)
    gru_out, gru_cache = bigru_forward(
        seq, _gru_subset(params, "fwd"), _gru_subset(params, "bwd"), cur_lengths
    )
    frames, up_src = layers.upsample_time(gru_out, config.total_pool, t_in)
    clips = layers.masked_time_mean(frames, lengths)
    cache = {
        "config": config,
        "lengths": lengths,
        "t_in": t_in,
        "t_pooled": t_pooled,
        "conv_shape": (n, c, t_pooled, f),
        "masks": masks,
        "block_caches": block_caches,
        "drop_cache": drop_cache,
        "gru_cache": gru_cache,
        "up_src": up_src,
    }
    return frames, clips, cache


def crnn_backward(d_clips, cache, d_frames=None):
    """Backpropagate through the encoder.

    Returns (grads keyed like params, d_feats (N, T, n_mels)).
    """
    config: CrnnConfig = cache["config"]
    lengths = cache["lengths"]
    t_in = cache["t_in"]
    d_frames_total = layers.masked_time_mean_backward(d_clips, t_in, lengths)
    if d_frames is not None:
        d_frames_total = d_frames_total + d_frames
    d_gru_out = layers.upsample_time_backward(
        d_frames_total, cache["up_src"], cache["t_pooled"]
    )
    d_seq, grads_f, grads_b = bigru_backward(d_gru_out, cache["gru_cache"])
    grads = {}
    for direction, g in (("fwd", grads_f), ("bwd", grads_b)):
        for key, val in g.items():
            grads[f"gru.{direction}.{key}"] = val

    n, c, t_pooled, f = cache["conv_shape"]
    d_x = d_seq.reshape(n, t_pooled, c, f).transpose(0, 2, 1, 3)
    d_x = layers.dropout_backward(d_x, cache["drop_cache"])

    for b in range(config.n_blocks, 0, -1):
        bn_cache, conv_cache, act_cache, pool_cache = cache["block_caches"][b - 1]
        mask = cache["masks"][b - 1]
        if pool_cache is not None:
            d_x = layers.lp_pool_time_backward(d_x, pool_cache)
        d_x = d_x * mask
        d_x = layers.leaky_relu_backward(d_x, act_cache)
        d_x, d_w, d_b = layers.conv2d_backward(d_x, conv_cache)
        d_x = d_x * mask
        d_x, d_gamma, d_beta = layers.batchnorm_backward(d_x, bn_cache)
        grads[f"block{b}.conv.w"] = d_w
        grads[f"block{b}.conv.b"] = d_b
        grads[f"block{b}.bn.gamma"] = d_gamma
        grads[f"block{b}.bn.beta"] = d_beta

    return grads, d_x[:, 0, :t_in, :]


# ---------------------------------------------------------------------------
# Checkpoint format: magic, length-prefixed JSON (config + metadata), then
# per-array entries (u16 name length, name, u32 rank, u32 dims, f64 LE data),
# sorted by name. Running statistics are stored alongside the parameters and
# recognized by their ".running_" names.
# ---------------------------------------------------------------------------

def save_checkpoint(path, config: CrnnConfig, params, buffers, meta=None) -> None:
    header = {"config": asdict(config), "meta": meta or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    entries = dict(params)
    entries.update(buffers)
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    buf.write(struct.pack("<I", len(entries)))
    for name in sorted(entries):
        arr = np.ascontiguousarray(entries[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<H", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, expected_config: CrnnConfig | None = None):
    """Read a checkpoint; returns (config, params, buffers, meta)."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"{path}: not a CRNN checkpoint")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        cfg_dict = header["config"]
        cfg_dict["channels"] = tuple(cfg_dict["channels"])
        cfg_dict["pool_positions"] = tuple(cfg_dict["pool_positions"])
        config = CrnnConfig(**cfg_dict)
        if expected_config is not None and config != expected_config:
            raise CheckpointMismatch(
                f"{path}: checkpoint config {config} differs from expected {expected_config}"
            )
        (n_entries,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        buffers: dict[str, np.ndarray] = {}
        for _ in range(n_entries):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape).copy()
            if ".running_" in name:
                buffers[name] = data
            else:
                params[name] = data
    return config, params, buffers, header.get("meta", {})
