"""Audio-encoder optimization with a sampling-based triplet ranking loss.

For each matched pair (x_n, y_n) in a batch, one imposter clip and one
imposter caption are drawn uniformly from the other batch members, and the
loss is

    (1/N) sum_n [ max(0, S(x_n, y^_n) - S(x_n, y_n) + 1)
                + max(0, S(x^_n, y_n) - S(x_n, y_n) + 1) ]

with S the dot-product relevance score. Only the audio encoder trains; the
caption side is a frozen pretrained table. The schedule is Adam at lr 0.001,
tenfold reduction after 5 epochs without validation improvement, early stop
after 10, at most 150 epochs; the best-validation epoch supplies the returned
parameters.
"""

import copy
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus
from .errors import BatchTooSmall, DimMismatch, EmptySplit, ShapeMismatch
from .nnet import CrnnConfig, crnn_backward, crnn_forward, init_crnn, save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 150
    lr: float = 0.001
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    early_stop_patience: int = 10
    margin: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    improvement_delta: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2 or self.max_epochs < 1 or self.lr <= 0:
            raise ValueError("batch_size >= 2, max_epochs >= 1 and lr > 0 required")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")


@dataclass(frozen=True)
class TripletBatch:
    """Indices of one training batch: matched pairs plus per-pair imposters."""

    clip_ids: tuple[str, ...]
    caption_ids: tuple[str, ...]
    imposter_clip_idx: np.ndarray
    imposter_caption_idx: np.ndarray

    def __post_init__(self):
        n = len(self.clip_ids)
        if n < 2:
            raise BatchTooSmall(f"triplet batch needs N >= 2, got {n}")
        own = np.arange(n)
        for name, idx in (
            ("imposter_clip_idx", self.imposter_clip_idx),
            ("imposter_caption_idx", self.imposter_caption_idx),
        ):
            idx = np.asarray(idx)
            if idx.shape != (n,) or idx.min() < 0 or idx.max() >= n:
                raise ValueError(f"{name} out of range for batch of {n}")
            if np.any(idx == own):
                raise ValueError(f"{name} must differ from the pair's own index")


def relevance_score(a: np.ndarray, c: np.ndarray) -> float:
    """Dot-product relevance between an audio and a caption embedding."""
    if a.shape != c.shape:
        raise DimMismatch(f"embedding dims differ: {a.shape} vs {c.shape}")
    return float(np.dot(a, c))


def sample_imposters(n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform imposter indices over the other n-1 batch members, per pair.

    ``rng`` is an integer seed or a numpy Generator; draws are deterministic
    given the seed.
    """
    if n < 2:
        raise BatchTooSmall(f"imposter sampling needs N >= 2, got {n}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    own = np.arange(n)

    def draw():
        k = rng.integers(0, n - 1, size=n)
        return k + (k >= own)

    return draw(), draw()


def triplet_loss(audio_embeds, caption_embeds, imposter_clip_idx, imposter_caption_idx, margin=1.0):
    """Hinge ranking loss over a batch; returns (loss, d_audio, d_caption).

    Gradients are exact subgradients (zero at inactive hinges), averaged over
    the batch like the loss itself.
    """
    a = np.asarray(audio_embeds, dtype=np.float64)
    c = np.asarray(caption_embeds, dtype=np.float64)
    if a.shape != c.shape or a.ndim != 2:
        raise DimMismatch(f"embedding matrices differ: {a.shape} vs {c.shape}")
    n = a.shape[0]
    ia = np.asarray(imposter_clip_idx)
    ic = np.asarray(imposter_caption_idx)

    s_pos = np.einsum("nd,nd->n", a, c)
    s_cap_imp = np.einsum("nd,nd->n", a, c[ic])
    s_clip_imp = np.einsum("nd,nd->n", a[ia], c)
    h1 = s_cap_imp - s_pos + margin
    h2 = s_clip_imp - s_pos + margin
    active1 = (h1 > 0).astype(np.float64)
    active2 = (h2 > 0).astype(np.float64)
    loss = float(np.sum(np.maximum(h1, 0.0) + np.maximum(h2, 0.0)) / n)

    d_a = np.zeros_like(a)
    d_c = np.zeros_like(c)
    w1 = (active1 / n)[:, None]
    w2 = (active2 / n)[:, None]
    d_a += w1 * (c[ic] - c)
    d_c -= w1 * a
    np.add.at(d_c, ic, w1 * a)
    d_c += w2 * (a[ia] - a)
    d_a -= w2 * c
    np.add.at(d_a, ia, w2 * c)
    return loss, d_a, d_c


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def like(cls, params):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8) -> None:
    """One in-place Adam update with bias correction."""
    state.t += 1
    correction1 = 1.0 - beta1**state.t
    correction2 = 1.0 - beta2**state.t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {key} has shape {g.shape}, want {p.shape}")
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)


# ---------------------------------------------------------------------------
# Fit loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    adam: AdamState
    epoch: int = 0
    best_val_loss: float = np.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    plateau_counter: int = 0
    current_lr: float = 0.001


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    last_params: dict[str, np.ndarray]
    last_buffers: dict[str, np.ndarray]
    best_epoch: int
    best_val_loss: float
    log: list[EpochRecord] = field(default_factory=list)
    steps: int = 0


def _pad_batch(features, clip_ids):
    feats = [features[cid] for cid in clip_ids]
    lengths = np.array([f.shape[0] for f in feats], dtype=np.int64)
    t_max = int(lengths.max())
    batch = np.zeros((len(feats), t_max, feats[0].shape[1]))
    for i, f in enumerate(feats):
        batch[i, : f.shape[0]] = f
    return batch, lengths


def _batches(pairs, batch_size):
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        if len(chunk) >= 2:
            yield chunk


def _epoch_loss(split, features, caption_vectors, state, crnn_config, cfg, imposter_rng, update):
    """One pass over a split; returns the pair-weighted mean loss.

    With ``update`` the pass is a training epoch (dropout, batch statistics,
    Adam steps); without it the pass evaluates the loss in eval mode.
    """
    mode = "train" if update else "eval"
    # training pairs reshuffle each epoch; validation order stays fixed
    shuffle_seed = cfg.seed + 7919 * state.epoch if update else cfg.seed
    pairs = corpus.enumerate_pairs(split, shuffle_seed)
    total = 0.0
    weight = 0
    steps = 0
    for batch_idx, chunk in enumerate(_batches(pairs, cfg.batch_size)):
        clip_ids = [p[0] for p in chunk]
        caption_ids = [p[1] for p in chunk]
        feats, lengths = _pad_batch(features, clip_ids)
        cap = np.stack([caption_vectors[cid] for cid in caption_ids])
        imp_clip, imp_cap = sample_imposters(len(chunk), imposter_rng)
        dropout_rng = (
            np.random.default_rng([cfg.seed, state.epoch, batch_idx]) if update else None
        )
        frames, clips, cache = crnn_forward(
            state.params,
            state.buffers,
            feats,
            lengths,
            crnn_config,
            mode=mode,
            dropout_rng=dropout_rng,
        )
        loss, d_audio, _ = triplet_loss(clips, cap, imp_clip, imp_cap, cfg.margin)
        if update:
            grads, _ = crnn_backward(d_audio, cache)
            adam_step(
                state.params,
                grads,
                state.adam,
                state.current_lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )
            steps += 1
        total += loss * len(chunk)
        weight += len(chunk)
    if weight == 0:
        raise EmptySplit(f"split {split.name!r} yields no trainable batches")
    return total / weight, steps


def fit(
    train_split,
    val_split,
    features,
    caption_vectors,
    crnn_config: CrnnConfig = CrnnConfig(),
    config: TrainConfig = TrainConfig(),
    log_path=None,
    checkpoint_dir=None,
    checkpoint_meta=None,
) -> FitResult:
    """Train the audio encoder and return the best-validation parameters.

    ``features`` maps clip_id -> (T, n_mels) log-mel array; ``caption_vectors``
    maps caption_id -> embedding (dimension must equal the encoder output).
    Optionally appends per-epoch rows to ``log_path`` and writes best/last
    checkpoints into ``checkpoint_dir``.
    """
    corpus.require_nonempty(train_split)
    corpus.require_nonempty(val_split)
    params, buffers = init_crnn(crnn_config, config.seed)
    state = TrainState(
        params=params, buffers=buffers, adam=AdamState.like(params), current_lr=config.lr
    )
    best_params = copy.deepcopy(params)
    best_buffers = copy.deepcopy(buffers)
    result = FitResult(
        params=best_params,
        buffers=best_buffers,
        last_params=params,
        last_buffers=buffers,
        best_epoch=0,
        best_val_loss=np.inf,
    )

    log_fh = None
    writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])

    try:
        for epoch in range(1, config.max_epochs + 1):
            state.epoch = epoch
            started = time.monotonic()
            train_rng = np.random.default_rng([config.seed, epoch, 2])
            train_loss, steps = _epoch_loss(
                train_split, features, caption_vectors, state, crnn_config, config,
                train_rng, update=True,
            )
            result.steps += steps
            # fixed per-epoch imposter seed keeps plateau detection noise-free
            val_rng = np.random.default_rng(config.seed + epoch)
            val_loss, _ = _epoch_loss(
                val_split, features, caption_vectors, state, crnn_config, config,
                val_rng, update=False,
            )
            seconds = time.monotonic() - started
            result.log.append(EpochRecord(epoch, train_loss, val_loss, state.current_lr, seconds))
            if writer is not None:
                writer.writerow(
                    [epoch, f"{train_loss:.10g}", f"{val_loss:.10g}", f"{state.current_lr:.10g}", f"{seconds:.3f}"]
                )
                log_fh.flush()

            if val_loss < state.best_val_loss - config.improvement_delta:
                state.best_val_loss = val_loss
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                state.plateau_counter = 0
                result.params = copy.deepcopy(state.params)
                result.buffers = copy.deepcopy(state.buffers)
                result.best_epoch = epoch
                result.best_val_loss = val_loss
            else:
                state.epochs_since_improvement += 1
                state.plateau_counter += 1
                if state.plateau_counter >= config.plateau_patience:
                    state.current_lr *= config.plateau_factor
                    state.plateau_counter = 0
                if state.epochs_since_improvement >= config.early_stop_patience:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    result.last_params = state.params
    result.last_buffers = state.buffers
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        meta = dict(checkpoint_meta or {})
        meta.update({"seed": config.seed, "best_epoch": result.best_epoch})
        save_checkpoint(checkpoint_dir / "best.ckpt", crnn_config, result.params, result.buffers, meta)
        save_checkpoint(
            checkpoint_dir / "last.ckpt", crnn_config, result.last_params, result.last_buffers, meta
        )
    return result
