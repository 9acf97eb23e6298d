"""Feed-forward layers of the audio encoder, with analytic backward passes.

Tensor layout is (N, C, T, F) for convolutional stages and (N, T, D) for
sequence stages. Caches returned by the forward functions are opaque tuples
consumed by the matching backward function.
"""

import numpy as np

from ..errors import DegenerateBatch, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


# ---------------------------------------------------------------------------
# 3x3 padded convolution (stride 1, shape-preserving cross-correlation)
# ---------------------------------------------------------------------------

def conv2d_forward(x, w, b):
    """x (N,C,T,F) * w (O,C,3,3) + b (O,) -> (N,O,T,F)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d: need 4-D input/kernel, got {x.shape} and {w.shape}")
    n, c, t, f = x.shape
    o = w.shape[0]
    if w.shape[1] != c or w.shape[2:] != (3, 3):
        raise ShapeMismatch(f"conv2d: kernel {w.shape} incompatible with input {x.shape}")
    if b.shape != (o,):
        raise ShapeMismatch(f"conv2d: bias {b.shape} incompatible with kernel {w.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.empty((n, o, t, f))
    acc = np.zeros((o, n, t, f))
    for i in range(3):
        for j in range(3):
            # contract channels: (O,C) x (N,C,T,F) -> (O,N,T,F)
            acc += np.tensordot(w[:, :, i, j], xp[:, :, i : i + t, j : j + f], axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3) + b[None, :, None, None]
    return out, (xp, w, x.shape)


def conv2d_backward(d_out, cache):
    """Returns (d_x, d_w, d_b)."""
    xp, w, xshape = cache
    n, c, t, f = xshape
    d_w = np.empty_like(w)
    d_xp = np.zeros_like(xp)
    for i in range(3):
        for j in range(3):
            patch = xp[:, :, i : i + t, j : j + f]
            # (N,O,T,F) x (N,C,T,F) -> (O,C)
            d_w[:, :, i, j] = np.tensordot(d_out, patch, axes=([0, 2, 3], [0, 2, 3]))
            # (C,O) x (N,O,T,F) -> (C,N,T,F)
            d_xp[:, :, i : i + t, j : j + f] += np.tensordot(
                w[:, :, i, j], d_out, axes=([0], [1])
            ).transpose(1, 0, 2, 3)
    d_b = d_out.sum(axis=(0, 2, 3))
    return d_xp[:, :, 1 : t + 1, 1 : f + 1], d_w, d_b


# ---------------------------------------------------------------------------
# Batch normalization (per channel over N, T, F)
# ---------------------------------------------------------------------------

def batchnorm_forward(
    x, gamma, beta, running_mean, running_var, mode, momentum=BN_MOMENTUM, eps=BN_EPS
):
    """Normalize per channel; batch statistics in train mode, running in eval.

    Train mode updates ``running_mean``/``running_var`` in place with
    ``momentum * old + (1 - momentum) * batch``.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"batchnorm: need (N,C,T,F), got {x.shape}")
    axes = (0, 2, 3)
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m == 1:
            raise DegenerateBatch("batchnorm: train mode needs more than one element per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    elif mode == "eval":
        m = None
        mean, var = running_mean, running_var
    else:
        raise ValueError(f"batchnorm: mode must be 'train' or 'eval', got {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, mode, m)


def batchnorm_backward(d_out, cache):
    """Returns (d_x, d_gamma, d_beta); train mode backpropagates through the stats."""
    xhat, inv_std, gamma, mode, m = cache
    axes = (0, 2, 3)
    d_gamma = (d_out * xhat).sum(axis=axes)
    d_beta = d_out.sum(axis=axes)
    d_xhat = d_out * gamma[None, :, None, None]
    scale = inv_std[None, :, None, None]
    if mode == "eval":
        return d_xhat * scale, d_gamma, d_beta
    sum_d = d_xhat.sum(axis=axes)[None, :, None, None]
    sum_dx = (d_xhat * xhat).sum(axis=axes)[None, :, None, None]
    d_x = (scale / m) * (m * d_xhat - sum_d - xhat * sum_dx)
    return d_x, d_gamma, d_beta


# ---------------------------------------------------------------------------
# LeakyReLU (slope applied to the negative half)
# ---------------------------------------------------------------------------

def leaky_relu_forward(x, slope=0.1):
    pos = x > 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(d_out, cache):
    pos, slope = cache
    return d_out * np.where(pos, 1.0, slope)


# ---------------------------------------------------------------------------
# Lp subsampling along time (p-th power mean over stride-p windows, on |v|)
# ---------------------------------------------------------------------------

def lp_pool_time_forward(x, p=4, factor=4, lengths=None):
    """(N,C,T,F) -> (N,C,ceil(T/factor),F); windows average over their true
    width, so a ragged tail divides by its own element count.

    With ``lengths``, each sequence's window widths follow its own valid
    length (entries beyond it must already be zero); windows entirely past the
    valid region yield 0.
    """
    n, c, t, f = x.shape
    t_out = -(-t // factor)
    pad = t_out * factor - t
    a = np.abs(x) ** p
    if pad:
        a = np.pad(a, ((0, 0), (0, 0), (0, pad), (0, 0)))
    sums = a.reshape(n, c, t_out, factor, f).sum(axis=3)
    if lengths is None:
        lengths = np.full(n, t, dtype=np.int64)
    counts = np.clip(
        np.asarray(lengths)[:, None] - factor * np.arange(t_out)[None, :], 0, factor
    ).astype(np.float64)[:, None, :, None]
    mean = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    out = mean ** (1.0 / p)
    return out, (x, out, counts, p, factor)


def lp_pool_time_backward(d_out, cache):
    """d v_j = d_out * sign(v_j) |v_j|^(p-1) / (count * out^(p-1)); 0 where out is 0."""
    x, out, counts, p, factor = cache
    n, c, t, f = x.shape
    denom = counts * out ** (p - 1)
    scale = np.divide(d_out, denom, out=np.zeros_like(d_out), where=denom != 0.0)
    expanded = np.repeat(scale, factor, axis=2)[:, :, :t, :]
    return expanded * np.sign(x) * np.abs(x) ** (p - 1)


# ---------------------------------------------------------------------------
# Dropout (inverted; eval mode is the identity)
# ---------------------------------------------------------------------------

def dropout_forward(x, rate, mode, rng=None):
    """Inverted dropout: kept units are scaled by 1/(1-rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) >= rate) / keep
    return x * mask, mask


def dropout_backward(d_out, cache):
    if cache is None:
        return d_out
    return d_out * cache


# ---------------------------------------------------------------------------
# Nearest-neighbor temporal upsampling back to the encoder input length
# ---------------------------------------------------------------------------

def upsample_time(x, factor, target_t):
    """Repeat each step ``factor`` times along time (axis 1), then truncate or
    extend with the last step so the output has exactly ``target_t`` steps."""
    t_in = x.shape[1]
    src = np.minimum(np.arange(target_t) // factor, t_in - 1)
    return x[:, src], src


def upsample_time_backward(d_out, src, t_in):
    d_x = np.zeros((d_out.shape[0], t_in) + d_out.shape[2:])
    np.add.at(d_x, (slice(None), src), d_out)
    return d_x


# ---------------------------------------------------------------------------
# Length-masked helpers for padded batches
# ---------------------------------------------------------------------------

def masked_reverse_time(x, lengths=None):
    """Reverse each sequence's first ``lengths[i]`` steps along axis 1,
    leaving pad steps in place. Involution: applying it twice is the identity."""
    if lengths is None:
        return x[:, ::-1]
    out = x.copy()
    for i, n in enumerate(lengths):
        out[i, :n] = x[i, n - 1 :: -1]
    return out


def masked_time_mean(x, lengths=None):
    """Mean over each sequence's valid steps: (N,T,D) -> (N,D)."""
    if lengths is None:
        return x.mean(axis=1)
    n, t, _ = x.shape
    mask = np.arange(t)[None, :] < np.asarray(lengths)[:, None]
    return (x * mask[:, :, None]).sum(axis=1) / np.asarray(lengths, dtype=np.float64)[:, None]


def masked_time_mean_backward(d_out, t, lengths=None):
    """Spread d_out (N,D) uniformly over each sequence's valid steps."""
    n, d = d_out.shape
    if lengths is None:
        return np.broadcast_to(d_out[:, None, :] / t, (n, t, d)).copy()
    lengths = np.asarray(lengths, dtype=np.float64)
    mask = np.arange(t)[None, :] < lengths[:, None]
    return (d_out / lengths[:, None])[:, None, :] * mask[:, :, None]
