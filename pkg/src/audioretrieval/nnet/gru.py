"""Gated recurrent unit, single-direction scan and bidirectional wrapper.

Cell (update gate z, reset gate r, candidate hc):

    z  = sigmoid(x W_z' + h U_z' + b_z)
    r  = sigmoid(x W_r' + h U_r' + b_r)
    hc = tanh(x W_h' + (r*h) U_h' + b_h)
    h' = (1 - z) * hc + z * h

Parameters per direction: w_z/w_r/w_h (H,D), u_z/u_r/u_h (H,H), b_z/b_r/b_h (H,).
The backward pass is exact backpropagation through time.
"""

import numpy as np

from ..errors import ShapeMismatch
from .layers import masked_reverse_time

GRU_PARAM_KEYS = ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_gru_params(p, d_in):
    h = p["b_z"].shape[0]
    for key in GRU_PARAM_KEYS:
        want = {
            "w": (h, d_in),
            "u": (h, h),
            "b": (h,),
        }[key[0]]
        if p[key].shape != want:
            raise ShapeMismatch(f"gru: parameter {key} has shape {p[key].shape}, want {want}")
    return h


def gru_forward(x, p):
    """Scan a (N,T,D) sequence; returns ((N,T,H) states, cache)."""
    if x.ndim != 3:
        raise ShapeMismatch(f"gru: need (N,T,D) input, got {x.shape}")
    n, t, d = x.shape
    h_dim = _check_gru_params(p, d)
    h = np.zeros((n, h_dim))
    states = np.empty((n, t, h_dim))
    steps = []
    for i in range(t):
        xt = x[:, i]
        z = _sigmoid(xt @ p["w_z"].T + h @ p["u_z"].T + p["b_z"])
        r = _sigmoid(xt @ p["w_r"].T + h @ p["u_r"].T + p["b_r"])
        rh = r * h
        hc = np.tanh(xt @ p["w_h"].T + rh @ p["u_h"].T + p["b_h"])
        h_new = (1.0 - z) * hc + z * h
        steps.append((xt, h, z, r, rh, hc))
        states[:, i] = h_new
        h = h_new
    return states, (steps, p, x.shape)


def gru_backward(d_states, cache):
    """BPTT. Returns (d_x, grads dict keyed like the parameter dict)."""
    steps, p, xshape = cache
    n, t, d = xshape
    grads = {k: np.zeros_like(p[k]) for k in GRU_PARAM_KEYS}
    d_x = np.zeros(xshape)
    d_h = np.zeros((n, p["b_z"].shape[0]))
    for i in range(t - 1, -1, -1):
        xt, h_prev, z, r, rh, hc = steps[i]
        d_h = d_h + d_states[:, i]
        d_z = d_h * (h_prev - hc)
        d_hc = d_h * (1.0 - z)
        d_hprev = d_h * z

        d_ah = d_hc * (1.0 - hc * hc)
        grads["w_h"] += d_ah.T @ xt
        grads["u_h"] += d_ah.T @ rh
        grads["b_h"] += d_ah.sum(axis=0)
        d_rh = d_ah @ p["u_h"]
        d_r = d_rh * h_prev
        d_hprev += d_rh * r

        d_az = d_z * z * (1.0 - z)
        grads["w_z"] += d_az.T @ xt
        grads["u_z"] += d_az.T @ h_prev
        grads["b_z"] += d_az.sum(axis=0)

        d_ar = d_r * r * (1.0 - r)
        grads["w_r"] += d_ar.T @ xt
        grads["u_r"] += d_ar.T @ h_prev
        grads["b_r"] += d_ar.sum(axis=0)

        d_hprev += d_az @ p["u_z"] + d_ar @ p["u_r"]
        d_x[:, i] = d_az @ p["w_z"] + d_ar @ p["w_r"] + d_ah @ p["w_h"]
        d_h = d_hprev
    return d_x, grads


def bigru_forward(x, p_fwd, p_bwd, lengths=None):
    """Bidirectional GRU; output (N,T,2H) concatenates the two directions.

    With ``lengths``, the backward direction scans each sequence's valid
    prefix in reverse so that trailing pad steps never contaminate valid
    outputs; outputs at pad steps are unspecified and must be masked by the
    caller.
    """
    fwd, cache_f = gru_forward(x, p_fwd)
    x_rev = masked_reverse_time(x, lengths)
    bwd_rev, cache_b = gru_forward(x_rev, p_bwd)
    bwd = masked_reverse_time(bwd_rev, lengths)
    out = np.concatenate([fwd, bwd], axis=2)
    return out, (cache_f, cache_b, lengths, p_fwd["b_z"].shape[0])


def bigru_backward(d_out, cache):
    """Returns (d_x, grads_fwd, grads_bwd)."""
    cache_f, cache_b, lengths, h_dim = cache
    d_fwd = d_out[:, :, :h_dim]
    d_bwd = d_out[:, :, h_dim:]
    d_x_f, grads_f = gru_backward(d_fwd, cache_f)
    d_x_b_rev, grads_b = gru_backward(masked_reverse_time(d_bwd, lengths), cache_b)
    d_x = d_x_f + masked_reverse_time(d_x_b_rev, lengths)
    return d_x, grads_f, grads_b
