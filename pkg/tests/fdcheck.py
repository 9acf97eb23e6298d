"""Central finite-difference gradient checking used across the nnet tests.

The analytic backward pass under test supplies gradients of a scalar probe
f = sum(out * weights); the numeric side recomputes f after +/- h nudges of
every coordinate. Relative error uses a small denominator floor so that
near-zero gradients degrade to an absolute tolerance instead of dividing by
noise.
"""

import numpy as np

H_STEP = 1e-5
REL_TOL = 1e-5
_DENOM_FLOOR = 1e-3


def numeric_grad(f, x, h=H_STEP):
    """Central finite differences of scalar f() w.r.t. array x (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_err(analytic, numeric):
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), _DENOM_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads(f, arrays_and_analytic, h=H_STEP):
    """Max relative error over a list of (array, analytic_grad) pairs."""
    worst = 0.0
    for arr, analytic in arrays_and_analytic:
        numeric = numeric_grad(f, arr, h=h)
        worst = max(worst, max_rel_err(analytic, numeric))
    return worst
