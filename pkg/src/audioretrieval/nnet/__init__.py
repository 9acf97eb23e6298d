"""Minimal differentiable-layer kernel for the CRNN audio encoder.

Every layer is a pair of pure functions: ``*_forward(...) -> (out, cache)``
and ``*_backward(d_out, cache) -> gradients``. All math is float64; analytic
backward passes are validated against central finite differences in the test
suite.
"""

from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    dropout_backward,
    dropout_forward,
    leaky_relu_backward,
    leaky_relu_forward,
    lp_pool_time_backward,
    lp_pool_time_forward,
    masked_reverse_time,
    masked_time_mean,
    masked_time_mean_backward,
    upsample_time,
    upsample_time_backward,
)
from .gru import bigru_backward, bigru_forward, gru_backward, gru_forward
from .crnn import (
    CrnnConfig,
    crnn_backward,
    crnn_forward,
    init_crnn,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "CrnnConfig",
    "batchnorm_backward",
    "batchnorm_forward",
    "bigru_backward",
    "bigru_forward",
    "conv2d_backward",
    "conv2d_forward",
    "crnn_backward",
    "crnn_forward",
    "dropout_backward",
    "dropout_forward",
    "gru_backward",
    "gru_forward",
    "init_crnn",
    "leaky_relu_backward",
    "leaky_relu_forward",
    "load_checkpoint",
    "lp_pool_time_backward",
    "lp_pool_time_forward",
    "masked_reverse_time",
    "masked_time_mean",
    "masked_time_mean_backward",
    "save_checkpoint",
    "upsample_time",
    "upsample_time_backward",
]
