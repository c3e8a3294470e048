"""Dense tensor primitives, layers, and gradient checking."""
from .core import (
    Parameter,
    activation_backward,
    activation_forward,
    batch_norm_backward,
    batch_norm_forward,
    check_finite,
    conv2d_backward,
    conv2d_forward,
    layer_norm_backward,
    layer_norm_forward,
    matmul_backward,
    matmul_forward,
    pool_global_backward,
    pool_global_forward,
    softmax_lastdim_backward,
    softmax_lastdim_forward,
)
from .gradcheck import GradCheckResult, grad_check

__all__ = [
    "Parameter",
    "GradCheckResult",
    "grad_check",
    "activation_backward",
    "activation_forward",
    "batch_norm_backward",
    "batch_norm_forward",
    "check_finite",
    "conv2d_backward",
    "conv2d_forward",
    "layer_norm_backward",
    "layer_norm_forward",
    "matmul_backward",
    "matmul_forward",
    "pool_global_backward",
    "pool_global_forward",
    "softmax_lastdim_backward",
    "softmax_lastdim_forward",
]
