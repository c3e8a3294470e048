"""Dense numeric primitives with hand-written backward passes.

Tensors are plain ``numpy.ndarray`` objects of rank at most 4.  Every
primitive comes as a ``*_forward`` / ``*_backward`` pair: the forward
returns ``(out, cache)`` and the backward maps the upstream gradient and
that cache to gradients of the inputs.  Primitives never broadcast beyond
what their signature states and raise :class:`NonFiniteError` as soon as a
non-finite value is produced.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..errors import ContractError, DimensionError, NonFiniteError

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.9

_SQRT_HALF = math.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(eq=False)
class Parameter:
    """A learnable array with its gradient buffer.

    ``decay`` marks kernels that receive L2 weight decay (conv and dense
    kernels outside the attention and LSTM internals).
    """

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    decay: bool = False

    def __post_init__(self):
        # In-place updates and finite-difference probes rely on flat views.
        self.value = np.ascontiguousarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise DimensionError(
                f"parameter {self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return int(self.value.size)

    def zero_grad(self):
        self.grad[...] = 0


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    # A single reduction is cheaper than isfinite().all() and still catches NaN/Inf.
    if not math.isfinite(float(np.sum(x))):
        if not np.all(np.isfinite(x)):
            bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
            raise NonFiniteError(f"{where}: {bad} non-finite value(s) in output of shape {np.shape(x)}")
    return x


# ---------------------------------------------------------------- matmul


def matmul_forward(a: np.ndarray, b: np.ndarray):
    """``a[..., k] @ b[k, n]``; leading extents of ``a`` are flattened."""
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    lead = a.shape[:-1]
    a2 = a.reshape(-1, a.shape[-1])
    out = (a2 @ b).reshape(*lead, b.shape[1])
    return check_finite(out, "matmul"), (a2, b, lead)


def matmul_backward(dout: np.ndarray, cache):
    a2, b, lead = cache
    d2 = dout.reshape(-1, b.shape[1])
    da = (d2 @ b.T).reshape(*lead, b.shape[0])
    db = a2.T @ d2
    return da, db


# --------------------------------------------------------------- softmax


def softmax_lastdim_forward(x: np.ndarray):
    if x.shape[-1] < 1:
        raise DimensionError(f"softmax: empty last dimension in shape {x.shape}")
    z = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / np.sum(e, axis=-1, keepdims=True)
    return check_finite(s, "softmax"), s


def softmax_lastdim_backward(dout: np.ndarray, cache):
    s = cache
    return s * (dout - np.sum(dout * s, axis=-1, keepdims=True))


# ------------------------------------------------------------ layer norm


def layer_norm_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = LN_EPS):
    n = x.shape[-1]
    if g.shape != (n,) or b.shape != (n,):
        raise DimensionError(f"layer_norm: gain {g.shape} / bias {b.shape} do not match last extent {n}")
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * g + b
    return check_finite(out, "layer_norm"), (xhat, inv, g)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv, g = cache
    n = xhat.shape[-1]
    axes = tuple(range(xhat.ndim - 1))
    dg = np.sum(dout * xhat, axis=axes)
    db = np.sum(dout, axis=axes)
    dxhat = dout * g
    dx = inv / n * (
        n * dxhat
        - np.sum(dxhat, axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dg, db


# ----------------------------------------------------------- activations

ACTIVATIONS = ("gelu", "relu", "sigmoid", "tanh")


def activation_forward(x: np.ndarray, kind: str):
    """Elementwise nonlinearity; GeLU is the exact ``x * Phi(x)`` form."""
    if kind == "gelu":
        cdf = 0.5 * (1.0 + special.erf(x * _SQRT_HALF))
        out = x * cdf
        cache = (kind, x, cdf)
    elif kind == "relu":
        out = np.maximum(x, 0)
        cache = (kind, x, None)
    elif kind == "sigmoid":
        out = special.expit(x)
        cache = (kind, None, out)
    elif kind == "tanh":
        out = np.tanh(x)
        cache = (kind, None, out)
    else:
        raise ContractError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")
    return check_finite(out, kind), cache


def activation_backward(dout: np.ndarray, cache):
    kind, x, aux = cache
    if kind == "gelu":
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return dout * (aux + x * pdf)
    if kind == "relu":
        return dout * (x > 0)
    if kind == "sigmoid":
        return dout * aux * (1 - aux)
    return dout * (1 - aux * aux)


# ----------------------------------------------------------------- conv2d


def same_padding(n: int, k: int, stride: int):
    """Return ``(out, pad_lo, pad_hi)``; the odd leftover pad goes high."""
    out = -(-n // stride)
    total = max((out - 1) * stride + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, stride: int = 1, pad: str = "same"):
    """Channels-last 2-D convolution (cross-correlation), one matmul per kernel tap.

    ``x`` is ``B x H x W x Cin`` and ``kernel`` is ``kh x kw x Cin x Cout``.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected rank-4 input and kernel, got {x.shape} and {kernel.shape}")
    B, H, W, cin = x.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input channels {cin} (shape {x.shape}) != kernel channels {kcin} (shape {kernel.shape})")
    if stride not in (1, 2):
        raise ContractError(f"conv2d: stride must be 1 or 2, got {stride}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if pad == "same":
        ho, plh, phh = same_padding(H, kh, stride)
        wo, plw, phw = same_padding(W, kw, stride)
    elif pad == "valid":
        if H < kh or W < kw:
            raise DimensionError(f"conv2d: valid padding needs input {H}x{W} >= kernel {kh}x{kw}")
        ho, wo = (H - kh) // stride + 1, (W - kw) // stride + 1
        plh = phh = plw = phw = 0
    else:
        raise ContractError(f"conv2d: pad must be 'same' or 'valid', got {pad!r}")

    if plh or phh or plw or phw:
        xp = np.pad(x, ((0, 0), (plh, phh), (plw, phw), (0, 0)))
    else:
        xp = x
    out = np.zeros((B, ho, wo, cout), dtype=np.result_type(x, kernel))
    for i in range(kh):
        for j in range(kw):
            out += _window(xp, i, j, stride, ho, wo) @ kernel[i, j]
    geom = (x.shape, (plh, plw), stride, (ho, wo))
    return check_finite(out, "conv2d"), (xp, kernel, geom)


def _window(xp, i, j, stride, ho, wo):
    return xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]


def conv2d_backward(dout: np.ndarray, cache):
    xp, kernel, geom = cache
    (B, H, W, cin), (plh, plw), stride, (ho, wo) = geom
    kh, kw, _, cout = kernel.shape
    d2 = np.ascontiguousarray(dout).reshape(-1, cout)
    dkernel = np.empty_like(kernel)
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            win = _window(xp, i, j, stride, ho, wo)
            dkernel[i, j] = np.ascontiguousarray(win).reshape(-1, cin).T @ d2
            _window(dxp, i, j, stride, ho, wo)[...] += (d2 @ kernel[i, j].T).reshape(B, ho, wo, cin)
    return dxp[:, plh : plh + H, plw : plw + W, :], dkernel


# ------------------------------------------------------- global pooling


def pool_global_forward(x: np.ndarray, kind: str):
    if x.ndim != 4:
        raise DimensionError(f"pool_global: expected B x H x W x C, got {x.shape}")
    B, H, W, C = x.shape
    if H * W < 1:
        raise DimensionError("pool_global: empty spatial extent")
    if kind == "average":
        return x.mean(axis=(1, 2)), (kind, x.shape, None)
    if kind == "max":
        flat = x.reshape(B, H * W, C)
        idx = np.argmax(flat, axis=1)  # first maximum in scan order
        out = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
        return out, (kind, x.shape, idx)
    raise ContractError(f"pool_global: kind must be 'average' or 'max', got {kind!r}")


def pool_global_backward(dout: np.ndarray, cache):
    kind, shape, idx = cache
    B, H, W, C = shape
    if kind == "average":
        return np.broadcast_to((dout / (H * W))[:, None, None, :], shape).copy()
    dx = np.zeros((B, H * W, C), dtype=dout.dtype)
    np.put_along_axis(dx, idx[:, None, :], dout[:, None, :], axis=1)
    return dx.reshape(shape)


# ------------------------------------------------------------ batch norm


def channel_sum(x: np.ndarray) -> np.ndarray:
    """Sum over every axis but the last, as a BLAS vector-matrix product."""
    x2 = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    return np.ones(x2.shape[0], dtype=x2.dtype) @ x2


def batch_norm_forward(
    x: np.ndarray,
    scale: np.ndarray,
    offset: np.ndarray,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
):
    """Per-channel (last axis) batch normalisation.

    Training mode normalises by the biased batch statistics and updates the
    running buffers in place: ``r <- momentum * r + (1 - momentum) * stat``.
    Evaluation mode reads the running buffers only; before any training
    step they hold their initial (0, 1) values.
    """
    c = x.shape[-1]
    for name, v in (("scale", scale), ("offset", offset), ("running_mean", running_mean), ("running_var", running_var)):
        if v.shape != (c,):
            raise DimensionError(f"batch_norm: {name} shape {v.shape} does not match channels {c}")
    if not 0.0 < momentum < 1.0:
        raise ContractError(f"batch_norm: momentum must be in (0, 1), got {momentum}")
    if mode == "train":
        n = x.size // c
        mu = channel_sum(x) / n
        xc = x - mu
        var = channel_sum(xc * xc) / n
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    elif mode == "eval":
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (x - running_mean) * inv
    else:
        raise ContractError(f"batch_norm: mode must be 'train' or 'eval', got {mode!r}")
    out = xhat * scale + offset
    return check_finite(out, "batch_norm"), (mode, xhat, inv, scale)


def batch_norm_backward(dout: np.ndarray, cache):
    mode, xhat, inv, scale = cache
    dscale = channel_sum(dout * xhat)
    doffset = channel_sum(dout)
    if mode == "eval":
        return dout * (scale * inv), dscale, doffset
    m = xhat.size // xhat.shape[-1]
    # The sums of dxhat and dxhat*xhat are scale times doffset and dscale.
    dx = (scale * inv / m) * (m * dout - doffset - xhat * dscale)
    return dx, dscale, doffset
