"""Garrote shrinkage and the dual-path residual shrinkage blocks.

Each block learns a per-channel threshold
``t = kappa * (gamma * alpha + (1 - gamma) * beta)``, where ``alpha`` comes
from global average pooling of ``|u|`` and ``beta`` from global max
pooling, each squeezed through a small dense/BN/ReLU/dense/sigmoid path.
``gamma = logistic(gamma_raw)`` and ``kappa = softplus(kappa_raw)`` keep
the combination convex and the scale nonnegative for any raw value.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import ContractError, StructuralError
from .tensor import core, kernels, nn
from .tensor.nn import Activation, BatchNorm, Conv2d, Dense, Module

GARROTE_EPS = 1e-6
# Hidden width of the GAP/GMP dense paths is channels // SQUEEZE.
SQUEEZE = 2


def _validate_threshold(threshold):
    t = np.asarray(threshold)
    if np.any(t < 0):
        raise ContractError("garrote: threshold must be nonnegative")
    return t


def garrote_apply(x: np.ndarray, threshold) -> np.ndarray:
    """``0`` where ``|x| < t``, else ``x - t^2 / (x + 1e-6)``.

    ``threshold`` broadcasts against ``x`` (per channel on the last axis).
    """
    t = _validate_threshold(threshold)
    y, _, _ = kernels.garrote_elementwise(np.asarray(x), t.astype(np.result_type(x), copy=False))
    return core.check_finite(y, "garrote")


def garrote_derivative(x: np.ndarray, threshold) -> np.ndarray:
    """``dy/dx``: ``0`` in the dead zone, ``1 + t^2 / (x + 1e-6)^2`` elsewhere."""
    t = _validate_threshold(threshold)
    t2 = np.broadcast_to(t, x.shape) ** 2
    den = x + GARROTE_EPS
    active = np.abs(x) >= t
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(active, 1.0 + np.where(den != 0, t2 / (den * den), 0.0), 0.0)
    return slope.astype(x.dtype, copy=False)


def softplus(z):
    return np.logaddexp(0.0, z)


def softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


class ThresholdPath(Module):
    """dense -> BN -> ReLU -> dense -> sigmoid, mapping C pooled values into (0, 1)."""

    def __init__(self, name, c, rng, dtype=np.float64):
        super().__init__(name)
        hidden = max(1, c // SQUEEZE)
        self.fc1 = self.child(Dense(f"{name}.fc1", c, hidden, rng, dtype))
        self.bn = self.child(BatchNorm(f"{name}.bn", hidden, dtype))
        self.relu = self.child(Activation(f"{name}.relu", "relu"))
        self.fc2 = self.child(Dense(f"{name}.fc2", hidden, c, rng, dtype))
        self.sig = self.child(Activation(f"{name}.sigmoid", "sigmoid"))

    def forward(self, s, mode="eval"):
        z = self.fc1.forward(s)
        z = self.relu.forward(self.bn.forward(z, mode))
        return self.sig.forward(self.fc2.forward(z))

    def backward(self, dy):
        dz = self.fc2.backward(self.sig.backward(dy))
        return self.fc1.backward(self.bn.backward(self.relu.backward(dz)))

    def flops(self) -> int:
        return self.fc1.flops(1) + self.fc2.flops(1)


class AdaptiveThreshold(Module):
    """Per-sample, per-channel garrote threshold from ``|features|``."""

    def __init__(self, name, c, rng, dtype=np.float64):
        super().__init__(name)
        self.gamma_raw = self.param("gamma_raw", np.zeros(1, dtype=dtype))
        self.kappa_raw = self.param("kappa_raw", np.full(1, softplus_inverse(1.0), dtype=dtype))
        self.gap_path = self.child(ThresholdPath(f"{name}.gap", c, rng, dtype))
        self.gmp_path = self.child(ThresholdPath(f"{name}.gmp", c, rng, dtype))
        self.alpha = self.beta = None
        self.margin = None

    @property
    def gamma(self) -> float:
        return float(special.expit(self.gamma_raw.value[0]))

    @property
    def kappa(self) -> float:
        return float(softplus(self.kappa_raw.value[0]))

    def forward(self, u, mode="eval"):
        a = np.abs(u)
        gap, self._avg = core.pool_global_forward(a, "average")
        gmp, self._max = core.pool_global_forward(a, "max")
        alpha = self.gap_path.forward(gap, mode)
        beta = self.gmp_path.forward(gmp, mode)
        g = special.expit(self.gamma_raw.value)
        k = softplus(self.kappa_raw.value)
        mix = g * alpha + (1 - g) * beta
        self.alpha, self.beta = alpha, beta
        self._saved = (u, g, k, alpha, beta, mix)
        if nn.TRACK_MARGINS:
            B, H, W, C = a.shape
            top2 = np.sort(a.reshape(B, H * W, C), axis=1)[:, -2:, :] if H * W > 1 else None
            gap_ties = float(np.min(top2[:, 1] - top2[:, 0])) if top2 is not None else math.inf
            self.margin = min(float(np.min(a)), gap_ties)
        return k * mix

    def backward(self, dt):
        u, g, k, alpha, beta, mix = self._saved
        self.kappa_raw.grad += np.sum(dt * mix) * special.expit(self.kappa_raw.value)
        self.gamma_raw.grad += np.sum(dt * k * (alpha - beta)) * g * (1 - g)
        dgap = self.gap_path.backward(dt * k * g)
        dgmp = self.gmp_path.backward(dt * k * (1 - g))
        da = core.pool_global_backward(dgap, self._avg) + core.pool_global_backward(dgmp, self._max)
        return da * np.sign(u)

    def flops(self) -> int:
        return self.gap_path.flops() + self.gmp_path.flops()


class ShrinkBlock(Module):
    """Residual conv path whose output is garrote-shrunk before the skip add.

    Block A (``downsample=False``) keeps ``B x H x W x C`` and uses an
    identity skip.  Block B halves H and W (ceil rule) and doubles the
    channels; its skip is a strided 1x1 convolution.
    """

    def __init__(self, name, c_in, rng, dtype=np.float64, downsample=False):
        super().__init__(name)
        self.downsample = downsample
        stride = 2 if downsample else 1
        c_out = 2 * c_in if downsample else c_in
        self.c_in, self.c_out = c_in, c_out
        self.conv1 = self.child(Conv2d(f"{name}.conv1", c_in, c_out, 3, rng, dtype, stride=stride))
        self.bn1 = self.child(BatchNorm(f"{name}.bn1", c_out, dtype))
        self.relu = self.child(Activation(f"{name}.relu", "relu"))
        self.conv2 = self.child(Conv2d(f"{name}.conv2", c_out, c_out, 3, rng, dtype))
        self.bn2 = self.child(BatchNorm(f"{name}.bn2", c_out, dtype))
        self.threshold = self.child(AdaptiveThreshold(f"{name}.threshold", c_out, rng, dtype))
        self.shortcut = (
            self.child(Conv2d(f"{name}.shortcut", c_in, c_out, 1, rng, dtype, stride=2)) if downsample else None
        )
        self.last_threshold = None
        self.margin = None

    def forward(self, x, mode="eval"):
        if x.ndim != 4 or x.shape[-1] != self.c_in:
            raise StructuralError(f"{self.name}: expected B x H x W x {self.c_in}, got {x.shape}")
        if self.downsample and (x.shape[1] < 2 or x.shape[2] < 2):
            raise StructuralError(f"{self.name}: block B needs H, W >= 2, got {x.shape[1]}x{x.shape[2]}")
        u = self.bn1.forward(self.conv1.forward(x), mode)
        u = self.bn2.forward(self.conv2.forward(self.relu.forward(u)), mode)
        t = self.threshold.forward(u, mode)
        self.last_threshold = t
        y, self._g = kernels.garrote_channel_forward(u, t)
        core.check_finite(y, f"{self.name}.garrote")
        if nn.TRACK_MARGINS:
            self.margin = float(np.min(np.abs(np.abs(u) - t[:, None, None, :])))
        skip = self.shortcut.forward(x) if self.shortcut is not None else x
        return y + skip

    def backward(self, dy):
        du, dt = kernels.garrote_channel_backward(dy, self._g)
        du = du + self.threshold.backward(dt)
        du = self.bn2.backward(du)
        du = self.conv1.backward(self.bn1.backward(self.relu.backward(self.conv2.backward(du))))
        if self.shortcut is not None:
            du = du + self.shortcut.backward(dy)
        else:
            du = du + dy
        return du

    def out_shape(self, h: int, w: int):
        if self.downsample:
            return -(-h // 2), -(-w // 2), self.c_out
        return h, w, self.c_out

    def flops(self, h: int, w: int) -> int:
        ho, wo, _ = self.out_shape(h, w)
        total = self.conv1.flops(h, w) + self.conv2.flops(ho, wo) + self.threshold.flops()
        if self.shortcut is not None:
            total += self.shortcut.flops(h, w)
        return total


def shrink_block_a(name, c, rng, dtype=np.float64) -> ShrinkBlock:
    return ShrinkBlock(name, c, rng, dtype, downsample=False)


def shrink_block_b(name, c, rng, dtype=np.float64) -> ShrinkBlock:
    return ShrinkBlock(name, c, rng, dtype, downsample=True)
