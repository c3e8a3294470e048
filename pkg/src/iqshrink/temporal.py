"""LSTM temporal branch, width padding, and channel-axis fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError
from .tensor import core, kernels
from .tensor.nn import Module, glorot_uniform, orthogonal


@dataclass(frozen=True)
class TemporalConfig:
    units: int
    T: int
    input_dim: int = 2

    def __post_init__(self):
        if self.units < 2:
            raise ConfigError(f"LSTM units must be >= 2 to absorb the width-2 attention output, got {self.units}")


class LSTM(Module):
    """Single-layer LSTM returning the full hidden sequence.

    Gate order in the fused kernels is (input, forget, cell, output);
    initial states are zero; the forget-gate bias starts at 1.
    """

    def __init__(self, name, units, rng, dtype=np.float64, input_dim=2):
        super().__init__(name)
        self.units = units
        self.Wx = self.param("W_x", glorot_uniform(rng, (input_dim, 4 * units), input_dim, 4 * units, dtype))
        self.Wh = self.param("W_h", orthogonal(rng, units, 4 * units, dtype))
        b = np.zeros(4 * units, dtype=dtype)
        b[units : 2 * units] = 1.0
        self.b = self.param("b", b)

    def forward(self, x, mode="eval"):
        zx, self._xcache = core.matmul_forward(x, self.Wx.value)
        zx += self.b.value
        self._saved = kernels.lstm_sequence_forward(zx, self.Wh.value)
        return core.check_finite(self._saved[0], "lstm")

    def backward(self, dH):
        hs = self._saved[0]
        B, T, U = hs.shape
        dz = kernels.lstm_sequence_backward(dH, self._saved, self.Wh.value)
        h_prev = np.concatenate([np.zeros((B, 1, U), dtype=hs.dtype), hs[:, :-1]], axis=1)
        self.Wh.grad += h_prev.reshape(-1, U).T @ dz.reshape(-1, 4 * U)
        self.b.grad += dz.sum(axis=(0, 1))
        dx, dWx = core.matmul_backward(dz, self._xcache)
        self.Wx.grad += dWx
        return dx

    def flops(self, T: int) -> int:
        n_in = self.Wx.shape[0]
        return 2 * T * (n_in + self.units) * 4 * self.units


def pad_width(F: np.ndarray, units: int) -> np.ndarray:
    """Zero-pad the token axis of ``B x T x 2 x C`` out to ``units`` rows.

    The I and Q rows keep indices 0 and 1.
    """
    if units < 2:
        raise StructuralError(f"pad_width: units must be >= 2, got {units}")
    if F.ndim != 4 or F.shape[2] != 2:
        raise StructuralError(f"pad_width: expected B x T x 2 x C, got {F.shape}")
    B, T, _, C = F.shape
    out = np.zeros((B, T, units, C), dtype=F.dtype)
    out[:, :, :2] = F
    return out


def pad_width_backward(dout: np.ndarray) -> np.ndarray:
    return dout[:, :, :2]


def fuse_branches(F_padded: np.ndarray, H_lstm: np.ndarray) -> np.ndarray:
    """Concatenate on the channel axis; the LSTM channel goes last."""
    if H_lstm.ndim != 3 or F_padded.ndim != 4 or F_padded.shape[:3] != H_lstm.shape:
        raise StructuralError(f"fuse_branches: {F_padded.shape} and {H_lstm.shape} do not align on B x T x Units")
    return np.concatenate([F_padded, H_lstm[..., None]], axis=-1)


def fuse_branches_backward(dout: np.ndarray):
    return dout[..., :-1], dout[..., -1]
