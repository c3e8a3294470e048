"""Hot kernels with a compiled backend and a numpy fallback.

Two kernel families live here: the per-channel garrote used inside the
shrinkage blocks, and the LSTM recurrence over a whole sequence.  The
compiled extension ``iqshrink.tensor._ckernels`` is picked at import when
it was built; ``IQSHRINK_BACKEND=python`` forces the numpy versions.

The LSTM forward stays on numpy even when the extension is present: its
step is dominated by the gate transcendentals, which numpy vectorises and
the scalar loop cannot (see ``benchmarks/bench_kernels.py``).  The LSTM
caches are plain arrays, so the compiled backward accepts them unchanged.

Both backends evaluate the same expressions in the same order.  Garrote
outputs agree bit for bit; reductions (the threshold gradient, the LSTM
recurrent matmul) and libm transcendentals may differ by a few ulp.
"""
from __future__ import annotations

import os

import numpy as np
from scipy import special

GARROTE_EPS = 1e-6


def garrote_elementwise(x: np.ndarray, t):
    """``y`` and the pieces ``(active, q)`` needed for the derivative."""
    den = x + x.dtype.type(GARROTE_EPS)
    active = np.abs(x) >= t
    live = active & (den != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.where(live, x - (t * t) / den, np.where(active, x, 0)).astype(x.dtype, copy=False)
        q = np.where(live, t / den, 0).astype(x.dtype, copy=False)
    return y, active, q


def _np_garrote_channel_forward(u: np.ndarray, t: np.ndarray):
    """Garrote ``u`` (``B x H x W x C``) with one threshold per (sample, channel)."""
    y, active, q = garrote_elementwise(u, t[:, None, None, :].astype(u.dtype, copy=False))
    return y, (active, q)


def _np_garrote_channel_backward(dy: np.ndarray, cache):
    active, q = cache
    g = np.where(active, dy, 0).astype(dy.dtype, copy=False)
    du = g + g * (q * q)
    dt = (-2 * g * q).sum(axis=(1, 2))
    return du, dt


def _np_lstm_sequence_forward(zx: np.ndarray, Wh: np.ndarray):
    """Run the recurrence given input pre-activations ``zx`` (``B x T x 4U``).

    Gate order is (input, forget, cell, output); initial states are zero.
    Returns ``(hs, cs, gates, tanh(cs))`` with gates stored post-activation.
    """
    B, T, G = zx.shape
    U = Wh.shape[0]
    hs = np.empty((B, T, U), dtype=zx.dtype)
    cs = np.empty_like(hs)
    tcs = np.empty_like(hs)
    gates = np.empty((B, T, G), dtype=zx.dtype)
    c = np.zeros((B, U), dtype=zx.dtype)
    for t in range(T):
        z = zx[:, t] + hs[:, t - 1] @ Wh if t else zx[:, t].copy()
        z[:, : 2 * U] = special.expit(z[:, : 2 * U])
        z[:, 2 * U : 3 * U] = np.tanh(z[:, 2 * U : 3 * U])
        z[:, 3 * U :] = special.expit(z[:, 3 * U :])
        c = z[:, U : 2 * U] * c + z[:, :U] * z[:, 2 * U : 3 * U]
        tcs[:, t] = np.tanh(c)
        cs[:, t] = c
        hs[:, t] = z[:, 3 * U :] * tcs[:, t]
        gates[:, t] = z
    return hs, cs, gates, tcs


def _np_lstm_sequence_backward(dH: np.ndarray, saved, Wh: np.ndarray):
    """Gradient w.r.t. the pre-activations ``zx``, shape ``B x T x 4U``."""
    hs, cs, gates, tcs = saved
    B, T, U = hs.shape
    dz = np.empty_like(gates)
    dh_next = np.zeros((B, U), dtype=hs.dtype)
    dc_next = np.zeros((B, U), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        ga = gates[:, t]
        i, f, g, o = ga[:, :U], ga[:, U : 2 * U], ga[:, 2 * U : 3 * U], ga[:, 3 * U :]
        tc = tcs[:, t]
        c_prev = cs[:, t - 1] if t else np.zeros((B, U), dtype=hs.dtype)
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * o * (1 - tc * tc)
        d = dz[:, t]
        d[:, :U] = dc * g * i * (1 - i)
        d[:, U : 2 * U] = dc * c_prev * f * (1 - f)
        d[:, 2 * U : 3 * U] = dc * i * (1 - g * g)
        d[:, 3 * U :] = dh * tc * o * (1 - o)
        dc_next = dc * f
        dh_next = d @ Wh.T
    return dz


BACKEND = "python"
garrote_channel_forward = _np_garrote_channel_forward
garrote_channel_backward = _np_garrote_channel_backward
lstm_sequence_forward = _np_lstm_sequence_forward
lstm_sequence_backward = _np_lstm_sequence_backward

if os.environ.get("IQSHRINK_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        _ckernels = None
    if _ckernels is not None:
        BACKEND = "compiled"
        garrote_channel_forward = _ckernels.garrote_channel_forward
        garrote_channel_backward = _ckernels.garrote_channel_backward
        lstm_sequence_backward = _ckernels.lstm_sequence_backward
