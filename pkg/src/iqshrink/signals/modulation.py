"""Baseband digital modulators, RRC pulse shaping and AWGN."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ContractError, EnumerationError

SCHEMES = ("OOK", "4ASK", "BPSK", "QPSK", "8PSK", "16QAM")


def gray(n: int) -> int:
    return n ^ (n >> 1)


@lru_cache(maxsize=None)
def _constellation(scheme: str):
    if scheme == "OOK":
        pts = np.array([0.0, 1.0], dtype=complex)
    elif scheme == "BPSK":
        pts = np.array([1.0, -1.0], dtype=complex)
    elif scheme == "4ASK":
        # Bipolar levels -3, -1, 1, 3 in Gray order.
        pts = np.empty(4, dtype=complex)
        for k, level in enumerate((-3, -1, 1, 3)):
            pts[gray(k)] = level
        pts /= math.sqrt(5.0)
    elif scheme == "QPSK":
        # First bit picks the Q sign, second bit the I sign.
        pts = np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]) / math.sqrt(2.0)
    elif scheme == "8PSK":
        pts = np.empty(8, dtype=complex)
        for k in range(8):
            pts[gray(k)] = np.exp(2j * np.pi * k / 8)
    elif scheme == "16QAM":
        levels = np.empty(4)
        for k, level in enumerate((-3, -1, 1, 3)):
            levels[gray(k)] = level
        sym = np.arange(16)
        pts = (levels[sym >> 2] + 1j * levels[sym & 3]) / math.sqrt(10.0)
    else:
        raise EnumerationError(f"unsupported modulation scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
    pts.setflags(write=False)
    return pts


def constellation(scheme: str) -> np.ndarray:
    """Points indexed by symbol value; the symbol's bits (MSB first) are its label."""
    return _constellation(scheme)


def bits_per_symbol(scheme: str) -> int:
    return int(round(math.log2(len(constellation(scheme)))))


def bits_to_symbols(bits, scheme: str) -> np.ndarray:
    """Map a flat bit sequence (MSB first per symbol) onto constellation points."""
    k = bits_per_symbol(scheme)
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size % k:
        raise ContractError(f"{scheme}: bit count {bits.size} is not a multiple of {k}")
    idx = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
    return constellation(scheme)[idx]


@lru_cache(maxsize=None)
def _rrc_cached(rolloff: float, sps: int, span: int):
    n = np.arange(-span * sps // 2, span * sps // 2 + 1) / sps
    b = rolloff
    h = np.empty_like(n)
    for i, t in enumerate(n):
        if t == 0:
            h[i] = 1 - b + 4 * b / np.pi
        elif b > 0 and abs(abs(4 * b * t) - 1) < 1e-12:
            h[i] = b / np.sqrt(2) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
        else:
            h[i] = (np.sin(np.pi * t * (1 - b)) + 4 * b * t * np.cos(np.pi * t * (1 + b))) / (
                np.pi * t * (1 - (4 * b * t) ** 2)
            )
    h /= np.sqrt(np.sum(h * h))
    h.setflags(write=False)
    return h


def rrc_taps(rolloff: float = 0.35, sps: int = 4, span: int = 8) -> np.ndarray:
    """Unit-energy root-raised-cosine filter with ``span * sps + 1`` taps."""
    if not 0 <= rolloff <= 1 or sps < 1 or span < 1 or (span * sps) % 2:
        raise ContractError("rrc: need rolloff in [0, 1], sps >= 1, span >= 1 and an even span*sps")
    return _rrc_cached(float(rolloff), int(sps), int(span))


@dataclass(frozen=True)
class FrameRecord:
    class_id: int
    snr_db: int
    samples: np.ndarray  # T x 2 (I, Q), float32

    @property
    def complex(self) -> np.ndarray:
        s = self.samples.astype(np.float64)
        return s[:, 0] + 1j * s[:, 1]


@dataclass(frozen=True)
class ModulatedFrame:
    """A noiseless frame plus what a matched decoder needs to check it."""

    record: FrameRecord
    symbols: np.ndarray  # transmitted symbol indices
    gain: float  # scale applied to reach unit power
    iq: np.ndarray  # complex128 samples before float32 rounding


def _to_record(class_id, snr_db, z: np.ndarray) -> FrameRecord:
    samples = np.empty((len(z), 2), dtype=np.float32)
    samples[:, 0] = z.real
    samples[:, 1] = z.imag
    return FrameRecord(int(class_id), int(snr_db), samples)


def modulate_frame(scheme: str, rng: np.random.Generator, T: int, sps: int = 4, rolloff: float = 0.35,
                   span: int = 8, class_id: int = 0) -> ModulatedFrame:
    """Random bits -> Gray-mapped symbols -> RRC shaping -> ``T`` samples at unit power.

    The returned window starts ``span`` symbols into the filtered stream, so
    it contains no filter start-up transient.
    """
    pts = constellation(scheme)
    k = bits_per_symbol(scheme)
    h = rrc_taps(rolloff, sps, span)
    nsym = -(-T // sps) + 2 * span + 1
    start = span * sps
    while True:
        bits = rng.integers(0, 2, size=nsym * k)
        sym = bits.reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
        up = np.zeros(nsym * sps, dtype=complex)
        up[::sps] = pts[sym]
        z = np.convolve(up, h)[start : start + T]
        power = float(np.mean(np.abs(z) ** 2))
        if power > 0:  # an all-zero OOK draw has no power to normalise
            break
    gain = 1.0 / math.sqrt(power)
    z = z * gain
    return ModulatedFrame(_to_record(class_id, 0, z), sym, gain, z)


def decode_frame(iq: np.ndarray, scheme: str, gain: float, sps: int = 4, rolloff: float = 0.35, span: int = 8):
    """Matched-filter, sample and slice a noiseless frame to the nearest point.

    Returns ``(first_symbol, decisions)``: symbol indices for the transmitted
    symbols ``first_symbol, first_symbol + 1, ...`` whose matched-filter
    window lies fully inside the frame.
    """
    h = rrc_taps(rolloff, sps, span)
    z = np.convolve(np.asarray(iq), h) / gain
    T = len(iq)
    first = span
    last = (T - 1) // sps
    samples = z[np.arange(first, last + 1) * sps]
    pts = constellation(scheme)
    decisions = np.argmin(np.abs(samples[:, None] - pts[None, :]), axis=1)
    return first, decisions


def apply_awgn(frame: FrameRecord, snr_db: float, rng: np.random.Generator) -> FrameRecord:
    """Add complex white Gaussian noise of total variance ``10^(-snr/10)``."""
    sigma = math.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
    T = frame.samples.shape[0]
    noise = rng.standard_normal((T, 2)) * sigma
    out = (frame.samples.astype(np.float64) + noise).astype(np.float32)
    return FrameRecord(frame.class_id, int(round(snr_db)), out)
