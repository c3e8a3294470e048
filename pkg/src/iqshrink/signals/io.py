"""Binary dataset container ("IQDS", little-endian).

::

    magic "IQDS" | u32 version=1 | u32 num_frames | u32 T | u32 num_classes
    | u32 num_snr_levels | i16 x num_snr_levels SNR grid
    | num_frames x (u16 class_id, i16 snr_db, 2T x f32 interleaved I/Q)

The reader validates the whole file before returning anything.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, FormatError, RecordCountError, TruncatedPayloadError, VersionError
from .dataset import Dataset

MAGIC = b"IQDS"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


def record_dtype(T: int) -> np.dtype:
    return np.dtype([("class_id", "<u2"), ("snr_db", "<i2"), ("iq", "<f4", (2 * T,))])


def encode_dataset(ds: Dataset) -> bytes:
    N, T = len(ds), ds.T
    head = _HEADER.pack(MAGIC, VERSION, N, T, ds.num_classes, len(ds.snr_grid))
    grid = np.asarray(ds.snr_grid, dtype="<i2").tobytes()
    rec = np.empty(N, dtype=record_dtype(T))
    rec["class_id"] = ds.labels
    rec["snr_db"] = ds.snr
    rec["iq"] = ds.x.reshape(N, 2 * T)
    return head + grid + rec.tobytes()


def decode_dataset(data: bytes, source: str = "<bytes>") -> Dataset:
    if len(data) < 4:
        raise TruncatedPayloadError(f"{source}: {len(data)} bytes, too short for a header")
    if data[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"{source}: header truncated at {len(data)} bytes")
    _, version, N, T, K, L = _HEADER.unpack_from(data)
    if version != VERSION:
        raise VersionError(f"{source}: dataset version {version} is not supported (expected {VERSION})")
    grid_end = _HEADER.size + 2 * L
    if len(data) < grid_end:
        raise TruncatedPayloadError(f"{source}: SNR grid truncated")
    grid = tuple(int(s) for s in np.frombuffer(data, dtype="<i2", count=L, offset=_HEADER.size))
    rdt = record_dtype(T)
    payload = len(data) - grid_end
    if payload % rdt.itemsize:
        raise TruncatedPayloadError(f"{source}: payload of {payload} bytes is not a whole number of {rdt.itemsize}-byte records")
    if payload // rdt.itemsize != N:
        raise RecordCountError(f"{source}: header declares {N} frames, payload holds {payload // rdt.itemsize}")
    rec = np.frombuffer(data, dtype=rdt, count=N, offset=grid_end)
    labels = rec["class_id"].astype(np.int64)
    snr = rec["snr_db"].astype(np.int64)
    if N and labels.max() >= K:
        raise FormatError(f"{source}: class id {labels.max()} outside [0, {K})")
    if N and not np.isin(snr, grid).all():
        raise FormatError(f"{source}: frame SNR outside the declared grid {grid}")
    x = rec["iq"].reshape(N, T, 2).astype(np.float32)
    return Dataset(x, labels, snr, grid, K)


def write_dataset(path, ds: Dataset) -> None:
    path = Path(path)
    try:
        path.write_bytes(encode_dataset(ds))
    except OSError as exc:
        raise OSError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    return decode_dataset(data, str(path))
