"""Self-describing checkpoint container.

Layout (little-endian)::

    b"IQCK" | u32 version | u32 header_bytes | JSON header | float32 blobs

The header holds the model and training configs, a manifest of
``(name, kind, shape)`` entries in blob order, the optimizer step counter,
the shuffle RNG state and free-form ``extra`` data.  Every array is stored
as 32-bit floats regardless of its in-memory precision.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, FormatError, TruncatedPayloadError, VersionError
from .network import AmcNet, ModelConfig, build_model
from .train import Adam, TrainConfig

MAGIC = b"IQCK"
VERSION = 1


@dataclass
class Checkpoint:
    model: AmcNet
    train_config: TrainConfig | None = None
    optimizer: Adam | None = None
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def _entries(model: AmcNet, optimizer: Adam | None):
    for p in model.parameters():
        yield p.name, "param", p.value
    for name, buf in model.buffers().items():
        yield name, "buffer", buf
    if optimizer is not None:
        for p in optimizer.params:
            yield p.name, "adam_m", optimizer.m[p.name]
            yield p.name, "adam_v", optimizer.v[p.name]


def save_checkpoint(path, model: AmcNet, train_config=None, optimizer=None, rng_state=None, extra=None) -> None:
    manifest = []
    blobs = []
    for name, kind, arr in _entries(model, optimizer):
        manifest.append({"name": name, "kind": kind, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = {
        "model_config": model.cfg.to_dict(),
        "train_config": train_config.to_dict() if train_config is not None else None,
        "dtype": model.dtype.name,
        "manifest": manifest,
        "adam_step": optimizer.t if optimizer is not None else None,
        "rng_state": rng_state,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes)
            for b in blobs:
                fh.write(b)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise TruncatedPayloadError(f"{path}: {len(data)} bytes is shorter than the checkpoint preamble")
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version} is not supported (expected {VERSION})")
    if len(data) < 12 + hlen:
        raise TruncatedPayloadError(f"{path}: header truncated")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header ({exc})") from exc
    manifest = header["manifest"]
    need = sum(4 * int(np.prod(e["shape"], dtype=np.int64)) for e in manifest)
    payload = data[12 + hlen :]
    if len(payload) != need:
        raise TruncatedPayloadError(f"{path}: payload has {len(payload)} bytes, manifest needs {need}")

    model = build_model(ModelConfig(**header["model_config"]), np.dtype(header["dtype"]))
    params = {p.name: p for p in model.parameters()}
    buffers = model.buffers()
    optimizer = Adam(model.parameters()) if header["adam_step"] is not None else None
    tc = TrainConfig(**header["train_config"]) if header["train_config"] is not None else None
    if optimizer is not None and tc is not None:
        optimizer.beta1, optimizer.beta2, optimizer.eps = tc.beta1, tc.beta2, tc.adam_eps
    offset = 0
    for e in manifest:
        n = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(e["shape"])
        offset += 4 * n
        name, kind = e["name"], e["kind"]
        if kind == "param":
            target = params[name].value
        elif kind == "buffer":
            target = buffers[name]
        elif kind == "adam_m":
            target = optimizer.m[name]
        elif kind == "adam_v":
            target = optimizer.v[name]
        else:
            raise FormatError(f"{path}: unknown manifest kind {kind!r}")
        if target.shape != arr.shape:
            raise FormatError(f"{path}: {name} has shape {arr.shape}, model expects {target.shape}")
        target[...] = arr
    if optimizer is not None:
        optimizer.t = int(header["adam_step"])
    return Checkpoint(model, tc, optimizer, header["rng_state"], header["extra"])
