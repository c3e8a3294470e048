"""Full classifier: attention and LSTM branches, fusion, shrinkage stack, softmax head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..ccsa import AttentionConfig, CcsaBranch
from ..errors import ConfigError, StructuralError
from ..shrinkage import ShrinkBlock
from ..temporal import LSTM, fuse_branches, fuse_branches_backward, pad_width, pad_width_backward
from ..tensor import core
from ..tensor.nn import Activation, BatchNorm, Dense, Module


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters, one field per ablation-table column.

    ``units=0`` drops the LSTM branch and ``d=0`` drops the attention
    branch (at least one must remain); ``depth_a``/``depth_b`` may be 0.
    """

    units: int = 16
    d: int = 32
    heads: int = 2
    ccsa_depth: int = 2
    depth_a: int = 3
    depth_b: int = 3
    C: int = 8
    num_classes: int = 24
    T: int = 1024
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.units < 0 or self.d < 0 or self.ccsa_depth < 0 or self.depth_a < 0 or self.depth_b < 0:
            problems.append("units, d, ccsa_depth, depth_a, depth_b must be >= 0")
        if self.units == 0 and self.d == 0:
            problems.append("at least one of the LSTM (units) and attention (d) branches is required")
        if self.units == 1:
            problems.append("units must be >= 2 (or 0 to drop the LSTM)")
        if self.d > 0:
            if self.heads < 1 or self.d % self.heads:
                problems.append(f"heads={self.heads} must divide d={self.d}")
            if self.C < 1:
                problems.append("C must be >= 1")
        if self.num_classes < 2:
            problems.append("num_classes must be >= 2")
        if self.T < 1:
            problems.append("T must be >= 1")
        if self.l2 < 0:
            problems.append("l2 must be >= 0")
        if problems:
            raise ConfigError("invalid ModelConfig: " + "; ".join(problems))
        h, w = self.T, self.width
        for kind in self.block_order():
            if kind == "B":
                if h < 2 or w < 2:
                    raise ConfigError(f"invalid ModelConfig: block B needs a spatial map >= 2x2, got {h}x{w}")
                h, w = -(-h // 2), -(-w // 2)

    @property
    def width(self) -> int:
        return self.units if self.units else 2

    @property
    def fused_channels(self) -> int:
        return (self.C if self.d else 0) + (1 if self.units else 0)

    def block_order(self) -> list[str]:
        """Alternate A and B starting with A; leftover A blocks, then B, go last."""
        pairs = min(self.depth_a, self.depth_b)
        return ["A", "B"] * pairs + ["A"] * (self.depth_a - pairs) + ["B"] * (self.depth_b - pairs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


class AmcNet(Module):
    def __init__(self, cfg: ModelConfig, dtype=np.float64):
        super().__init__("net")
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(cfg.seed)
        self.attention = None
        self.lstm = None
        if cfg.d:
            att = AttentionConfig(d=cfg.d, h=cfg.heads, depth=cfg.ccsa_depth, C=cfg.C)
            self.attention = self.child(CcsaBranch("ccsa", att, rng, dtype))
        if cfg.units:
            self.lstm = self.child(LSTM("lstm", cfg.units, rng, dtype))
        self.blocks = []
        c = cfg.fused_channels
        for i, kind in enumerate(cfg.block_order()):
            blk = ShrinkBlock(f"shrink{i}{kind}", c, rng, dtype, downsample=kind == "B")
            self.blocks.append(self.child(blk))
            c = blk.c_out
        self.head_bn = self.child(BatchNorm("head.bn", c, dtype))
        self.head_relu = self.child(Activation("head.relu", "relu"))
        self.head_fc = self.child(Dense("head.fc", c, cfg.num_classes, rng, dtype))
        self.out_channels = c

    def forward(self, x, mode="eval"):
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1:] != (cfg.T, 2):
            raise StructuralError(f"forward_pass: expected B x {cfg.T} x 2 input, got {x.shape}")
        x = np.asarray(x, dtype=self.dtype)
        parts = []
        if self.attention is not None:
            F = self.attention.forward(x, mode)
            parts.append(pad_width(F, cfg.units) if self.lstm is not None else F)
        if self.lstm is not None:
            H = self.lstm.forward(x, mode)
            z = fuse_branches(parts[0], H) if parts else H[..., None]
        else:
            z = parts[0]
        for blk in self.blocks:
            z = blk.forward(z, mode)
        z = self.head_relu.forward(self.head_bn.forward(z, mode))
        pooled, self._pool = core.pool_global_forward(z, "average")
        logits = self.head_fc.forward(pooled)
        probs, self._probs = core.softmax_lastdim_forward(logits)
        return probs

    def backward(self, dprobs):
        dlogits = core.softmax_lastdim_backward(dprobs, self._probs)
        dz = core.pool_global_backward(self.head_fc.backward(dlogits), self._pool)
        dz = self.head_bn.backward(self.head_relu.backward(dz))
        for blk in reversed(self.blocks):
            dz = blk.backward(dz)
        if self.lstm is not None:
            if self.attention is not None:
                dF, dH = fuse_branches_backward(dz)
                self.lstm.backward(dH)
                self.attention.backward(pad_width_backward(dF))
            else:
                self.lstm.backward(dz[..., 0])
        else:
            self.attention.backward(dz)

    def thresholds(self) -> list[np.ndarray]:
        """Per-block thresholds (``B x C``) from the most recent forward pass."""
        return [b.last_threshold for b in self.blocks]

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(x[i : i + batch_size], "eval") for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)


def build_model(cfg: ModelConfig, dtype=np.float32) -> AmcNet:
    """Seeded construction; two builds of the same config are bitwise identical."""
    return AmcNet(cfg, dtype)
