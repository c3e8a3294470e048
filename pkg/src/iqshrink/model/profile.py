"""Parameter and FLOP accounting.

FLOPs count multiply-accumulates in matmul-like operations (dense layers,
convolutions, attention scores and mixing, LSTM gate products) at 2 FLOPs
per MAC, for a single frame.  Elementwise work (activations, norms,
pooling, garrote) is not counted.
"""
from __future__ import annotations

from collections import OrderedDict

from .network import AmcNet


def count_params(model: AmcNet):
    """Return ``(total, breakdown)`` with one breakdown entry per top-level module."""
    breakdown = OrderedDict()
    for child in model._children:
        breakdown[child.name] = child.num_params()
    total = sum(breakdown.values())
    return total, breakdown


def count_flops(model: AmcNet, batch: int = 1):
    cfg = model.cfg
    T = cfg.T
    breakdown = OrderedDict()
    if model.attention is not None:
        breakdown["ccsa.embed"] = model.attention.embed.flops(T)
        breakdown["ccsa.blocks"] = model.attention.attention_flops(T)
        breakdown["ccsa.project"] = model.attention.project.flops(T)
    if model.lstm is not None:
        breakdown["lstm"] = model.lstm.flops(T)
    h, w = T, cfg.width
    for blk in model.blocks:
        breakdown[blk.name] = blk.flops(h, w)
        h, w, _ = blk.out_shape(h, w)
    breakdown["head.fc"] = model.head_fc.flops(1)
    breakdown = OrderedDict((k, v * batch) for k, v in breakdown.items())
    return sum(breakdown.values()), breakdown


def ccsa_flops(model: AmcNet) -> int:
    """FLOPs of the stacked attention blocks alone."""
    return model.attention.attention_flops(model.cfg.T) if model.attention is not None else 0
