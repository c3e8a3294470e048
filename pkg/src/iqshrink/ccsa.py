"""Cross-channel self-attention: I and Q at each time step form a two-token sequence.

Shapes follow the pipeline: ``x`` is ``B x T x 2`` (I then Q), embeddings
are ``B x T x 2 x d``, and the final 1x1 projection gives
``B x T x 2 x C``.  Attention never looks across time steps, so the cost
per step is constant and the total scales linearly in ``T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError
from .tensor import core
from .tensor.nn import Activation, Dense, LayerNorm, Module, glorot_uniform


@dataclass(frozen=True)
class AttentionConfig:
    d: int
    h: int
    depth: int = 1
    C: int = 8

    def __post_init__(self):
        if self.d < 1 or self.h < 1 or self.C < 1 or self.depth < 0:
            raise ConfigError(f"attention config must be positive: {self}")
        if self.d % self.h:
            raise ConfigError(f"heads h={self.h} must divide embedding d={self.d}")

    @property
    def d_k(self) -> int:
        return self.d // self.h

    @property
    def d_ff(self) -> int:
        return 4 * self.d


class TokenEmbedding(Module):
    """Scalar-to-vector lift of each I and Q sample: ``H = x * W_e + b_e``."""

    def __init__(self, name, d, rng, dtype=np.float64):
        super().__init__(name)
        self.W = self.param("W_e", glorot_uniform(rng, (1, d), 1, d, dtype), decay=True)
        self.b = self.param("b_e", np.zeros(d, dtype=dtype))

    def forward(self, x, mode="eval"):
        if x.ndim != 3 or x.shape[-1] != 2:
            raise StructuralError(f"embed_tokens: expected B x T x 2 (I, Q) input, got {x.shape}")
        self._x = x
        return core.check_finite(x[..., None] * self.W.value[0] + self.b.value, "embed_tokens")

    def backward(self, dH):
        x = self._x
        self.W.grad[0] += np.einsum("btc,btcd->d", x, dH)
        self.b.grad += dH.sum(axis=(0, 1, 2))
        return dH @ self.W.value[0]

    def flops(self, T: int) -> int:
        return 2 * T * 2 * self.W.shape[1]


def attention_forward(Q, K, V, h: int):
    """Scaled dot-product attention between the two tokens, per head.

    ``Q, K, V`` are ``... x 2 x d`` with the heads stored fused along the
    last axis.  Returns the concatenated head outputs and the ``... x h x 2 x 2``
    attention weights.
    """
    lead = Q.shape[:-2]
    d = Q.shape[-1]
    dk = d // h
    q = Q.reshape(*lead, 2, h, dk)
    k = K.reshape(*lead, 2, h, dk)
    v = V.reshape(*lead, 2, h, dk)
    scores = np.einsum("...ihk,...jhk->...hij", q, k) / math.sqrt(dk)
    P, _ = core.softmax_lastdim_forward(scores)
    out = np.einsum("...hij,...jhk->...ihk", P, v).reshape(*lead, 2, d)
    return out, P, (q, k, v, P, dk)


def attention_backward(dout, cache):
    q, k, v, P, dk = cache
    lead = q.shape[:-3]
    h = q.shape[-2]
    do = dout.reshape(*lead, 2, h, dk)
    dP = np.einsum("...ihk,...jhk->...hij", do, v)
    dv = np.einsum("...hij,...ihk->...jhk", P, do)
    dS = core.softmax_lastdim_backward(dP, P) / math.sqrt(dk)
    dq = np.einsum("...hij,...jhk->...ihk", dS, k)
    dkk = np.einsum("...hij,...ihk->...jhk", dS, q)
    shape = (*lead, 2, h * dk)
    return dq.reshape(shape), dkk.reshape(shape), dv.reshape(shape)


class TwoTokenMHSA(Module):
    """Multi-head self-attention over the (I, Q) token pair."""

    def __init__(self, name, cfg: AttentionConfig, rng, dtype=np.float64):
        super().__init__(name)
        d = cfg.d
        self.h = cfg.h
        self.q = self.child(Dense(f"{name}.W_Q", d, d, rng, dtype, decay=False))
        self.k = self.child(Dense(f"{name}.W_K", d, d, rng, dtype, decay=False))
        self.v = self.child(Dense(f"{name}.W_V", d, d, rng, dtype, decay=False))
        self.o = self.child(Dense(f"{name}.W_o", d, d, rng, dtype, decay=False))
        self.weights = None

    def forward(self, H, mode="eval"):
        if H.shape[-2] != 2:
            raise StructuralError(f"two_token_mhsa: expected 2 token rows, got shape {H.shape}")
        Q = self.q.forward(H)
        K = self.k.forward(H)
        V = self.v.forward(H)
        att, self.weights, self._cache = attention_forward(Q, K, V, self.h)
        return self.o.forward(att)

    def backward(self, dy):
        datt = self.o.backward(dy)
        dQ, dK, dV = attention_backward(datt, self._cache)
        return self.q.backward(dQ) + self.k.backward(dK) + self.v.backward(dV)

    def flops(self, T: int) -> int:
        d = self.q.W.shape[0]
        rows = 2 * T
        proj = 4 * 2 * rows * d * d
        # scores and weighted sum: h heads x 2x2 pairs x d_k each
        mix = 2 * (2 * T * 2 * 2 * d)
        return proj + mix


class TokenFFN(Module):
    """Position-wise ``GeLU(z W_1 + b_1) W_2 + b_2`` with hidden width 4d."""

    def __init__(self, name, cfg: AttentionConfig, rng, dtype=np.float64):
        super().__init__(name)
        self.fc1 = self.child(Dense(f"{name}.W_1", cfg.d, cfg.d_ff, rng, dtype, decay=False))
        self.act = self.child(Activation(f"{name}.gelu", "gelu"))
        self.fc2 = self.child(Dense(f"{name}.W_2", cfg.d_ff, cfg.d, rng, dtype, decay=False))

    def forward(self, z, mode="eval"):
        return self.fc2.forward(self.act.forward(self.fc1.forward(z)))

    def backward(self, dy):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dy)))

    def flops(self, T: int) -> int:
        return self.fc1.flops(2 * T) + self.fc2.flops(2 * T)


class CcsaBlock(Module):
    """Post-norm transformer block: ``Z = LN(H~ + FFN(H~))``, ``H~ = LN(H + MHSA(H))``."""

    def __init__(self, name, cfg: AttentionConfig, rng, dtype=np.float64):
        super().__init__(name)
        self.mhsa = self.child(TwoTokenMHSA(f"{name}.mhsa", cfg, rng, dtype))
        self.ln1 = self.child(LayerNorm(f"{name}.ln1", cfg.d, dtype))
        self.ffn = self.child(TokenFFN(f"{name}.ffn", cfg, rng, dtype))
        self.ln2 = self.child(LayerNorm(f"{name}.ln2", cfg.d, dtype))

    def forward(self, H, mode="eval"):
        Ht = self.ln1.forward(H + self.mhsa.forward(H))
        return self.ln2.forward(Ht + self.ffn.forward(Ht))

    def backward(self, dZ):
        ds2 = self.ln2.backward(dZ)
        dHt = ds2 + self.ffn.backward(ds2)
        ds1 = self.ln1.backward(dHt)
        return ds1 + self.mhsa.backward(ds1)

    def flops(self, T: int) -> int:
        return self.mhsa.flops(T) + self.ffn.flops(T)


class ChannelProjection(Module):
    """1x1 convolution from d to C channels on every token: ``F = Z W_p + b_p``."""

    def __init__(self, name, d, C, rng, dtype=np.float64):
        super().__init__(name)
        self.dense = self.child(Dense(f"{name}.W_p", d, C, rng, dtype, decay=True))

    def forward(self, Z, mode="eval"):
        return self.dense.forward(Z)

    def backward(self, dy):
        return self.dense.backward(dy)

    def flops(self, T: int) -> int:
        return self.dense.flops(2 * T)


class CcsaBranch(Module):
    """Embedding, ``depth`` stacked blocks, and the channel projection."""

    def __init__(self, name, cfg: AttentionConfig, rng, dtype=np.float64):
        super().__init__(name)
        self.cfg = cfg
        self.embed = self.child(TokenEmbedding(f"{name}.embed", cfg.d, rng, dtype))
        self.blocks = [self.child(CcsaBlock(f"{name}.block{i}", cfg, rng, dtype)) for i in range(cfg.depth)]
        self.project = self.child(ChannelProjection(f"{name}.project", cfg.d, cfg.C, rng, dtype))

    def forward(self, x, mode="eval"):
        H = self.embed.forward(x)
        for blk in self.blocks:
            H = blk.forward(H)
        return self.project.forward(H)

    def backward(self, dF):
        dH = self.project.backward(dF)
        for blk in reversed(self.blocks):
            dH = blk.backward(dH)
        return self.embed.backward(dH)

    def attention_flops(self, T: int) -> int:
        return sum(b.flops(T) for b in self.blocks)

    def flops(self, T: int) -> int:
        return self.embed.flops(T) + self.attention_flops(T) + self.project.flops(T)
