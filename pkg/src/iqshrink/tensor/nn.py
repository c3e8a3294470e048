"""Small layer framework: modules own parameters and run explicit backward.

A module's ``forward(x, mode)`` stores whatever it needs on ``self`` and
``backward(dy)`` accumulates parameter gradients and returns ``dx``.  Modes
are the strings ``"train"`` and ``"eval"``.
"""
from __future__ import annotations

import math

import numpy as np

from . import core
from .core import Parameter

# Set by the gradient-check driver; layers with kinks then record how close
# their inputs came to a breakpoint during the last forward pass.
TRACK_MARGINS = False


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, dtype) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols], dtype=dtype)


class Module:
    def __init__(self, name: str):
        self.name = name
        self._params: list[Parameter] = []
        self._children: list[Module] = []
        self._buffers: dict[str, np.ndarray] = {}

    # registration -------------------------------------------------------
    def param(self, local: str, value: np.ndarray, decay: bool = False) -> Parameter:
        p = Parameter(f"{self.name}.{local}", value, decay=decay)
        self._params.append(p)
        return p

    def child(self, module: "Module") -> "Module":
        self._children.append(module)
        return module

    def buffer(self, local: str, value: np.ndarray) -> np.ndarray:
        self._buffers[f"{self.name}.{local}"] = value
        return value

    # traversal ----------------------------------------------------------
    def parameters(self) -> list[Parameter]:
        out = list(self._params)
        for c in self._children:
            out.extend(c.parameters())
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = dict(self._buffers)
        for c in self._children:
            out.update(c.buffers())
        return out

    def modules(self):
        yield self
        for c in self._children:
            yield from c.modules()

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def margins(self) -> list[tuple[str, float]]:
        """Breakpoint distances recorded during the last tracked forward."""
        out = []
        for m in self.modules():
            v = getattr(m, "margin", None)
            if v is not None:
                out.append((m.name, v))
        return out

    def forward(self, x, mode: str = "eval"):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def __call__(self, x, mode: str = "eval"):
        return self.forward(x, mode)


class Dense(Module):
    """``y = x @ W + b`` over the last axis."""

    def __init__(self, name, n_in, n_out, rng, dtype=np.float64, bias=True, decay=True):
        super().__init__(name)
        self.W = self.param("W", glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), decay=decay)
        self.b = self.param("b", np.zeros(n_out, dtype=dtype)) if bias else None

    def forward(self, x, mode="eval"):
        y, self._cache = core.matmul_forward(x, self.W.value)
        if self.b is not None:
            y = y + self.b.value
        return y

    def backward(self, dy):
        dx, dW = core.matmul_backward(dy, self._cache)
        self.W.grad += dW
        if self.b is not None:
            self.b.grad += core.channel_sum(dy)
        return dx

    def flops(self, rows: int) -> int:
        n_in, n_out = self.W.shape
        return 2 * rows * n_in * n_out


class Conv2d(Module):
    def __init__(self, name, c_in, c_out, k, rng, dtype=np.float64, stride=1, bias=True, decay=True):
        super().__init__(name)
        self.stride = stride
        self.k = k
        fan_in, fan_out = k * k * c_in, k * k * c_out
        self.W = self.param("W", glorot_uniform(rng, (k, k, c_in, c_out), fan_in, fan_out, dtype), decay=decay)
        self.b = self.param("b", np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x, mode="eval"):
        y, self._cache = core.conv2d_forward(x, self.W.value, self.stride, "same")
        if self.b is not None:
            y += self.b.value
        return y

    def backward(self, dy):
        dx, dW = core.conv2d_backward(dy, self._cache)
        self.W.grad += dW
        if self.b is not None:
            self.b.grad += core.channel_sum(dy)
        return dx

    def out_hw(self, h: int, w: int):
        return -(-h // self.stride), -(-w // self.stride)

    def flops(self, h: int, w: int) -> int:
        ho, wo = self.out_hw(h, w)
        k1, k2, cin, cout = self.W.shape
        return 2 * ho * wo * k1 * k2 * cin * cout


class BatchNorm(Module):
    def __init__(self, name, c, dtype=np.float64, momentum=core.BN_MOMENTUM):
        super().__init__(name)
        self.momentum = momentum
        self.scale = self.param("scale", np.ones(c, dtype=dtype))
        self.offset = self.param("offset", np.zeros(c, dtype=dtype))
        self.running_mean = self.buffer("running_mean", np.zeros(c, dtype=dtype))
        self.running_var = self.buffer("running_var", np.ones(c, dtype=dtype))

    def forward(self, x, mode="eval"):
        y, self._cache = core.batch_norm_forward(
            x, self.scale.value, self.offset.value, self.running_mean, self.running_var, mode, self.momentum
        )
        return y

    def backward(self, dy):
        dx, ds, do = core.batch_norm_backward(dy, self._cache)
        self.scale.grad += ds
        self.offset.grad += do
        return dx


class LayerNorm(Module):
    def __init__(self, name, n, dtype=np.float64, eps=core.LN_EPS):
        super().__init__(name)
        self.eps = eps
        self.g = self.param("g", np.ones(n, dtype=dtype))
        self.b = self.param("b", np.zeros(n, dtype=dtype))

    def forward(self, x, mode="eval"):
        y, self._cache = core.layer_norm_forward(x, self.g.value, self.b.value, self.eps)
        return y

    def backward(self, dy):
        dx, dg, db = core.layer_norm_backward(dy, self._cache)
        self.g.grad += dg
        self.b.grad += db
        return dx


class Activation(Module):
    def __init__(self, name, kind):
        super().__init__(name)
        self.kind = kind
        self.margin = None

    def forward(self, x, mode="eval"):
        y, self._cache = core.activation_forward(x, self.kind)
        if TRACK_MARGINS and self.kind == "relu":
            self.margin = float(np.min(np.abs(x)))
        return y

    def backward(self, dy):
        return core.activation_backward(dy, self._cache)


class Sequential(Module):
    def __init__(self, name, *layers):
        super().__init__(name)
        self.layers = [self.child(m) for m in layers]

    def forward(self, x, mode="eval"):
        for m in self.layers:
            x = m.forward(x, mode)
        return x

    def backward(self, dy):
        for m in reversed(self.layers):
            dy = m.backward(dy)
        return dy
