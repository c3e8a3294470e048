"""Finite-difference gradient suite over primitives, blocks and a tiny model.

Everything runs in float64 with central differences (step ``1e-5``).
Errors are ``|a - n| / max(1, |a|, |n|)`` per coordinate.  Inputs that put
any kink close to a perturbation are redrawn: within ``GARROTE_MARGIN`` of a
garrote breakpoint, or within ``KINK_MARGIN`` of a ReLU/|u|/max-pool tie.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ccsa import AttentionConfig, CcsaBlock
from .errors import ContractError
from .model.network import AmcNet, ModelConfig
from .model.train import loss_with_l2
from .shrinkage import ShrinkBlock
from .temporal import LSTM
from .tensor import core, kernels, nn
from .tensor.gradcheck import check_array_function, grad_check

PRIMITIVE_TOL = 1e-6
BLOCK_TOL = 1e-6
END_TO_END_TOL = 1e-4
GARROTE_MARGIN = 1e-3
KINK_MARGIN = 1e-4
STEP = 1e-5
TINY_MODEL = ModelConfig(units=2, d=2, heads=1, ccsa_depth=1, depth_a=1, depth_b=1, C=2, num_classes=2, T=16, l2=1e-3)


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    max_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


# ------------------------------------------------------------- primitives


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def primitive_checks(seed: int = 0) -> list[CheckOutcome]:
    rng = np.random.default_rng(seed)
    out = []

    def run(name, fwd, bwd, arrays, **kw):
        y, cache = fwd(*arrays, **kw)
        R = rng.standard_normal(np.shape(y))
        grads = bwd(R, cache)
        grads = grads if isinstance(grads, tuple) else (grads,)
        f = lambda arrs: float(np.sum(fwd(*arrs, **kw)[0] * R))  # noqa: E731
        out.append(CheckOutcome(name, check_array_function(f, list(arrays), list(grads), STEP), PRIMITIVE_TOL))

    run("matmul", core.matmul_forward, core.matmul_backward, [rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 3))])
    run("softmax", core.softmax_lastdim_forward, core.softmax_lastdim_backward, [rng.standard_normal((3, 2, 4))])
    run(
        "layer_norm",
        core.layer_norm_forward,
        core.layer_norm_backward,
        [rng.standard_normal((3, 2, 5)), 1 + 0.1 * rng.standard_normal(5), 0.1 * rng.standard_normal(5)],
    )
    for kind in ("gelu", "sigmoid", "tanh", "relu"):
        x = _away_from_zero(rng, (3, 5)) if kind == "relu" else rng.standard_normal((3, 5))
        run(f"activation_{kind}", core.activation_forward, core.activation_backward, [x], kind=kind)
    for shape, k, stride in (((2, 5, 4, 3), 3, 1), ((2, 5, 4, 3), 3, 2), ((2, 6, 6, 2), 1, 2), ((1, 4, 3, 2), 3, 1)):
        kern = rng.standard_normal((k, k, shape[-1], 3))
        run(f"conv2d_k{k}_s{stride}_{shape[1]}x{shape[2]}", core.conv2d_forward, core.conv2d_backward,
            [rng.standard_normal(shape), kern], stride=stride)
    run("pool_average", core.pool_global_forward, core.pool_global_backward, [rng.standard_normal((2, 3, 3, 2))], kind="average")
    # The maximum must win by a clear margin for the FD probe to stay on one side.
    xm = rng.permutation(np.arange(36, dtype=np.float64)).reshape(2, 3, 3, 2) * 0.1
    run("pool_max", core.pool_global_forward, core.pool_global_backward, [xm], kind="max")
    for mode in ("train", "eval"):
        c = 3
        rm, rv = 0.1 * rng.standard_normal(c), 0.5 + rng.random(c)

        def bn(x, s, o, mode=mode, rm=rm, rv=rv):
            return core.batch_norm_forward(x, s, o, rm.copy(), rv.copy(), mode)

        run(f"batch_norm_{mode}", bn, core.batch_norm_backward,
            [rng.standard_normal((4, 2, 2, c)), 1 + 0.1 * rng.standard_normal(c), 0.1 * rng.standard_normal(c)])
    out.append(_garrote_check(rng))
    return out


def _garrote_check(rng) -> CheckOutcome:
    while True:
        u = rng.standard_normal((2, 3, 3, 4))
        t = 0.2 + 0.5 * rng.random((2, 4))
        if np.min(np.abs(np.abs(u) - t[:, None, None, :])) > GARROTE_MARGIN:
            break
    y, cache = kernels.garrote_channel_forward(u, t)
    R = rng.standard_normal(y.shape)
    du, dt = kernels.garrote_channel_backward(R, cache)
    f = lambda arrs: float(np.sum(kernels.garrote_channel_forward(arrs[0], arrs[1])[0] * R))  # noqa: E731
    return CheckOutcome("garrote_channel", check_array_function(f, [u, t], [du, dt], STEP), PRIMITIVE_TOL)


# ----------------------------------------------------------------- blocks


def _min_margins(module) -> tuple[float, float]:
    garrote, kink = np.inf, np.inf
    for m in module.modules():
        v = getattr(m, "margin", None)
        if v is None:
            continue
        if isinstance(m, ShrinkBlock):
            garrote = min(garrote, v)
        else:
            kink = min(kink, v)
    return garrote, kink


def _clear_input(module, draw, forward, attempts: int = 200):
    """Draw inputs until every recorded kink margin is comfortable."""
    prev = nn.TRACK_MARGINS
    nn.TRACK_MARGINS = True
    try:
        for _ in range(attempts):
            x = draw()
            for m in module.modules():
                if hasattr(m, "margin"):
                    m.margin = None
            forward(x)
            g, k = _min_margins(module)
            if g > GARROTE_MARGIN and k > KINK_MARGIN:
                return x
    finally:
        nn.TRACK_MARGINS = prev
    raise ContractError(f"gradient suite: no kink-free input found in {attempts} draws")


def module_check(name, module, x, mode="train", tol=BLOCK_TOL, max_entries=None, seed=0) -> list[CheckOutcome]:
    """Check parameter gradients and the input gradient of ``sum(R * module(x))``."""
    y = module.forward(x, mode)
    R = np.random.default_rng(seed + 7919).standard_normal(np.shape(y))
    state = {}

    def loss(with_grad):
        val = float(np.sum(module.forward(x, mode) * R))
        if with_grad:
            module.zero_grad()
            state["dx"] = module.backward(R)
        return val

    res = grad_check(loss, module.parameters(), STEP, max_entries=max_entries, seed=seed)
    loss(True)
    dx = state["dx"]
    xin = x.copy()
    err_x = check_array_function(lambda arrs: float(np.sum(module.forward(arrs[0], mode) * R)), [xin], [dx], STEP)
    return [CheckOutcome(f"{name}.params", res.max_error, tol), CheckOutcome(f"{name}.input", err_x, tol)]


def block_checks(seed: int = 0) -> list[CheckOutcome]:
    rng = np.random.default_rng(seed)
    out = []
    cfg = AttentionConfig(d=4, h=2, depth=1, C=2)
    blk = CcsaBlock("ccsa", cfg, rng, np.float64)
    out += module_check("ccsa_block", blk, rng.standard_normal((2, 3, 2, 4)), seed=seed)
    lstm = LSTM("lstm", 3, rng, np.float64)
    out += module_check("lstm", lstm, rng.standard_normal((2, 5, 2)), seed=seed)
    for kind, c, hw in (("A", 3, (4, 3)), ("B", 2, (5, 4))):
        sb = ShrinkBlock(f"shrink{kind}", c, rng, np.float64, downsample=kind == "B")
        x = _clear_input(sb, lambda: rng.standard_normal((3, *hw, c)), lambda v: sb.forward(v, "train"))
        out += module_check(f"shrink_block_{kind}", sb, x, seed=seed)
    return out


# ------------------------------------------------------------- end to end


def end_to_end_check(seed: int = 0, cfg: ModelConfig = TINY_MODEL, batch: int = 2, max_entries=None) -> CheckOutcome:
    model = AmcNet(replace(cfg, seed=seed), np.float64)
    rng = np.random.default_rng(seed + 104729)
    y = rng.integers(0, cfg.num_classes, batch)
    x = _clear_input(model, lambda: rng.standard_normal((batch, cfg.T, 2)), lambda v: model.forward(v, "train"))

    def loss(with_grad):
        model.zero_grad()
        val, dprobs = loss_with_l2(model.forward(x, "train"), y, model, cfg.l2)
        if with_grad:
            model.backward(dprobs)
        return val

    res = grad_check(loss, model.parameters(), STEP, max_entries=max_entries, seed=seed)
    return CheckOutcome(f"end_to_end[{res.worst[0]}]", res.max_error, END_TO_END_TOL)


def run_suite(seed: int = 0, full_model: bool = False) -> list[CheckOutcome]:
    out = primitive_checks(seed) + block_checks(seed)
    if full_model:
        out.append(end_to_end_check(seed))
    return out
