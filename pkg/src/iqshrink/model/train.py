"""Loss, Adam, plateau scheduling with early stopping, and the training loop."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from ..errors import ConfigError, ContractError, NonFiniteError
from ..tensor.nn import Module
from .network import AmcNet

PROB_FLOOR = 1e-12
# A validation loss counts as improved only if it beats the best by this much.
IMPROVEMENT_TOL = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr_init: float = 1e-3
    lr_min: float = 1e-8
    lr_factor: float = 0.5
    lr_patience: int = 5
    early_stop_patience: int = 30
    max_epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    shuffle_seed: int = 0
    split_seed: int = 0
    split_fractions: tuple = (0.7, 0.15, 0.15)

    def __post_init__(self):
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        problems = []
        fr = self.split_fractions
        if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1) > 1e-9:
            problems.append("split_fractions must be three positive numbers summing to 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        if not 0 < self.lr_min <= self.lr_init:
            problems.append("need 0 < lr_min <= lr_init")
        if not 0 < self.lr_factor < 1:
            problems.append("lr_factor must be in (0, 1)")
        if self.lr_patience < 1 or self.early_stop_patience < 1:
            problems.append("patiences must be >= 1")
        if self.max_epochs < 1:
            problems.append("max_epochs must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            problems.append("Adam needs betas in [0, 1) and eps > 0")
        if problems:
            raise ConfigError("invalid TrainConfig: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


# ------------------------------------------------------------------- loss


def l2_penalty(model: Module) -> float:
    return float(sum(np.sum(p.value.astype(np.float64) ** 2) for p in model.parameters() if p.decay))


def loss_with_l2(probs: np.ndarray, labels: np.ndarray, model: Module | None, lam: float):
    """Mean clamped cross-entropy plus ``lam * sum ||W||^2`` over decayed kernels.

    Returns ``(loss, dprobs)``.  The L2 gradient ``2 lam W`` is written into
    the parameters' ``grad`` directly, so callers should zero grads first.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ContractError(f"loss: probs {probs.shape} and labels {labels.shape} do not align")
    K = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K or not np.issubdtype(labels.dtype, np.integer)):
        raise ContractError(f"loss: labels must be integers in [0, {K})")
    if lam < 0:
        raise ContractError("loss: lambda must be >= 0")
    B = probs.shape[0]
    rows = np.arange(B)
    p = probs[rows, labels]
    clamped = np.maximum(p, PROB_FLOOR)
    ce = float(np.mean(-np.log(clamped.astype(np.float64))))
    dprobs = np.zeros_like(probs)
    dprobs[rows, labels] = np.where(p > PROB_FLOOR, -1.0 / (B * clamped), 0.0)
    reg = 0.0
    if lam and model is not None:
        reg = lam * l2_penalty(model)
        for prm in model.parameters():
            if prm.decay:
                prm.grad += (2 * lam) * prm.value
    return ce + reg, dprobs


# ------------------------------------------------------------------ Adam


class Adam:
    """Adam with bias correction; moments are kept per parameter name."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, lr: float):
        for p in self.params:
            if not np.isfinite(np.sum(p.grad)):
                raise NonFiniteError(f"adam: non-finite gradient in {p.name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.t
        c2 = 1 - b2**self.t
        for p in self.params:
            m, v, g = self.m[p.name], self.v[p.name], p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.value.dtype, copy=False)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict):
        self.t = int(state["t"])
        for name in self.m:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]


# ------------------------------------------------------ plateau control


class PlateauController:
    """Learning-rate reduction on plateau plus early stopping.

    Call :meth:`update` once per epoch with that epoch's validation loss.
    The LR is multiplied by ``factor`` (floored at ``lr_min``) once
    ``lr_patience`` consecutive epochs fail to improve; that counter then
    resets.  Training stops once ``stop_patience`` consecutive epochs fail to
    improve.  The two counters are independent.
    """

    def __init__(self, lr_init, lr_min, factor, lr_patience, stop_patience, tol=IMPROVEMENT_TOL):
        self.lr = lr_init
        self.lr_min = lr_min
        self.factor = factor
        self.lr_patience = lr_patience
        self.stop_patience = stop_patience
        self.tol = tol
        self.best = math.inf
        self.lr_wait = 0
        self.stop_wait = 0

    @classmethod
    def from_config(cls, tc: TrainConfig) -> "PlateauController":
        return cls(tc.lr_init, tc.lr_min, tc.lr_factor, tc.lr_patience, tc.early_stop_patience)

    def update(self, val_loss: float) -> tuple[bool, bool]:
        """Return ``(improved, stop)``; ``self.lr`` holds the LR for the next epoch."""
        improved = val_loss < self.best - self.tol
        if improved:
            self.best = val_loss
            self.lr_wait = self.stop_wait = 0
            return True, False
        self.lr_wait += 1
        self.stop_wait += 1
        if self.lr_wait >= self.lr_patience:
            self.lr = max(self.lr * self.factor, self.lr_min)
            self.lr_wait = 0
        return False, self.stop_wait >= self.stop_patience


# ---------------------------------------------------------------- fit


@dataclass
class TrainingLog:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf
    stop_reason: str = ""
    optimizer: Adam | None = field(default=None, repr=False, compare=False)
    rng_state: dict | None = field(default=None, repr=False, compare=False)

    def rows(self):
        return list(zip(self.epoch, self.train_loss, self.val_loss, self.train_acc, self.val_acc, self.lr))


def snapshot(model: Module) -> dict:
    state = {p.name: p.value.copy() for p in model.parameters()}
    state.update({k: v.copy() for k, v in model.buffers().items()})
    return state


def restore(model: Module, state: dict):
    for p in model.parameters():
        p.value[...] = state[p.name]
    for k, v in model.buffers().items():
        v[...] = state[k]


def _xy(ds):
    if hasattr(ds, "x") and hasattr(ds, "labels"):
        return ds.x, ds.labels
    x, y = ds
    return x, y


def evaluate_loss(model: AmcNet, x, y, lam: float, batch_size: int = 256):
    """Eval-mode ``(loss, accuracy)`` with the L2 term included once."""
    if len(y) == 0:
        raise ContractError("evaluate: empty dataset")
    probs = model.predict(x, batch_size)
    ce, _ = loss_with_l2(probs, y, None, 0.0)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return ce + lam * l2_penalty(model), acc


def fit(
    model: AmcNet,
    train_set,
    val_set,
    tc: TrainConfig,
    *,
    on_step: Callable | None = None,
    on_epoch: Callable | None = None,
) -> TrainingLog:
    """Train with Adam, plateau LR halving and early stopping.

    Batches come from a permutation drawn per epoch from
    ``default_rng(tc.shuffle_seed)``.  The parameters and BN buffers of the
    epoch with the lowest validation loss are restored before returning.
    ``on_step(epoch, batch, model)`` runs after each optimizer step.
    Schedule decisions use the tolerance-based improvement rule, while the
    restored snapshot is the strict argmin of validation loss.
    """
    x_tr, y_tr = _xy(train_set)
    x_va, y_va = _xy(val_set)
    if len(y_tr) == 0 or len(y_va) == 0:
        raise ContractError("fit: training and validation sets must be non-empty")
    lam = model.cfg.l2
    rng = np.random.default_rng(tc.shuffle_seed)
    opt = Adam(model.parameters(), tc.beta1, tc.beta2, tc.adam_eps)
    ctl = PlateauController.from_config(tc)
    log = TrainingLog()
    best_state = snapshot(model)
    n = len(y_tr)
    for epoch in range(1, tc.max_epochs + 1):
        lr = ctl.lr
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start : start + tc.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            model.zero_grad()
            try:
                probs = model.forward(xb, "train")
                loss, dprobs = loss_with_l2(probs, yb, model, lam)
                if not math.isfinite(loss):
                    raise NonFiniteError("loss is not finite")
                model.backward(dprobs)
                opt.step(lr)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from exc
            loss_sum += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == yb))
            if on_step is not None:
                on_step(epoch, b, model)
        val_loss, val_acc = evaluate_loss(model, x_va, y_va, lam)
        log.epoch.append(epoch)
        log.train_loss.append(loss_sum / n)
        log.train_acc.append(correct / n)
        log.val_loss.append(val_loss)
        log.val_acc.append(val_acc)
        log.lr.append(lr)
        _, stop = ctl.update(val_loss)
        if val_loss < log.best_val_loss:
            best_state = snapshot(model)
            log.best_epoch, log.best_val_loss = epoch, val_loss
        if on_epoch is not None:
            on_epoch(epoch, log)
        log.stopped_epoch = epoch
        if stop:
            log.stop_reason = "early_stop"
            break
    else:
        log.stop_reason = "max_epochs"
    if log.best_epoch:
        restore(model, best_state)
    log.optimizer = opt
    log.rng_state = rng.bit_generator.state
    return log
