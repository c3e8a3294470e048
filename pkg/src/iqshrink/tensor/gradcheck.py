"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from ..errors import NonFiniteError
from .core import Parameter


@dataclass
class GradCheckResult:
    max_error: float
    per_param: dict = field(default_factory=dict)
    worst: tuple = ("", ())

    def __float__(self):
        return self.max_error


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def grad_check(
    loss_fn: Callable[[bool], float],
    params: Iterable[Parameter],
    step: float = 1e-5,
    *,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare analytic gradients against central differences.

    ``loss_fn(True)`` must evaluate the loss and fill every ``p.grad`` with
    the analytic gradient; ``loss_fn(False)`` only evaluates.  At most
    ``max_entries`` coordinates per parameter are probed (all by default),
    sampled with ``seed``.  The computation must be deterministic and run
    in 64-bit precision.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    base = loss_fn(True)
    if not math.isfinite(base):
        raise NonFiniteError(f"grad_check: loss is non-finite at the base point ({base})")
    analytic = {p.name: p.grad.copy() for p in params}
    rng = np.random.default_rng(seed)
    result = GradCheckResult(0.0)
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        worst = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            fp = loss_fn(False)
            flat[i] = old - step
            fm = loss_fn(False)
            flat[i] = old
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NonFiniteError(f"grad_check: non-finite loss while perturbing {p.name}[{int(i)}]")
            numeric = (fp - fm) / (2 * step)
            err = relative_error(float(analytic[p.name].reshape(-1)[i]), numeric)
            if err > worst:
                worst = err
            if err > result.max_error:
                result.max_error = err
                result.worst = (p.name, np.unravel_index(int(i), p.shape))
        result.per_param[p.name] = worst
    # Restore the analytic gradients the caller computed.
    for p in params:
        p.grad[...] = analytic[p.name]
    return result


def check_array_function(forward: Callable[[list], float], arrays: list, grads: list, step: float = 1e-5) -> float:
    """Finite-difference check on bare arrays (inputs rather than parameters).

    ``forward(arrays)`` returns a scalar; ``grads`` are the analytic
    gradients of that scalar with respect to each array.
    """
    worst = 0.0
    for a, g in zip(arrays, grads):
        flat = a.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            fp = forward(arrays)
            flat[i] = old - step
            fm = forward(arrays)
            flat[i] = old
            worst = max(worst, relative_error(float(gflat[i]), (fp - fm) / (2 * step)))
    return worst
