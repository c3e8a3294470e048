"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeats N]

Times each kernel at the shapes the desk-scale model produces, then one full
training step of that model with each backend swapped in.
"""
import argparse
import os
import timeit

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np  # noqa: E402

from iqshrink.model import ModelConfig, build_model, loss_with_l2  # noqa: E402
from iqshrink.tensor import kernels  # noqa: E402

try:
    from iqshrink.tensor import _ckernels
except ImportError:
    _ckernels = None

NAMES = ("garrote_channel_forward", "garrote_channel_backward", "lstm_sequence_forward", "lstm_sequence_backward")


def backends():
    out = {"numpy": {n: getattr(kernels, "_np_" + n) for n in NAMES}}
    if _ckernels is not None:
        out["compiled"] = {n: getattr(_ckernels, n) for n in NAMES}
    return out


def best_ms(fn, repeats):
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeats))


def kernel_cases(rng, dtype):
    u = rng.standard_normal((128, 64, 2, 16)).astype(dtype)
    t = np.abs(rng.standard_normal((128, 16))).astype(dtype)
    zx = rng.standard_normal((128, 128, 64)).astype(dtype)
    Wh = (0.1 * rng.standard_normal((16, 64))).astype(dtype)
    return u, t, zx, Wh


def bench_kernels(impl, repeats, dtype):
    u, t, zx, Wh = kernel_cases(np.random.default_rng(0), dtype)
    y, cache = impl["garrote_channel_forward"](u, t)
    saved = impl["lstm_sequence_forward"](zx, Wh)
    dH = saved[0]
    return {
        "garrote fwd": best_ms(lambda: impl["garrote_channel_forward"](u, t), repeats),
        "garrote bwd": best_ms(lambda: impl["garrote_channel_backward"](y, cache), repeats),
        "lstm fwd": best_ms(lambda: impl["lstm_sequence_forward"](zx, Wh), repeats),
        "lstm bwd": best_ms(lambda: impl["lstm_sequence_backward"](dH, saved, Wh), repeats),
    }


def bench_step(impl, repeats):
    for n, fn in impl.items():
        setattr(kernels, n, fn)
    cfg = ModelConfig(units=16, d=16, heads=2, ccsa_depth=2, depth_a=2, depth_b=2, C=8, num_classes=6, T=128)
    model = build_model(cfg)
    rng = np.random.default_rng(1)
    x = rng.standard_normal((128, 128, 2)).astype(np.float32)
    y = rng.integers(0, 6, 128)

    def step():
        model.zero_grad()
        probs = model.forward(x, "train")
        model.backward(loss_with_l2(probs, y, model, cfg.l2)[1])

    return best_ms(step, repeats)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    impls = backends()
    if "compiled" not in impls:
        print("compiled extension not built; timing numpy only")
    original = {n: getattr(kernels, n) for n in NAMES}
    rows = {}
    for name, impl in impls.items():
        rows[name] = bench_kernels(impl, args.repeats, np.float32)
        rows[name]["train step (batch 128)"] = bench_step(impl, max(2, args.repeats // 2))
    selected = bench_step(original, max(2, args.repeats // 2))
    for n, fn in original.items():
        setattr(kernels, n, fn)
    labels = list(next(iter(rows.values())))
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in rows) + ("     speedup" if len(rows) > 1 else ""))
    for lab in labels:
        line = f"{lab:<24}" + "".join(f"{rows[b][lab]:>10.2f}ms" for b in rows)
        if len(rows) > 1:
            line += f"{rows['numpy'][lab] / rows['compiled'][lab]:>11.2f}x"
        print(line)
    print(f"train step with the import-time selection ({kernels.BACKEND}): {selected:.2f}ms")


if __name__ == "__main__":
    main()
