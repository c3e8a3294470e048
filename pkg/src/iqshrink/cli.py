"""Command-line entry point: ``iqshrink <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import dataset_spec_from, model_and_train_from, parse_flat, parse_sections, read_text
from .errors import ConfigError, IQShrinkError
from .gradsuite import run_suite
from .harness.ablation import run_ablation
from .harness.crossval import run_crossval
from .harness.metrics import evaluate_metrics
from .harness.reports import emit_reports
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.network import ModelConfig, build_model
from .model.profile import count_flops, count_params
from .model.train import fit
from .signals.dataset import generate_dataset, split_stratified
from .signals.io import read_dataset, write_dataset


def _model_config(kwargs: dict, data) -> ModelConfig:
    """Fill ``num_classes``/``T`` from the data; explicit values must agree."""
    for key, actual in (("num_classes", data.num_classes), ("T", data.T)):
        if key in kwargs and kwargs[key] != actual:
            raise ConfigError(f"config sets {key}={kwargs[key]} but the dataset has {key}={actual}")
        kwargs[key] = actual
    return ModelConfig(**kwargs)


def _say(msg: str):
    print(msg, flush=True)


def cmd_gen_data(args):
    spec = dataset_spec_from(parse_flat(read_text(args.spec), args.spec))
    ds = generate_dataset(spec)
    write_dataset(args.out, ds)
    _say(f"wrote {len(ds)} frames ({len(spec.schemes)} classes x {len(spec.snr_grid_db)} SNRs x {spec.frames_per_cell}) to {args.out}")


def cmd_train(args):
    mk, tc = model_and_train_from(parse_flat(read_text(args.config), args.config))
    data = read_dataset(args.data)
    cfg = _model_config(mk, data)
    tr, va, te = split_stratified(data, tc.split_fractions, tc.split_seed)
    model = build_model(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def on_epoch(epoch, log):
        _say(f"epoch {epoch}: train_loss={log.train_loss[-1]:.4f} val_loss={log.val_loss[-1]:.4f} "
             f"val_acc={log.val_acc[-1]:.4f} lr={log.lr[-1]:.3g}")

    log = fit(model, data.subset(tr), data.subset(va), tc, on_epoch=on_epoch)
    save_checkpoint(out / "model.iqck", model, tc, log.optimizer, log.rng_state,
                    extra={"best_epoch": log.best_epoch, "stopped_epoch": log.stopped_epoch})
    report = evaluate_metrics(model, data.subset(te), profile=not args.no_profile)
    emit_reports(out, metrics=report, log=log, extra={"split_sizes": [len(tr), len(va), len(te)]})
    _say(f"test accuracy {report.overall_accuracy:.4f}; outputs in {out}")


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    if data.T != ck.model.cfg.T or data.num_classes != ck.model.cfg.num_classes:
        raise ConfigError("dataset frame length or class count does not match the checkpoint")
    report = evaluate_metrics(ck.model, data, profile=not args.no_profile)
    emit_reports(args.out, metrics=report)
    _say(f"accuracy {report.overall_accuracy:.4f} macro-F1 {report.macro_f1:.4f}; outputs in {args.out}")


def cmd_crossval(args):
    mk, tc = model_and_train_from(parse_flat(read_text(args.config), args.config))
    data = read_dataset(args.data)
    cfg = _model_config(mk, data)

    def on_fold(k, rep):
        _say(f"fold {k + 1}: accuracy={rep.overall_accuracy:.4f} macro_f1={rep.macro_f1:.4f}")

    result = run_crossval(data, cfg, tc, folds=args.folds, seed=tc.split_seed, on_fold=on_fold)
    emit_reports(args.out, crossval=result)
    for name, (m, s) in result.summary().items():
        _say(f"{name}: {m:.4f} +- {s:.4f}")


def cmd_ablate(args):
    shared, sections = parse_sections(read_text(args.grid), args.grid)
    if not sections:
        raise ConfigError(f"{args.grid}: a grid file needs at least one [section]")
    data = read_dataset(args.data)
    grid, tc = [], None
    for name, values in sections:
        mk, tc_i = model_and_train_from({**shared, **values})
        if tc is not None and tc_i != tc:
            raise ConfigError(f"{args.grid}: training keys must be shared, section [{name}] overrides them")
        tc = tc_i
        grid.append((name, _model_config(mk, data)))
    rows = run_ablation(grid, data, tc, seeds=list(range(args.seeds)), split_seed=tc.split_seed,
                        fractions=tc.split_fractions,
                        on_row=lambda r: _say(f"{r.name} seed {r.seed}: avg={r.avg_accuracy:.4f} max={r.max_accuracy:.4f}"))
    emit_reports(args.out, ablation=rows)


def cmd_grad_check(args):
    outcomes = run_suite(args.seed, full_model=args.full_model)
    width = max(len(o.name) for o in outcomes)
    for o in outcomes:
        _say(f"{'PASS' if o.passed else 'FAIL'}  {o.name:<{width}}  {o.max_error:.3e}  (tol {o.tol:g})")
    return 0 if all(o.passed for o in outcomes) else 1


def cmd_profile(args):
    mk, _ = model_and_train_from(parse_flat(read_text(args.config), args.config))
    model = build_model(ModelConfig(**mk))
    total, parts = count_params(model)
    flops, fparts = count_flops(model)
    _say(f"params {total}")
    for k, v in parts.items():
        _say(f"  {k:<24} {v}")
    _say(f"flops {flops} ({flops / 1e6:.3f} M per frame)")
    for k, v in fparts.items():
        _say(f"  {k:<24} {v}")
    if args.json:
        _say(json.dumps({"params": total, "param_breakdown": parts, "flops": flops, "flop_breakdown": fparts}, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iqshrink", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", help="train on a stratified split and evaluate on its test part")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-profile", action="store_true", help="skip the latency measurement")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--no-profile", action="store_true", help="skip the latency measurement")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("crossval", help="stratified k-fold cross-validation")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--folds", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("ablate", help="train a grid of configurations over several seeds")
    s.add_argument("--grid", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("grad-check", help="finite-difference gradient suite")
    s.add_argument("--full-model", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("profile", help="print parameter and FLOP breakdowns for a config")
    s.add_argument("--config", required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_profile)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except (IQShrinkError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
