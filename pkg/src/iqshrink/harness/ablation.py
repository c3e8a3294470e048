"""Configuration sweep: accuracy alongside params, FLOPs and latency."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..model.network import ModelConfig, build_model
from ..model.profile import count_flops, count_params
from ..model.train import TrainConfig, fit
from ..signals.dataset import Dataset, split_stratified
from .metrics import evaluate_metrics, measure_latency

CONFIG_COLUMNS = ("units", "d", "heads", "ccsa_depth", "depth_a", "depth_b", "C")


@dataclass
class AblationRow:
    name: str
    config: dict
    seed: str  # a seed number, or "mean" for the aggregated row
    avg_accuracy: float
    max_accuracy: float
    params: int
    flops: int
    inference_time_per_sample: float
    seeds: list = field(default_factory=list)

    def as_record(self) -> dict:
        rec = {"name": self.name, "seed": self.seed}
        rec.update({k: self.config[k] for k in CONFIG_COLUMNS})
        rec.update(
            avg_accuracy=self.avg_accuracy,
            max_accuracy=self.max_accuracy,
            params=self.params,
            flops=self.flops,
            inference_time_per_sample=self.inference_time_per_sample,
            seeds=" ".join(str(s) for s in self.seeds),
        )
        return rec


def run_ablation(
    grid,
    dataset: Dataset,
    tc: TrainConfig,
    seeds=(0, 1, 2),
    split_seed: int = 0,
    fractions=(0.7, 0.15, 0.15),
    latency_repeats: int = 100,
    dtype=np.float32,
    on_row=None,
) -> list[AblationRow]:
    """Train each ``(name, ModelConfig)`` in ``grid`` once per seed.

    ``avg_accuracy`` is overall test accuracy and ``max_accuracy`` the best
    per-SNR test accuracy.  The seed controls both initialisation and batch
    order; the data split is shared by every run.
    """
    tr, va, te = split_stratified(dataset, fractions, split_seed)
    train, val, test = dataset.subset(tr), dataset.subset(va), dataset.subset(te)
    rows: list[AblationRow] = []
    for name, cfg in grid:
        cfg = replace(cfg, num_classes=dataset.num_classes, T=dataset.T)
        per_seed = []
        for s in seeds:
            model = build_model(replace(cfg, seed=int(s)), dtype)
            fit(model, train, val, replace(tc, shuffle_seed=int(s)))
            rep = evaluate_metrics(model, test, profile=False)
            row = AblationRow(
                name,
                cfg.to_dict(),
                str(s),
                rep.overall_accuracy,
                max(rep.per_snr_accuracy.values()),
                count_params(model)[0],
                count_flops(model)[0],
                measure_latency(model, repeats=latency_repeats),
                [int(s)],
            )
            per_seed.append(row)
            rows.append(row)
            if on_row is not None:
                on_row(row)
        rows.append(
            AblationRow(
                name,
                cfg.to_dict(),
                "mean",
                float(np.mean([r.avg_accuracy for r in per_seed])),
                float(np.mean([r.max_accuracy for r in per_seed])),
                per_seed[0].params,
                per_seed[0].flops,
                float(np.median([r.inference_time_per_sample for r in per_seed])),
                [int(s) for s in seeds],
            )
        )
    return rows
