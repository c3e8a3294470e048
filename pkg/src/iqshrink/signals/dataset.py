"""Labelled synthetic datasets, stratified splits and fold assignment."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ConfigError, ContractError, EnumerationError, StratificationError
from .modulation import SCHEMES, apply_awgn, modulate_frame


@dataclass(frozen=True)
class DatasetSpec:
    schemes: tuple = SCHEMES
    snr_grid_db: tuple = (-10, -5, 0, 10, 20)
    frames_per_cell: int = 100
    T: int = 128
    samples_per_symbol: int = 4
    rrc_rolloff: float = 0.35
    rrc_span: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "snr_grid_db", tuple(int(s) for s in self.snr_grid_db))
        for s in self.schemes:
            if s not in SCHEMES:
                raise EnumerationError(f"unsupported modulation scheme {s!r}; choose from {', '.join(SCHEMES)}")
        problems = []
        if not self.schemes or len(set(self.schemes)) != len(self.schemes):
            problems.append("schemes must be a non-empty list without repeats")
        grid = self.snr_grid_db
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            problems.append("snr_grid_db must be non-empty and strictly increasing")
        if any(not -32768 <= s <= 32767 for s in grid):
            problems.append("SNR values must fit in 16 bits")
        if self.frames_per_cell < 1 or self.T < 1 or self.samples_per_symbol < 1 or self.rrc_span < 1:
            problems.append("frames_per_cell, T, samples_per_symbol and rrc_span must be >= 1")
        if not 0 <= self.rrc_rolloff <= 1:
            problems.append("rrc_rolloff must be in [0, 1]")
        if problems:
            raise ConfigError("invalid DatasetSpec: " + "; ".join(problems))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = list(self.schemes)
        d["snr_grid_db"] = list(self.snr_grid_db)
        return d

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass
class Dataset:
    """Frames as a ``N x T x 2`` float32 array with integer labels and SNRs."""

    x: np.ndarray
    labels: np.ndarray
    snr: np.ndarray
    snr_grid: tuple
    num_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.snr = np.asarray(self.snr, dtype=np.int64)
        self.snr_grid = tuple(int(s) for s in self.snr_grid)
        if self.x.ndim != 3 or self.x.shape[2] != 2 or len(self.labels) != len(self.x) or len(self.snr) != len(self.x):
            raise ContractError(f"dataset: inconsistent shapes x={self.x.shape}, labels={self.labels.shape}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def T(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.labels[idx], self.snr[idx], self.snr_grid, self.num_classes)

    def cells(self) -> dict:
        """Index arrays for every (class, SNR) stratum, in sorted key order."""
        out = {}
        for c in range(self.num_classes):
            for s in self.snr_grid:
                out[(c, s)] = np.flatnonzero((self.labels == c) & (self.snr == s))
        return out


def frame_rng(seed: int, cell: int, frame: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, cell, frame]))


def generate_dataset(spec: DatasetSpec, noiseless: bool = False) -> Dataset:
    """Every (scheme, SNR) cell gets exactly ``frames_per_cell`` frames.

    Frame ``f`` of cell ``c`` draws its bits and then its noise from
    ``SeedSequence([seed, c, f])``, so content never depends on generation
    order.  ``noiseless=True`` returns the same frames before noise.
    """
    n_snr = len(spec.snr_grid_db)
    N = len(spec.schemes) * n_snr * spec.frames_per_cell
    x = np.empty((N, spec.T, 2), dtype=np.float32)
    labels = np.empty(N, dtype=np.int64)
    snr = np.empty(N, dtype=np.int64)
    i = 0
    for ci, scheme in enumerate(spec.schemes):
        for si, s in enumerate(spec.snr_grid_db):
            cell = ci * n_snr + si
            for f in range(spec.frames_per_cell):
                rng = frame_rng(spec.seed, cell, f)
                mod = modulate_frame(
                    scheme, rng, spec.T, spec.samples_per_symbol, spec.rrc_rolloff, spec.rrc_span, class_id=ci
                )
                rec = mod.record if noiseless else apply_awgn(mod.record, s, rng)
                x[i] = rec.samples
                labels[i] = ci
                snr[i] = s
                i += 1
    return Dataset(x, labels, snr, spec.snr_grid_db, len(spec.schemes))


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [n * f for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda k: (-(raw[k] - counts[k]), k))
    for k in order[: n - sum(counts)]:
        counts[k] += 1
    return counts


def split_stratified(dataset: Dataset, fractions=(0.7, 0.15, 0.15), seed: int = 0):
    """Partition indices into train/val/test with per-cell largest-remainder counts."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ContractError(f"split: need three positive fractions summing to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for key, idx in dataset.cells().items():
        if len(idx) < 3:
            raise StratificationError(f"split: cell {key} has {len(idx)} frames, need >= 3")
        idx = idx[rng.permutation(len(idx))]
        counts = _largest_remainder(len(idx), fractions)
        bounds = np.cumsum([0] + counts)
        for k in range(3):
            parts[k].append(idx[bounds[k] : bounds[k + 1]])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def stratified_folds(dataset: Dataset, folds: int = 5, seed: int = 0) -> list[np.ndarray]:
    """Assign each frame to one of ``folds`` validation folds, balanced per cell."""
    if folds < 2:
        raise ContractError("folds must be >= 2")
    rng = np.random.default_rng(seed)
    out = [[] for _ in range(folds)]
    for key, idx in dataset.cells().items():
        if len(idx) < folds:
            raise StratificationError(f"folds: cell {key} has {len(idx)} frames, fewer than {folds} folds")
        idx = idx[rng.permutation(len(idx))]
        for k, chunk in enumerate(np.array_split(idx, folds)):
            out[k].append(chunk)
    return [np.sort(np.concatenate(p)) for p in out]
