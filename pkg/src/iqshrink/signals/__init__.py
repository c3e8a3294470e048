"""Synthetic I/Q frames: modulators, AWGN, datasets, splits and file IO."""
from .dataset import Dataset, DatasetSpec, generate_dataset, split_stratified, stratified_folds
from .io import decode_dataset, encode_dataset, read_dataset, write_dataset
from .modulation import (
    SCHEMES,
    FrameRecord,
    apply_awgn,
    bits_to_symbols,
    constellation,
    decode_frame,
    modulate_frame,
    rrc_taps,
)

__all__ = [
    "SCHEMES",
    "Dataset",
    "DatasetSpec",
    "FrameRecord",
    "apply_awgn",
    "bits_to_symbols",
    "constellation",
    "decode_dataset",
    "decode_frame",
    "encode_dataset",
    "generate_dataset",
    "modulate_frame",
    "read_dataset",
    "rrc_taps",
    "split_stratified",
    "stratified_folds",
    "write_dataset",
]
