"""Network assembly, training, checkpoints and accounting."""
from .checkpoint import load_checkpoint, save_checkpoint
from .network import AmcNet, ModelConfig, build_model
from .profile import ccsa_flops, count_flops, count_params
from .train import Adam, PlateauController, TrainConfig, TrainingLog, fit, loss_with_l2

__all__ = [
    "Adam",
    "AmcNet",
    "ModelConfig",
    "PlateauController",
    "TrainConfig",
    "TrainingLog",
    "build_model",
    "ccsa_flops",
    "count_flops",
    "count_params",
    "fit",
    "load_checkpoint",
    "loss_with_l2",
    "save_checkpoint",
]
