"""Gated temporal diffusion for stochastic dense action anticipation."""

from gtd.data import DataConfig, Dataset, generate, read_dataset, write_dataset
from gtd.diffusion import DiffusionConfig, denoise_loop, make_schedule, sample_many
from gtd.errors import ConfigError, FormatError, GTDError, NonFiniteError, ShapeError
from gtd.gtan import GtanConfig, gtan_forward, init_params
from gtd.metrics import evaluate_predictions, mfss, moc
from gtd.trainer import TrainConfig, Trainer, load_checkpoint, save_checkpoint

__all__ = [
    "ConfigError",
    "DataConfig",
    "Dataset",
    "DiffusionConfig",
    "FormatError",
    "GTDError",
    "GtanConfig",
    "NonFiniteError",
    "ShapeError",
    "TrainConfig",
    "Trainer",
    "denoise_loop",
    "evaluate_predictions",
    "generate",
    "gtan_forward",
    "init_params",
    "load_checkpoint",
    "make_schedule",
    "mfss",
    "moc",
    "read_dataset",
    "sample_many",
    "save_checkpoint",
    "write_dataset",
]
