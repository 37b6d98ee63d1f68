"""Dual-feature-fusion CSI feedback autoencoder on a small numpy autograd engine."""

__version__ = "0.1.0"

from .data import CsiDataset, ScenarioConfig, make_dataset, read_dataset, scenario, write_dataset
from .linksim import LinkConfig, simulate_ber
from .model import DuffinCsiNet, ModelConfig, build_model, load_model, param_count, save_model
from .quantizer import QuantizerCalibration, calibrate
from .trainer import TrainConfig, evaluate, train, train_quantized, transfer_finetune

__all__ = [
    "CsiDataset",
    "DuffinCsiNet",
    "LinkConfig",
    "ModelConfig",
    "QuantizerCalibration",
    "ScenarioConfig",
    "TrainConfig",
    "build_model",
    "calibrate",
    "evaluate",
    "load_model",
    "make_dataset",
    "param_count",
    "read_dataset",
    "save_model",
    "scenario",
    "simulate_ber",
    "train",
    "train_quantized",
    "transfer_finetune",
    "write_dataset",
]
