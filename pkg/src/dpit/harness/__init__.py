"""Configuration, training stages, checkpoints, inference and the ablation grid."""
from .checkpoint import Checkpoint
from .config import TrainConfig, load_config
from .train import train_stage, train_stage1, train_stage2

__all__ = ["Checkpoint", "TrainConfig", "load_config", "train_stage", "train_stage1", "train_stage2"]
