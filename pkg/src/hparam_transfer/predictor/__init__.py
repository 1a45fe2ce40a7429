"""Configuration-conditioned hyperparameter predictor."""

from .losses import active_slot_mse, role_weighted_loss
from .model import (ConfigCNN, EncoderConfig, HyperPredictor, SlotMeta, condition_inputs,
                    meta_vector)
from .training import (Checkpoint, LabeledSet, TrainSchedule, decode_hyper, finetune,
                       learning_rate, load_checkpoint, predict, predict_raw, save_checkpoint,
                       train, train_config_cnn)

__all__ = [
    "active_slot_mse", "role_weighted_loss", "ConfigCNN", "EncoderConfig", "HyperPredictor",
    "SlotMeta", "condition_inputs", "meta_vector", "Checkpoint", "LabeledSet", "TrainSchedule",
    "decode_hyper", "finetune", "learning_rate", "load_checkpoint", "predict", "predict_raw",
    "save_checkpoint", "train", "train_config_cnn",
]
