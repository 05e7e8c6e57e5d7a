"""Trainable Gaussian noise injection with adversarial training, plus the
attack suite and evaluation harness used to measure its robustness."""

from .attacks import (AdversarialBatch, AttackConfig, CwConfig, TrialStats,
                      ZooConfig, cw_l2, fgsm, pgd, predict_label,
                      transfer_attack, zoo_attack)
from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .config import (EvalSettings, ExperimentConfig, Overrides,
                     load_config)
from .data import Dataset, load_dataset, synthetic_dataset
from .errors import (AttackError, CheckpointError, ConfigError,
                     DataFormatError, TrainingError)
from .estimator import RobustClassifier
from .evaluate import (cw_metrics, eval_accuracy, obfuscation_checklist,
                       sweep, zoo_metrics)
from .experiment import run_experiment
from .nn import Model, ModelSpec, build
from .noise import NoiseCoefficient, Placement, inject, parse_placement
from .rng import Rng
from .tensor import Tensor
from .training import (EpochStats, MomentumSgd, TrainConfig, adv_train_epoch,
                       ensemble_loss, train)

__version__ = "0.1.0"

__all__ = [
    "AdversarialBatch", "AttackConfig", "AttackError", "CheckpointBundle",
    "CheckpointError", "ConfigError", "CwConfig", "DataFormatError",
    "Dataset", "EpochStats", "EvalSettings", "ExperimentConfig", "Model",
    "ModelSpec", "MomentumSgd", "NoiseCoefficient", "Overrides",
    "Placement", "Rng", "RobustClassifier", "Tensor", "TrainConfig",
    "TrainingError", "TrialStats", "ZooConfig", "adv_train_epoch", "build",
    "cw_l2", "cw_metrics", "ensemble_loss", "eval_accuracy", "fgsm",
    "inject", "load_checkpoint", "load_config", "load_dataset",
    "obfuscation_checklist", "parse_placement", "pgd", "predict_label",
    "run_experiment", "save_checkpoint", "sweep", "synthetic_dataset",
    "train", "transfer_attack", "zoo_attack", "zoo_metrics",
]
