"""Scikit-learn style front end.

``RobustClassifier`` wraps spec building, noise-aware adversarial
training, and prediction behind the usual ``fit``/``predict`` estimator
contract, so the library composes with pipelines, ``clone``, and grid
search. Features are min-max scaled to [0, 1] internally (the attack
budget ``epsilon`` is expressed in those scaled units), and labels may be
arbitrary hashables; ``classes_`` preserves the original values.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attacks import AttackConfig
from .data import Dataset
from .nn import ModelSpec, build
from .rng import Rng
from .tensor import softmax
from .training import TrainConfig, train

_PREDICT_STREAM = 0xF17


class RobustClassifier(ClassifierMixin, BaseEstimator):
    """Dense classifier trained with trainable-noise layers and an inner
    gradient attack.

    Parameters mirror the library's training/attack configs: ``noise``
    picks the injection placement for every hidden layer ("none" trains a
    plain network), ``epsilon``/``attack_steps`` shape the inner attack
    (``adv_weight=0`` or ``epsilon=0`` disables it), and
    ``noise_at_predict`` keeps injection live at inference, which is the
    defended deployment mode.
    """

    def __init__(self, hidden_units=(32,), noise="weight", epochs=10,
                 batch_size=32, learning_rate=0.1, momentum=0.9,
                 weight_decay=0.0, clean_weight=0.5, adv_weight=0.5,
                 epsilon=0.1, attack_steps=7, attack_step_size=None,
                 noise_at_predict=True, seed=0):
        self.hidden_units = hidden_units
        self.noise = noise
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clean_weight = clean_weight
        self.adv_weight = adv_weight
        self.epsilon = epsilon
        self.attack_steps = attack_steps
        self.attack_step_size = attack_step_size
        self.noise_at_predict = noise_at_predict
        self.seed = seed

    def _build_spec(self, n_features: int, n_classes: int) -> ModelSpec:
        layers = []
        for units in self.hidden_units:
            layers.append({"type": "dense", "units": int(units),
                           "noise": self.noise})
            layers.append({"type": "relu"})
        layers.append({"type": "dense", "units": n_classes})
        return ModelSpec(layers=layers, input_shape=(n_features,),
                         n_classes=n_classes)

    def _train_config(self) -> TrainConfig:
        inner = None
        if self.adv_weight > 0 and self.epsilon > 0:
            step = self.attack_step_size
            if step is None and self.attack_steps > 1:
                step = self.epsilon / self.attack_steps
            inner = AttackConfig(epsilon=self.epsilon, step_size=step,
                                 n_step=self.attack_steps)
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate,
                           momentum=self.momentum,
                           weight_decay=self.weight_decay,
                           clean_weight=self.clean_weight,
                           adv_weight=self.adv_weight, inner_attack=inner,
                           seed=self.seed)

    def _scale(self, x: np.ndarray) -> np.ndarray:
        span = np.where(self.x_range_ > 0, self.x_range_, 1.0)
        return np.clip((x - self.x_min_) / span, 0.0, 1.0)

    def fit(self, x, y):
        x, y = check_X_y(x, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("RobustClassifier needs at least 2 classes, "
                             f"got {len(self.classes_)}")
        self.n_features_in_ = x.shape[1]
        self.x_min_ = x.min(axis=0)
        self.x_range_ = x.max(axis=0) - self.x_min_
        indices = np.searchsorted(self.classes_, y)

        spec = self._build_spec(self.n_features_in_, len(self.classes_))
        self.model_ = build(spec, Rng(self.seed))
        dataset = Dataset(self._scale(x), indices,
                          n_classes=len(self.classes_))
        self.history_, self.optimizer_ = train(self.model_, dataset,
                                               self._train_config())
        return self

    def decision_function(self, x) -> np.ndarray:
        """Class scores (logits); noise is live when ``noise_at_predict``."""
        check_is_fitted(self, "model_")
        x = check_array(x, dtype=np.float64)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, "
                             f"got {x.shape[1]}")
        self.model_.rng = Rng(self.seed).spawn(_PREDICT_STREAM)
        return self.model_.predict_logits(
            self._scale(x), noise_enabled=self.noise_at_predict)

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.decision_function(x))

    def predict(self, x) -> np.ndarray:
        scores = self.decision_function(x)
        return self.classes_[np.argmax(scores, axis=1)]
