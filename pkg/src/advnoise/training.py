"""Adversarial training: inner PGD maximization, weighted ensemble loss,
and joint momentum-SGD updates of weights and noise coefficients.

Determinism contract: every epoch derives its shuffle and noise streams
from (config.seed, epoch) alone, so a run resumed from an epoch-boundary
checkpoint retraces the uninterrupted run bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackConfig, pgd, predict_label
from .errors import ConfigError, TrainingError
from .nn import Model
from .rng import Rng
from .tensor import Tensor

_SHUFFLE_STREAM = 0x5AFE
_NOISE_STREAM = 0xA11CE


@dataclass
class TrainConfig:
    """Training-loop hyperparameters.

    ``inner_attack`` set (with a positive epsilon) and ``adv_weight`` > 0
    turns on adversarial training; otherwise the loop degrades to plain
    momentum SGD on the clean loss. Weight decay applies to weights and
    biases only — never to noise coefficients.
    """

    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    clean_weight: float = 0.5
    adv_weight: float = 0.5
    inner_attack: AttackConfig | None = None
    alpha_grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, "
                              f"got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, "
                              f"got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), "
                              f"got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, "
                              f"got {self.weight_decay}")
        if self.clean_weight + self.adv_weight <= 0:
            raise ConfigError("clean_weight + adv_weight must be > 0")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise ConfigError(f"lr_decay_factor must be in (0, 1], "
                              f"got {self.lr_decay_factor}")
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)

    @property
    def adversarial(self) -> bool:
        return (self.inner_attack is not None and self.adv_weight > 0
                and self.inner_attack.epsilon > 0)

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * self.lr_decay_factor ** drops


@dataclass
class EpochStats:
    """Per-epoch training record: loss/accuracy aggregates, per-batch loss
    traces, and the noise-coefficient trajectory."""

    epoch: int
    lr: float
    clean_loss: float
    clean_accuracy: float
    adv_loss: float | None
    adv_accuracy: float | None
    clean_loss_trace: list = field(default_factory=list)
    adv_loss_trace: list = field(default_factory=list)
    coefficient_trace: list = field(default_factory=list)
    coefficients: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "lr": self.lr,
            "clean_loss": self.clean_loss,
            "clean_accuracy": self.clean_accuracy,
            "adv_loss": self.adv_loss,
            "adv_accuracy": self.adv_accuracy,
            "clean_loss_trace": list(self.clean_loss_trace),
            "adv_loss_trace": list(self.adv_loss_trace),
            "coefficient_trace": list(self.coefficient_trace),
            "coefficients": dict(self.coefficients),
        }


class MomentumSgd:
    """Momentum SGD over named weight tensors, with optional L2 weight
    decay folded into the gradient. Velocities are keyed by parameter name
    so they can be checkpointed and restored."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, named_params, lr: float) -> None:
        for name, param in named_params:
            grad = param.grad + self.weight_decay * param.data
            v = self.velocity.get(name)
            v = grad if v is None else self.momentum * v + grad
            self.velocity[name] = v
            param.data = param.data - lr * v

    def state_dict(self) -> dict:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_dict(self, state: dict) -> None:
        self.velocity = {name: np.asarray(v, dtype=np.float64).copy()
                         for name, v in state.items()}


def ensemble_loss(model: Model, x, x_adv, labels,
                  clean_weight: float = 0.5, adv_weight: float = 0.5,
                  trace: dict | None = None) -> Tensor:
    """clean_weight * CE(model(x)) + adv_weight * CE(model(x_adv)).

    Each term runs its own forward pass and therefore samples its own
    noise. Zero-weight terms are skipped entirely (no forward, no noise
    draw). ``trace``, when given, receives the per-term float losses and
    logits for bookkeeping.
    """
    if clean_weight + adv_weight <= 0:
        raise ConfigError("clean_weight + adv_weight must be > 0")
    if x_adv is not None and np.shape(x_adv) != np.shape(x):
        raise ConfigError(f"ensemble_loss: clean batch {np.shape(x)} and "
                          f"adversarial batch {np.shape(x_adv)} differ")
    total = None
    if clean_weight > 0:
        logits = model.forward(x)
        clean = T.softmax_cross_entropy(logits, labels)
        total = clean_weight * clean
        if trace is not None:
            trace["clean_loss"] = clean.item()
            trace["clean_logits"] = logits.data
    if adv_weight > 0 and x_adv is not None:
        logits = model.forward(x_adv)
        adv = T.softmax_cross_entropy(logits, labels)
        term = adv_weight * adv
        total = term if total is None else total + term
        if trace is not None:
            trace["adv_loss"] = adv.item()
            trace["adv_logits"] = logits.data
    if total is None:
        raise ConfigError("ensemble_loss: no active loss term (clean_weight "
                          "is 0 and no adversarial batch)")
    return total


def epoch_streams(seed: int, epoch: int) -> tuple[Rng, Rng]:
    """(shuffle, noise) streams for an epoch, derived from the seed alone
    so interrupted and uninterrupted runs see identical randomness."""
    base = Rng(seed)
    return (base.spawn(_SHUFFLE_STREAM + 2 * epoch),
            base.spawn(_NOISE_STREAM + 2 * epoch))


def adv_train_epoch(model: Model, dataset, config: TrainConfig,
                    optimizer: MomentumSgd, epoch: int) -> EpochStats:
    """One pass over the dataset: predict generation labels, build PGD
    examples, backprop the ensemble loss, and update weights and noise
    coefficients."""
    x_all = np.asarray(dataset.x, dtype=np.float64)
    t_all = np.asarray(dataset.labels)
    n = len(x_all)
    lr = config.lr_at(epoch)
    shuffle_rng, noise_rng = epoch_streams(config.seed, epoch)
    model.rng = noise_rng
    order = shuffle_rng.permutation(n)

    params = model.parameters()
    coefficients = model.coefficients()
    clean_losses: list[float] = []
    adv_losses: list[float] = []
    coeff_trace: list[dict] = []
    clean_hits = 0
    adv_hits = 0

    for start in range(0, n, config.batch_size):
        batch = order[start:start + config.batch_size]
        xb, tb = x_all[batch], t_all[batch]

        x_hat = None
        if config.adversarial:
            t_gen = predict_label(model, xb)
            x_hat = pgd(model, xb, t_gen, config.inner_attack).x_adv

        model.zero_grad()
        trace: dict = {}
        loss = ensemble_loss(model, xb, x_hat, tb,
                             clean_weight=config.clean_weight,
                             adv_weight=config.adv_weight, trace=trace)
        if not np.isfinite(loss.data):
            raise TrainingError(
                f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}; "
                f"noise coefficients: {model.coefficient_values()}")
        loss.backward()
        optimizer.step(params, lr)
        for _, coeff in coefficients:
            coeff.momentum_step(config.momentum, lr,
                                grad_clip=config.alpha_grad_clip)

        if "clean_loss" in trace:
            clean_losses.append(trace["clean_loss"])
            clean_hits += int((trace["clean_logits"].argmax(axis=1)
                               == tb).sum())
        if "adv_loss" in trace:
            adv_losses.append(trace["adv_loss"])
            adv_hits += int((trace["adv_logits"].argmax(axis=1) == tb).sum())
        coeff_trace.append(model.coefficient_values())

    return EpochStats(
        epoch=epoch,
        lr=lr,
        clean_loss=float(np.mean(clean_losses)) if clean_losses else 0.0,
        clean_accuracy=clean_hits / n if clean_losses else 0.0,
        adv_loss=float(np.mean(adv_losses)) if adv_losses else None,
        adv_accuracy=adv_hits / n if adv_losses else None,
        clean_loss_trace=clean_losses,
        adv_loss_trace=adv_losses,
        coefficient_trace=coeff_trace,
        coefficients=model.coefficient_values(),
    )


def train(model: Model, dataset, config: TrainConfig,
          optimizer: MomentumSgd | None = None,
          start_epoch: int = 0) -> tuple[list, MomentumSgd]:
    """Run epochs [start_epoch, config.epochs); returns the per-epoch stats
    and the optimizer (for checkpointing). Resuming with the optimizer and
    epoch from a checkpoint reproduces the uninterrupted run exactly."""
    if optimizer is None:
        optimizer = MomentumSgd(config.momentum, config.weight_decay)
    history = []
    for epoch in range(start_epoch, config.epochs):
        history.append(adv_train_epoch(model, dataset, config, optimizer,
                                       epoch))
    return history, optimizer
