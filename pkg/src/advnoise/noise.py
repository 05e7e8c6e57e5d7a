"""Trainable scaled Gaussian noise injection.

A noisy tensor is v + scale * eta, where eta ~ N(0, std(v)^2) is drawn
fresh on every forward pass and scale is a single trainable coefficient
shared across the whole tensor (one coefficient per layer). The noise
standard deviation tracks the current tensor's population std, and both
std and the realized sample are constants during back-propagation: the
gradient w.r.t. the coefficient is just sum(upstream * eta).

The coefficient has its own momentum update that never sees weight
decay; decay would drag the learned noise level to zero.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .rng import Rng
from .tensor import Tensor

DEFAULT_SCALE_INIT = 0.25


class Placement(str, Enum):
    """Where a layer injects noise.

    weight   -> on the weight tensor, before the linear op
    input    -> on the network input (model-level; first tensor seen)
    act_in   -> on the layer's input tensor
    act_out  -> on the layer's output tensor
    hybrids combine weight noise with one activation placement, each
    with its own coefficient.
    """

    NONE = "none"
    WEIGHT = "weight"
    INPUT = "input"
    ACT_IN = "act_in"
    ACT_OUT = "act_out"
    WEIGHT_ACT_IN = "weight+act_in"
    WEIGHT_ACT_OUT = "weight+act_out"

    @property
    def on_weight(self) -> bool:
        return self in (Placement.WEIGHT, Placement.WEIGHT_ACT_IN,
                        Placement.WEIGHT_ACT_OUT)

    @property
    def on_act_in(self) -> bool:
        return self in (Placement.ACT_IN, Placement.WEIGHT_ACT_IN)

    @property
    def on_act_out(self) -> bool:
        return self in (Placement.ACT_OUT, Placement.WEIGHT_ACT_OUT)


def parse_placement(value) -> Placement:
    if value is None:
        return Placement.NONE
    if isinstance(value, Placement):
        return value
    try:
        return Placement(str(value))
    except ValueError:
        valid = ", ".join(p.value for p in Placement)
        raise ValueError(f"unknown noise placement {value!r}; expected one of {valid}") from None


class NoiseCoefficient:
    """One trainable noise scaling coefficient with its momentum velocity."""

    def __init__(self, name: str, init: float = DEFAULT_SCALE_INIT):
        self.name = name
        self.scale = Tensor(np.asarray(float(init)), requires_grad=True)
        self.velocity = 0.0

    @property
    def value(self) -> float:
        return float(self.scale.data)

    def __repr__(self) -> str:
        return f"NoiseCoefficient({self.name!r}, scale={self.value:.4f})"

    def momentum_step(self, momentum: float, lr: float,
                      grad: float | None = None,
                      grad_clip: float | None = None) -> None:
        """v <- momentum * v + grad; scale <- scale - lr * v.

        No weight decay, ever. grad defaults to the accumulated autodiff
        gradient; grad_clip (off by default) bounds |grad| as a guard
        against occasional blow-ups of the noisy estimator.
        """
        if grad is None:
            grad = float(self.scale.grad) if self.scale.grad is not None else 0.0
        if grad_clip is not None:
            grad = float(np.clip(grad, -grad_clip, grad_clip))
        self.velocity = momentum * self.velocity + grad
        self.scale = Tensor(self.scale.data - lr * self.velocity,
                            requires_grad=True)


def tensor_std(v) -> float:
    """Population standard deviation of a tensor's values (ddof=0).

    Detached by construction: callers fold it into the realized noise
    sample, which backward treats as a constant. A single element gives 0.
    """
    arr = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    return float(arr.std())


def inject_gradients(upstream: np.ndarray, eta: np.ndarray):
    """Backward rule of the injection: the value path is the identity and
    the coefficient gradient is the sum of upstream * eta over the tensor."""
    if upstream.shape != eta.shape:
        raise ValueError(
            f"inject_gradients: upstream {upstream.shape} vs noise {eta.shape}")
    return upstream, float((upstream * eta).sum())


def inject(v: Tensor, coeff: NoiseCoefficient, rng: Rng | None = None,
           enabled: bool = True, unit_noise: np.ndarray | None = None,
           noise_sample: np.ndarray | None = None):
    """Return (v + scale * eta, eta) with eta = std(v) * unit draw.

    A fresh draw is taken from rng on every call; unit_noise overrides the
    unit draw, and noise_sample overrides the realized eta outright (the
    frozen-noise oracle path: eta then no longer tracks std(v)). Disabled
    injection returns v itself, bit-identical, and a zero noise sample.
    """
    if not enabled:
        return v, np.zeros_like(v.data)
    if noise_sample is not None:
        eta = np.asarray(noise_sample, dtype=np.float64)
    else:
        sigma = tensor_std(v)
        if unit_noise is None:
            if rng is None:
                raise ValueError(
                    "inject: need an rng when no unit_noise is supplied")
            unit_noise = rng.normal(v.shape)
        eta = sigma * np.asarray(unit_noise, dtype=np.float64)
    if eta.shape != v.shape:
        raise ValueError(
            f"inject: noise shape {eta.shape} does not match tensor {v.shape}")
    scale = coeff.scale
    out_data = v.data + float(scale.data) * eta

    def backward(g):
        grad_v, grad_scale = inject_gradients(g, eta)
        v.grad += grad_v
        scale.grad += grad_scale

    return Tensor(out_data, parents=(v, scale), backward=backward), eta
