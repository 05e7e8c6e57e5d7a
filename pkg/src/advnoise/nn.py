"""Layered feed-forward classifiers on top of the tensor engine.

A model is described by a :class:`ModelSpec` (plain data, JSON-friendly) and
realized by :func:`build`, which draws He-initialized weights from an ``Rng``.
Noise placements from :mod:`advnoise.noise` attach per layer; the model-level
``input_noise`` flag injects on the raw input instead, which is equivalent to
an ``act_in`` placement on the first layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .noise import NoiseCoefficient, Placement, inject, parse_placement
from .rng import Rng
from .tensor import Tensor

_LAYER_KEYS = {
    "conv": {"type", "filters", "kernel", "stride", "padding", "noise"},
    "dense": {"type", "units", "noise"},
    "relu": {"type"},
    "flatten": {"type"},
}


def _positive_int(layer_index: int, spec: dict, key: str, default=None,
                  minimum: int = 1) -> int:
    value = spec.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ConfigError(
            f"layers[{layer_index}]: {key!r} must be an integer >= {minimum}, "
            f"got {value!r}")
    return value


@dataclass
class ModelSpec:
    """Architecture description: an ordered list of layer dicts.

    Layer dicts:
        {"type": "conv", "filters": F, "kernel": K, "stride": S,
         "padding": P, "noise": <placement>}
        {"type": "dense", "units": U, "noise": <placement>}
        {"type": "relu"}
        {"type": "flatten"}

    ``noise`` is optional (default "none") and only allowed on conv/dense
    layers. ``input_shape`` excludes the batch axis: (C, H, W) for conv
    networks, (D,) for purely dense ones.
    """

    layers: list = field(default_factory=list)
    input_shape: tuple = ()
    n_classes: int = 2
    input_noise: bool = False

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        self.layers = [dict(layer) for layer in self.layers]

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        if not isinstance(self.n_classes, int) or self.n_classes < 2:
            raise ConfigError(f"n_classes must be an integer >= 2, "
                              f"got {self.n_classes!r}")
        if not self.input_shape or any(d < 1 for d in self.input_shape):
            raise ConfigError(f"input_shape must be positive dimensions, "
                              f"got {self.input_shape!r}")
        for i, layer in enumerate(self.layers):
            kind = layer.get("type")
            if kind not in _LAYER_KEYS:
                raise ConfigError(
                    f"layers[{i}]: unknown layer type {kind!r}; expected one "
                    f"of {sorted(_LAYER_KEYS)}")
            unexpected = set(layer) - _LAYER_KEYS[kind]
            if unexpected:
                raise ConfigError(
                    f"layers[{i}]: unexpected keys {sorted(unexpected)} for "
                    f"a {kind} layer")
            if "noise" in layer:
                placement = parse_placement(layer["noise"])
                if placement is Placement.INPUT:
                    raise ConfigError(
                        f"layers[{i}]: 'input' is a model-level placement; "
                        f"set input_noise=true instead")
        shapes = self.output_shapes()
        if shapes[-1] != (self.n_classes,):
            raise ConfigError(
                f"last layer produces shape {shapes[-1]}, expected "
                f"({self.n_classes},) logits; end with a dense layer of "
                f"units={self.n_classes}")

    def output_shapes(self) -> list:
        """Per-layer output shapes (batch axis excluded), validating the
        chain as it goes."""
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            kind = layer.get("type")
            if kind == "conv":
                if len(shape) != 3:
                    raise ConfigError(
                        f"layers[{i}]: conv expects (C, H, W) input, "
                        f"got {shape}")
                filters = _positive_int(i, layer, "filters")
                kernel = _positive_int(i, layer, "kernel")
                stride = _positive_int(i, layer, "stride", default=1)
                padding = _positive_int(i, layer, "padding", default=0,
                                        minimum=0)
                _, h, w = shape
                oh = (h + 2 * padding - kernel) // stride + 1
                ow = (w + 2 * padding - kernel) // stride + 1
                if oh < 1 or ow < 1:
                    raise ConfigError(
                        f"layers[{i}]: kernel {kernel} with padding {padding} "
                        f"does not fit the {h}x{w} input")
                shape = (filters, oh, ow)
            elif kind == "flatten":
                shape = (int(np.prod(shape)),)
            elif kind == "dense":
                if len(shape) != 1:
                    raise ConfigError(
                        f"layers[{i}]: dense expects a flat input, got "
                        f"{shape}; add a flatten layer first")
                shape = (_positive_int(i, layer, "units"),)
            elif kind == "relu":
                pass
            else:  # pragma: no cover - caught by validate()
                raise ConfigError(f"layers[{i}]: unknown layer type {kind!r}")
            shapes.append(shape)
        return shapes

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "layers": [dict(layer) for layer in self.layers],
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "input_noise": self.input_noise,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        spec = cls(layers=data["layers"],
                   input_shape=tuple(data["input_shape"]),
                   n_classes=int(data["n_classes"]),
                   input_noise=bool(data.get("input_noise", False)))
        spec.validate()
        return spec


class NoiseContext:
    """Carries the noise state of one forward pass through the layers.

    ``record`` (a list) captures each realized noise sample in injection
    order; ``replay`` (an iterable of samples) feeds them back verbatim,
    which makes the forward pass a deterministic function of the parameters
    and coefficients — the frozen-noise oracle used by gradient checks.
    """

    def __init__(self, rng: Rng | None, enabled: bool = True,
                 record: list | None = None, replay=None):
        self.rng = rng
        self.enabled = enabled
        self.record = record
        self._replay = iter(replay) if replay is not None else None

    def inject(self, value: Tensor, coeff: NoiseCoefficient) -> Tensor:
        if not self.enabled:
            return value
        if self._replay is not None:
            out, eta = inject(value, coeff, noise_sample=next(self._replay))
        else:
            out, eta = inject(value, coeff, rng=self.rng)
        if self.record is not None:
            self.record.append(eta)
        return out


class _NoisyLayer:
    """Shared noise plumbing for layers that own parameters."""

    def __init__(self, index: int, placement: Placement):
        self.placement = placement
        self.coeffs: dict[str, NoiseCoefficient] = {}
        for key, active in (("weight", placement.on_weight),
                            ("act_in", placement.on_act_in),
                            ("act_out", placement.on_act_out)):
            if active:
                self.coeffs[key] = NoiseCoefficient(
                    f"layers.{index}.noise.{key}")

    def _maybe_inject(self, key: str, value: Tensor,
                      ctx: NoiseContext) -> Tensor:
        coeff = self.coeffs.get(key)
        if coeff is None:
            return value
        return ctx.inject(value, coeff)


class Conv2d(_NoisyLayer):
    def __init__(self, index: int, in_channels: int, filters: int,
                 kernel: int, stride: int, padding: int,
                 placement: Placement, rng: Rng):
        super().__init__(index, placement)
        fan_in = in_channels * kernel * kernel
        scale = math.sqrt(2.0 / fan_in)
        self.weight = Tensor(
            rng.normal((filters, in_channels, kernel, kernel)) * scale,
            requires_grad=True)
        self.bias = Tensor(np.zeros(filters), requires_grad=True)
        self.stride = stride
        self.padding = padding

    @property
    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: Tensor, ctx: NoiseContext) -> Tensor:
        x = self._maybe_inject("act_in", x, ctx)
        w = self._maybe_inject("weight", self.weight, ctx)
        y = T.conv2d(x, w, stride=self.stride, padding=self.padding)
        y = T.add_bias(y, self.bias)
        return self._maybe_inject("act_out", y, ctx)


class Dense(_NoisyLayer):
    def __init__(self, index: int, in_features: int, units: int,
                 placement: Placement, rng: Rng):
        super().__init__(index, placement)
        scale = math.sqrt(2.0 / in_features)
        self.weight = Tensor(rng.normal((in_features, units)) * scale,
                             requires_grad=True)
        self.bias = Tensor(np.zeros(units), requires_grad=True)

    @property
    def params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: Tensor, ctx: NoiseContext) -> Tensor:
        x = self._maybe_inject("act_in", x, ctx)
        w = self._maybe_inject("weight", self.weight, ctx)
        y = T.add_bias(T.matmul(x, w), self.bias)
        return self._maybe_inject("act_out", y, ctx)


class ReLU:
    params: dict = {}
    coeffs: dict = {}

    def forward(self, x: Tensor, ctx: NoiseContext) -> Tensor:
        return T.relu(x)


class Flatten:
    params: dict = {}
    coeffs: dict = {}

    def forward(self, x: Tensor, ctx: NoiseContext) -> Tensor:
        return T.reshape(x, (x.shape[0], -1))


class Model:
    """A built network: layer objects plus the rng driving noise draws.

    ``noise_enabled`` is the inference-time switch; ``forward`` accepts a
    per-call override. Disabling noise makes the forward pass bit-identical
    to a noise-free network.
    """

    def __init__(self, spec: ModelSpec, layers: list, rng: Rng,
                 input_coeff: NoiseCoefficient | None = None):
        self.spec = spec
        self.layers = layers
        self.rng = rng
        self.input_coeff = input_coeff
        self.noise_enabled = True

    def forward(self, x, noise_enabled: bool | None = None,
                record_noise: list | None = None,
                replay_noise=None) -> Tensor:
        enabled = self.noise_enabled if noise_enabled is None else noise_enabled
        ctx = NoiseContext(self.rng, enabled=enabled, record=record_noise,
                           replay=replay_noise)
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(
                f"model expects input shape {self.spec.input_shape} after the "
                f"batch axis, got {x.shape[1:]}")
        if self.input_coeff is not None:
            x = ctx.inject(x, self.input_coeff)
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def predict_logits(self, x, noise_enabled: bool | None = None) -> np.ndarray:
        return self.forward(x, noise_enabled=noise_enabled).data

    def parameters(self) -> list:
        """Ordered (name, tensor) pairs for every trainable weight/bias."""
        named = []
        for i, layer in enumerate(self.layers):
            for key, tensor in layer.params.items():
                named.append((f"layers.{i}.{key}", tensor))
        return named

    def coefficients(self) -> list:
        """Ordered (name, NoiseCoefficient) pairs, input coefficient first."""
        named = []
        if self.input_coeff is not None:
            named.append(("input.noise", self.input_coeff))
        for i, layer in enumerate(self.layers):
            for key in sorted(layer.coeffs):
                named.append((f"layers.{i}.noise.{key}", layer.coeffs[key]))
        return named

    def coefficient_values(self) -> dict:
        return {name: coeff.value for name, coeff in self.coefficients()}

    def zero_grad(self) -> None:
        for _, tensor in self.parameters():
            tensor.zero_grad()
        for _, coeff in self.coefficients():
            coeff.scale.zero_grad()


def build(spec: ModelSpec, rng: Rng) -> Model:
    """Validate the spec and construct a model with He-initialized weights.

    Weight draws come from ``rng`` in layer order; the same generator is
    left attached to the model for subsequent noise draws.
    """
    spec.validate()
    shapes = spec.output_shapes()
    layers = []
    in_shape = spec.input_shape
    for i, layer_spec in enumerate(spec.layers):
        kind = layer_spec["type"]
        placement = parse_placement(layer_spec.get("noise", "none"))
        if kind == "conv":
            layers.append(Conv2d(
                i, in_shape[0], layer_spec["filters"], layer_spec["kernel"],
                layer_spec.get("stride", 1), layer_spec.get("padding", 0),
                placement, rng))
        elif kind == "dense":
            layers.append(Dense(i, in_shape[0], layer_spec["units"],
                                placement, rng))
        elif kind == "relu":
            layers.append(ReLU())
        else:
            layers.append(Flatten())
        in_shape = shapes[i]
    input_coeff = NoiseCoefficient("input.noise") if spec.input_noise else None
    return Model(spec, layers, rng, input_coeff=input_coeff)
