"""Experiment configuration: a YAML file plus a seed fully determines a
run.

The file has nested sections (dataset, model, train, attack, eval); every
validation failure names the offending field with its dotted path, e.g.
``dataset.format: expected 'idx' or 'synthetic'``. CLI flags override a
small, targeted set of fields after parsing.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attacks import AttackConfig, CwConfig, ZooConfig
from .data import Dataset, load_dataset
from .errors import ConfigError
from .nn import ModelSpec
from .training import TrainConfig

OUTPUT_DIR_ENV = "ADVNOISE_OUTPUT_DIR"
_TEST_SEED_OFFSET = 1_000_003


@dataclass
class Overrides:
    """Command-line overrides applied on top of the config file."""

    seed: int | None = None
    epsilon: float | None = None
    n_step: int | None = None
    trials: int | None = None
    noise_at_test: bool | None = None
    threads: int = 1

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")


@dataclass
class EvalSettings:
    """What the evaluation phase measures."""

    trials: int = 5
    noise_at_test: bool = True
    attacks: tuple = ("fgsm", "pgd")
    sweep_epsilon: tuple = ()
    sweep_steps: tuple = ()
    cw: CwConfig | None = None
    cw_samples: int = 200
    zoo: ZooConfig | None = None
    zoo_samples: int = 200

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"eval.trials must be >= 1, "
                              f"got {self.trials}")
        for name in self.attacks:
            if name not in ("fgsm", "pgd"):
                raise ConfigError(f"eval.attacks: unknown attack {name!r}; "
                                  f"expected 'fgsm' or 'pgd'")
        if self.cw_samples < 1 or self.zoo_samples < 1:
            raise ConfigError("eval.cw_samples and eval.zoo_samples must "
                              "be >= 1")


@dataclass
class ExperimentConfig:
    """Parsed, validated experiment description."""

    seed: int
    label: str
    output_dir: Path
    dataset: dict
    model: dict
    train: TrainConfig
    attack: AttackConfig
    eval: EvalSettings
    checkpoint: Path | None = None
    surrogate_checkpoint: Path | None = None
    threads: int = 1

    def train_dataset(self) -> Dataset:
        return _load_split(self.dataset, self.seed, "train")

    def test_dataset(self) -> Dataset:
        return _load_split(self.dataset, self.seed + _TEST_SEED_OFFSET,
                           "test")

    def model_spec(self, dataset: Dataset) -> ModelSpec:
        return ModelSpec(layers=self.model["layers"],
                         input_shape=dataset.input_shape,
                         n_classes=dataset.n_classes,
                         input_noise=self.model.get("input_noise", False))


def _section(raw: dict, name: str, required: bool = True) -> dict:
    value = raw.pop(name, None)
    if value is None:
        if required:
            raise ConfigError(f"{name}: section is required")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected a mapping, "
                          f"got {type(value).__name__}")
    return dict(value)


def _take(section: dict, path: str, key: str, kind, default=None,
          required: bool = False):
    if key not in section:
        if required:
            raise ConfigError(f"{path}.{key}: field is required")
        return default
    value = section.pop(key)
    if kind is float and isinstance(value, int) \
            and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind) \
            or isinstance(value, bool) and kind in (int, float):
        raise ConfigError(f"{path}.{key}: expected "
                          f"{getattr(kind, '__name__', kind)}, "
                          f"got {value!r}")
    return value


def _no_leftovers(section: dict, path: str) -> None:
    if section:
        raise ConfigError(f"{path}: unexpected field(s) "
                          f"{sorted(section)}")


def _grid(section: dict, path: str, key: str, kind) -> tuple:
    values = _take(section, path, key, list, default=[])
    out = []
    for i, value in enumerate(values):
        if isinstance(value, bool) or not isinstance(
                value, (int, float) if kind is float else int):
            raise ConfigError(f"{path}.{key}[{i}]: expected "
                              f"{kind.__name__}, got {value!r}")
        out.append(kind(value))
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(f"{path}.{key}: grid must be strictly "
                          f"increasing, got {out}")
    return tuple(out)


def _parse_dataset(raw: dict) -> dict:
    section = _section(raw, "dataset")
    fmt = _take(section, "dataset", "format", str, required=True)
    if fmt == "idx":
        parsed = {
            "format": "idx",
            "images": _take(section, "dataset", "images", str,
                            required=True),
            "labels": _take(section, "dataset", "labels", str,
                            required=True),
            "test_images": _take(section, "dataset", "test_images", str),
            "test_labels": _take(section, "dataset", "test_labels", str),
            "n_classes": _take(section, "dataset", "n_classes", int),
        }
    elif fmt == "synthetic":
        parsed = {
            "format": "synthetic",
            "n_samples": _take(section, "dataset", "n_samples", int,
                               default=2000),
            "test_samples": _take(section, "dataset", "test_samples", int,
                                  default=400),
            "n_classes": _take(section, "dataset", "n_classes", int,
                               default=10),
            "side": _take(section, "dataset", "side", int, default=12),
            "noise_std": _take(section, "dataset", "noise_std", float,
                               default=0.18),
        }
        for key in ("n_samples", "test_samples", "n_classes", "side"):
            if parsed[key] < 1:
                raise ConfigError(f"dataset.{key}: must be >= 1, "
                                  f"got {parsed[key]}")
    else:
        raise ConfigError(f"dataset.format: expected 'idx' or "
                          f"'synthetic', got {fmt!r}")
    _no_leftovers(section, "dataset")
    return parsed


def _load_split(dataset: dict, seed: int, split: str) -> Dataset:
    if dataset["format"] == "idx":
        images = dataset["images" if split == "train" else "test_images"]
        labels = dataset["labels" if split == "train" else "test_labels"]
        if images is None or labels is None:
            images, labels = dataset["images"], dataset["labels"]
        loaded = load_dataset("idx", images_path=images, labels_path=labels,
                              n_classes=dataset["n_classes"])
        return Dataset(loaded.x, loaded.labels, loaded.n_classes,
                       split=split)
    n = dataset["n_samples" if split == "train" else "test_samples"]
    return load_dataset("synthetic", seed=seed, n_samples=n,
                        n_classes=dataset["n_classes"],
                        side=dataset["side"],
                        noise_std=dataset["noise_std"], split=split)


def _parse_model(raw: dict) -> dict:
    section = _section(raw, "model")
    layers = _take(section, "model", "layers", list, required=True)
    if not layers:
        raise ConfigError("model.layers: at least one layer is required")
    for i, layer in enumerate(layers):
        if not isinstance(layer, dict) or "type" not in layer:
            raise ConfigError(f"model.layers[{i}]: expected a mapping "
                              f"with a 'type' field, got {layer!r}")
    parsed = {"layers": [dict(layer) for layer in layers],
              "input_noise": _take(section, "model", "input_noise", bool,
                                   default=False)}
    _no_leftovers(section, "model")
    return parsed


def _parse_train(raw: dict, attack: AttackConfig,
                 seed: int) -> TrainConfig:
    section = _section(raw, "train")
    adv_weight = _take(section, "train", "adv_weight", float, default=0.5)
    fields = dict(
        epochs=_take(section, "train", "epochs", int, required=True),
        batch_size=_take(section, "train", "batch_size", int, default=64),
        learning_rate=_take(section, "train", "learning_rate", float,
                            default=0.1),
        momentum=_take(section, "train", "momentum", float, default=0.9),
        weight_decay=_take(section, "train", "weight_decay", float,
                           default=0.0),
        lr_decay_epochs=tuple(_take(section, "train", "lr_decay_epochs",
                                    list, default=[])),
        lr_decay_factor=_take(section, "train", "lr_decay_factor", float,
                              default=0.1),
        clean_weight=_take(section, "train", "clean_weight", float,
                           default=0.5),
        adv_weight=adv_weight,
        alpha_grad_clip=_take(section, "train", "alpha_grad_clip", float),
        inner_attack=attack if adv_weight > 0 else None,
        seed=seed,
    )
    _no_leftovers(section, "train")
    try:
        return TrainConfig(**fields)
    except ConfigError as exc:
        raise ConfigError(f"train: {exc}") from exc


def _parse_attack(raw: dict, overrides: Overrides) -> AttackConfig:
    section = _section(raw, "attack", required=False)
    fields = dict(
        epsilon=_take(section, "attack", "epsilon", float, default=0.15),
        step_size=_take(section, "attack", "step_size", float),
        n_step=_take(section, "attack", "n_step", int, default=7),
        with_pni_in_generation=_take(section, "attack",
                                     "with_pni_in_generation", bool,
                                     default=True),
    )
    _no_leftovers(section, "attack")
    if overrides.epsilon is not None:
        fields["epsilon"] = overrides.epsilon
    if overrides.n_step is not None:
        fields["n_step"] = overrides.n_step
    if fields["step_size"] is None and fields["n_step"] > 1:
        fields["step_size"] = fields["epsilon"] / fields["n_step"] * 2.5
    try:
        return AttackConfig(**fields)
    except ConfigError as exc:
        raise ConfigError(f"attack: {exc}") from exc


def _parse_eval(raw: dict, overrides: Overrides) -> EvalSettings:
    section = _section(raw, "eval", required=False)
    cw_section = _take(section, "eval", "cw", dict)
    zoo_section = _take(section, "eval", "zoo", dict)
    fields = dict(
        trials=_take(section, "eval", "trials", int, default=5),
        noise_at_test=_take(section, "eval", "noise_at_test", bool,
                            default=True),
        attacks=tuple(_take(section, "eval", "attacks", list,
                            default=["fgsm", "pgd"])),
        sweep_epsilon=_grid(section, "eval", "sweep_epsilon", float),
        sweep_steps=_grid(section, "eval", "sweep_steps", int),
    )
    _no_leftovers(section, "eval")
    if cw_section is not None:
        fields["cw_samples"] = _take(cw_section, "eval.cw", "n_samples",
                                     int, default=200)
        try:
            fields["cw"] = CwConfig(**cw_section)
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"eval.cw: {exc}") from exc
    if zoo_section is not None:
        fields["zoo_samples"] = _take(zoo_section, "eval.zoo", "n_samples",
                                      int, default=200)
        try:
            fields["zoo"] = ZooConfig(**zoo_section)
        except (ConfigError, TypeError) as exc:
            raise ConfigError(f"eval.zoo: {exc}") from exc
    if overrides.trials is not None:
        fields["trials"] = overrides.trials
    if overrides.noise_at_test is not None:
        fields["noise_at_test"] = overrides.noise_at_test
    try:
        return EvalSettings(**fields)
    except ConfigError as exc:
        raise ConfigError(f"eval: {exc}") from exc


def resolve_output_dir(configured: str | None, config_path) -> Path:
    """Config value wins; else the environment default; else ./runs.
    Relative paths resolve against the config file's directory."""
    base = Path(config_path).resolve().parent
    if configured:
        path = Path(configured)
    elif os.environ.get(OUTPUT_DIR_ENV):
        path = Path(os.environ[OUTPUT_DIR_ENV])
    else:
        path = Path("runs")
    return path if path.is_absolute() else base / path


def load_config(path, overrides: Overrides | None = None
                ) -> ExperimentConfig:
    overrides = overrides or Overrides()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    raw = dict(raw)

    seed = _take(raw, "config", "seed", int, default=0)
    if overrides.seed is not None:
        seed = overrides.seed
    label = _take(raw, "config", "label", str, default=path.stem)
    output_dir = resolve_output_dir(
        _take(raw, "config", "output_dir", str), path)
    checkpoint = _take(raw, "config", "checkpoint", str)
    surrogate = _take(raw, "config", "surrogate_checkpoint", str)

    attack = _parse_attack(raw, overrides)
    config = ExperimentConfig(
        seed=seed, label=label, output_dir=output_dir,
        dataset=_parse_dataset(raw), model=_parse_model(raw),
        train=_parse_train(raw, attack, seed), attack=attack,
        eval=_parse_eval(raw, overrides),
        checkpoint=_resolve(checkpoint, path),
        surrogate_checkpoint=_resolve(surrogate, path),
        threads=overrides.threads,
    )
    _no_leftovers(raw, "config")
    return config


def _resolve(value: str | None, config_path) -> Path | None:
    if value is None:
        return None
    candidate = Path(value)
    if candidate.is_absolute():
        return candidate
    return Path(config_path).resolve().parent / candidate
