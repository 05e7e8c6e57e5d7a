"""Experiment orchestration: train (or load) a model from an
``ExperimentConfig``, run the requested evaluations, and write every
artifact to the output directory.

Artifacts are deterministic functions of (config, seed): JSON is written
with sorted keys, nothing embeds timestamps or hostnames, and all
randomness flows through the seeded counter-based streams — so rerunning
the same config produces byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .errors import ConfigError
from .evaluate import (cw_metrics, eval_accuracy, format_summary,
                       obfuscation_checklist, percent, sweep,
                       write_curve_csv, write_json, write_jsonl,
                       zoo_metrics)
from .nn import Model, build
from .rng import Rng
from .training import MomentumSgd, train

CHECKPOINT_NAME = "checkpoint.bin"
REPORT_NAME = "report.json"


def prepare_model(config: ExperimentConfig, dataset
                  ) -> tuple[Model, int, MomentumSgd | None]:
    """Fresh model from the spec, or a restored one when the config names
    a checkpoint; returns (model, start_epoch, optimizer-or-None)."""
    if config.checkpoint is not None:
        bundle = load_checkpoint(config.checkpoint)
        optimizer = None
        if bundle.optimizer_state:
            optimizer = MomentumSgd(config.train.momentum,
                                    config.train.weight_decay)
            optimizer.load_state_dict(bundle.optimizer_state)
        return bundle.model, bundle.epoch, optimizer
    spec = config.model_spec(dataset)
    return build(spec, Rng(config.seed)), 0, None


def write_history(out_dir: Path, history: list) -> None:
    write_json(out_dir / "history.json",
               [stats.to_dict() for stats in history])


def write_alpha_trajectory(out_dir: Path, history: list) -> None:
    """One row per noise coefficient per epoch: epoch, name, value."""
    with open(out_dir / "alpha_trajectory.csv", "w", newline="",
              encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "name", "value"])
        for stats in history:
            for name in sorted(stats.coefficients):
                writer.writerow([stats.epoch, name,
                                 stats.coefficients[name]])


def train_phase(config: ExperimentConfig, model: Model, dataset,
                start_epoch: int = 0,
                optimizer: MomentumSgd | None = None) -> list:
    """Train to ``config.train.epochs``, then write the checkpoint,
    history, and coefficient trajectory. A config whose epoch budget is
    already spent (e.g. epochs == 0 with a loaded checkpoint) is a no-op
    apart from the artifacts."""
    out_dir = config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    history, optimizer = train(model, dataset, config.train,
                               optimizer=optimizer,
                               start_epoch=start_epoch)
    save_checkpoint(out_dir / CHECKPOINT_NAME, model,
                    epoch=config.train.epochs, optimizer=optimizer)
    write_history(out_dir, history)
    write_alpha_trajectory(out_dir, history)
    return history


def build_report(config: ExperimentConfig, model: Model, dataset) -> dict:
    """Run the configured evaluations and assemble the report payload."""
    settings = config.eval
    model.noise_enabled = settings.noise_at_test
    report = {
        "model": config.label,
        "seed": config.seed,
        "trials": settings.trials,
        "dataset": {"n_samples": len(dataset),
                    "n_classes": dataset.n_classes,
                    "split": dataset.split},
        "noise_at_test": settings.noise_at_test,
        "clean": percent(eval_accuracy(model, dataset, None,
                                       trials=settings.trials,
                                       seed=config.seed,
                                       threads=config.threads)),
        "attacks": {},
        "sweeps": {},
        "cw": None,
        "zoo": None,
        "checklist": None,
        "coefficients": dict(model.coefficient_values()),
    }
    for name in settings.attacks:
        attack = config.attack
        if name == "fgsm":
            attack = _one_step(config)
        stats = eval_accuracy(model, dataset, attack, kind=name,
                              trials=settings.trials, seed=config.seed,
                              threads=config.threads)
        report["attacks"][name] = percent(stats)
    if settings.sweep_epsilon:
        report["sweeps"]["epsilon"] = sweep(
            model, dataset, "epsilon", settings.sweep_epsilon,
            config.attack, trials=settings.trials, seed=config.seed,
            threads=config.threads)
    if settings.sweep_steps:
        report["sweeps"]["n_step"] = sweep(
            model, dataset, "n_step", settings.sweep_steps, config.attack,
            trials=settings.trials, seed=config.seed,
            threads=config.threads)
    if settings.cw is not None:
        metrics = cw_metrics(model, dataset, settings.cw,
                             n_samples=settings.cw_samples,
                             seed=config.seed)
        report["cw"] = {"success_rate": metrics["success_rate"],
                        "mean_l2": metrics["mean_l2"],
                        "n_samples": len(metrics["records"])}
        write_jsonl(config.output_dir / "cw_records.jsonl",
                    metrics["records"])
    if settings.zoo is not None:
        metrics = zoo_metrics(model, dataset, settings.zoo,
                              n_samples=settings.zoo_samples,
                              seed=config.seed)
        report["zoo"] = {"success_rate": metrics["success_rate"],
                         "mean_queries": metrics["mean_queries"],
                         "n_samples": len(metrics["records"])}
        write_jsonl(config.output_dir / "zoo_records.jsonl",
                    metrics["records"])
    return report


def _one_step(config: ExperimentConfig):
    from .attacks import AttackConfig
    return AttackConfig(epsilon=config.attack.epsilon,
                        with_pni_in_generation=(
                            config.attack.with_pni_in_generation),
                        clip_range=config.attack.clip_range)


def checklist_phase(config: ExperimentConfig, model: Model,
                    dataset) -> dict:
    if config.surrogate_checkpoint is None:
        raise ConfigError("surrogate_checkpoint: required to run the "
                          "obfuscation checklist (it provides the "
                          "black-box transfer source)")
    surrogate = load_checkpoint(config.surrogate_checkpoint).model
    grid = list(config.eval.sweep_epsilon) or None
    report = obfuscation_checklist(model, surrogate, dataset,
                                   config.attack, grid=grid,
                                   trials=config.eval.trials,
                                   seed=config.seed)
    write_json(config.output_dir / "checklist.json", report)
    return report


def write_report(config: ExperimentConfig, report: dict) -> Path:
    out_dir = config.output_dir
    path = out_dir / REPORT_NAME
    write_json(path, report)
    (out_dir / "summary.txt").write_text(format_summary(report),
                                         encoding="utf-8")
    for axis, points in report.get("sweeps", {}).items():
        write_curve_csv(out_dir / f"curve_{axis}.csv", axis, points)
    return path


def run_experiment(config) -> Path:
    """Full pipeline: train/load, evaluate, checklist when configured;
    returns the report path. Accepts an ``ExperimentConfig`` or a config
    file path."""
    if not isinstance(config, ExperimentConfig):
        from .config import load_config
        config = load_config(config)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    train_set = config.train_dataset()
    test_set = config.test_dataset()
    model, start_epoch, optimizer = prepare_model(config, train_set)
    train_phase(config, model, train_set, start_epoch=start_epoch,
                optimizer=optimizer)
    report = build_report(config, model, test_set)
    if config.surrogate_checkpoint is not None:
        report["checklist"] = checklist_phase(config, model, test_set)
    return write_report(config, report)
