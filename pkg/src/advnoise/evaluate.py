"""Evaluation harness: repeated-trial accuracy, attack sweeps, the
gradient-obfuscation checklist, and report emission.

Stochastic models are measured as mean +/- population std over trials;
each trial reseeds the model's noise stream (and any attack randomness)
from a derived, trial-indexed stream, so results are reproducible for a
given (config, seed) and honestly variable across trials. Reports carry
accuracies in percent and are written with sorted keys and no timestamps,
making reruns byte-identical.
"""

from __future__ import annotations

import copy
import csv
import json
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from .attacks import (AttackConfig, CwConfig, TrialStats, ZooConfig, cw_l2,
                      fgsm, pgd, predict_label, transfer_attack, zoo_attack)
from .errors import ConfigError
from .nn import Model
from .rng import Rng

_TRIAL_STREAM = 0xACC0
_ZOO_STREAM = 0x500


def _trial_rng(seed: int, trial: int) -> Rng:
    return Rng(seed).spawn(_TRIAL_STREAM + trial)


def clean_accuracy(model: Model, dataset) -> float:
    return float((predict_label(model, dataset.x) == dataset.labels).mean())


def attack_batch(model: Model, x, labels, kind: str,
                 attack: AttackConfig | None, rng: Rng | None = None):
    """Run one named attack; ``kind`` in {none, fgsm, pgd}."""
    if kind == "none" or attack is None:
        raise ConfigError(f"attack_batch: kind {kind!r} needs no batch; "
                          f"use clean_accuracy")
    if kind == "fgsm":
        return fgsm(model, x, labels, attack)
    if kind == "pgd":
        return pgd(model, x, labels, attack, rng=rng)
    raise ConfigError(f"attack_batch: unknown attack kind {kind!r}; "
                      f"expected 'fgsm' or 'pgd'")


def eval_accuracy(model: Model, dataset, attack: AttackConfig | None = None,
                  kind: str = "pgd", trials: int = 5, seed: int = 0,
                  threads: int = 1) -> TrialStats:
    """Accuracy on (possibly attacked) inputs over independently seeded
    trials. ``attack=None`` evaluates clean inputs.

    With ``threads > 1`` the trials run on a thread pool, each against its
    own copy of the model; trial seeds are index-derived, so the result is
    identical to the sequential one.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")

    def one_trial(args) -> float:
        trial, victim = args
        rng = _trial_rng(seed, trial)
        victim.rng = rng
        if attack is None:
            return clean_accuracy(victim, dataset)
        return attack_batch(victim, dataset.x, dataset.labels, kind,
                            attack, rng=rng).accuracy

    if threads <= 1 or trials == 1:
        values = [one_trial((t, model)) for t in range(trials)]
    else:
        jobs = [(t, copy.deepcopy(model)) for t in range(trials)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one_trial, jobs))
    return TrialStats.of(values)


def cw_metrics(model: Model, dataset, config: CwConfig | None = None,
               n_samples: int = 200, seed: int = 0) -> dict:
    """C&W-L2 on the first n_samples: success rate, mean L2 over the
    successful samples (None when nothing succeeds), and the per-sample
    records."""
    subset = dataset.subset(np.arange(min(n_samples, len(dataset))))
    model.rng = _trial_rng(seed, 0)
    batch = cw_l2(model, subset.x, subset.labels, config)
    succeeded = batch.l2[batch.success]
    return {
        "success_rate": batch.success_rate,
        "mean_l2": float(succeeded.mean()) if succeeded.size else None,
        "records": batch.records(),
    }


def zoo_metrics(model: Model, dataset, config: ZooConfig | None = None,
                n_samples: int = 200, seed: int = 0) -> dict:
    """Score-only ZOO attack on the first n_samples: success rate, mean
    query count, and the per-sample records.

    Success is re-measured by classifying the finished ``x_adv`` with the
    deployed model (one fresh forward), not taken from the attacker's own
    stopping condition — against a stochastic model the attacker may stop
    on a draw that does not repeat.
    """
    subset = dataset.subset(np.arange(min(n_samples, len(dataset))))
    model.rng = _trial_rng(seed, 0)
    batch = zoo_attack(model.predict_logits, subset.x, subset.labels,
                       config or ZooConfig(), rng=Rng(seed).spawn(_ZOO_STREAM))
    model.rng = _trial_rng(seed, 1)
    final = np.asarray(model.predict_logits(batch.x_adv))
    batch.success = final.argmax(axis=1) != subset.labels
    return {
        "success_rate": batch.success_rate,
        "mean_queries": float(batch.queries.mean()),
        "records": batch.records(),
    }


def sweep(model: Model, dataset, axis: str, grid,
          attack: AttackConfig, trials: int = 5, seed: int = 0,
          threads: int = 1) -> list:
    """Accuracy curve along an attack-strength axis.

    ``axis`` is "epsilon" or "n_step"; the grid must be strictly
    increasing. Each point reports mean/std accuracy (fractions) plus the
    per-trial values.
    """
    grid = list(grid)
    if axis not in ("epsilon", "n_step"):
        raise ConfigError(f"sweep axis must be 'epsilon' or 'n_step', "
                          f"got {axis!r}")
    if len(grid) == 0:
        raise ConfigError("sweep grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError(f"sweep grid must be strictly increasing, "
                          f"got {grid}")
    points = []
    for value in grid:
        if axis == "epsilon":
            point_attack = AttackConfig(
                epsilon=float(value), step_size=attack.step_size,
                n_step=attack.n_step,
                with_pni_in_generation=attack.with_pni_in_generation,
                clip_range=attack.clip_range)
        else:
            point_attack = AttackConfig(
                epsilon=attack.epsilon, step_size=attack.step_size,
                n_step=int(value),
                with_pni_in_generation=attack.with_pni_in_generation,
                clip_range=attack.clip_range)
        stats = eval_accuracy(model, dataset, point_attack, kind="pgd",
                              trials=trials, seed=seed, threads=threads)
        points.append({"value": float(value), "mean": stats.mean,
                       "std": stats.std, "values": list(stats.values)})
    return points


# ------------------------------------------------------------- checklist

def obfuscation_checklist(defended: Model, undefended: Model, dataset,
                          attack: AttackConfig, grid=None, trials: int = 5,
                          seed: int = 0) -> dict:
    """The five symptom checks for obfuscated/masked gradients, evaluated
    on the defended model (the undefended model serves as the black-box
    transfer surrogate). Every item reports its measured numbers; an item
    passes when the healthy-gradient behavior holds.
    """
    if grid is None:
        grid = [0.0, attack.epsilon / 3, 2 * attack.epsilon / 3,
                attack.epsilon]
    chance = 1.0 / dataset.n_classes

    pgd_stats = eval_accuracy(defended, dataset, attack, kind="pgd",
                              trials=trials, seed=seed)
    fgsm_attack = AttackConfig(
        epsilon=attack.epsilon,
        with_pni_in_generation=attack.with_pni_in_generation,
        clip_range=attack.clip_range)
    fgsm_stats = eval_accuracy(defended, dataset, fgsm_attack, kind="fgsm",
                               trials=trials, seed=seed)

    defended.rng = _trial_rng(seed, 0)
    undefended.rng = _trial_rng(seed, 1)
    transfer_stats = transfer_attack(undefended, defended, dataset.x,
                                     dataset.labels, attack, trials=trials)

    lo, hi = attack.clip_range
    unbounded = AttackConfig(
        epsilon=hi - lo, step_size=(hi - lo) / 4, n_step=attack.n_step,
        with_pni_in_generation=attack.with_pni_in_generation,
        clip_range=attack.clip_range)
    unbounded_stats = eval_accuracy(defended, dataset, unbounded,
                                    kind="pgd", trials=trials, seed=seed)

    curve = sweep(defended, dataset, "epsilon", grid, attack,
                  trials=trials, seed=seed)
    success = [1.0 - point["mean"] for point in curve]
    strictly_up = all(b > a for a, b in zip(success, success[1:]))
    monotone = all(
        curve[i + 1]["mean"] <= curve[i]["mean"]
        + 2.0 * max(curve[i]["std"], curve[i + 1]["std"])
        for i in range(len(curve) - 1))

    items = [
        {"item": 1,
         "name": "iterative attack at least as strong as one-step",
         "passed": bool(fgsm_stats.mean >= pgd_stats.mean),
         "fgsm_accuracy": fgsm_stats.mean, "pgd_accuracy": pgd_stats.mean},
        {"item": 2,
         "name": "white-box attack at least as strong as black-box transfer",
         "passed": bool(transfer_stats.mean >= pgd_stats.mean),
         "transfer_accuracy": transfer_stats.mean,
         "pgd_accuracy": pgd_stats.mean},
        {"item": 3,
         "name": "unbounded attack reaches chance accuracy",
         "passed": bool(unbounded_stats.mean <= chance),
         "unbounded_accuracy": unbounded_stats.mean, "chance": chance},
        {"item": 4,
         "name": "attack success strictly increases with the bound",
         "passed": bool(strictly_up), "success_curve": success},
        {"item": 5,
         "name": "accuracy curve monotone non-increasing within 2 std",
         "passed": bool(monotone),
         "accuracy_curve": [point["mean"] for point in curve],
         "std_curve": [point["std"] for point in curve]},
    ]
    return {"items": items,
            "grid": [float(g) for g in grid],
            "passed": all(item["passed"] for item in items)}


# --------------------------------------------------------------- reports

def percent(stats: TrialStats) -> dict:
    """TrialStats as a percent-scaled report fragment."""
    return {"mean": 100.0 * stats.mean, "std": 100.0 * stats.std,
            "values": [100.0 * v for v in stats.values]}


def report_schema() -> dict:
    text = (resources.files("advnoise") / "schemas" / "report.schema.json"
            ).read_text(encoding="utf-8")
    return json.loads(text)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2)
                          + "\n", encoding="utf-8")


def write_jsonl(path, records) -> None:
    lines = [json.dumps(record, sort_keys=True) for record in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def write_curve_csv(path, axis: str, points) -> None:
    """Two-column-plus-error table: axis value, mean, std (accuracy in
    percent)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([axis, "mean", "std"])
        for point in points:
            writer.writerow([point["value"], 100.0 * point["mean"],
                             100.0 * point["std"]])


def format_summary(report: dict) -> str:
    """Human-readable accuracy table for one model's report."""
    lines = [f"model: {report['model']}",
             f"trials: {report['trials']}"]
    clean = report["clean"]
    lines.append(f"  clean accuracy: {clean['mean']:.2f}"
                 f" +/- {clean['std']:.2f} %")
    for name, stats in sorted(report.get("attacks", {}).items()):
        lines.append(f"  {name} accuracy: {stats['mean']:.2f}"
                     f" +/- {stats['std']:.2f} %")
    cw = report.get("cw")
    if cw:
        mean_l2 = ("-" if cw["mean_l2"] is None
                   else f"{cw['mean_l2']:.4f}")
        lines.append(f"  cw-l2 success: {100.0 * cw['success_rate']:.1f} %"
                     f", mean L2: {mean_l2}")
    zoo = report.get("zoo")
    if zoo:
        lines.append(f"  zoo success: {100.0 * zoo['success_rate']:.1f} %"
                     f", mean queries: {zoo['mean_queries']:.0f}")
    checklist = report.get("checklist")
    if checklist:
        verdict = "pass" if checklist["passed"] else "FAIL"
        lines.append(f"  obfuscation checklist: {verdict} "
                     f"({sum(i['passed'] for i in checklist['items'])}/5)")
    return "\n".join(lines) + "\n"
