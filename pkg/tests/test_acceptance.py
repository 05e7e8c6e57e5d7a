"""Full-pipeline acceptance checks on the default desk experiment.

These train the four reference models (plain / adversarial, with and
without trainable noise layers) from ``configs/desk.yaml`` once per
session and verify the end-to-end claims: gradient correctness, the
noise-coefficient convergence split, the robustness ordering, attack
saturation, the analytic C&W oracle, score-only attack degradation, and
bit-exact determinism. Each check appends one ``[k/9]`` line to the
scorecard echoed at the end of the run.

The desk models take a few minutes to train; deselect with
``pytest -k "not acceptance"`` for quick iteration.
"""

import copy
import random
import time
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

from advnoise.attacks import AttackConfig, CwConfig, cw_l2
from advnoise.checkpoint import load_checkpoint, save_checkpoint
from advnoise.config import load_config
from advnoise.data import synthetic_dataset
from advnoise.evaluate import (cw_metrics, eval_accuracy,
                               obfuscation_checklist, zoo_metrics)
from advnoise.experiment import run_experiment
from advnoise.nn import ModelSpec, build
from advnoise.rng import Rng
from advnoise.training import MomentumSgd, TrainConfig, train

from checks import gradcheck_model, scorecard

DESK_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "desk.yaml"


def record(line: str) -> None:
    scorecard.append(line)
    print(line, flush=True)


def verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# ------------------------------------------------------------- desk rig


def _variant_spec(config, dataset, noise: str) -> ModelSpec:
    model = copy.deepcopy(config.model)
    for layer in model["layers"]:
        if "noise" in layer:
            layer["noise"] = noise
    return ModelSpec(layers=model["layers"],
                     input_shape=dataset.input_shape,
                     n_classes=dataset.n_classes,
                     input_noise=model.get("input_noise", False))


def _fit(config, train_set, noise: str, adversarial: bool):
    if adversarial:
        train_config = config.train
    else:
        train_config = replace(config.train, clean_weight=1.0,
                               adv_weight=0.0, inner_attack=None)
    model = build(_variant_spec(config, train_set, noise), Rng(config.seed))
    train(model, train_set, train_config)
    return model


@pytest.fixture(scope="session")
def desk():
    """The four desk models plus datasets, attack, and per-model fit
    times: plain, adversarial, noisy adversarial, noisy plain."""
    config = load_config(DESK_CONFIG)
    train_set = config.train_dataset()
    test_set = config.test_dataset()
    models = {}
    times = {}
    for name, noise, adversarial in (
            ("plain", "none", False),
            ("adv", "none", True),
            ("noisy_adv", "weight", True),
            ("noisy_plain", "weight", False)):
        start = time.time()
        models[name] = _fit(config, train_set, noise, adversarial)
        times[name] = time.time() - start
    return SimpleNamespace(config=config, train_set=train_set,
                           test_set=test_set, models=models, times=times,
                           attack=config.attack, trials=config.eval.trials)


def percent_accuracy(model, dataset, attack=None, kind="pgd", trials=5):
    return 100.0 * eval_accuracy(model, dataset, attack, kind=kind,
                                 trials=trials, seed=0).mean


# ------------------------------------------------- 1: gradient correctness


def _random_spec(chooser: random.Random) -> ModelSpec:
    noises = ["none", "weight", "act_in", "act_out", "weight+act_out"]
    with_noise = chooser.random() < 0.5

    def pick_noise():
        return chooser.choice(noises[1:]) if with_noise else "none"

    n_classes = chooser.randint(3, 4)
    if chooser.random() < 0.5:
        d = chooser.randint(3, 6)
        layers = [{"type": "dense", "units": chooser.randint(3, 6),
                   "noise": pick_noise()},
                  {"type": "relu"},
                  {"type": "dense", "units": n_classes,
                   "noise": pick_noise()}]
        shape = (d,)
    else:
        side = chooser.choice([5, 6])
        layers = [{"type": "conv", "filters": chooser.randint(2, 3),
                   "kernel": 3, "stride": 2, "padding": 1,
                   "noise": pick_noise()},
                  {"type": "relu"},
                  {"type": "flatten"},
                  {"type": "dense", "units": n_classes,
                   "noise": pick_noise()}]
        shape = (1, side, side)
    return ModelSpec(layers=layers, input_shape=shape, n_classes=n_classes,
                     input_noise=with_noise and chooser.random() < 0.3)


def test_acceptance_gradients_match_finite_differences():
    chooser = random.Random(0)
    start = time.time()
    worst = 0.0
    for case in range(20):
        spec = _random_spec(chooser)
        model = build(spec, Rng(100 + case))
        rng = Rng(200 + case)
        batch = chooser.randint(2, 3)
        x = rng.uniform(batch * int(np.prod(spec.input_shape)))
        x = x.reshape((batch,) + spec.input_shape)
        labels = rng.randint(spec.n_classes, batch)
        worst = max(worst, gradcheck_model(model, x, labels))
    elapsed = time.time() - start
    ok = worst < 1e-4 and elapsed < 60.0
    record(f"[1/9] gradient check, 20 random models: max rel err "
           f"{worst:.2e} (< 1e-04), {elapsed:.0f}s (< 60s) — {verdict(ok)}")
    assert ok


# ------------------------------------- 2: noise-coefficient convergence


def test_acceptance_noise_coefficient_dichotomy(desk):
    alphas_adv = {name: abs(value) for name, value
                  in desk.models["noisy_adv"].coefficient_values().items()}
    alphas_plain = desk.models["noisy_plain"].coefficient_values()
    plain_max = max(abs(v) for v in alphas_plain.values())
    adv_peak = max(alphas_adv, key=alphas_adv.get)
    adv_max = alphas_adv[adv_peak]

    layer_types = [layer["type"] for layer in desk.config.model["layers"]]
    conv_block = [f"layers.{i}." for i in range(layer_types.index("flatten"))]
    front = any(adv_peak.startswith(prefix) for prefix in conv_block)

    budget = desk.times["noisy_adv"] + desk.times["noisy_plain"]
    ok = (plain_max < 0.02 and adv_max >= 3.0 * plain_max and front
          and budget < 1200.0)
    record(f"[2/9] coefficient dichotomy: plain max |a| {plain_max:.4f} "
           f"(< 0.02), adversarial max |a| {adv_max:.3f} at {adv_peak} "
           f"(>= 3x, front conv block: {front}), {budget:.0f}s (< 1200s) "
           f"— {verdict(ok)}")
    assert ok


# ----------------------------------------------- 3: robustness ordering


def test_acceptance_robustness_ordering(desk):
    start = time.time()
    pgd = {name: percent_accuracy(desk.models[name], desk.test_set,
                                  desk.attack, trials=desk.trials)
           for name in ("plain", "adv", "noisy_adv")}
    clean_adv = percent_accuracy(desk.models["adv"], desk.test_set,
                                 trials=desk.trials)
    clean_noisy = percent_accuracy(desk.models["noisy_adv"], desk.test_set,
                                   trials=desk.trials)
    budget = sum(desk.times.values()) + (time.time() - start)

    noise_gain = pgd["noisy_adv"] - pgd["adv"]
    adv_gain = pgd["adv"] - pgd["plain"]
    parity = clean_noisy - clean_adv
    ok = (noise_gain >= 2.0 and adv_gain >= 20.0 and parity >= -1.0
          and budget < 2700.0)
    record(f"[3/9] robustness ordering: noisy-adv {pgd['noisy_adv']:.1f} vs "
           f"adv {pgd['adv']:.1f} (gain {noise_gain:+.1f} >= 2), adv vs "
           f"plain {pgd['plain']:.1f} (gain {adv_gain:+.1f} >= 20), clean "
           f"parity {parity:+.1f} (>= -1), {budget:.0f}s (< 2700s) "
           f"— {verdict(ok)}")
    assert ok


# ------------------------------------------- 4: no-defense collapse


def test_acceptance_undefended_collapse(desk):
    accuracy = percent_accuracy(desk.models["plain"], desk.test_set,
                                desk.attack, trials=1)
    ok = accuracy < 5.0
    record(f"[4/9] undefended collapse: plain model {accuracy:.1f}% under "
           f"the calibrated attack (< 5%) — {verdict(ok)}")
    assert ok


# --------------------------------------- 5: obfuscation symptom checks


def test_acceptance_obfuscation_checklist(desk):
    result = obfuscation_checklist(desk.models["noisy_adv"],
                                   desk.models["plain"], desk.test_set,
                                   desk.attack, trials=desk.trials, seed=0)
    failed = [item["name"] for item in result["items"]
              if not item["passed"]]
    ok = result["passed"]
    detail = "all five healthy" if ok else f"failing: {', '.join(failed)}"
    record(f"[5/9] obfuscation checklist on the noisy model: "
           f"{5 - len(failed)}/5 items pass ({detail}) — {verdict(ok)}")
    assert ok


# ------------------------------------------- 6: attack-step saturation


def test_acceptance_step_count_saturation(desk):
    accuracy = {}
    for name in ("adv", "noisy_adv"):
        for n_step in (40, 100):
            attack = replace(desk.attack, n_step=n_step)
            accuracy[name, n_step] = percent_accuracy(
                desk.models[name], desk.test_set, attack,
                trials=desk.trials)
    drift_adv = abs(accuracy["adv", 40] - accuracy["adv", 100])
    drift_noisy = abs(accuracy["noisy_adv", 40] - accuracy["noisy_adv", 100])
    margin = accuracy["noisy_adv", 100] - accuracy["adv", 100]
    ok = drift_adv < 2.0 and drift_noisy < 2.0 and margin > 0.0
    record(f"[6/9] step saturation: drift 40->100 adv {drift_adv:.1f}, "
           f"noisy {drift_noisy:.1f} (< 2), noisy-adv margin at 100 steps "
           f"{margin:+.1f} (> 0) — {verdict(ok)}")
    assert ok


# ------------------------------------------------- 7: C&W-L2 behavior


def test_acceptance_cw_oracle_and_margins(desk):
    # Points are placed at controlled signed distances from the decision
    # hyperplane and kept only when the analytic projection stays inside
    # the [0, 1] box, so the hyperplane distance is the true constrained
    # optimum the attack should reach.
    chooser = Rng(41)
    worst = 0.0
    for case in range(2):
        weight = chooser.normal((5, 2))
        bias = 0.05 * chooser.normal((2,))
        spec = ModelSpec(layers=[{"type": "dense", "units": 2}],
                         input_shape=(5,), n_classes=2)
        model = build(spec, Rng(case))
        model.layers[0].weight.data[:] = weight
        model.layers[0].bias.data[:] = bias
        w_diff = weight[:, 0] - weight[:, 1]
        norm = np.linalg.norm(w_diff)
        unit = w_diff / norm
        base = 0.35 + 0.3 * chooser.uniform(8 * 5).reshape(8, 5)
        signed = (base @ w_diff + bias[0] - bias[1]) / norm
        target = np.sign(signed) * (0.08 + 0.08 * chooser.uniform(8))
        x = base + (target - signed)[:, None] * unit
        distance = (x @ w_diff + bias[0] - bias[1]) / norm
        projection = x - distance[:, None] * unit
        keep = (((x > 0.02) & (x < 0.98)).all(axis=1)
                & ((projection > 0.02) & (projection < 0.98)).all(axis=1))
        assert keep.sum() >= 4
        x = x[keep]
        labels = np.argmax(model.predict_logits(x), axis=1)
        batch = cw_l2(model, x, labels,
                      CwConfig(initial_c=0.01, binary_search_steps=9,
                               inner_iterations=3000, learning_rate=0.005))
        oracle = np.abs(distance[keep])
        assert batch.success.all()
        worst = max(worst, float(np.max(np.abs(batch.l2 - oracle) / oracle)))

    cw_config = desk.config.eval.cw
    n_samples = desk.config.eval.cw_samples
    plain = cw_metrics(desk.models["plain"], desk.test_set, cw_config,
                       n_samples=n_samples, seed=0)
    adv = cw_metrics(desk.models["adv"], desk.test_set, cw_config,
                     n_samples=n_samples, seed=0)
    ok = (worst <= 0.05 and plain["success_rate"] == 1.0
          and adv["mean_l2"] > plain["mean_l2"])
    record(f"[7/9] C&W-L2: linear oracle err {100 * worst:.1f}% (<= 5%), "
           f"plain success {100 * plain['success_rate']:.0f}% (= 100%), "
           f"mean L2 adv {adv['mean_l2']:.3f} > plain "
           f"{plain['mean_l2']:.3f} — {verdict(ok)}")
    assert ok


# -------------------------------------------- 8: score-only degradation


def test_acceptance_zoo_weaker_against_noise(desk):
    zoo_config = desk.config.eval.zoo
    n_samples = desk.config.eval.zoo_samples
    adv = zoo_metrics(desk.models["adv"], desk.test_set, zoo_config,
                      n_samples=n_samples, seed=0)
    noisy = zoo_metrics(desk.models["noisy_adv"], desk.test_set, zoo_config,
                        n_samples=n_samples, seed=0)
    ok = noisy["success_rate"] < adv["success_rate"]
    record(f"[8/9] score-only attack: success {100 * noisy['success_rate']:.1f}% "
           f"on noisy-adv < {100 * adv['success_rate']:.1f}% on adv "
           f"— {verdict(ok)}")
    assert ok


# --------------------------------------- 9: determinism & persistence


def _tiny_payload(output_dir: str) -> dict:
    return {
        "seed": 7,
        "label": "tiny",
        "output_dir": output_dir,
        "dataset": {"format": "synthetic", "n_samples": 48,
                    "test_samples": 24, "n_classes": 2, "side": 5,
                    "noise_std": 0.2},
        "model": {"layers": [
            {"type": "flatten"},
            {"type": "dense", "units": 8, "noise": "weight"},
            {"type": "relu"},
            {"type": "dense", "units": 2}]},
        "train": {"epochs": 1, "batch_size": 16, "learning_rate": 0.1},
        "attack": {"epsilon": 0.1, "step_size": 0.05, "n_step": 2},
        "eval": {"trials": 2, "attacks": ["pgd"]},
    }


def test_acceptance_determinism_and_persistence(desk, tmp_path):
    reports = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.yaml"
        path.write_text(yaml.safe_dump(_tiny_payload(name)),
                        encoding="utf-8")
        reports.append(run_experiment(path).read_bytes())
    identical = reports[0] == reports[1]

    model = desk.models["noisy_adv"]
    ckpt = tmp_path / "desk.ckpt"
    save_checkpoint(ckpt, model, epoch=desk.config.train.epochs)
    restored = load_checkpoint(ckpt).model
    probe = desk.test_set.x[:64]
    roundtrip = (model.predict_logits(probe, noise_enabled=False).tobytes()
                 == restored.predict_logits(probe,
                                            noise_enabled=False).tobytes())

    spec = ModelSpec(layers=[{"type": "dense", "units": 6,
                              "noise": "weight"},
                             {"type": "relu"},
                             {"type": "dense", "units": 3}],
                     input_shape=(4,), n_classes=3)
    points = synthetic_dataset(11, 32, n_classes=3, side=2, noise_std=0.2)
    flat = points.x.reshape(len(points.x), -1)[:, :4]
    toy = type(points)(flat, points.labels, 3, split="train")
    config = TrainConfig(epochs=3, batch_size=8, learning_rate=0.1,
                         momentum=0.9, clean_weight=0.5, adv_weight=0.5,
                         inner_attack=AttackConfig(epsilon=0.1,
                                                   step_size=0.05,
                                                   n_step=2), seed=7)
    straight = build(spec, Rng(7))
    train(straight, toy, config)
    resumed = build(spec, Rng(7))
    _, optimizer = train(resumed, toy, replace(config, epochs=1))
    half = tmp_path / "half.ckpt"
    save_checkpoint(half, resumed, epoch=1, optimizer=optimizer)
    bundle = load_checkpoint(half)
    opt = MomentumSgd(config.momentum, config.weight_decay)
    opt.load_state_dict(bundle.optimizer_state)
    train(bundle.model, toy, config, optimizer=opt,
          start_epoch=bundle.epoch)
    resume_ok = all(
        a.data.tobytes() == b.data.tobytes()
        for (_, a), (_, b) in zip(straight.parameters(),
                                  bundle.model.parameters()))

    ok = identical and roundtrip and resume_ok
    record(f"[9/9] determinism: byte-identical reports {identical}, "
           f"checkpoint logit round-trip {roundtrip}, resume matches "
           f"uninterrupted {resume_ok} — {verdict(ok)}")
    assert ok
