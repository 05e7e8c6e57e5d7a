"""Command-line front end.

Verbs:

* ``train``     -- fit the configured model; writes checkpoint, history,
                   and the coefficient trajectory.
* ``eval``      -- full evaluation; writes report.json, summary.txt,
                   per-sample records, and sweep curves.
* ``attack``    -- one attack on the test split; prints the accuracy and
                   writes per-sample records.
* ``sweep``     -- accuracy curve along --axis (epsilon or n_step).
* ``checklist`` -- the five gradient-obfuscation checks against the
                   surrogate checkpoint named in the config.

Every verb takes --config plus targeted overrides. Exit status is 0 on
success and 2 for configuration, data, or checkpoint problems (the
message names the offending field).
"""

from __future__ import annotations

import argparse
import sys

from .attacks import AttackConfig, CwConfig, ZooConfig
from .config import Overrides, load_config
from .errors import (AttackError, CheckpointError, ConfigError,
                     DataFormatError, TrainingError)
from .evaluate import (cw_metrics, eval_accuracy, sweep, write_curve_csv,
                       write_json, write_jsonl, zoo_metrics)
from .experiment import (checklist_phase, prepare_model, run_experiment,
                         train_phase)

_USER_ERRORS = (ConfigError, DataFormatError, CheckpointError,
                AttackError, TrainingError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advnoise",
        description="Noise-injected robust training and attack "
                    "evaluation.")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in (
            ("train", "train the configured model"),
            ("eval", "train/load, then run the full evaluation"),
            ("attack", "run a single attack on the test split"),
            ("sweep", "accuracy curve along an attack-strength axis"),
            ("checklist", "run the gradient-obfuscation checklist")):
        cmd = sub.add_parser(verb, help=help_text)
        cmd.add_argument("--config", required=True,
                         help="path to the experiment YAML file")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the config seed")
        cmd.add_argument("--epsilon", type=float, default=None,
                         help="override the attack bound")
        cmd.add_argument("--steps", type=int, default=None,
                         help="override the attack step count")
        cmd.add_argument("--trials", type=int, default=None,
                         help="override the evaluation trial count")
        cmd.add_argument("--no-pni-at-test", action="store_true",
                         help="disable noise injection during evaluation")
        cmd.add_argument("--threads", type=int, default=1,
                         help="worker threads for repeated-trial "
                              "evaluation (results are identical at any "
                              "thread count)")
        if verb == "attack":
            cmd.add_argument("--attack", default="pgd",
                             choices=("fgsm", "pgd", "cw", "zoo"),
                             help="which attack to run")
        if verb == "sweep":
            cmd.add_argument("--axis", default="epsilon",
                             choices=("epsilon", "n_step"),
                             help="which axis to sweep")
    return parser


def _overrides(args: argparse.Namespace) -> Overrides:
    return Overrides(
        seed=args.seed, epsilon=args.epsilon, n_step=args.steps,
        trials=args.trials,
        noise_at_test=False if args.no_pni_at_test else None,
        threads=args.threads)


def _trained_model(config):
    train_set = config.train_dataset()
    model, start_epoch, optimizer = prepare_model(config, train_set)
    train_phase(config, model, train_set, start_epoch=start_epoch,
                optimizer=optimizer)
    return model


def _cmd_train(config, args) -> None:
    _trained_model(config)
    print(f"checkpoint written to {config.output_dir}")


def _cmd_eval(config, args) -> None:
    path = run_experiment(config)
    print((config.output_dir / "summary.txt").read_text(), end="")
    print(f"report written to {path}")


def _cmd_attack(config, args) -> None:
    model = _trained_model(config)
    test_set = config.test_dataset()
    model.noise_enabled = config.eval.noise_at_test
    config.output_dir.mkdir(parents=True, exist_ok=True)
    if args.attack in ("fgsm", "pgd"):
        attack = config.attack
        if args.attack == "fgsm":
            attack = AttackConfig(
                epsilon=config.attack.epsilon,
                with_pni_in_generation=(
                    config.attack.with_pni_in_generation),
                clip_range=config.attack.clip_range)
        stats = eval_accuracy(model, test_set, attack, kind=args.attack,
                              trials=config.eval.trials, seed=config.seed)
        print(f"{args.attack} accuracy: {100 * stats.mean:.2f} "
              f"+/- {100 * stats.std:.2f} %")
        payload = {"attack": args.attack, "epsilon": attack.epsilon,
                   "mean": 100 * stats.mean, "std": 100 * stats.std,
                   "values": [100 * v for v in stats.values]}
    elif args.attack == "cw":
        metrics = cw_metrics(model, test_set,
                             config.eval.cw or CwConfig(),
                             n_samples=config.eval.cw_samples,
                             seed=config.seed)
        write_jsonl(config.output_dir / "cw_records.jsonl",
                    metrics["records"])
        mean_l2 = metrics["mean_l2"]
        print(f"cw-l2 success: {100 * metrics['success_rate']:.1f} %, "
              f"mean L2: {'-' if mean_l2 is None else f'{mean_l2:.4f}'}")
        payload = {"attack": "cw",
                   "success_rate": metrics["success_rate"],
                   "mean_l2": mean_l2}
    else:
        metrics = zoo_metrics(model, test_set,
                              config.eval.zoo or ZooConfig(),
                              n_samples=config.eval.zoo_samples,
                              seed=config.seed)
        write_jsonl(config.output_dir / "zoo_records.jsonl",
                    metrics["records"])
        print(f"zoo success: {100 * metrics['success_rate']:.1f} %, "
              f"mean queries: {metrics['mean_queries']:.0f}")
        payload = {"attack": "zoo",
                   "success_rate": metrics["success_rate"],
                   "mean_queries": metrics["mean_queries"]}
    write_json(config.output_dir / f"attack_{args.attack}.json", payload)


def _cmd_sweep(config, args) -> None:
    if args.axis == "epsilon":
        field, grid = "sweep_epsilon", config.eval.sweep_epsilon
    else:
        field, grid = "sweep_steps", config.eval.sweep_steps
    if not grid:
        raise ConfigError(f"eval.{field}: required for the sweep verb")
    model = _trained_model(config)
    test_set = config.test_dataset()
    model.noise_enabled = config.eval.noise_at_test
    points = sweep(model, test_set, args.axis, grid, config.attack,
                   trials=config.eval.trials, seed=config.seed)
    path = config.output_dir / f"curve_{args.axis}.csv"
    write_curve_csv(path, args.axis, points)
    for point in points:
        print(f"{args.axis}={point['value']:g}: "
              f"{100 * point['mean']:.2f} +/- {100 * point['std']:.2f} %")
    print(f"curve written to {path}")


def _cmd_checklist(config, args) -> None:
    model = _trained_model(config)
    test_set = config.test_dataset()
    model.noise_enabled = config.eval.noise_at_test
    report = checklist_phase(config, model, test_set)
    for item in report["items"]:
        verdict = "pass" if item["passed"] else "FAIL"
        print(f"[{verdict}] {item['item']}. {item['name']}")
    print("checklist: " + ("pass" if report["passed"] else "FAIL"))


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "attack": _cmd_attack,
             "sweep": _cmd_sweep, "checklist": _cmd_checklist}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
        _COMMANDS[args.verb](config, args)
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
