"""Command-line harness: dataset generation, two-phase training, policy
evaluation, tabular proposition verification, and parameter sweeps.

All commands are reproducible from (config, seed): rerunning writes
identical artifacts. Exit codes: 0 success, 1 usage or config error,
2 verification failure, 3 IO error. The SCAS_LOG_LEVEL environment
variable (error, info, debug) controls logging; command results print to
stdout regardless.

Run configuration is a JSON document with sections env, dataset,
dynamics, agent, eval plus top-level seed and out. Every field defaults
to the standard hyperparameters; unknown keys anywhere are rejected. The
agent section spells the balance coefficient "lambda" (the estimator
calls it lam).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import METRICS_COLUMNS, ScasAgent
from .dynamics import DynamicsModel
from .envs import (
    ContinuousDataset,
    PointNavConfig,
    RandomBehavior,
    ScriptedBehavior,
    collect_dataset,
    env_config_from_metadata,
)
from .evaluation import evaluate_policy
from .tabular import InstanceTooLargeError, verify_propositions

__all__ = ["main", "RunConfig", "load_run_config"]

logger = logging.getLogger("scaslab.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_IO = 3

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

AGENT_DEFAULTS: dict = {
    "alpha": 5.0,
    "lambda": 0.25,
    "sigma": 0.003,
    "gamma": 0.99,
    "tau": 0.005,
    "critic_lr": 3e-4,
    "actor_lr": 2e-4,
    "batch_size": 256,
    "policy_freq": 2,
    "n_critics": 4,
    "weight_clip": 50.0,
    "gradient_steps": 100_000,
    "hidden_width": 64,
    "v_aggregate": "mean",
    "bc_mode": False,
    "stop_on_q_divergence": False,
    "log_every": 500,
}

DYNAMICS_DEFAULTS: dict = {
    "hidden_width": 64,
    "n_hidden_layers": 4,
    "lr": 1e-3,
    "batch_size": 256,
    "gradient_steps": 100_000,
}

DATASET_DEFAULTS: dict = {
    "n_transitions": 50_000,
    "exclude_hole": True,
    "behavior": {"kind": "scripted", "noise_levels": [0.0, 0.3]},
}

EVAL_DEFAULTS: dict = {"every": 5_000, "episodes": 5}


class UsageError(Exception):
    """Bad flags, bad config document, or violated command preconditions."""


def _env_tree(config: PointNavConfig) -> dict:
    hole = config.ood_hole
    return {
        "arena": [list(config.arena.low), list(config.arena.high)],
        "goal": list(config.goal),
        "goal_radius": config.goal_radius,
        "max_steps": config.max_steps,
        "action_scale": config.action_scale,
        "dynamics_noise_std": config.dynamics_noise_std,
        "ood_hole": None if hole is None else [list(hole.low), list(hole.high)],
    }


def _merge_tree(defaults: dict, doc: dict, path: str) -> dict:
    if not isinstance(doc, dict):
        raise UsageError(f"config section {path.rstrip('.')} must be a JSON object")
    merged = {}
    for key, value in doc.items():
        if key not in defaults:
            raise UsageError(f"unknown config key {path}{key}")
        if isinstance(defaults[key], dict):
            merged[key] = _merge_tree(defaults[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    for key, value in defaults.items():
        if key not in merged:
            merged[key] = json.loads(json.dumps(value)) if isinstance(value, (dict, list)) else value
    return merged


@dataclass
class RunConfig:
    """Merged run configuration with defaults filled in."""

    env: dict
    dataset: dict
    dynamics: dict
    agent: dict
    eval: dict
    seed: Optional[int]
    out: Optional[str]
    provided: frozenset

    def env_config(self) -> PointNavConfig:
        return env_config_from_metadata({"env": self.env})


def load_run_config(
    config_path: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    require_seed: bool = False,
) -> RunConfig:
    """Read the config document, reject unknown keys, apply overrides."""
    doc: dict = {}
    if config_path is not None:
        try:
            doc = json.loads(Path(config_path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise UsageError(f"{config_path}: top level must be a JSON object")
    sections = {
        "env": _env_tree(PointNavConfig()),
        "dataset": DATASET_DEFAULTS,
        "dynamics": DYNAMICS_DEFAULTS,
        "agent": AGENT_DEFAULTS,
        "eval": EVAL_DEFAULTS,
    }
    allowed = set(sections) | {"seed", "out"}
    unknown = set(doc) - allowed
    if unknown:
        raise UsageError(f"unknown config key {sorted(unknown)[0]}")
    merged = {
        name: _merge_tree(defaults, doc.get(name, {}), f"{name}.")
        for name, defaults in sections.items()
    }
    if seed is None:
        seed = doc.get("seed")
    if seed is None and require_seed:
        raise UsageError("seed is mandatory for this command (--seed or config 'seed')")
    if out is None:
        out = doc.get("out")
    return RunConfig(
        env=merged["env"],
        dataset=merged["dataset"],
        dynamics=merged["dynamics"],
        agent=merged["agent"],
        eval=merged["eval"],
        seed=None if seed is None else int(seed),
        out=out,
        provided=frozenset(doc),
    )


def _behavior_from_tree(tree: dict):
    kind = tree.get("kind")
    if kind == "scripted":
        return ScriptedBehavior(noise_levels=tuple(tree["noise_levels"]))
    if kind == "random":
        return RandomBehavior()
    raise UsageError(f"unknown behavior kind {kind!r}")


def _agent_from_tree(tree: dict, seed: int, eval_every: int) -> ScasAgent:
    kwargs = dict(tree)
    kwargs["lam"] = kwargs.pop("lambda")
    agent = ScasAgent(**kwargs, eval_every=eval_every, random_state=seed)
    agent._validate_config()
    return agent


def _require_out(rc: RunConfig, command: str) -> Path:
    if rc.out is None:
        raise UsageError(f"{command} requires an output path (--out or config 'out')")
    return Path(rc.out)


def _load_dataset(path: str) -> ContinuousDataset:
    try:
        return ContinuousDataset.load_jsonl(path)
    except FileNotFoundError as exc:
        raise OSError(f"dataset not found: {path}") from exc
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _make_eval_hook(env: PointNavConfig, eval_tree: dict, seed: int):
    episodes = int(eval_tree["episodes"])
    if int(eval_tree["every"]) <= 0 or episodes <= 0:
        return None

    def hook(step: int, policy) -> dict:
        report = evaluate_policy(policy, env, mode="IN_DIST", episodes=episodes,
                                 seeds=(seed + step,))
        result = {"eval_return": report.aggregates()["return_mean"]}
        if env.ood_hole is not None:
            ood = evaluate_policy(policy, env, mode="OOD_HOLE", episodes=episodes,
                                  seeds=(seed + step,))
            result["eval_steps_out_of_ood"] = ood.aggregates()["steps_out_of_ood_mean"]
        logger.debug("eval at step %d: %s", step, result)
        return result

    return hook


def _train_one(
    rc: RunConfig,
    data: ContinuousDataset,
    env: PointNavConfig,
    agent_tree: dict,
    seed: int,
    out_dir: Path,
    dynamics: Optional[DynamicsModel] = None,
) -> ScasAgent:
    """Phase 1 (dynamics) then phase 2 (agent); bundle + metrics into out_dir."""
    if not agent_tree["bc_mode"] and dynamics is None:
        logger.info("phase 1: dynamics model, %d steps", rc.dynamics["gradient_steps"])
        dynamics = DynamicsModel(**rc.dynamics, random_state=seed).fit(data)
        logger.info("dynamics final loss %.3e", dynamics.loss_history_[-1][1])
    agent = _agent_from_tree(agent_tree, seed, int(rc.eval["every"]))
    hook = _make_eval_hook(env, rc.eval, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("phase 2: agent, %d steps", agent.gradient_steps)
    agent.fit(
        data,
        dynamics=None if agent_tree["bc_mode"] else dynamics,
        eval_hook=hook,
        metrics_path=out_dir / "metrics.csv",
    )
    agent.save_bundle(out_dir)
    (out_dir / "env.json").write_text(json.dumps({"env": _env_tree(env)}, indent=2) + "\n")
    return agent


def _check_env_matches_dataset(rc: RunConfig, data: ContinuousDataset) -> PointNavConfig:
    meta_env = data.metadata.get("env")
    if meta_env is None:
        return rc.env_config()
    if "env" in rc.provided and rc.env != meta_env:
        raise UsageError("config env section does not match the dataset's environment metadata")
    return env_config_from_metadata(data.metadata)


# ------------------------------------------------------------------ commands


def cmd_gen_data(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config, args.seed, args.out, require_seed=True)
    out = _require_out(rc, "gen-data")
    env = rc.env_config()
    behavior = _behavior_from_tree(rc.dataset["behavior"])
    rng = np.random.default_rng(np.random.SeedSequence(rc.seed))
    logger.info("collecting %d transitions", rc.dataset["n_transitions"])
    data = collect_dataset(
        env, behavior, int(rc.dataset["n_transitions"]), bool(rc.dataset["exclude_hole"]),
        rng, seed=rc.seed,
    )
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        data.save_jsonl(out)
    except OSError as exc:
        raise OSError(f"cannot write dataset to {out}: {exc}") from exc
    hole = env.ood_hole
    retained = 0
    if hole is not None:
        retained = int(hole.contains(data.states).sum() + hole.contains(data.next_states).sum())
    print(f"wrote {len(data)} transitions to {out}")
    print(
        f"episodes={data.metadata['episodes']} "
        f"dropped_in_hole={data.metadata['dropped_in_hole']} retained_in_hole={retained}"
    )
    print(f"state_mean={data.state_mean.tolist()} state_std={data.state_std.tolist()}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config, args.seed, args.out, require_seed=True)
    out = _require_out(rc, "train")
    data = _load_dataset(args.data)
    env = _check_env_matches_dataset(rc, data)
    agent = _train_one(rc, data, env, rc.agent, rc.seed, out)
    print(f"bundle written to {out}")
    print(
        f"steps={agent.trained_steps_} max_weight={agent.max_weight_:g} "
        f"band_exit_step={agent.band_exit_step_}"
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    bundle = Path(args.bundle)
    try:
        agent = ScasAgent.load_bundle(bundle)
        env = env_config_from_metadata(json.loads((bundle / "env.json").read_text()))
    except FileNotFoundError as exc:
        raise OSError(f"not a checkpoint bundle: {bundle} ({exc})") from exc
    base = 0 if args.seed is None else args.seed
    seeds = [base + i for i in range(args.seeds)]
    report = evaluate_policy(
        agent.act, env, mode=args.mode, episodes=args.episodes, seeds=seeds,
        perturb_steps=args.perturb_steps, noise_magnitude=args.noise_magnitude,
    )
    print(report.table())
    out = Path(args.out) if args.out else bundle / "eval_report.json"
    try:
        report.save(out)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    logger.info("report written to %s", out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    alphas = _parse_float_list(args.alphas, "--alphas")
    report = verify_propositions(
        args.instances, args.states, args.actions, grid=args.grid,
        alphas=alphas, stochastic=args.stochastic, seed=0 if args.seed is None else args.seed,
    )
    for line in report.lines:
        logger.debug("%s", line)
    doc = json.dumps(report.to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(doc + "\n")
        logger.info("verification summary written to %s", args.out)
    else:
        print(doc)
    print(f"verification {'PASSED' if report.ok else 'FAILED'} over {report.instances} instances")
    return EXIT_OK if report.ok else EXIT_VERIFY


def cmd_sweep(args: argparse.Namespace) -> int:
    rc = load_run_config(args.config, args.seed, args.out, require_seed=True)
    out = _require_out(rc, "sweep")
    values = _parse_float_list(args.values, "--values")
    if not values:
        raise UsageError("sweep needs a nonempty --values list")
    data = _load_dataset(args.data)
    env = _check_env_matches_dataset(rc, data)
    out.mkdir(parents=True, exist_ok=True)
    combined: list[dict] = []
    for seed_index in range(args.seeds):
        seed = rc.seed + seed_index
        dynamics = None
        if not rc.agent["bc_mode"]:
            logger.info("seed %d: dynamics model", seed)
            dynamics = DynamicsModel(**rc.dynamics, random_state=seed).fit(data)
        for value in values:
            agent_tree = dict(rc.agent)
            agent_tree[args.parameter] = value
            run_dir = out / f"{args.parameter}_{value:g}" / f"seed_{seed}"
            logger.info("training %s=%g seed=%d", args.parameter, value, seed)
            agent = _train_one(rc, data, env, agent_tree, seed, run_dir, dynamics=dynamics)
            for row in agent.metrics_:
                combined.append(
                    {"parameter": args.parameter, "value": value, "seed": seed, **row}
                )
    combined_path = out / "sweep.csv"
    with open(combined_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("parameter", "value", "seed", *METRICS_COLUMNS),
                                restval="")
        writer.writeheader()
        writer.writerows(combined)
    print(f"swept {args.parameter} over {values} x {args.seeds} seed(s); "
          f"combined curves in {combined_path}")
    return EXIT_OK


# ------------------------------------------------------------------- parsing


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {raw!r}") from exc


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage problems, not argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scas", description="offline RL laboratory harness")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p: argparse.ArgumentParser, out_help: str) -> None:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="base random seed")
        p.add_argument("--out", help=out_help)

    p = sub.add_parser("gen-data", help="roll behavior episodes into a JSONL dataset")
    common(p, "output dataset path (JSONL)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train dynamics then the agent; write a bundle")
    common(p, "output bundle directory")
    p.add_argument("--data", required=True, help="input dataset (JSONL)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint bundle")
    p.add_argument("--bundle", required=True, help="checkpoint bundle directory")
    p.add_argument("--mode", choices=("IN_DIST", "OOD_HOLE"), default="IN_DIST")
    p.add_argument("--perturb-steps", type=int, default=0)
    p.add_argument("--noise-magnitude", type=float, default=0.5)
    p.add_argument("--episodes", type=int, default=10, help="episodes per seed")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (base + index)")
    p.add_argument("--seed", type=int, help="base evaluation seed")
    p.add_argument("--out", help="report JSON path (default: bundle/eval_report.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="check the tabular closed-form propositions")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--states", type=int, default=6)
    p.add_argument("--actions", type=int, default=4)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--alphas", default="0,1,5", help="comma-separated alpha values")
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="summary JSON path (default: stdout)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="train one agent per parameter value per seed")
    common(p, "output sweep directory")
    p.add_argument("--data", required=True, help="input dataset (JSONL)")
    p.add_argument("--parameter", required=True, choices=("alpha", "lambda", "sigma"))
    p.add_argument("--values", required=True, help="comma-separated parameter values")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds (base + index)")
    p.set_defaults(func=cmd_sweep)

    return parser


def _setup_logging() -> None:
    raw = os.environ.get("SCAS_LOG_LEVEL", "info").strip().lower()
    if raw not in LOG_LEVELS:
        raise UsageError(
            f"SCAS_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}; got {raw!r}"
        )
    logging.basicConfig(level=LOG_LEVELS[raw], format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[list[str]] = None) -> int:
    try:
        _setup_logging()
        parser = build_parser()
        args = parser.parse_args(argv)
        if not hasattr(args, "func"):
            parser.print_help()
            return EXIT_USAGE
        return args.func(args)
    except SystemExit as exc:  # argparse --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InstanceTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:  # invalid config values reach constructors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
