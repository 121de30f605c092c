"""Command-line entry point: train, eval, inspect-physics, dump-config."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .config import ConfigError, RunConfig
from .env import DispatchEnv
from .physics import (CircuitParams, CoilSpec, MisalignmentState,
                      QuadratureConfig, mutual_inductance, transfer_efficiency)
from .ppo import (TrainingError, evaluate, greedy_policy, load_checkpoint,
                  noop_policy, random_policy, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SUMMARY_FORMAT_VERSION = 1

STEP_COLUMNS = ["episode", "step", "action", "accepted", "reward",
                "r_depletion", "r_soc", "r_distance", "r_speed", "ev_count",
                "meds_deployed", "depletions"]
LEDGER_COLUMNS = ["episode", "step", "med_id", "ev_id", "slot", "expended_j",
                  "received_j", "eta"]
CURVE_COLUMNS = ["env_steps", "mean_episode_reward", "objective", "entropy"]

log = logging.getLogger("med_dispatch")


def _setup_logging():
    level = os.environ.get("MED_DISPATCH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else RunConfig()
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "out", None):
        overrides.append(f"out_dir={json.dumps(args.out)}")
    if getattr(args, "workers", None):
        overrides.append(f"workers={args.workers}")
    if getattr(args, "episodes", None):
        overrides.append(f"episodes={args.episodes}")
    return config_mod.apply_overrides(cfg, overrides)


def _env_config_with_seed(cfg: RunConfig):
    env_dict = config_mod.to_dict(cfg.env)
    env_dict["seed"] = cfg.seed
    return config_mod.from_dict(type(cfg.env), env_dict)


def _write_resolved(cfg: RunConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps(config_mod.to_dict(cfg), indent=2))


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    env_cfg = _env_config_with_seed(cfg)

    def factory():
        return DispatchEnv(env_cfg)

    def progress(row):
        log.info("steps=%d mean_ep_reward=%.3f objective=%.4f entropy=%.3f",
                 row["env_steps"], row["mean_episode_reward"],
                 row["objective"], row["entropy"])

    _, _, curve = train(factory, cfg.ppo, cfg.seed, out_dir=out,
                        workers=cfg.workers, progress=progress)
    with open(out / "training_curve.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        writer.writerows(curve)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg.out_dir)
    _write_resolved(cfg, out)
    env_cfg = _env_config_with_seed(cfg)

    if args.checkpoint:
        net, params, _, _ = load_checkpoint(args.checkpoint)
        if net.arch.n_inputs != env_cfg.observation_size:
            raise ConfigError(
                f"checkpoint expects observation size {net.arch.n_inputs}, "
                f"config produces {env_cfg.observation_size}")
        action_fn = greedy_policy(net, params)
        model_name = "ppo"
    elif args.baseline == "random":
        action_fn = random_policy()
        model_name = "random"
    else:
        action_fn = noop_policy()
        model_name = "noop"

    step_rows, ledger_rows = [], []

    def on_step(ep, step, action, result):
        info = result.info
        step_rows.append([ep, step, action, int(info["dispatch_accepted"]),
                          result.reward, info["r_depletion"], info["r_soc"],
                          info["r_distance"], info["r_speed"],
                          info["ev_count"], info["meds_deployed"],
                          info["depletions"]])
        for med_id, ev_id, slot, expended, received, eta in info["charging_ledger"]:
            ledger_rows.append([ep, step, med_id, ev_id, slot, expended,
                                received, eta])

    stats = evaluate(action_fn, lambda: DispatchEnv(env_cfg),
                     episodes=cfg.episodes, base_seed=cfg.seed,
                     step_callback=on_step)

    per_episode = stats.pop("per_episode")
    summary = {"format_version": SUMMARY_FORMAT_VERSION, "model": model_name,
               **stats}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    with open(out / "episodes.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(per_episode[0]))
        writer.writeheader()
        writer.writerows(per_episode)
    with open(out / "steps.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_COLUMNS)
        writer.writerows(step_rows)
    with open(out / "charging_ledger.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LEDGER_COLUMNS)
        writer.writerows(ledger_rows)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_inspect_physics(args) -> int:
    cfg = _load_config(args)
    env = cfg.env
    values = np.linspace(args.start, args.stop, args.steps).tolist() if args.steps > 0 else []
    writer = csv.writer(sys.stdout)
    writer.writerow([args.axis, "mutual_inductance_h", "efficiency"])
    base = {"horizontal_d": 0.0, "angular_theta": 0.0,
            "lateral_c": env.protocol.mount_gap}
    axis_field = {"d": "horizontal_d", "theta": "angular_theta",
                  "c": "lateral_c"}[args.axis]
    for v in values:
        base_v = dict(base)
        base_v[axis_field] = v
        mis = MisalignmentState(**base_v)
        m = mutual_inductance(env.med_coil, env.ev_coil, mis, env.quadrature)
        eta = transfer_efficiency(max(m, 0.0), env.circuit)
        writer.writerow([v, m, eta])
    return EXIT_OK


def cmd_dump_config(args) -> int:
    print(config_mod.dump_default_config())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="med-dispatch",
        description="V2V charging simulation and MED dispatch training")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable; dotted paths allowed")
        if out:
            p.add_argument("--out", help="output directory")

    p_train = sub.add_parser("train", help="train the PPO dispatch agent")
    common(p_train)
    p_train.add_argument("--workers", type=int, default=None,
                         help="parallel rollout environments")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint or baseline")
    common(p_eval)
    group = p_eval.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="trained checkpoint JSON")
    group.add_argument("--baseline", choices=["random", "noop"])
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_phys = sub.add_parser("inspect-physics",
                            help="sweep one misalignment axis, CSV to stdout")
    common(p_phys, out=False)
    p_phys.add_argument("--axis", choices=["d", "theta", "c"], required=True)
    p_phys.add_argument("--start", type=float, required=True)
    p_phys.add_argument("--stop", type=float, required=True)
    p_phys.add_argument("--steps", type=int, required=True)
    p_phys.set_defaults(func=cmd_inspect_physics)

    p_dump = sub.add_parser("dump-config",
                            help="print the fully-defaulted config schema")
    p_dump.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
