"""
Command-line entry point.

    train   collect and update, write metrics.jsonl, summary.csv and checkpoints to --out
    eval    evaluate a checkpoint (--checkpoint) with the deterministic actor, or a
            baseline with --controller handcrafted|rvo
    check   solver-oracle | prop1 | prop2 | safety
    diag    b: correlations of the learned radius in a metrics stream
    sweep   radius: handcrafted, RVO (and optionally learned) rewards over agent radii on Waypoint
    ablate  constraint, objective and both, trained with the same seed
    deadlock  seeded head-on corridor runs of the handcrafted controller; with --checkpoint
              the learned controller is tried wherever the deadlock detector fires

Exit codes: 0 success, 1 failed check, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from baselines.handcrafted import HandcraftedController, deadlock_campaign
from baselines.orca import RvoController
from envs.config import Scenario
from harness.config_loader import ConfigError, LabConfig, load_config
from harness.diagnostics import b_diagnostics
from harness.evaluation import evaluate_controller, run_eval, summarize_records
from harness.metrics import MetricsLog
from harness.theory import prop1_check, prop2_report, safety_check, solver_oracle_check
from storage.file_manager import CheckpointError, FileManager
from training.config import Mode
from training.rollout import PolicyController
from training.trainer import architecture_for, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

CHECKS = ("solver-oracle", "prop1", "prop2", "safety")
ABLATION_MODES = (Mode.RECODE, Mode.ABLATION_OBJECTIVE, Mode.ABLATION_BOTH)
DEFAULT_RADII = "0.1,0.15,0.2,0.25"
CONTROLLERS = ("policy", "handcrafted", "rvo")
DEADLOCK_CONFIGS = 20
MIN_RESOLUTION = 0.7


class UsageError(ValueError):
    """Bad command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--scenario", choices=[s.value for s in Scenario], default=None)
    common.add_argument("--agents", type=int, default=None, help="Number of agents.")
    common.add_argument("--steps", type=int, default=None, help="Environment step budget (train) or episode cap.")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    common.add_argument("--config", default=None, help="TOML file with dotted section keys.")
    common.add_argument("--out", default=None, help="Output directory.")
    common.add_argument("--checkpoint", default=None)
    common.add_argument("--episodes", type=int, default=None)
    common.add_argument("--log", default=None, help="Metrics stream (.jsonl) to read.")
    common.add_argument("--verbose", action="store_true")

    parser = _Parser(prog="recode-lab", description="Multi-agent constrained-control lab.")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    commands.add_parser("train", parents=[common])
    evaluate = commands.add_parser("eval", parents=[common])
    evaluate.add_argument("--controller", choices=CONTROLLERS, default="policy")
    check = commands.add_parser("check", parents=[common])
    check.add_argument("name", choices=CHECKS)
    check.add_argument("--programs", type=int, default=500)
    diag = commands.add_parser("diag", parents=[common])
    diag.add_argument("name", choices=["b"])
    sweep = commands.add_parser("sweep", parents=[common])
    sweep.add_argument("name", choices=["radius"])
    sweep.add_argument("--radii", default=DEFAULT_RADII)
    commands.add_parser("ablate", parents=[common])
    deadlock = commands.add_parser("deadlock", parents=[common])
    deadlock.add_argument("--min-resolution", type=float, default=MIN_RESOLUTION,
                          help="Resolution rate the learned controller must reach (with --checkpoint).")
    return parser


def _scenario(args, default: Scenario = Scenario.NARROW_CORRIDOR) -> Scenario:
    return Scenario(args.scenario) if args.scenario else default


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fresh_log(out_dir: Path | None, name: str = "metrics.jsonl") -> MetricsLog:
    if out_dir is None:
        return MetricsLog()
    path = out_dir / name
    if path.exists():
        logger.warning("Replacing existing metrics stream %s", path)
        path.unlink()
    return MetricsLog(str(path))


def _load_params(args, config: LabConfig, env_config, mode: Mode):
    if not args.checkpoint:
        raise UsageError(f"The {args.command} command needs --checkpoint <file>.")
    train_config = config.train(mode=mode, seed=args.seed)
    architecture = architecture_for(train_config, env_config, **config.architecture_overrides())
    return FileManager.load_checkpoint(args.checkpoint, architecture), train_config


def cmd_train(args, config: LabConfig) -> int:
    env_config = config.env(_scenario(args), n_agents=args.agents, seed=args.seed)
    train_config = config.train(mode=args.mode, seed=args.seed, total_env_steps=args.steps)
    out_dir = _out_dir(args)
    log = _fresh_log(out_dir)
    architecture = architecture_for(train_config, env_config, **config.architecture_overrides())
    result = train(train_config, env_config, out_dir, log, architecture)
    rows = summarize_records(log.records, config.evaluation().window)
    if out_dir is not None:
        FileManager.save_summary_table(rows, str(out_dir / "summary.csv"))
    print(f"trained {train_config.mode.value} on {env_config.scenario.value}: "
          f"{len(result.updates)} updates, {result.env_steps} env steps"
          + (f", checkpoint {result.checkpoint}" if result.checkpoint else ""))
    return EXIT_OK


def _baseline(name: str, env_config):
    if name == "handcrafted":
        return HandcraftedController(env_config)
    try:
        return RvoController(env_config)
    except ValueError as error:
        raise UsageError(str(error)) from error


def cmd_eval(args, config: LabConfig) -> int:
    env_config = config.env(_scenario(args), n_agents=args.agents)
    eval_config = config.evaluation(n_episodes=args.episodes, seed=args.seed)
    if args.controller == "policy":
        mode = Mode(args.mode) if args.mode else config.train().mode
        params, train_config = _load_params(args, config, env_config, mode)
        summary = run_eval(params, env_config, eval_config.n_episodes, eval_config.seed, mode, train_config.lambda0)
    else:
        controller = _baseline(args.controller, env_config)
        summary = evaluate_controller(controller, env_config, eval_config.n_episodes, eval_config.seed)
    out_dir = _out_dir(args)
    if out_dir is not None:
        FileManager.save_summary_table([episode.to_dict() for episode in summary.episodes], str(out_dir / "eval_episodes.csv"))
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_check(args, config: LabConfig) -> int:
    if args.name == "solver-oracle":
        report = solver_oracle_check(args.programs, args.seed, options=config.solver())
    elif args.name == "prop1":
        report = prop1_check()
    elif args.name == "prop2":
        report = prop2_report()
    else:
        log = MetricsLog(args.log, load=True) if args.log else None
        env_config = config.env(_scenario(args), n_agents=args.agents)
        report = safety_check(log, env_config, seed=args.seed, max_steps=args.steps or 150)
    print(report.line())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_diag(args, config: LabConfig) -> int:
    path = args.log or (str(Path(args.out) / "metrics.jsonl") if args.out else None)
    if path is None:
        raise UsageError("diag b needs --log <metrics.jsonl> or --out <run directory>.")
    result = b_diagnostics(MetricsLog(path, load=True).records)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args, config: LabConfig) -> int:
    try:
        radii = [float(value) for value in args.radii.split(",") if value.strip()]
    except ValueError as error:
        raise UsageError(f"--radii expects comma-separated numbers: {error}") from error
    eval_config = config.evaluation(n_episodes=args.episodes, seed=args.seed)
    rows = []
    for radius in radii:
        env_config = config.env(Scenario.WAYPOINT, n_agents=args.agents, agent_radius=radius)
        controllers = {"handcrafted": HandcraftedController(env_config), "rvo": RvoController(env_config)}
        if args.checkpoint:
            mode = Mode(args.mode) if args.mode else Mode.RECODE
            params, train_config = _load_params(args, config, env_config, mode)
            controllers[mode.value] = PolicyController(params, mode, env_config, train_config.lambda0)
        for name, controller in controllers.items():
            summary = evaluate_controller(controller, env_config, eval_config.n_episodes, eval_config.seed)
            rows.append({"agent_radius": radius, "controller": name, "mean_reward": summary.mean_reward,
                         "std_reward": summary.std_reward, "collisions": summary.collisions,
                         "success_rate": summary.success_rate})
            print(f"radius {radius:.3f} {name}: {summary.mean_reward:.4f} +- {summary.std_reward:.4f}")
    out_dir = _out_dir(args)
    if out_dir is not None:
        FileManager.save_summary_table(rows, str(out_dir / "sweep_radius.csv"))
    return EXIT_OK


def cmd_ablate(args, config: LabConfig) -> int:
    env_config = config.env(_scenario(args, Scenario.WAYPOINT), n_agents=args.agents, seed=args.seed)
    out_dir = _out_dir(args)
    log = _fresh_log(out_dir)
    for mode in ABLATION_MODES:
        train_config = config.train(mode=mode, seed=args.seed, total_env_steps=args.steps)
        architecture = architecture_for(train_config, env_config, **config.architecture_overrides())
        mode_dir = None if out_dir is None else out_dir / mode.value
        if mode_dir is not None:
            mode_dir.mkdir(exist_ok=True)
        train(train_config, env_config, mode_dir, log, architecture)
    rows = summarize_records(log.records, config.evaluation().window)
    for row in rows:
        print(f"{row['mode']}: {row['best_window_reward']:.4f}")
    if out_dir is not None:
        FileManager.save_summary_table(rows, str(out_dir / "ablation.csv"))
    return EXIT_OK


def cmd_deadlock(args, config: LabConfig) -> int:
    env_config = config.env(_scenario(args), n_agents=args.agents)
    resolver, resolver_name = None, None
    if args.checkpoint:
        mode = Mode(args.mode) if args.mode else Mode.RECODE
        params, train_config = _load_params(args, config, env_config, mode)
        resolver, resolver_name = PolicyController(params, mode, env_config, train_config.lambda0), mode.value
    report = deadlock_campaign(env_config, args.episodes or DEADLOCK_CONFIGS, args.seed, resolver, resolver_name,
                               max_steps=args.steps)
    print(json.dumps(report.to_dict(), sort_keys=True))
    rate = report.resolution_rate
    return EXIT_FAILED if rate is not None and rate < args.min_resolution else EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "check": cmd_check,
    "diag": cmd_diag,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
    "deadlock": cmd_deadlock,
}


def run_cli(argv) -> int:
    """
    Parses argv and runs one subcommand.

    Returns:
        int: 0 on success, 1 when a check fails, 2 on usage or configuration errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except UsageError as error:
        print(error, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exit_:
        return int(exit_.code or 0)

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        return COMMANDS[args.command](args, config)
    except (UsageError, ConfigError, CheckpointError) as error:
        print(parser.format_usage(), end="", file=sys.stderr)
        print(f"{parser.prog}: error: {error}", file=sys.stderr)
        return EXIT_USAGE
