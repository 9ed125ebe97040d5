"""
The collect / update loop with periodic evaluation and checkpoints.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from envs.config import EnvConfig
from harness.evaluation import run_eval
from harness.metrics import MetricsLog, MetricsRecord, RecordKind
from policy.params import ArchitectureConfig, PolicyParams, init_params
from storage.file_manager import FileManager
from training.config import TrainConfig
from training.mappo import UpdateStats, make_optimizer, update_policy
from training.rollout import EnvPool, RolloutBatch, collect_rollouts, flag_infeasible, recompute_log_probs

logger = logging.getLogger(__name__)

LOG_PROB_TOLERANCE = 1e-9
EVAL_SEED_OFFSET = 10_000


@dataclass
class TrainResult:
    """
    Attributes:
        params (PolicyParams): Final parameters.
        checkpoint (Path | None): Path of the final checkpoint when an output directory was given.
        log (MetricsLog): Every record the run produced.
        updates (list[UpdateStats]): One entry per update attempt.
        env_steps (int): Instance steps consumed.
    """
    params: PolicyParams
    checkpoint: Path | None
    log: MetricsLog
    updates: list = field(default_factory=list)
    env_steps: int = 0


def architecture_for(config: TrainConfig, env_config: EnvConfig, **overrides) -> ArchitectureConfig:
    return ArchitectureConfig(head=config.mode.head, max_speed=env_config.speed, **overrides)


def agent_step_records(batch: RolloutBatch, config: TrainConfig, env_config: EnvConfig, first_step: int) -> list[MetricsRecord]:
    """One record per agent-step: reward, b, neighbor count, goal distance, position, events and solver status."""
    T, E, N = batch.shape
    fallbacks = set(batch.fallbacks)
    records = []
    for t in range(T):
        for e in range(E):
            involved = [[] for _ in range(N)]
            for event in batch.events[t][e]:
                for agent in event.agents:
                    involved[agent].append(event.kind.value)
            for i in range(N):
                status = batch.statuses[t][e][i]
                records.append(MetricsRecord(
                    RecordKind.AGENT_STEP, config.mode.value, env_config.scenario.value, config.seed,
                    first_step + t * E + e,
                    {
                        "instance": e,
                        "agent": i,
                        "reward": batch.rewards[t, e, i],
                        "b": batch.b_values[t, e, i],
                        "neighbor_count": batch.neighbor_counts[t, e, i],
                        "goal_distance": np.linalg.norm(batch.observations[t][e][i].goal_displacement),
                        "position": batch.positions[t, e, i],
                        "events": involved[i],
                        "status": None if status is None else status.value,
                        "fallback": (t, e, i) in fallbacks,
                        "slack": max(batch.slacks[t][e][i], default=0.0),
                    },
                ))
    return records


def _evaluate(params: PolicyParams, config: TrainConfig, env_config: EnvConfig, env_steps: int,
              update: int, log: MetricsLog) -> None:
    summary = run_eval(params, env_config, config.eval_episodes, config.seed + EVAL_SEED_OFFSET,
                       config.mode, config.lambda0)
    log.add(MetricsRecord(RecordKind.EVALUATION, config.mode.value, env_config.scenario.value, config.seed,
                          env_steps, {"update": update, **summary.to_dict()}))


def train(config: TrainConfig, env_config: EnvConfig, out_dir: str | Path | None = None,
          log: MetricsLog | None = None, architecture: ArchitectureConfig | None = None) -> TrainResult:
    """
    Alternates rollout collection and updates until config.total_env_steps.

    Args:
        config: Training settings.
        env_config: Scenario configuration shared by every instance.
        out_dir: Directory for checkpoints; nothing is written when None.
        log: Destination of the metrics records; a fresh in-memory log when None.
        architecture: Network sizes; defaults follow the mode's head and the scenario's M.

    Returns:
        TrainResult: Final parameters, checkpoint path and the metrics log.
    """
    log = log if log is not None else MetricsLog()
    architecture = architecture or architecture_for(config, env_config)
    if architecture.head is not config.mode.head:
        raise ValueError(f"Invalid value for 'architecture': Mode {config.mode.value} needs head {config.mode.head.value}.")
    out_dir = None if out_dir is None else Path(out_dir)

    generator = torch.Generator().manual_seed(config.seed)
    params = init_params(architecture, config.seed)
    optimizer = make_optimizer(params, config)
    pool = EnvPool(env_config, config.n_env_instances, config.seed) if config.total_env_steps > 0 else None
    result = TrainResult(params=params, checkpoint=None, log=log)

    update = 0
    while result.env_steps < config.total_env_steps:
        if update % config.eval_every == 0:
            _evaluate(params, config, env_config, result.env_steps, update, log)

        batch = collect_rollouts(pool, params, config, generator)
        drift = float((recompute_log_probs(batch, params) - batch.log_probs).abs().max())
        if drift > LOG_PROB_TOLERANCE:
            logger.warning("Stored log-probs drift by %.3e from the collection-time parameters", drift)
        log.extend(agent_step_records(batch, config, env_config, result.env_steps))
        result.env_steps += config.steps_per_update
        report = flag_infeasible(batch, config.slack_threshold)

        params, stats = update_policy(batch, params, config, optimizer, generator)
        result.updates.append(stats)
        update += 1
        finished = np.asarray(pool.completed_returns[-config.n_env_instances:])
        log.add(MetricsRecord(RecordKind.UPDATE, config.mode.value, env_config.scenario.value, config.seed,
                              result.env_steps, {
                                  "update": update,
                                  "version": params.version,
                                  "mean_team_reward": batch.team_rewards.mean(),
                                  "recent_episode_return": finished.mean() if finished.size else None,
                                  "flagged": len(report),
                                  "fallbacks": len(batch.fallbacks),
                                  "solver_calls": batch.solver_calls,
                                  "log_prob_drift": drift,
                                  **stats.to_dict(),
                              }))
        logger.info("Update %d at %d env steps: reward %.4f, kl %.2e, flagged %d",
                    update, result.env_steps, batch.team_rewards.mean(), stats.mean_kl, len(report))
        if out_dir is not None and update % config.checkpoint_every == 0:
            FileManager.save_checkpoint(params, out_dir / f"checkpoint_{update:06d}.rcd")

    if update > 0:
        _evaluate(params, config, env_config, result.env_steps, update, log)
    if out_dir is not None:
        result.checkpoint = out_dir / "checkpoint_final.rcd"
        FileManager.save_checkpoint(params, result.checkpoint)
    result.params = params
    return result
