"""
Episode evaluation shared by every controller: learned modes, the handcrafted
program, RVO and pure MARL all run through run_episode.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from envs.config import EnvConfig
from envs.multi_agent_env import MultiAgentEnv
from envs.state import EventKind, ObservationGraph
from policy.params import PolicyParams
from training.config import Mode
from training.rollout import PolicyController
from utils.validation import validate_type

logger = logging.getLogger(__name__)

Controller = Callable[[list[ObservationGraph]], np.ndarray]


@dataclass(frozen=True)
class EvalConfig:
    n_episodes: int = 75
    seed: int = 0
    window: int = 6

    def __post_init__(self) -> None:
        for name in ("n_episodes", "window"):
            value = getattr(self, name)
            validate_type(value, int, f"Invalid value for '{name}': Expected an int, not a {type(value).__name__}")
            if value < 1:
                raise ValueError(f"Invalid value for '{name}': Expected a positive integer, but got {value}.")


@dataclass(frozen=True)
class EpisodeResult:
    seed: int
    mean_step_reward: float
    total_reward: float
    collisions: int
    out_of_bounds: int
    link_breaks: int
    success: bool
    steps: int
    positions: np.ndarray = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mean_step_reward": self.mean_step_reward,
            "total_reward": self.total_reward,
            "collisions": self.collisions,
            "out_of_bounds": self.out_of_bounds,
            "link_breaks": self.link_breaks,
            "success": self.success,
            "steps": self.steps,
        }


@dataclass(frozen=True)
class EvalSummary:
    """Mean and standard deviation of the per-step reward across episodes, with safety totals."""
    mean_reward: float
    std_reward: float
    collisions: int
    out_of_bounds: int
    link_breaks: int
    success_rate: float
    n_episodes: int
    episodes: tuple[EpisodeResult, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "mean_reward": self.mean_reward,
            "std_reward": self.std_reward,
            "collisions": self.collisions,
            "out_of_bounds": self.out_of_bounds,
            "link_breaks": self.link_breaks,
            "success_rate": self.success_rate,
            "n_episodes": self.n_episodes,
        }


def run_episode(controller: Controller, env_config: EnvConfig, seed: int, max_steps: int | None = None) -> EpisodeResult:
    """Runs one closed-loop episode to the horizon (or max_steps) and tallies its events."""
    env = MultiAgentEnv(env_config)
    observations = env.reset(seed)
    if hasattr(controller, "reset"):
        controller.reset()
    limit = env_config.horizon if max_steps is None else min(max_steps, env_config.horizon)
    rewards = []
    counts = {EventKind.COLLISION: 0, EventKind.OUT_OF_BOUNDS: 0, EventKind.LINK_BREAK_ATTEMPT: 0}
    positions = [env.state.positions]
    for _ in range(limit):
        observations, result = env.step(controller(observations))
        rewards.append(result.rewards)
        positions.append(env.state.positions)
        for kind in counts:
            counts[kind] += result.count(kind)
        if result.done:
            break
    rewards = np.asarray(rewards)
    return EpisodeResult(
        seed=seed,
        mean_step_reward=float(rewards.mean()) if rewards.size else 0.0,
        total_reward=float(rewards.sum(axis=0).mean()) if rewards.size else 0.0,
        collisions=counts[EventKind.COLLISION],
        out_of_bounds=counts[EventKind.OUT_OF_BOUNDS],
        link_breaks=counts[EventKind.LINK_BREAK_ATTEMPT],
        success=all(agent.at_goal for agent in env.state.agents),
        steps=len(rewards),
        positions=np.asarray(positions),
    )


def summarize(episodes) -> EvalSummary:
    episodes = tuple(episodes)
    rewards = np.array([episode.mean_step_reward for episode in episodes])
    return EvalSummary(
        mean_reward=float(rewards.mean()),
        std_reward=float(rewards.std()),
        collisions=sum(episode.collisions for episode in episodes),
        out_of_bounds=sum(episode.out_of_bounds for episode in episodes),
        link_breaks=sum(episode.link_breaks for episode in episodes),
        success_rate=float(np.mean([episode.success for episode in episodes])),
        n_episodes=len(episodes),
        episodes=episodes,
    )


def evaluate_controller(controller: Controller, env_config: EnvConfig, n_episodes: int, seed: int) -> EvalSummary:
    """Episodes use seeds seed, seed + 1, ..., so equal arguments give equal summaries."""
    validate_type(n_episodes, int, f"Invalid value for 'n_episodes': Expected an int, not a {type(n_episodes).__name__}")
    if n_episodes < 1:
        raise ValueError(f"Invalid value for 'n_episodes': Expected a positive integer, but got {n_episodes}.")
    return summarize(run_episode(controller, env_config, seed + k) for k in range(n_episodes))


def run_eval(params: PolicyParams, env_config: EnvConfig, n_episodes: int = 75, seed: int = 0,
             mode: Mode = Mode.RECODE, lambda0: float = 1e3) -> EvalSummary:
    """Deterministic-actor evaluation of a parameter snapshot."""
    controller = PolicyController(params, mode, env_config, lambda0)
    summary = evaluate_controller(controller, env_config, n_episodes, seed)
    logger.info("Evaluated %s on %s over %d episodes: %.4f +- %.4f", Mode(mode).value,
                env_config.scenario.value, n_episodes, summary.mean_reward, summary.std_reward)
    return summary


def best_window_mean(values, window: int = 6) -> float:
    """Largest mean over `window` consecutive values; the plain mean when fewer values exist."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("Invalid value for 'values': Expected at least one value.")
    if values.size <= window:
        return float(values.mean())
    sums = np.convolve(values, np.ones(window), mode="valid")
    return float(sums.max() / window)


def summarize_records(records, window: int = 6) -> list[dict]:
    """
    One table row per (scenario, mode) from evaluation records.

    Each row reports the best-window mean of the evaluation rewards, the last
    evaluation's standard deviation and the collision total.
    """
    groups: dict[tuple[str, str], list] = {}
    for record in records:
        if record.kind.value != "evaluation":
            continue
        groups.setdefault((record.scenario, record.mode), []).append(record)
    rows = []
    for (scenario, mode), group in sorted(groups.items()):
        group.sort(key=lambda record: record.step)
        rewards = [record.data["mean_reward"] for record in group]
        rows.append({
            "scenario": scenario,
            "mode": mode,
            "best_window_reward": best_window_mean(rewards, window),
            "last_std": group[-1].data["std_reward"],
            "collisions": sum(record.data["collisions"] for record in group),
            "evaluations": len(group),
        })
    return rows
