"""
Closed-loop driver for the handcrafted controller and a deadlock detector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from controllers.controller import build_default_program
from envs.config import EnvConfig
from envs.multi_agent_env import MultiAgentEnv
from envs.state import EventKind, ObservationGraph, WorldState
from harness.evaluation import EpisodeResult, run_episode
from solver.program import SolveStatus
from solver.qcqp import batch_solve

logger = logging.getLogger(__name__)

DEADLOCK_WINDOW = 100
DEADLOCK_THRESHOLD = 0.02


class HandcraftedController:
    """
    Solves the default program of every agent; non-optimal solves fall back to u = 0.

    Attributes:
        config (EnvConfig): Scenario configuration.
        statuses (list[list[SolveStatus]]): Per-step statuses since the last reset.
    """

    def __init__(self, config: EnvConfig, workers: int | None = None) -> None:
        self.config = config
        self.workers = workers
        self.reset()

    def reset(self) -> None:
        self.statuses: list[list[SolveStatus]] = []

    def __call__(self, observations: list[ObservationGraph]) -> np.ndarray:
        programs = [build_default_program(obs, self.config) for obs in observations]
        results = batch_solve(programs, workers=self.workers)
        controls = np.zeros((len(observations), 2))
        for index, result in enumerate(results):
            if result.ok:
                controls[index] = result.control
            else:
                logger.warning("Handcrafted controller fell back to u = 0 for agent %d (%s)", index, result.status.value)
        self.statuses.append([result.status for result in results])
        return controls


@dataclass
class Trajectory:
    """
    Attributes:
        positions (np.ndarray): (T + 1, N, 2) positions, the initial state first.
        controls (np.ndarray): (T, N, 2) applied controls.
        rewards (np.ndarray): (T, N) per-agent rewards.
        at_goal (np.ndarray): (T + 1, N) goal flags.
        events (list): Events of each step.
        statuses (list): Solver statuses of each step.
        summary (EpisodeResult): Episode totals.
    """
    positions: np.ndarray
    controls: np.ndarray
    rewards: np.ndarray
    at_goal: np.ndarray
    events: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    summary: EpisodeResult | None = None

    @property
    def all_optimal(self) -> bool:
        return all(status is SolveStatus.OPTIMAL for step in self.statuses for status in step)


def handcrafted_rollout(env: MultiAgentEnv | EnvConfig, seed: int | None = None, max_steps: int | None = None,
                        initial_state: WorldState | None = None) -> Trajectory:
    """
    Runs build_default_program -> solve -> step until the horizon or max_steps.

    Args:
        env: An environment, or a configuration to build one from.
        seed: Reset seed; ignored when initial_state is given.
        max_steps: Optional step limit below the horizon.
        initial_state: A prepared state to start from instead of a reset.
    """
    env = env if isinstance(env, MultiAgentEnv) else MultiAgentEnv(env)
    if initial_state is not None:
        env.state = initial_state
        observations = env.observe()
    else:
        observations = env.reset(seed)
    controller = HandcraftedController(env.config)
    limit = env.config.horizon if max_steps is None else max_steps

    positions = [env.state.positions]
    at_goal = [[agent.at_goal for agent in env.state.agents]]
    controls, rewards, events = [], [], []
    for _ in range(limit):
        step_controls = controller(observations)
        observations, result = env.step(step_controls)
        controls.append(step_controls)
        rewards.append(result.rewards)
        events.append(result.events)
        positions.append(env.state.positions)
        at_goal.append([agent.at_goal for agent in env.state.agents])
        if result.done:
            break

    rewards = np.asarray(rewards).reshape(-1, env.n_agents)
    counts = {kind: sum(1 for step in events for event in step if event.kind is kind) for kind in EventKind}
    summary = EpisodeResult(
        seed=env.config.seed,
        mean_step_reward=float(rewards.mean()) if rewards.size else 0.0,
        total_reward=float(rewards.sum(axis=0).mean()) if rewards.size else 0.0,
        collisions=counts[EventKind.COLLISION],
        out_of_bounds=counts[EventKind.OUT_OF_BOUNDS],
        link_breaks=counts[EventKind.LINK_BREAK_ATTEMPT],
        success=bool(all(at_goal[-1])),
        steps=len(rewards),
        positions=np.asarray(positions),
    )
    return Trajectory(
        positions=np.asarray(positions),
        controls=np.asarray(controls).reshape(-1, env.n_agents, 2),
        rewards=rewards,
        at_goal=np.asarray(at_goal, dtype=bool),
        events=events,
        statuses=controller.statuses,
        summary=summary,
    )


def detect_deadlock(positions, window: int = DEADLOCK_WINDOW, threshold: float = DEADLOCK_THRESHOLD,
                    at_goal=None) -> bool:
    """
    True when some window of `window` steps moves the agents that have not reached
    their goals by less than `threshold` on average.

    Args:
        positions: (T + 1, N, 2) positions.
        window: Window length in steps.
        threshold: Mean displacement in meters below which the window counts as stuck.
        at_goal: Optional (T + 1, N) goal flags; agents at their goal at the window end are ignored.
    """
    positions = np.asarray(positions, dtype=np.float64)
    steps = positions.shape[0] - 1
    if steps < window:
        return False
    for start in range(steps - window + 1):
        end = start + window
        pending = np.ones(positions.shape[1], dtype=bool) if at_goal is None else ~np.asarray(at_goal)[end]
        if not pending.any():
            continue
        displacement = np.linalg.norm(positions[end, pending] - positions[start, pending], axis=1)
        if displacement.mean() < threshold:
            return True
    return False


@dataclass(frozen=True)
class DeadlockReport:
    """
    Outcome of a deadlock campaign over seeded corridor configurations.

    Attributes:
        seeds (tuple[int, ...]): Every configuration that was rolled out.
        deadlocked (tuple[int, ...]): Seeds on which the handcrafted controller deadlocked.
        resolved (tuple[int, ...]): Deadlocked seeds the resolver finished with every agent at its goal.
        resolver (str | None): Name of the controller tried on the deadlocked seeds.
    """
    seeds: tuple[int, ...]
    deadlocked: tuple[int, ...]
    resolved: tuple[int, ...] = ()
    resolver: str | None = None

    @property
    def resolution_rate(self) -> float | None:
        if self.resolver is None or not self.deadlocked:
            return None
        return len(self.resolved) / len(self.deadlocked)

    def to_dict(self) -> dict:
        return {
            "configurations": len(self.seeds),
            "deadlocked": list(self.deadlocked),
            "resolved": list(self.resolved),
            "resolver": self.resolver,
            "resolution_rate": self.resolution_rate,
        }


def deadlock_campaign(env_config: EnvConfig, n_configs: int, seed: int = 0, resolver=None,
                      resolver_name: str | None = None, max_steps: int | None = None,
                      window: int = DEADLOCK_WINDOW, threshold: float = DEADLOCK_THRESHOLD) -> DeadlockReport:
    """
    Rolls the handcrafted controller from seeds seed, ..., seed + n_configs - 1 and
    runs `resolver` from the same initial states wherever detect_deadlock fires.

    Args:
        env_config: Scenario configuration; in the corridor the two teams start head-on.
        n_configs: Number of seeded configurations.
        seed: First seed.
        resolver: Optional controller callable tried on the deadlocked seeds.
        resolver_name: Label stored in the report; defaults to the resolver's class name.
        max_steps: Optional step limit below the horizon.
        window: Deadlock window in steps.
        threshold: Mean displacement in meters below which a window counts as stuck.
    """
    if n_configs < 1:
        raise ValueError(f"Invalid value for 'n_configs': Expected a positive integer, but got {n_configs}.")
    seeds = tuple(seed + k for k in range(n_configs))
    deadlocked, resolved = [], []
    for config_seed in seeds:
        trajectory = handcrafted_rollout(env_config, config_seed, max_steps)
        if not detect_deadlock(trajectory.positions, window, threshold, trajectory.at_goal):
            continue
        deadlocked.append(config_seed)
        if resolver is not None and run_episode(resolver, env_config, config_seed, max_steps).success:
            resolved.append(config_seed)
    if resolver is not None and resolver_name is None:
        resolver_name = type(resolver).__name__
    report = DeadlockReport(seeds, tuple(deadlocked), tuple(resolved), resolver_name if resolver is not None else None)
    logger.info("Deadlock campaign on %s: %d of %d configurations deadlocked, %d resolved",
                env_config.scenario.value, len(deadlocked), len(seeds), len(resolved))
    return report
