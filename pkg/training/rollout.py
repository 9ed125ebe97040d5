"""
Batched rollout collection across environment instances.

Each step observes every instance, evaluates the actor on all agents at once,
assembles one program per agent and solves the whole step as a single batch.
A non-optimal solve is replaced by u = 0, which every default program admits.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from envs.config import EnvConfig
from envs.multi_agent_env import MultiAgentEnv
from envs.state import ObservationGraph
from policy.networks import ActorMode, actor_forward_batch, critic_forward_batch, decode_theta, local_value_batch
from policy.params import PolicyParams
from solver.program import SolveStatus
from solver.qcqp import batch_solve
from training.config import Critic, Mode, TrainConfig
from training.programs import AgentPlan, assemble_program

logger = logging.getLogger(__name__)

SLACK_THRESHOLD = 1e-6


def episode_seed(base_seed: int, instance: int, episode: int) -> int:
    """Deterministic reset seed of one instance's k-th episode."""
    return int(np.random.SeedSequence([base_seed, instance, episode]).generate_state(1)[0])


class EnvPool:
    """
    The environment instances of a run, each reset with its own derived seed.

    Attributes:
        envs (list[MultiAgentEnv]): One single-writer instance per slot.
        base_seed (int): Seed every episode seed is derived from.
        completed_returns (list[float]): Team-mean returns of finished episodes, in completion order.
    """

    def __init__(self, env_config: EnvConfig, n_instances: int, base_seed: int) -> None:
        self.envs = [MultiAgentEnv(env_config) for _ in range(n_instances)]
        self.base_seed = base_seed
        self.completed_returns: list[float] = []
        self._running = np.zeros(n_instances)
        for index, env in enumerate(self.envs):
            env.reset(episode_seed(base_seed, index, 0))

    def __len__(self) -> int:
        return len(self.envs)

    @property
    def config(self) -> EnvConfig:
        return self.envs[0].config

    def observe(self) -> list[list[ObservationGraph]]:
        return [env.observe() for env in self.envs]

    def record(self, index: int, team_reward: float, done: bool) -> None:
        self._running[index] += team_reward
        if done:
            self.completed_returns.append(float(self._running[index]))
            self._running[index] = 0.0
            env = self.envs[index]
            env.reset(episode_seed(self.base_seed, index, env.episode + 1))


@dataclass
class RolloutBatch:
    """
    Trajectories of T steps over E instances and N agents.

    Attributes:
        observations (list): [T][E][N] ObservationGraph.
        raw_samples (torch.Tensor): (T, E, N, D) pre-squash actor samples.
        log_probs (torch.Tensor): (T, E, N) log-probabilities at collection time.
        controls (np.ndarray): (T, E, N, 2) applied controls.
        slacks (list): [T][E][N] slack tuples of the solved programs (empty without a solver).
        statuses (list): [T][E][N] SolveStatus, or None when no program was solved.
        rewards (np.ndarray): (T, E, N) per-agent rewards.
        values (np.ndarray): (T, E) centralized or (T, E, N) local value estimates.
        bootstrap_values (np.ndarray): Values of the states after the last step.
        dones (np.ndarray): (T, E) episode-end flags.
        events (list): [T][E] environment events of each step.
        b_values (np.ndarray): (T, E, N) learned radii, nan where the mode has none.
        neighbor_counts (np.ndarray): (T, E, N) observed neighbors.
        positions (np.ndarray): (T, E, N, 2) positions before each step.
        params_version (int): Version of the parameters that acted.
        solver_calls (int): Programs solved while collecting.
        fallbacks (list): (step, instance, agent) of every u = 0 substitution.
    """
    observations: list
    raw_samples: torch.Tensor
    log_probs: torch.Tensor
    controls: np.ndarray
    slacks: list
    statuses: list
    rewards: np.ndarray
    values: np.ndarray
    bootstrap_values: np.ndarray
    dones: np.ndarray
    events: list
    b_values: np.ndarray
    neighbor_counts: np.ndarray
    positions: np.ndarray
    params_version: int = 0
    solver_calls: int = 0
    fallbacks: list = field(default_factory=list)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.rewards.shape)

    @property
    def team_rewards(self) -> np.ndarray:
        return self.rewards.mean(axis=2)


@dataclass(frozen=True)
class InfeasibilityEntry:
    instance: int
    step: int
    agent: int
    constraint_index: int
    slack: float


@dataclass(frozen=True)
class InfeasibilityReport:
    """Agent-steps whose learned constraint needed a slack above the threshold."""
    entries: tuple[InfeasibilityEntry, ...] = ()
    threshold: float = SLACK_THRESHOLD

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def agents(self) -> set[tuple[int, int, int]]:
        return {(entry.instance, entry.step, entry.agent) for entry in self.entries}


def flag_infeasible(batch: RolloutBatch, threshold: float = SLACK_THRESHOLD) -> InfeasibilityReport:
    """Lists every (instance, step, agent, constraint) whose slack exceeds the threshold."""
    entries = []
    for step, per_instance in enumerate(batch.slacks):
        for instance, per_agent in enumerate(per_instance):
            for agent, slacks in enumerate(per_agent):
                for index, value in enumerate(slacks):
                    if value > threshold:
                        entries.append(InfeasibilityEntry(instance, step, agent, index, float(value)))
    entries.sort(key=lambda e: (e.instance, e.step, e.agent, e.constraint_index))
    return InfeasibilityReport(entries=tuple(entries), threshold=threshold)


def resolve_controls(plans: list[AgentPlan], solver_workers: int = 1):
    """
    Solves every plan that carries a program in one batch.

    Returns:
        tuple: (controls (B, 2), statuses, slacks, fallback indices, solver calls).
    """
    programs = [plan.program for plan in plans if plan.program is not None]
    results = iter(batch_solve(programs, workers=solver_workers)) if programs else iter(())
    controls = np.zeros((len(plans), 2))
    statuses, slacks, fallbacks = [], [], []
    for index, plan in enumerate(plans):
        if plan.program is None:
            controls[index] = plan.direct_control
            statuses.append(None)
            slacks.append(())
            continue
        result = next(results)
        statuses.append(result.status)
        if result.status is SolveStatus.OPTIMAL:
            controls[index] = result.control
            slacks.append(tuple(max(0.0, float(s)) for s in result.slack_values))
        else:
            fallbacks.append(index)
            slacks.append(())
    if fallbacks:
        logger.warning("Substituted u = 0 for %d of %d agents after non-optimal solves", len(fallbacks), len(plans))
    return controls, statuses, slacks, fallbacks, len(programs)


class PolicyController:
    """
    Turns joint observations into controls with the actor and the mode's programs.

    Attributes:
        params (PolicyParams): Read-only parameter snapshot.
        mode (Mode): Controller mode.
        env_config (EnvConfig): Scenario configuration.
        lambda0 (float): Slack penalty of the learned constraint.
        solver_workers (int): Threads used by batch_solve.
    """

    def __init__(self, params: PolicyParams, mode: Mode, env_config: EnvConfig, lambda0: float = 1e3,
                 solver_workers: int = 1) -> None:
        self.params = params
        self.mode = Mode(mode)
        if params.architecture.head is not self.mode.head:
            raise ValueError(f"Invalid value for 'params': Mode {self.mode.value} needs head "
                             f"{self.mode.head.value}, but got {params.architecture.head.value}.")
        self.env_config = env_config
        self.lambda0 = lambda0
        self.solver_workers = solver_workers

    def plan(self, observations: list[ObservationGraph], squashed: torch.Tensor) -> list[AgentPlan]:
        architecture = self.params.architecture
        return [
            assemble_program(self.mode, obs, decode_theta(row, architecture), self.env_config, self.lambda0)
            for obs, row in zip(observations, squashed.detach().numpy())
        ]

    def act(self, observations: list[ObservationGraph], mode: ActorMode = ActorMode.DETERMINISTIC,
            generator: torch.Generator | None = None):
        """
        Controls for a flat list of observations (any number of instances).

        Returns:
            tuple: (controls, ActorOutput, plans, statuses, slacks, fallbacks, solver calls).
        """
        with torch.no_grad():
            output = actor_forward_batch(observations, self.params, mode, generator)
        plans = self.plan(observations, output.squashed)
        controls, statuses, slacks, fallbacks, calls = resolve_controls(plans, self.solver_workers)
        return controls, output, plans, statuses, slacks, fallbacks, calls

    def __call__(self, observations: list[ObservationGraph]) -> np.ndarray:
        return self.act(observations)[0]


def estimate_values(joint_observations: list[list[ObservationGraph]], params: PolicyParams, critic: Critic) -> np.ndarray:
    """(E,) centralized values or (E, N) local values of the given joint states."""
    with torch.no_grad():
        if Critic(critic) is Critic.CENTRALIZED:
            return critic_forward_batch(joint_observations, params).numpy().copy()
        flat = [obs for joint in joint_observations for obs in joint]
        values = local_value_batch(flat, params).numpy()
        return values.reshape(len(joint_observations), -1).copy()


def collect_rollouts(pool: EnvPool, policy_params: PolicyParams, config: TrainConfig,
                     generator: torch.Generator | None = None, steps: int | None = None) -> RolloutBatch:
    """
    Runs `steps` (default config.rollout_length) synchronized steps on every instance.

    Returns:
        RolloutBatch: Everything the update needs, aligned as (T, E, N).
    """
    steps = config.rollout_length if steps is None else steps
    env_config = pool.config
    controller = PolicyController(policy_params, config.mode, env_config, config.lambda0, config.solver_workers)
    E, N = len(pool), env_config.n_agents

    observations, raws, log_probs, controls_log = [], [], [], []
    slacks_log, statuses_log, events_log, fallbacks_log = [], [], [], []
    rewards = np.zeros((steps, E, N))
    dones = np.zeros((steps, E), dtype=bool)
    b_values = np.full((steps, E, N), np.nan)
    neighbor_counts = np.zeros((steps, E, N), dtype=int)
    positions = np.zeros((steps, E, N, 2))
    values = []
    solver_calls = 0

    for t in range(steps):
        joint = pool.observe()
        values.append(estimate_values(joint, policy_params, config.critic))
        flat = [obs for per_instance in joint for obs in per_instance]
        controls, output, plans, statuses, slacks, fallbacks, calls = controller.act(flat, ActorMode.SAMPLE, generator)
        solver_calls += calls

        observations.append(joint)
        raws.append(output.raw_sample.detach().reshape(E, N, -1))
        log_probs.append(output.log_prob.detach().reshape(E, N))
        controls_log.append(controls.reshape(E, N, 2))
        statuses_log.append([statuses[e * N:(e + 1) * N] for e in range(E)])
        slacks_log.append([slacks[e * N:(e + 1) * N] for e in range(E)])
        fallbacks_log.append([(t, index // N, index % N) for index in fallbacks])
        for index, plan in enumerate(plans):
            if plan.b_value is not None:
                b_values[t, index // N, index % N] = plan.b_value
        step_events = []
        for e, env in enumerate(pool.envs):
            neighbor_counts[t, e] = [obs.neighbor_count for obs in joint[e]]
            positions[t, e] = env.state.positions
            _, result = env.step(controls[e * N:(e + 1) * N])
            rewards[t, e] = result.rewards
            dones[t, e] = result.done
            step_events.append(result.events)
            pool.record(e, float(result.rewards.mean()), result.done)
        events_log.append(step_events)

    bootstrap = estimate_values(pool.observe(), policy_params, config.critic)
    return RolloutBatch(
        observations=observations,
        raw_samples=torch.stack(raws),
        log_probs=torch.stack(log_probs),
        controls=np.stack(controls_log),
        slacks=slacks_log,
        statuses=statuses_log,
        rewards=rewards,
        values=np.stack(values),
        bootstrap_values=bootstrap,
        dones=dones,
        events=events_log,
        b_values=b_values,
        neighbor_counts=neighbor_counts,
        positions=positions,
        params_version=policy_params.version,
        solver_calls=solver_calls,
        fallbacks=[entry for per_step in fallbacks_log for entry in per_step],
    )


def recompute_log_probs(batch: RolloutBatch, params: PolicyParams) -> torch.Tensor:
    """Log-probabilities of the stored raw samples under `params`; shape (T, E, N)."""
    T, E, N = batch.shape
    flat = [obs for joint in batch.observations for per_instance in joint for obs in per_instance]
    raw = batch.raw_samples.reshape(T * E * N, -1)
    with torch.no_grad():
        output = actor_forward_batch(flat, params, ActorMode.WITH_LOGPROB, raw_sample=raw)
    return output.log_prob.reshape(T, E, N)
