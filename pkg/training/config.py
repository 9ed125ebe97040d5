from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from policy.params import Head
from utils.validation import as_scalar, validate_type


class Mode(str, Enum):
    """Controller modes trained with the same loop."""
    RECODE = "recode"
    RECODE_LINEAR = "recode_linear"
    PURE_MARL = "pure_marl"
    SHIELDING = "shielding"
    ONLINE_CBF = "online_cbf"
    ABLATION_OBJECTIVE = "ablation_objective"
    ABLATION_BOTH = "ablation_both"

    @property
    def head(self) -> Head:
        return {
            Mode.RECODE: Head.RECODE,
            Mode.RECODE_LINEAR: Head.RECODE_LINEAR,
            Mode.PURE_MARL: Head.ACTION,
            Mode.SHIELDING: Head.ACTION,
            Mode.ONLINE_CBF: Head.GAIN,
            Mode.ABLATION_OBJECTIVE: Head.GOAL_OFFSET,
            Mode.ABLATION_BOTH: Head.RECODE_AND_OFFSET,
        }[self]

    @property
    def uses_solver(self) -> bool:
        return self is not Mode.PURE_MARL


class Critic(str, Enum):
    CENTRALIZED = "centralized"
    LOCAL = "local"


@dataclass(frozen=True)
class TrainConfig:
    """
    MAPPO training settings (desk-scale defaults).

    Attributes:
        n_env_instances (int): Environment instances collected in parallel.
        rollout_length (int): Steps per instance per update.
        total_env_steps (int): Budget in agent-independent environment steps (instances x steps).
        gamma (float): Discount in (0, 1].
        gae_lambda (float): GAE mixing factor.
        clip_epsilon (float): PPO ratio clip in (0, 1); inf disables clipping.
        learning_rate (float): Adam step size.
        minibatches (int): Minibatches per epoch.
        epochs (int): Passes over each batch.
        lambda0 (float): Slack penalty of the learned constraint.
        mode (Mode): Controller mode.
        critic (Critic): Centralized (MAPPO) or local (IPPO) value function.
        seed (int): Seed of every random source in the run.
    """
    n_env_instances: int = 8
    rollout_length: int = 128
    total_env_steps: int = 2_000_000
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    minibatches: int = 4
    epochs: int = 4
    lambda0: float = 1e3
    mode: Mode = Mode.RECODE
    critic: Critic = Critic.CENTRALIZED
    seed: int = 0
    value_coef: float = 0.5
    entropy_coef: float = 0.001
    max_grad_norm: float = 0.5
    slack_threshold: float = 1e-6
    eval_every: int = 10
    eval_episodes: int = 5
    checkpoint_every: int = 50
    solver_workers: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "critic", Critic(self.critic))
        for name in ("n_env_instances", "rollout_length", "minibatches", "epochs", "eval_every",
                     "eval_episodes", "checkpoint_every", "solver_workers"):
            value = getattr(self, name)
            validate_type(value, int, f"Invalid value for '{name}': Expected an int, not a {type(value).__name__}")
            if value < 1:
                raise ValueError(f"Invalid value for '{name}': Expected a positive integer, but got {value}.")
        validate_type(self.total_env_steps, int, "Invalid value for 'total_env_steps': Expected an int.")
        if self.total_env_steps < 0:
            raise ValueError(f"Invalid value for 'total_env_steps': Expected >= 0, but got {self.total_env_steps}.")
        gamma = as_scalar(self.gamma, "gamma")
        if not 0.0 < gamma <= 1.0:
            raise ValueError(f"Invalid value for 'gamma': Expected a value in (0, 1], but got {gamma}.")
        clip = float(self.clip_epsilon)
        if not (0.0 < clip < 1.0 or clip == float("inf")):
            raise ValueError(f"Invalid value for 'clip_epsilon': Expected a value in (0, 1), but got {clip}.")
        as_scalar(self.gae_lambda, "gae_lambda", minimum=0.0)
        as_scalar(self.learning_rate, "learning_rate", minimum=0.0, strict=True)
        as_scalar(self.lambda0, "lambda0", minimum=0.0, strict=True)

    @property
    def steps_per_update(self) -> int:
        return self.n_env_instances * self.rollout_length
