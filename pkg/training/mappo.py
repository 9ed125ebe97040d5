"""
Clipped-surrogate actor-critic update over a collected RolloutBatch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from policy.networks import ActorMode, actor_forward_batch, critic_forward_batch, grad, local_value_batch
from policy.params import PolicyParams
from training.advantages import compute_advantages, normalize_advantages
from training.config import Critic, TrainConfig
from training.rollout import RolloutBatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpdateStats:
    """Averages over the minibatch steps of one update."""
    actor_loss: float
    value_loss: float
    entropy: float
    mean_kl: float
    clip_fraction: float
    steps: int
    aborted: bool = False

    def to_dict(self) -> dict:
        return {
            "actor_loss": self.actor_loss,
            "value_loss": self.value_loss,
            "entropy": self.entropy,
            "mean_kl": self.mean_kl,
            "clip_fraction": self.clip_fraction,
            "steps": self.steps,
            "aborted": self.aborted,
        }


@dataclass
class Minibatch:
    """
    Aligned actor and critic samples.

    Attributes:
        observations (list): Flat agent observations scored by the actor.
        raw_samples (torch.Tensor): (B, D) stored pre-squash samples.
        old_log_probs (torch.Tensor): (B,) collection-time log-probabilities.
        advantages (torch.Tensor): (B,) normalized advantages.
        critic_inputs (list): Joint states (centralized) or agent observations (local).
        returns (torch.Tensor): Value targets, one per critic input.
        critic (Critic): How critic_inputs are evaluated.
    """
    observations: list
    raw_samples: torch.Tensor
    old_log_probs: torch.Tensor
    advantages: torch.Tensor
    critic_inputs: list
    returns: torch.Tensor
    critic: Critic = Critic.CENTRALIZED


def ppo_loss(params: PolicyParams, minibatch: Minibatch, config: TrainConfig, parts: dict | None = None) -> torch.Tensor:
    """
    actor surrogate + value_coef * value regression - entropy_coef * entropy.

    When `parts` is given it receives the detached components for the stats.
    """
    output = actor_forward_batch(minibatch.observations, params, ActorMode.WITH_LOGPROB,
                                 raw_sample=minibatch.raw_samples)
    log_ratio = output.log_prob - minibatch.old_log_probs
    ratio = torch.exp(log_ratio)
    epsilon = config.clip_epsilon
    clipped = torch.clamp(ratio, 1.0 - epsilon, 1.0 + epsilon)
    actor_loss = -torch.min(ratio * minibatch.advantages, clipped * minibatch.advantages).mean()

    if minibatch.critic is Critic.CENTRALIZED:
        values = critic_forward_batch(minibatch.critic_inputs, params)
    else:
        values = local_value_batch(minibatch.critic_inputs, params)
    value_loss = ((values - minibatch.returns) ** 2).mean()
    entropy = output.entropy()

    if parts is not None:
        parts["actor_loss"] = float(actor_loss.detach())
        parts["value_loss"] = float(value_loss.detach())
        parts["entropy"] = float(entropy.detach())
        parts["mean_kl"] = float((-log_ratio).mean().detach())
        parts["clip_fraction"] = float(((ratio - 1.0).abs() > epsilon).double().mean().detach())
    return actor_loss + config.value_coef * value_loss - config.entropy_coef * entropy


def build_minibatches(batch: RolloutBatch, config: TrainConfig, generator: torch.Generator | None = None,
                      shuffle: bool = True) -> list[Minibatch]:
    """
    Splits the batch into config.minibatches groups of (step, instance) pairs.

    Actor rows of a pair are all of its agents, so each minibatch holds whole
    joint states for the centralized critic.
    """
    T, E, N = batch.shape
    if config.critic is Critic.CENTRALIZED:
        advantages, returns = compute_advantages(batch.team_rewards, batch.values, batch.dones,
                                                 batch.bootstrap_values, config.gamma, config.gae_lambda)
        agent_advantages = np.repeat(advantages[:, :, None], N, axis=2)
    else:
        advantages, returns = compute_advantages(batch.rewards, batch.values, batch.dones,
                                                 batch.bootstrap_values, config.gamma, config.gae_lambda)
        agent_advantages = advantages
    agent_advantages = normalize_advantages(agent_advantages).reshape(T * E * N)
    returns = returns.reshape(T * E, -1) if config.critic is Critic.LOCAL else returns.reshape(T * E)

    joint = [per_instance for per_step in batch.observations for per_instance in per_step]
    raw = batch.raw_samples.reshape(T * E * N, -1)
    old = batch.log_probs.reshape(T * E * N)

    order = torch.randperm(T * E, generator=generator).numpy() if shuffle else np.arange(T * E)
    minibatches = []
    for pairs in np.array_split(order, min(config.minibatches, T * E)):
        rows = (pairs[:, None] * N + np.arange(N)[None, :]).reshape(-1)
        observations = [joint[p][agent] for p in pairs for agent in range(N)]
        if config.critic is Critic.CENTRALIZED:
            critic_inputs = [joint[p] for p in pairs]
            targets = returns[pairs]
        else:
            critic_inputs = observations
            targets = returns[pairs].reshape(-1)
        minibatches.append(Minibatch(
            observations=observations,
            raw_samples=raw[torch.from_numpy(rows)],
            old_log_probs=old[torch.from_numpy(rows)],
            advantages=torch.from_numpy(agent_advantages[rows]),
            critic_inputs=critic_inputs,
            returns=torch.from_numpy(np.asarray(targets, dtype=np.float64)),
            critic=config.critic,
        ))
    return minibatches


def make_optimizer(params: PolicyParams, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(list(params.tensors.values()), lr=config.learning_rate)


def _all_finite(grads: dict) -> bool:
    return all(bool(torch.all(torch.isfinite(g))) for g in grads.values())


def update_policy(batch: RolloutBatch, params: PolicyParams, config: TrainConfig,
                  optimizer: torch.optim.Optimizer | None = None,
                  generator: torch.Generator | None = None) -> tuple[PolicyParams, UpdateStats]:
    """
    Runs config.epochs passes of minibatched gradient steps on params in place.

    A non-finite loss or gradient restores the pre-update values and returns
    an aborted UpdateStats with the version unchanged.
    """
    optimizer = optimizer or make_optimizer(params, config)
    snapshot = {name: tensor.detach().clone() for name, tensor in params.tensors.items()}
    tensors = list(params.tensors.values())
    totals = {"actor_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "mean_kl": 0.0, "clip_fraction": 0.0}
    steps = 0

    for _ in range(config.epochs):
        for minibatch in build_minibatches(batch, config, generator):
            parts = {}
            grads = grad(lambda p, mb: ppo_loss(p, mb, config, parts), minibatch, params)
            if not (np.all(np.isfinite(list(parts.values()))) and _all_finite(grads)):
                with torch.no_grad():
                    for name, tensor in params.tensors.items():
                        tensor.copy_(snapshot[name])
                logger.warning("Aborted update at version %d: non-finite loss or gradient", params.version)
                return params, UpdateStats(actor_loss=float("nan"), value_loss=float("nan"), entropy=float("nan"),
                                           mean_kl=float("nan"), clip_fraction=float("nan"), steps=steps, aborted=True)
            for tensor, g in zip(tensors, grads.values()):
                tensor.grad = g.clone()
            torch.nn.utils.clip_grad_norm_(tensors, config.max_grad_norm)
            optimizer.step()
            optimizer.zero_grad(set_to_none=True)
            for key in totals:
                totals[key] += parts[key]
            steps += 1

    params.version += 1
    stats = UpdateStats(steps=steps, **{key: value / max(steps, 1) for key, value in totals.items()})
    logger.debug("Update %d: %s", params.version, stats)
    return params, stats
