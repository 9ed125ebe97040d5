"""
Generalized advantage estimation over (T, ...) arrays.
"""
from __future__ import annotations

import numpy as np


def compute_advantages(rewards, values, dones, bootstrap_values, gamma: float, gae_lambda: float):
    """
    Generalized advantage estimates and return targets.

    The value after step t is bootstrap_values for the last step and values[t+1]
    otherwise; a done flag at step t cuts both the bootstrap and the trace.

    Args:
        rewards: (T, ...) rewards.
        values: (T, ...) value estimates of the states the rewards were earned from.
        dones: (T,) or (T, E) episode-end flags, broadcast over trailing axes.
        bootstrap_values: (...) values of the states after the last step.
        gamma: Discount factor.
        gae_lambda: Trace decay.

    Returns:
        tuple[np.ndarray, np.ndarray]: (advantages, returns), both shaped like rewards.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != rewards.shape:
        raise ValueError(f"Invalid value for 'values': Expected shape {rewards.shape}, but got {values.shape}.")
    dones = np.asarray(dones, dtype=np.float64)
    dones = dones.reshape(dones.shape + (1,) * (rewards.ndim - dones.ndim))
    next_value = np.broadcast_to(np.asarray(bootstrap_values, dtype=np.float64), rewards.shape[1:])

    advantages = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in reversed(range(rewards.shape[0])):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * gae_lambda * live * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


def normalize_advantages(advantages, epsilon: float = 1e-8) -> np.ndarray:
    """Zero mean and unit standard deviation; a constant array maps to zeros."""
    advantages = np.asarray(advantages, dtype=np.float64)
    centered = advantages - advantages.mean()
    return centered / (advantages.std() + epsilon)
