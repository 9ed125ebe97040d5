"""
Attention-weighted message-passing actor and centralized critic.

One round of message passing: every agent embeds its own features (h_i) and
each incoming edge (m_ij), scores edges with a GATv2-style compatibility
v'LeakyReLU(Q h_i + K m_ij), and sums the messages under the softmax of the
scores. An empty neighborhood aggregates to zero, leaving the self embedding.
The actor decodes each node; the critic mean-pools the nodes of a joint state
before decoding a scalar value.

The actor is a Gaussian in a pre-squash space. Squashing maps 2-vectors
radially into a ball (z -> R tanh(|z|) z/|z|) and scalars through a scaled
sigmoid; log-probabilities include the log-Jacobian of those maps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn.functional as F

from controllers.controller import GAIN_RANGE
from controllers.params import LinearTheta, ThetaParams
from envs.state import ObservationGraph
from policy.params import ArchitectureConfig, Head, PolicyParams

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_FILL = -1e30


class ActorMode(str, Enum):
    DETERMINISTIC = "deterministic"
    SAMPLE = "sample"
    WITH_LOGPROB = "with_logprob"


@dataclass
class GraphBatch:
    """Padded tensors for a list of observations: self (B, S), edges (B, K, D), mask (B, K)."""
    self_features: torch.Tensor
    edge_features: torch.Tensor
    mask: torch.Tensor

    @classmethod
    def from_observations(cls, observations: list[ObservationGraph], architecture: ArchitectureConfig) -> GraphBatch:
        count = len(observations)
        width = max((obs.neighbor_count for obs in observations), default=0)
        self_features = np.zeros((count, architecture.self_dim))
        edges = np.zeros((count, width, architecture.edge_dim))
        mask = np.zeros((count, width), dtype=bool)
        for row, obs in enumerate(observations):
            features = obs.self_features
            if features.shape != (architecture.self_dim,):
                raise ValueError(f"Invalid observation: Expected {architecture.self_dim} self features, but got {features.shape}.")
            self_features[row] = features
            if obs.neighbor_count:
                edge_rows = obs.edge_features
                if edge_rows.shape[1] != architecture.edge_dim:
                    raise ValueError(f"Invalid observation: Expected {architecture.edge_dim} edge features, but got {edge_rows.shape[1]}.")
                edges[row, :obs.neighbor_count] = edge_rows
                mask[row, :obs.neighbor_count] = True
        return cls(
            torch.from_numpy(self_features),
            torch.from_numpy(edges),
            torch.from_numpy(mask),
        )


@dataclass
class ActorOutput:
    """
    Attributes:
        mean (torch.Tensor): Pre-squash mean, (B, out_dim).
        log_std (torch.Tensor): Per-dimension log standard deviation, (out_dim,).
        raw_sample (torch.Tensor): Pre-squash sample (the mean in deterministic mode).
        squashed (torch.Tensor): Squashed outputs, (B, out_dim).
        log_prob (torch.Tensor | None): Log-density of the squashed sample, (B,).
    """
    mean: torch.Tensor
    log_std: torch.Tensor
    raw_sample: torch.Tensor
    squashed: torch.Tensor
    log_prob: torch.Tensor | None

    def entropy(self) -> torch.Tensor:
        """Entropy of the pre-squash Gaussian."""
        return (self.log_std + 0.5 + LOG_SQRT_2PI).sum()


def _encode(params: PolicyParams, prefix: str, batch: GraphBatch) -> torch.Tensor:
    p = lambda name: params[f"{prefix}.{name}"]
    h = torch.tanh(batch.self_features @ p("self_encoder.weight").T + p("self_encoder.bias"))
    if batch.edge_features.shape[1] == 0:
        aggregate = torch.zeros_like(h)
    else:
        messages = torch.tanh(batch.edge_features @ p("edge_encoder.weight").T + p("edge_encoder.bias"))
        hidden = F.leaky_relu((h @ p("attention.query").T).unsqueeze(1) + messages @ p("attention.key").T, 0.2)
        scores = hidden @ p("attention.vector")
        scores = torch.where(batch.mask, scores, torch.full_like(scores, _FILL))
        peak = scores.max(dim=1, keepdim=True).values.detach()
        weights = torch.exp(scores - peak) * batch.mask
        normalizer = weights.sum(dim=1, keepdim=True)
        weights = weights / torch.where(normalizer > 0, normalizer, torch.ones_like(normalizer))
        aggregate = (weights.unsqueeze(-1) * messages).sum(dim=1)
    return torch.tanh(torch.cat([h, aggregate], dim=1) @ p("update.weight").T + p("update.bias"))


def _decode(params: PolicyParams, prefix: str, nodes: torch.Tensor) -> torch.Tensor:
    hidden = torch.tanh(nodes @ params[f"{prefix}.decoder.hidden.weight"].T + params[f"{prefix}.decoder.hidden.bias"])
    return hidden @ params[f"{prefix}.decoder.out.weight"].T + params[f"{prefix}.decoder.out.bias"]


def _radial(z: torch.Tensor, radius: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Maps z in R^2 into the open ball of the given radius; returns (value, log|det J|)."""
    r = torch.sqrt((z ** 2).sum(dim=-1) + 1e-30)
    t = torch.tanh(r)
    value = radius * (t / r).unsqueeze(-1) * z
    log_one_minus_t2 = 2.0 * (math.log(2.0) - r - F.softplus(-2.0 * r))
    ratio = torch.where(r < 1e-4, 1.0 - r ** 2 / 3.0, t / r)
    return value, 2.0 * math.log(radius) + log_one_minus_t2 + torch.log(ratio)


def _interval(z: torch.Tensor, low: float, high: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Maps a scalar into (low, high) through a sigmoid; returns (value, log|dvalue/dz|)."""
    value = low + (high - low) * torch.sigmoid(z)
    return value, math.log(high - low) + F.logsigmoid(z) + F.logsigmoid(-z)


def squash(raw: torch.Tensor, architecture: ArchitectureConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Squashes pre-squash outputs per head; returns (squashed, log|det J|) with shapes (B, D) and (B,)."""
    head = architecture.head
    M = architecture.max_speed
    if head in (Head.RECODE, Head.RECODE_AND_OFFSET):
        a, log_a = _radial(raw[:, 0:2], M)
        b, log_b = _interval(raw[:, 2], 0.0, architecture.b_max)
        parts, log_det = [a, b.unsqueeze(1)], log_a + log_b
        if head is Head.RECODE_AND_OFFSET:
            offset, log_offset = _radial(raw[:, 3:5], architecture.offset_max)
            parts.append(offset)
            log_det = log_det + log_offset
        return torch.cat(parts, dim=1), log_det
    if head is Head.RECODE_LINEAR:
        angle, log_angle = _interval(raw[:, 0], -math.pi, math.pi)
        offset, log_offset = _interval(raw[:, 1], -2.0 * M, 2.0 * M)
        return torch.stack([angle, offset], dim=1), log_angle + log_offset
    if head is Head.ACTION:
        return _radial(raw, M)
    if head is Head.GAIN:
        gain, log_gain = _interval(raw[:, 0], *GAIN_RANGE)
        return gain.unsqueeze(1), log_gain
    return _radial(raw, architecture.offset_max)


def gaussian_log_prob(raw: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor) -> torch.Tensor:
    standardized = (raw - mean) / torch.exp(log_std)
    return (-0.5 * standardized ** 2 - log_std - LOG_SQRT_2PI).sum(dim=1)


def actor_forward_batch(
    observations: list[ObservationGraph],
    params: PolicyParams,
    mode: ActorMode = ActorMode.DETERMINISTIC,
    generator: torch.Generator | None = None,
    raw_sample: torch.Tensor | None = None,
) -> ActorOutput:
    """
    Evaluates the actor on many observations at once.

    Args:
        observations: Local observation graphs.
        params: Parameter store.
        mode: deterministic (squashed mean), sample (draws with generator) or
            with_logprob (scores the given raw_sample).
        generator: Random source for sample mode.
        raw_sample: Pre-squash values to score in with_logprob mode.
    """
    mode = ActorMode(mode)
    architecture = params.architecture
    batch = GraphBatch.from_observations(observations, architecture)
    mean = _decode(params, "actor", _encode(params, "actor", batch))
    log_std = params["actor.log_std"]
    if mode is ActorMode.DETERMINISTIC:
        raw = mean
    elif mode is ActorMode.SAMPLE:
        noise = torch.randn(mean.shape, generator=generator, dtype=torch.float64)
        raw = (mean + torch.exp(log_std) * noise).detach()
    else:
        if raw_sample is None:
            raise ValueError("Invalid value for 'raw_sample': with_logprob mode needs the stored pre-squash sample.")
        raw = torch.as_tensor(raw_sample, dtype=torch.float64).reshape(mean.shape)
    squashed, log_det = squash(raw, architecture)
    log_prob = None
    if mode is not ActorMode.DETERMINISTIC:
        log_prob = gaussian_log_prob(raw, mean, log_std) - log_det
    return ActorOutput(mean=mean, log_std=log_std, raw_sample=raw, squashed=squashed, log_prob=log_prob)


def actor_forward(obs: ObservationGraph, params: PolicyParams, mode: ActorMode = ActorMode.DETERMINISTIC,
                  generator: torch.Generator | None = None, raw_sample=None) -> ActorOutput:
    """Single-observation actor evaluation; see actor_forward_batch."""
    if raw_sample is not None:
        raw_sample = torch.as_tensor(raw_sample, dtype=torch.float64).reshape(1, -1)
    return actor_forward_batch([obs], params, mode, generator, raw_sample)


def critic_forward_batch(joint_observations: list[list[ObservationGraph]], params: PolicyParams) -> torch.Tensor:
    """Values of many joint states: nodes are encoded, mean-pooled per state and decoded; shape (S,)."""
    flat = [obs for joint in joint_observations for obs in joint]
    nodes = _encode(params, "critic", GraphBatch.from_observations(flat, params.architecture))
    sizes = [len(joint) for joint in joint_observations]
    segments = torch.repeat_interleave(torch.arange(len(sizes)), torch.tensor(sizes))
    pooled = torch.zeros((len(sizes), nodes.shape[1]), dtype=torch.float64).index_add(0, segments, nodes)
    pooled = pooled / torch.tensor(sizes, dtype=torch.float64).unsqueeze(1)
    return _decode(params, "critic", pooled).squeeze(1)


def critic_forward(all_obs: list[ObservationGraph], params: PolicyParams) -> torch.Tensor:
    """Scalar value of one joint state."""
    return critic_forward_batch([all_obs], params)[0]


def local_value_batch(observations: list[ObservationGraph], params: PolicyParams) -> torch.Tensor:
    """Per-agent values from each agent's own graph (the local-critic fallback); shape (B,)."""
    nodes = _encode(params, "critic", GraphBatch.from_observations(observations, params.architecture))
    return _decode(params, "critic", nodes).squeeze(1)


def decode_theta(squashed_row, architecture: ArchitectureConfig):
    """
    Converts one squashed actor row into the controller-facing parameters.

    Returns:
        ThetaParams, LinearTheta, a 2-vector action, a gain, a goal offset, or
        (ThetaParams, offset) depending on the head.
    """
    row = np.asarray(squashed_row.detach() if isinstance(squashed_row, torch.Tensor) else squashed_row, dtype=np.float64)
    head = architecture.head
    if head is Head.RECODE:
        return ThetaParams(row[0:2], float(row[2]))
    if head is Head.RECODE_AND_OFFSET:
        return ThetaParams(row[0:2], float(row[2])), row[3:5].copy()
    if head is Head.RECODE_LINEAR:
        return LinearTheta(np.array([math.cos(row[0]), math.sin(row[0])]), float(row[1]))
    if head is Head.GAIN:
        return float(row[0])
    return row[0:2].copy()


def grad(loss_spec, batch, params: PolicyParams) -> dict:
    """
    Reverse-mode gradient of loss_spec(params, batch) with respect to every tensor.

    Args:
        loss_spec: Callable (PolicyParams, batch) -> scalar tensor.
        batch: Whatever loss_spec consumes.
        params: Parameter store.

    Returns:
        dict[str, torch.Tensor]: One gradient per tensor name (zeros where unused).
    """
    loss = loss_spec(params, batch)
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ValueError("Invalid value for 'loss_spec': Expected a callable returning a scalar tensor.")
    names = list(params.tensors)
    tensors = [params[name] for name in names]
    if not loss.requires_grad:
        return {name: torch.zeros_like(tensor) for name, tensor in zip(names, tensors)}
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return {
        name: torch.zeros_like(tensor) if g is None else g.detach()
        for name, tensor, g in zip(names, tensors, grads)
    }
