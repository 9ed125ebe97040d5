"""
Flat trainable parameter store and the architecture it is shaped by.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from enum import Enum

import torch

from envs.state import EDGE_DIM, SELF_DIM
from utils.validation import as_scalar, validate_type


class Head(str, Enum):
    """Output head of the actor; one per controller mode."""
    RECODE = "recode"
    RECODE_LINEAR = "recode_linear"
    ACTION = "action"
    GAIN = "gain"
    GOAL_OFFSET = "goal_offset"
    RECODE_AND_OFFSET = "recode_and_offset"

    @property
    def out_dim(self) -> int:
        return {
            Head.RECODE: 3,
            Head.RECODE_LINEAR: 2,
            Head.ACTION: 2,
            Head.GAIN: 1,
            Head.GOAL_OFFSET: 2,
            Head.RECODE_AND_OFFSET: 5,
        }[self]


@dataclass(frozen=True)
class ArchitectureConfig:
    """
    Sizes of the message-passing actor and critic.

    Attributes:
        self_dim (int): Length of ObservationGraph.self_features.
        edge_dim (int): Length of one edge feature row.
        embed_dim (int): Width of node and message embeddings.
        hidden_dim (int): Width of the decoder hidden layer.
        head (Head): Actor output head.
        max_speed (float): M; a is squashed into the M-ball and b into [0, 2M].
        offset_max (float): Radius of the learned goal offset in ablation heads.
    """
    self_dim: int = SELF_DIM
    edge_dim: int = EDGE_DIM
    embed_dim: int = 64
    hidden_dim: int = 128
    head: Head = Head.RECODE
    max_speed: float = 0.5
    offset_max: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "head", Head(self.head))
        for name in ("self_dim", "edge_dim", "embed_dim", "hidden_dim"):
            value = getattr(self, name)
            validate_type(value, int, f"Invalid value for '{name}': Expected an int, not a {type(value).__name__}")
            if value < 1:
                raise ValueError(f"Invalid value for '{name}': Expected a positive size, but got {value}.")
        object.__setattr__(self, "max_speed", as_scalar(self.max_speed, "max_speed", minimum=0.0, strict=True))
        object.__setattr__(self, "offset_max", as_scalar(self.offset_max, "offset_max", minimum=0.0, strict=True))

    @property
    def b_max(self) -> float:
        return 2.0 * self.max_speed

    def digest(self) -> bytes:
        """SHA-256 of the canonical JSON form; stored in checkpoints."""
        payload = asdict(self)
        payload["head"] = self.head.value
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).digest()

    def shapes(self) -> OrderedDict:
        """Name -> shape of every tensor, actor first, in checkpoint order."""
        E, H = self.embed_dim, self.hidden_dim
        shapes = OrderedDict()
        for prefix, out_dim in (("actor", self.head.out_dim), ("critic", 1)):
            shapes[f"{prefix}.self_encoder.weight"] = (E, self.self_dim)
            shapes[f"{prefix}.self_encoder.bias"] = (E,)
            shapes[f"{prefix}.edge_encoder.weight"] = (E, self.edge_dim)
            shapes[f"{prefix}.edge_encoder.bias"] = (E,)
            shapes[f"{prefix}.attention.query"] = (E, E)
            shapes[f"{prefix}.attention.key"] = (E, E)
            shapes[f"{prefix}.attention.vector"] = (E,)
            shapes[f"{prefix}.update.weight"] = (E, 2 * E)
            shapes[f"{prefix}.update.bias"] = (E,)
            shapes[f"{prefix}.decoder.hidden.weight"] = (H, E)
            shapes[f"{prefix}.decoder.hidden.bias"] = (H,)
            shapes[f"{prefix}.decoder.out.weight"] = (out_dim, H)
            shapes[f"{prefix}.decoder.out.bias"] = (out_dim,)
        shapes["actor.log_std"] = (self.head.out_dim,)
        return shapes


class PolicyParams:
    """
    Named float64 tensors of the actor and critic, concatenable to one flat vector.

    Attributes:
        tensors (OrderedDict[str, torch.Tensor]): Leaf tensors with requires_grad set.
        architecture (ArchitectureConfig): The architecture the shapes follow.
        version (int): Incremented by every accepted update.
    """

    def __init__(self, tensors: OrderedDict, architecture: ArchitectureConfig, version: int = 0) -> None:
        expected = architecture.shapes()
        if list(tensors) != list(expected):
            raise ValueError(f"Invalid value for 'tensors': Expected names {list(expected)}, but got {list(tensors)}.")
        self.tensors = OrderedDict()
        for name, tensor in tensors.items():
            tensor = torch.as_tensor(tensor, dtype=torch.float64)
            if tuple(tensor.shape) != tuple(expected[name]):
                raise ValueError(f"Invalid shape for '{name}': Expected {expected[name]}, but got {tuple(tensor.shape)}.")
            if not torch.all(torch.isfinite(tensor)):
                raise ValueError(f"Invalid value for '{name}': Expected finite values.")
            self.tensors[name] = tensor.detach().clone().requires_grad_(True)
        self.architecture = architecture
        self.version = version

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.tensors[name]

    def names(self, prefix: str = "") -> list[str]:
        return [name for name in self.tensors if name.startswith(prefix)]

    def flat(self) -> torch.Tensor:
        return torch.cat([tensor.detach().reshape(-1) for tensor in self.tensors.values()])

    def with_flat(self, vector: torch.Tensor, version: int | None = None) -> PolicyParams:
        """A new store with values read from a flat vector in name order."""
        tensors = OrderedDict()
        offset = 0
        for name, tensor in self.tensors.items():
            size = tensor.numel()
            tensors[name] = vector[offset:offset + size].reshape(tensor.shape)
            offset += size
        if offset != vector.numel():
            raise ValueError(f"Invalid value for 'vector': Expected {offset} values, but got {vector.numel()}.")
        return PolicyParams(tensors, self.architecture, self.version if version is None else version)

    def copy(self) -> PolicyParams:
        return PolicyParams(OrderedDict((name, t.detach()) for name, t in self.tensors.items()), self.architecture, self.version)

    def numel(self) -> int:
        return sum(tensor.numel() for tensor in self.tensors.values())


def init_params(architecture: ArchitectureConfig, seed: int) -> PolicyParams:
    """
    Deterministic scaled-uniform fan-in initialization.

    Output layers start near zero so the initial means sit on the biases: the
    b coordinate is biased to b_max/4 and log_std starts at log(0.3).
    """
    generator = torch.Generator().manual_seed(seed)
    tensors = OrderedDict()
    for name, shape in architecture.shapes().items():
        if name == "actor.log_std":
            tensors[name] = torch.full(shape, math.log(0.3), dtype=torch.float64)
            continue
        fan_in = shape[1] if len(shape) == 2 else shape[0]
        bound = 1.0 / math.sqrt(fan_in)
        if name.endswith("decoder.out.weight"):
            bound *= 0.01
        if name.endswith(".bias") and "decoder.out" in name:
            tensors[name] = torch.zeros(shape, dtype=torch.float64)
        else:
            tensors[name] = (torch.rand(shape, generator=generator, dtype=torch.float64) * 2.0 - 1.0) * bound
    head = architecture.head
    if head in (Head.RECODE, Head.RECODE_AND_OFFSET):
        # sigmoid(log(1/3)) = 1/4, so b starts at b_max / 4.
        tensors["actor.decoder.out.bias"][2] = math.log(1.0 / 3.0)
    return PolicyParams(tensors, architecture, version=0)
