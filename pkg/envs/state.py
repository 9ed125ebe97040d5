"""
State, observation and step-outcome types of the multi-agent simulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from controllers.params import Obstacle
from utils.validation import as_scalar, as_vector

SELF_DIM = 12
EDGE_DIM = 4


@dataclass(frozen=True, eq=False)
class AgentState:
    """
    One agent's state.

    Attributes:
        position (np.ndarray): Center in m.
        goal (np.ndarray): Goal point (waypoint), sensing target (coverage) or the
            center of the goal region (corridor scenarios).
        team (int): Team index; in the corridor team 0 heads up and team 1 down.
        radius (float): Body radius rho.
        at_goal (bool): Inside goal tolerance after the last step (arms the one-shot bonus).
    """
    position: np.ndarray
    goal: np.ndarray
    team: int = 0
    radius: float = 0.12
    at_goal: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", as_vector(self.position, "position"))
        object.__setattr__(self, "goal", as_vector(self.goal, "goal"))
        object.__setattr__(self, "radius", as_scalar(self.radius, "radius", minimum=0.0, strict=True))

    def moved_to(self, position, at_goal: bool | None = None) -> AgentState:
        return replace(self, position=position, at_goal=self.at_goal if at_goal is None else at_goal)


@dataclass(frozen=True, eq=False)
class WorldState:
    time_index: int
    agents: tuple[AgentState, ...]
    rng_state: dict = field(default_factory=dict)
    obstacles: tuple[Obstacle, ...] = ()

    @property
    def positions(self) -> np.ndarray:
        return np.array([agent.position for agent in self.agents])

    @property
    def n_agents(self) -> int:
        return len(self.agents)


class EventKind(str, Enum):
    COLLISION = "collision"
    OUT_OF_BOUNDS = "out_of_bounds"
    LINK_BREAK_ATTEMPT = "link_break_attempt"
    GOAL_REACHED = "goal_reached"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    agents: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "agents": list(self.agents)}

    @classmethod
    def from_dict(cls, data: dict) -> Event:
        return cls(EventKind(data["kind"]), tuple(int(agent) for agent in data["agents"]))


@dataclass(frozen=True, eq=False)
class StepResult:
    """
    Outcome of one environment step.

    Attributes:
        rewards (np.ndarray): Per-agent total reward.
        done (bool): True once time_index reaches the horizon.
        events (tuple[Event, ...]): Safety and progress events of this step.
        reward_terms (dict[str, np.ndarray]): Per-agent value of every reward term;
            the terms sum to rewards.
    """
    rewards: np.ndarray
    done: bool
    events: tuple[Event, ...]
    reward_terms: dict = field(default_factory=dict)

    def count(self, kind: EventKind) -> int:
        return sum(1 for event in self.events if event.kind is kind)


@dataclass(frozen=True, eq=False)
class NeighborEdge:
    neighbor_id: int
    relative_position: np.ndarray
    same_team: bool

    @property
    def features(self) -> np.ndarray:
        return np.array([
            self.relative_position[0],
            self.relative_position[1],
            float(np.linalg.norm(self.relative_position)),
            1.0 if self.same_team else 0.0,
        ])


@dataclass(frozen=True, eq=False)
class ObservationGraph:
    """
    One agent's local view: own state and the neighbors within communication range.

    Attributes:
        agent_id (int): Index of the observing agent.
        position (np.ndarray): Own position.
        goal_displacement (np.ndarray): Goal minus position (corridor: to the near edge of the goal region, zero inside).
        goal (np.ndarray): Goal point used by tracking objectives.
        direction (float): Target direction d in {-1, +1} for corridor scenarios, 0 otherwise.
        wall_distances (np.ndarray): Distances to the four walls of the effective bounds.
        neighbor_edges (tuple[NeighborEdge, ...]): Neighbors strictly inside comm_range.
        obstacle_features (np.ndarray): Relative nearest point of the nearest nearby obstacle and a presence flag.
        nearby_obstacles (tuple[Obstacle, ...]): Obstacles within comm_range, in world coordinates.
    """
    agent_id: int
    position: np.ndarray
    goal_displacement: np.ndarray
    goal: np.ndarray
    direction: float
    wall_distances: np.ndarray
    neighbor_edges: tuple[NeighborEdge, ...] = ()
    obstacle_features: np.ndarray = field(default_factory=lambda: np.zeros(3))
    nearby_obstacles: tuple[Obstacle, ...] = ()

    @property
    def self_features(self) -> np.ndarray:
        return np.concatenate([
            self.position,
            self.goal_displacement,
            self.wall_distances,
            [self.direction],
            self.obstacle_features,
        ])

    @property
    def edge_features(self) -> np.ndarray:
        if not self.neighbor_edges:
            return np.zeros((0, EDGE_DIM))
        return np.array([edge.features for edge in self.neighbor_edges])

    @property
    def neighbor_positions(self) -> list[np.ndarray]:
        return [self.position + edge.relative_position for edge in self.neighbor_edges]

    @property
    def neighbor_count(self) -> int:
        return len(self.neighbor_edges)

    def permuted(self, order) -> ObservationGraph:
        """The same observation with its neighbor list reordered."""
        return replace(self, neighbor_edges=tuple(self.neighbor_edges[i] for i in order))
