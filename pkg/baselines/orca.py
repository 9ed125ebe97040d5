"""
Optimal reciprocal collision avoidance (ORCA) half-planes solved as a small QP.

Each neighbor contributes one half-plane of admissible velocities in which the
ego takes half of the avoidance responsibility. The velocity closest to the
preferred one inside the half-planes and the M-disc is found by the same cone
solver as every other controller.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from controllers.constraints import build_boundary_constraints
from controllers.params import GeometryError, WorldBounds
from envs.config import EnvConfig
from envs.state import AgentState, ObservationGraph
from harness.evaluation import run_episode
from solver.program import ConvexProgram, LinearConstraint, NormBound, Objective
from solver.qcqp import solve
from utils.validation import as_scalar, as_vector

logger = logging.getLogger(__name__)

TIME_HORIZON = 2.0
TIE_BREAK = 1e-4
RADIUS_MARGIN = 0.01


@dataclass(frozen=True)
class OrcaHalfPlane:
    """Velocities v with (v - point)'normal >= 0 are admissible."""
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self) -> None:
        normal = as_vector(self.normal, "normal")
        length = np.linalg.norm(normal)
        if length == 0.0:
            raise ValueError("Invalid value for 'normal': Expected a non-zero vector.")
        object.__setattr__(self, "point", as_vector(self.point, "point"))
        object.__setattr__(self, "normal", normal / length)

    def admits(self, velocity, tolerance: float = 1e-9) -> bool:
        return float(np.dot(np.asarray(velocity) - self.point, self.normal)) >= -tolerance

    def as_constraint(self) -> LinearConstraint:
        return LinearConstraint(-self.normal, -float(np.dot(self.normal, self.point)))


@dataclass(frozen=True)
class RvoResult:
    velocity: np.ndarray
    planes: tuple[OrcaHalfPlane, ...]
    dropped: int = 0


def orca_half_plane(relative_position, relative_velocity, combined_radius: float, time_horizon: float,
                    ego_velocity, dt: float) -> OrcaHalfPlane:
    """
    The reciprocal half-plane of one neighbor, following the RVO2 agent-agent construction.

    Args:
        relative_position: Neighbor position minus ego position.
        relative_velocity: Ego velocity minus neighbor velocity.
        combined_radius: Sum of both radii (plus margin).
        time_horizon: Look-ahead of the velocity obstacle.
        ego_velocity: Current ego velocity; the plane passes through ego_velocity + u/2.
        dt: Step length used when the pair already overlaps.
    """
    p = np.asarray(relative_position, dtype=np.float64)
    v = np.asarray(relative_velocity, dtype=np.float64)
    R = combined_radius
    distance_sq = float(p @ p)
    if distance_sq > R * R:
        w = v - p / time_horizon
        w_length_sq = float(w @ w)
        dot = float(w @ p)
        if dot < 0.0 and dot * dot > R * R * w_length_sq:
            # Projection on the cut-off circle.
            w_length = math.sqrt(w_length_sq)
            unit_w = w / w_length
            direction = np.array([unit_w[1], -unit_w[0]])
            u = (R / time_horizon - w_length) * unit_w
        else:
            leg = math.sqrt(distance_sq - R * R)
            if p[0] * w[1] - p[1] * w[0] > 0.0:
                direction = np.array([p[0] * leg - p[1] * R, p[0] * R + p[1] * leg]) / distance_sq
            else:
                direction = -np.array([p[0] * leg + p[1] * R, -p[0] * R + p[1] * leg]) / distance_sq
            u = float(v @ direction) * direction - v
    else:
        w = v - p / dt
        w_length = float(np.linalg.norm(w))
        if w_length == 0.0:
            raise GeometryError("Overlapping agents with zero relative motion have no ORCA half-plane.")
        unit_w = w / w_length
        direction = np.array([unit_w[1], -unit_w[0]])
        u = (R / dt - w_length) * unit_w
    normal = np.array([-direction[1], direction[0]])
    return OrcaHalfPlane(point=np.asarray(ego_velocity, dtype=np.float64) + 0.5 * u, normal=normal)


def tie_broken(preferred_velocity) -> np.ndarray:
    """Adds TIE_BREAK along the right-hand perpendicular of the preferred direction."""
    preferred = np.asarray(preferred_velocity, dtype=np.float64)
    length = np.linalg.norm(preferred)
    if length == 0.0:
        return preferred.copy()
    return preferred + TIE_BREAK * np.array([preferred[1], -preferred[0]]) / length


def rvo_velocity(ego: AgentState, ego_velocity, neighbors, preferred_velocity, time_horizon: float,
                 config: EnvConfig, bounds: WorldBounds | None = None) -> RvoResult:
    """
    Velocity closest to the preferred one inside every ORCA half-plane and the M-disc.

    Args:
        ego: The ego agent.
        ego_velocity: Its current velocity.
        neighbors: Sequence of (position, velocity) pairs.
        preferred_velocity: Desired velocity; it is clamped to M.
        time_horizon: Look-ahead in seconds.
        config: Scenario configuration (M, dt, agent radius).
        bounds: Optional walls turned into hard next-position rows.

    Returns:
        RvoResult: The chosen velocity, the planes used, and how many planes were dropped.
    """
    time_horizon = as_scalar(time_horizon, "time_horizon", minimum=0.0, strict=True)
    ego_velocity = as_vector(ego_velocity, "ego_velocity")
    preferred = as_vector(preferred_velocity, "preferred_velocity")
    M = config.speed
    speed = np.linalg.norm(preferred)
    if speed > M:
        preferred = preferred * (M / speed)

    combined = 2.0 * ego.radius + RADIUS_MARGIN
    entries = []
    for position, velocity in neighbors:
        relative = as_vector(position, "neighbor position") - ego.position
        plane = orca_half_plane(relative, ego_velocity - as_vector(velocity, "neighbor velocity"),
                                combined, time_horizon, ego_velocity, config.dt)
        entries.append((float(np.linalg.norm(relative)), plane))
    # Stable sort keeps neighbor order among equal distances.
    entries.sort(key=lambda entry: entry[0])
    planes = [plane for _, plane in entries]

    walls = build_boundary_constraints(ego.position, config.dt, bounds) if bounds is not None else []
    objective = Objective.tracking(preferred)
    dropped = 0
    while True:
        program = ConvexProgram(objective, NormBound(M), linear=tuple(walls + [p.as_constraint() for p in planes]))
        result = solve(program)
        if result.ok:
            break
        if not planes:
            logger.warning("RVO program failed without neighbor planes; holding still")
            return RvoResult(velocity=np.zeros(2), planes=(), dropped=dropped)
        planes.pop()
        dropped += 1
    if dropped:
        logger.info("Dropped %d farthest ORCA planes to restore feasibility", dropped)
    return RvoResult(velocity=result.control, planes=tuple(planes), dropped=dropped)


def preferred_velocity(observation: ObservationGraph, config: EnvConfig) -> np.ndarray:
    """The default objective's unconstrained direction at full speed, capped at the goal distance."""
    M = config.speed
    if config.scenario.uses_regions:
        return np.array([0.0, observation.direction * M])
    displacement = observation.goal - observation.position
    distance = float(np.linalg.norm(displacement))
    if distance == 0.0:
        return np.zeros(2)
    return displacement / distance * min(M, distance / config.dt)


class RvoController:
    """
    Closed-loop RVO for every agent; neighbor velocities are the previous step's controls.

    Attributes:
        config (EnvConfig): Scenario configuration; connectivity scenarios are rejected.
        time_horizon (float): ORCA look-ahead.
        dropped (int): Planes dropped since the last reset.
    """

    def __init__(self, config: EnvConfig, time_horizon: float = TIME_HORIZON) -> None:
        if config.scenario.keeps_links:
            raise ValueError(f"Invalid value for 'config': RVO does not keep links; got scenario {config.scenario.value}.")
        self.config = config
        self.time_horizon = time_horizon
        self.reset()

    def reset(self) -> None:
        self.velocities = np.zeros((self.config.n_agents, 2))
        self.dropped = 0

    def __call__(self, observations: list[ObservationGraph]) -> np.ndarray:
        controls = np.zeros((len(observations), 2))
        for obs in observations:
            ego = AgentState(position=obs.position, goal=obs.goal, radius=self.config.agent_radius)
            neighbors = [(obs.position + edge.relative_position, self.velocities[edge.neighbor_id])
                         for edge in obs.neighbor_edges]
            result = rvo_velocity(ego, self.velocities[obs.agent_id], neighbors,
                                  tie_broken(preferred_velocity(obs, self.config)), self.time_horizon,
                                  self.config, bounds=self.config.effective_bounds)
            controls[obs.agent_id] = result.velocity
            self.dropped += result.dropped
        self.velocities = controls.copy()
        return controls


def rvo_rollout(env_config: EnvConfig, seed: int, max_steps: int | None = None):
    """One closed-loop RVO episode through the shared evaluation path."""
    return run_episode(RvoController(env_config), env_config, seed, max_steps)
