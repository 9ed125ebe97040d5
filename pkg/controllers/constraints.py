"""
Builders for the hard rows of the handcrafted controller.

All rows act on the velocity command u of the ego agent; rows on the next
position are rewritten through p' = p + u*dt.
"""
from __future__ import annotations

import numpy as np

from controllers.params import CBFParams, GeometryError, Obstacle, WorldBounds
from solver.program import BallConstraint, LinearConstraint
from utils.validation import as_vector


def build_cbf_constraints(ego_position, neighbor_positions, params: CBFParams) -> list[LinearConstraint]:
    """
    One barrier row per neighbor: 2(p_ego - p_j)'u + k(||p_ego - p_j||^2 - d_min^2) >= 0,
    stored as -2(p_ego - p_j)'u <= k(||p_ego - p_j||^2 - d_min^2).

    Raises:
        GeometryError: If the ego coincides with a neighbor.
    """
    ego = as_vector(ego_position, "ego_position")
    rows = []
    for neighbor in neighbor_positions:
        delta = ego - as_vector(neighbor, "neighbor_position")
        squared = float(delta @ delta)
        if np.sqrt(squared) <= 1e-9:
            raise GeometryError(f"Ego at {ego.tolist()} coincides with a neighbor.")
        rows.append(LinearConstraint(
            normal=-2.0 * delta,
            offset=params.gain * (squared - params.min_distance ** 2),
        ))
    return rows


def build_boundary_constraints(ego_position, dt: float, bounds: WorldBounds) -> list[LinearConstraint]:
    """
    Four rows keeping the next position p + u*dt inside the box.

    Raises:
        GeometryError: If the ego is already outside the box.
    """
    ego = as_vector(ego_position, "ego_position")
    if not bounds.contains(ego):
        raise GeometryError(f"Ego at {ego.tolist()} is outside the bounds {bounds}.")
    x, y = ego
    return [
        LinearConstraint(np.array([1.0, 0.0]), (bounds.x_max - x) / dt),
        LinearConstraint(np.array([-1.0, 0.0]), (bounds.x_max + x) / dt),
        LinearConstraint(np.array([0.0, 1.0]), (bounds.y_max - y) / dt),
        LinearConstraint(np.array([0.0, -1.0]), (bounds.y_max + y) / dt),
    ]


def build_connectivity_constraints(ego_position, neighbor_positions, dt: float, comm_range: float) -> list[BallConstraint]:
    """
    One hard ball per neighbor: ||(p_ego + u*dt) - p_j|| <= comm_range,
    i.e. u within comm_range/dt of (p_j - p_ego)/dt.

    Raises:
        GeometryError: If a neighbor is already farther than comm_range.
    """
    ego = as_vector(ego_position, "ego_position")
    balls = []
    for neighbor in neighbor_positions:
        neighbor = as_vector(neighbor, "neighbor_position")
        distance = float(np.linalg.norm(neighbor - ego))
        if distance > comm_range + 1e-9:
            raise GeometryError(f"Neighbor at distance {distance:.6f} exceeds the range {comm_range}.")
        balls.append(BallConstraint(center=(neighbor - ego) / dt, radius=comm_range / dt))
    return balls


def build_obstacle_constraints(ego_position, obstacles, dt: float, agent_radius: float) -> list[LinearConstraint]:
    """
    One row per rectangle, on the face of the radius-inflated rectangle the ego is
    most clearly outside of; the next position must stay on the ego's side of it.
    """
    ego = as_vector(ego_position, "ego_position")
    rows = []
    normals = (np.array([1.0, 0.0]), np.array([-1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.0, -1.0]))
    for obstacle in obstacles:
        inflated: Obstacle = obstacle.inflate(agent_radius)
        separations = inflated.separations(ego)
        face = int(np.argmax(separations))
        rows.append(LinearConstraint(normals[face], separations[face] / dt))
    return rows
