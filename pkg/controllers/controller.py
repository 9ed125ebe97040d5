"""
Handcrafted per-scenario programs and the learned augmentations built on them.
"""
from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from controllers.constraints import (
    build_boundary_constraints,
    build_cbf_constraints,
    build_connectivity_constraints,
    build_obstacle_constraints,
)
from controllers.params import AugmentationError, LinearTheta, ThetaParams
from envs.config import EnvConfig
from envs.state import ObservationGraph
from solver.program import BallConstraint, ConvexProgram, LinearConstraint, Objective, SolveResult
from solver.qcqp import solve
from utils.validation import as_scalar, as_vector

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA0 = 1e3
GAIN_RANGE = (0.1, 10.0)
# Links are held slightly inside comm_range so a kept link always stays an observed edge.
LINK_MARGIN = 1e-3


def default_objective(observation: ObservationGraph, config: EnvConfig, goal_offset=None) -> Objective:
    """
    Corridor scenarios maximize d*u_y; waypoint and coverage minimize ||p + u*dt - g||^2.

    goal_offset shifts the goal point of tracking objectives and tilts the
    direction of linear ones.
    """
    offset = np.zeros(2) if goal_offset is None else as_vector(goal_offset, "goal_offset")
    if config.scenario.uses_regions:
        return Objective.linear(np.array([0.0, -observation.direction]) - offset)
    goal = observation.goal + offset
    return Objective.tracking((goal - observation.position) / config.dt, weight=config.dt ** 2)


def build_default_program(observation: ObservationGraph, scenario_config: EnvConfig, cbf=None, goal_offset=None) -> ConvexProgram:
    """
    Assembles the handcrafted controller: objective, barrier rows, boundary rows,
    obstacle rows, connectivity balls (link-keeping scenarios) and the speed bound.
    """
    config = scenario_config
    neighbors = observation.neighbor_positions
    linear = build_cbf_constraints(observation.position, neighbors, cbf or config.cbf)
    linear += build_boundary_constraints(observation.position, config.dt, config.effective_bounds)
    linear += build_obstacle_constraints(observation.position, observation.nearby_obstacles, config.dt, config.agent_radius)
    balls = []
    if config.scenario.keeps_links:
        # Each endpoint stays within half the link range of the pair midpoint.
        link_range = config.comm_range - LINK_MARGIN
        for neighbor in neighbors:
            half_distance = 0.5 * float(np.linalg.norm(neighbor - observation.position))
            half_range = max(0.5 * link_range, half_distance)
            midpoint = 0.5 * (observation.position + neighbor)
            balls += build_connectivity_constraints(observation.position, [midpoint], config.dt, half_range)
    return ConvexProgram(
        objective=default_objective(observation, config, goal_offset),
        norm_bound=config.max_speed,
        linear=tuple(linear),
        balls=tuple(balls),
    )


def augment_recode(program: ConvexProgram, theta: ThetaParams, lambda0: float = DEFAULT_LAMBDA0) -> ConvexProgram:
    """
    Adds the learned constraint ||u - a|| <= b + s0 with penalty lambda0 on s0.

    Raises:
        AugmentationError: If the program already carries a slack-bearing ball.
    """
    lambda0 = as_scalar(lambda0, "lambda0", minimum=0.0, strict=True)
    if program.soft_balls:
        raise AugmentationError("Program already carries a learned ball constraint.")
    ball = BallConstraint(theta.reference_action, theta.uncertainty_radius, slack_penalty=lambda0)
    return program.with_constraints(balls=[ball])


def augment_linear(program: ConvexProgram, theta: LinearTheta) -> ConvexProgram:
    """
    Adds the learned half-plane normal'u <= offset + s with penalty theta.slack_penalty.

    Raises:
        AugmentationError: If the program already carries a slack-bearing row.
    """
    if program.soft_linear:
        raise AugmentationError("Program already carries a learned linear constraint.")
    row = LinearConstraint(theta.normal, theta.offset, hard=False, slack_penalty=theta.slack_penalty)
    return program.with_constraints(linear=[row])


def shield(policy_action, observation: ObservationGraph, scenario_config: EnvConfig) -> SolveResult:
    """Projects a raw policy action onto the scenario's hard-feasible set."""
    action = as_vector(policy_action, "policy_action")
    program = build_default_program(observation, scenario_config).hard_only()
    return solve(program.with_objective(Objective.tracking(action)))


def clamp_gain(learned_gain: float) -> tuple[float, bool]:
    low, high = GAIN_RANGE
    gain = float(np.clip(learned_gain, low, high))
    return gain, gain != learned_gain


def online_cbf_program(observation: ObservationGraph, learned_gain: float, scenario_config: EnvConfig) -> ConvexProgram:
    """The handcrafted program with the barrier gain k replaced by a learned one (clamped to GAIN_RANGE)."""
    gain, clamped = clamp_gain(float(learned_gain))
    if clamped:
        logger.info("Clamped learned gain %.4f to %.4f", learned_gain, gain)
    return build_default_program(observation, scenario_config, cbf=replace(scenario_config.cbf, gain=gain))
