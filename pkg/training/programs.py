"""
Per-agent program assembly for every controller mode.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from controllers.controller import augment_linear, augment_recode, build_default_program, online_cbf_program
from controllers.params import ThetaParams
from envs.config import EnvConfig
from envs.state import ObservationGraph
from solver.program import ConvexProgram, Objective
from training.config import Mode


@dataclass(frozen=True)
class AgentPlan:
    """
    What one agent does this step: solve `program`, or apply `direct_control` as is.

    Attributes:
        program (ConvexProgram | None): The program to solve, None in pure MARL.
        direct_control (np.ndarray | None): The raw action applied without a solver.
        b_value (float | None): Learned uncertainty radius, for the diagnostics.
        gain (float | None): Learned barrier gain in Online CBF mode.
    """
    program: ConvexProgram | None
    direct_control: np.ndarray | None = None
    b_value: float | None = None
    gain: float | None = None


def non_binding_theta(config: EnvConfig) -> ThetaParams:
    """A ball centered at the origin with radius 2M; it contains the whole M-ball."""
    return ThetaParams(np.zeros(2), 2.0 * config.speed)


def objective_offset_program(observation: ObservationGraph, offset, config: EnvConfig) -> ConvexProgram:
    return build_default_program(observation, config, goal_offset=offset)


def shielding_program(action, observation: ObservationGraph, config: EnvConfig) -> ConvexProgram:
    """Hard constraints of the default program with the objective ||u - action||^2."""
    program = build_default_program(observation, config).hard_only()
    return program.with_objective(Objective.tracking(action))


def assemble_program(mode: Mode, observation: ObservationGraph, decoded, config: EnvConfig, lambda0: float) -> AgentPlan:
    """
    Builds one agent's plan from its decoded actor output.

    Args:
        mode: Controller mode.
        observation: The agent's local observation graph.
        decoded: Output of policy.networks.decode_theta for the mode's head.
        config: Scenario configuration.
        lambda0: Slack penalty of the learned constraint.
    """
    mode = Mode(mode)
    if mode is Mode.PURE_MARL:
        return AgentPlan(program=None, direct_control=np.asarray(decoded, dtype=np.float64))
    if mode is Mode.SHIELDING:
        return AgentPlan(program=shielding_program(decoded, observation, config))
    if mode is Mode.ONLINE_CBF:
        return AgentPlan(program=online_cbf_program(observation, decoded, config), gain=float(decoded))
    if mode is Mode.RECODE:
        program = augment_recode(build_default_program(observation, config), decoded, lambda0)
        return AgentPlan(program=program, b_value=decoded.uncertainty_radius)
    if mode is Mode.RECODE_LINEAR:
        return AgentPlan(program=augment_linear(build_default_program(observation, config), replace(decoded, slack_penalty=lambda0)))
    if mode is Mode.ABLATION_OBJECTIVE:
        program = augment_recode(objective_offset_program(observation, decoded, config), non_binding_theta(config), lambda0)
        return AgentPlan(program=program)
    theta, offset = decoded
    program = augment_recode(objective_offset_program(observation, offset, config), theta, lambda0)
    return AgentPlan(program=program, b_value=theta.uncertainty_radius)
