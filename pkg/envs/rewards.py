"""
Per-scenario reward terms.

Each *_terms function returns a dict of per-agent arrays whose sum is the reward;
the reward_* functions return that sum.
"""
from __future__ import annotations

import numpy as np

from envs.config import EnvConfig, Scenario
from envs.state import Event, EventKind, WorldState


def region_edge(config: EnvConfig, team: int) -> float:
    """y coordinate where a team's goal region starts (team 0 at the top, team 1 at the bottom)."""
    length = config.extra("region_length")
    if team == 0:
        return config.bounds.y_max - length
    return -config.bounds.y_max + length


def team_direction(config: EnvConfig, team: int) -> float:
    if not config.scenario.uses_regions:
        return 0.0
    return 1.0 if team == 0 else -1.0


def region_distance(config: EnvConfig, position, team: int) -> float:
    """Distance along the corridor to the team's goal region (0 inside it)."""
    edge = region_edge(config, team)
    if team == 0:
        return max(0.0, edge - position[1])
    return max(0.0, position[1] - edge)


def in_region(config: EnvConfig, position, team: int) -> bool:
    return region_distance(config, position, team) == 0.0


def safety_terms(n_agents: int, events, config: EnvConfig) -> dict:
    """Collision, out-of-bounds and link-break penalties; one application per event endpoint."""
    collision = np.zeros(n_agents)
    out_of_bounds = np.zeros(n_agents)
    link_break = np.zeros(n_agents)
    for event in events:
        if event.kind is EventKind.COLLISION:
            for agent in event.agents:
                collision[agent] -= config.extra("collision_penalty")
        elif event.kind is EventKind.OUT_OF_BOUNDS:
            for agent in event.agents:
                out_of_bounds[agent] -= config.extra("out_of_bounds_penalty")
        elif event.kind is EventKind.LINK_BREAK_ATTEMPT:
            for agent in event.agents:
                link_break[agent] -= config.extra("link_break_penalty")
    return {"collision": collision, "out_of_bounds": out_of_bounds, "link_break": link_break}


def narrow_corridor_terms(prev: WorldState, next: WorldState, config: EnvConfig, events=()) -> dict:
    shaping = np.zeros(prev.n_agents)
    region = np.zeros(prev.n_agents)
    coefficient = config.extra("shaping")
    for i, (before, after) in enumerate(zip(prev.agents, next.agents)):
        distance_before = region_distance(config, before.position, before.team)
        distance_after = region_distance(config, after.position, after.team)
        shaping[i] = coefficient * (distance_before - distance_after)
        region[i] = 1.0 if distance_after == 0.0 else 0.0
    return {"shaping": shaping, "region": region, **safety_terms(prev.n_agents, events, config)}


def waypoint_terms(prev: WorldState, next: WorldState, config: EnvConfig, events=()) -> dict:
    shaping = np.zeros(prev.n_agents)
    bonus = np.zeros(prev.n_agents)
    coefficient = config.extra("shaping")
    tolerance = config.extra("goal_tolerance")
    for i, (before, after) in enumerate(zip(prev.agents, next.agents)):
        distance_before = float(np.linalg.norm(before.position - before.goal))
        distance_after = float(np.linalg.norm(after.position - after.goal))
        shaping[i] = coefficient * (distance_before - distance_after)
        if distance_after <= tolerance and not before.at_goal:
            bonus[i] = config.extra("goal_bonus")
    return {"shaping": shaping, "goal_bonus": bonus, **safety_terms(prev.n_agents, events, config)}


def sensor_coverage_terms(state: WorldState, config: EnvConfig, events=()) -> dict:
    proximity = np.array([
        np.exp(-config.extra("lambda_prox") * float(np.sum((agent.position - agent.goal) ** 2)))
        for agent in state.agents
    ])
    return {"proximity": proximity, **safety_terms(state.n_agents, events, config)}


def reward_narrow_corridor(prev: WorldState, next: WorldState, config: EnvConfig, events=()) -> np.ndarray:
    return sum(narrow_corridor_terms(prev, next, config, events).values())


def reward_waypoint(prev: WorldState, next: WorldState, config: EnvConfig, events=()) -> np.ndarray:
    return sum(waypoint_terms(prev, next, config, events).values())


def reward_sensor_coverage(state: WorldState, config: EnvConfig, events=()) -> np.ndarray:
    return sum(sensor_coverage_terms(state, config, events).values())


def reward_terms(prev: WorldState, next: WorldState, config: EnvConfig, events: tuple[Event, ...]) -> dict:
    """Dispatches to the scenario's reward terms; connectivity reuses the corridor terms."""
    if config.scenario in (Scenario.NARROW_CORRIDOR, Scenario.CONNECTIVITY):
        return narrow_corridor_terms(prev, next, config, events)
    if config.scenario is Scenario.WAYPOINT:
        return waypoint_terms(prev, next, config, events)
    return sensor_coverage_terms(next, config, events)
