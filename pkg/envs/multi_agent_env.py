"""
Deterministic planar single-integrator simulation of the four scenarios.

The free functions reset / observe_all / step are pure; MultiAgentEnv wraps them
for the rollout and evaluation loops.
"""
from __future__ import annotations

import logging

import numpy as np

from controllers.params import Obstacle
from envs.config import EnvConfig, Scenario
from envs.rewards import in_region, region_distance, reward_terms, team_direction
from envs.state import AgentState, Event, EventKind, NeighborEdge, ObservationGraph, StepResult, WorldState

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 10_000
CONTACT_TOLERANCE = 1e-6


class PlacementError(RuntimeError):
    """Raised when rejection sampling cannot place the agents."""


class _Sampler:
    """Rejection sampler sharing one rejection budget across a whole reset."""

    def __init__(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self.rejections = 0

    def sample(self, draw, accept):
        while True:
            candidate = draw()
            if accept(candidate):
                return candidate
            self.rejections += 1
            if self.rejections > MAX_REJECTIONS:
                raise PlacementError(f"Placement failed after {MAX_REJECTIONS} rejections; configuration too dense.")


def _place_points(sampler: _Sampler, count: int, draw, min_separation: float, existing=(), extra_check=None) -> list:
    points = list(existing)
    placed = []
    for _ in range(count):
        def accept(candidate):
            if extra_check is not None and not extra_check(candidate):
                return False
            return all(np.linalg.norm(candidate - other) >= min_separation for other in points)
        point = sampler.sample(draw, accept)
        points.append(point)
        placed.append(point)
    return placed


def _sample_obstacles(config: EnvConfig, rng: np.random.Generator) -> tuple[Obstacle, ...]:
    low, high = int(config.extra("min_obstacles")), int(config.extra("max_obstacles"))
    if high <= 0:
        return ()
    count = int(rng.integers(low, high + 1))
    x_max = config.bounds.x_max
    height = config.extra("obstacle_height")
    gap = config.extra("obstacle_gap")
    # Slots along the middle of the corridor keep the blocks apart.
    slots = [(-1.2, -0.2), (0.2, 1.2)] if count > 1 else [(-0.8, 0.8)]
    obstacles = []
    for slot_low, slot_high in slots[:count]:
        center_y = float(rng.uniform(slot_low, slot_high))
        if rng.random() < 0.5:
            x_range = (-x_max, x_max - gap)
        else:
            x_range = (-x_max + gap, x_max)
        obstacles.append(Obstacle(x_range[0], x_range[1], center_y - height / 2, center_y + height / 2))
    return tuple(obstacles)


def reset(config: EnvConfig) -> WorldState:
    """
    Random non-overlapping placement for the configured scenario, deterministic in config.seed.

    Raises:
        PlacementError: When more than MAX_REJECTIONS candidates were rejected.
    """
    rng = np.random.default_rng(config.seed)
    sampler = _Sampler(rng)
    box = config.effective_bounds
    separation = max(2.0 * config.agent_radius, config.cbf.min_distance) + 0.01
    n = config.n_agents
    obstacles = _sample_obstacles(config, rng)

    def clear_of_obstacles(point):
        return all(not obstacle.inflate(config.agent_radius).contains(point) for obstacle in obstacles)

    def uniform_in(x_low, x_high, y_low, y_high):
        return lambda: np.array([rng.uniform(x_low, x_high), rng.uniform(y_low, y_high)])

    if config.scenario is Scenario.NARROW_CORRIDOR:
        height = config.extra("start_height")
        teams = [i % 2 for i in range(n)]
        positions = [None] * n
        placed = []
        for i, team in enumerate(teams):
            if team == 0:
                draw = uniform_in(-box.x_max, box.x_max, -box.y_max, -box.y_max + height)
            else:
                draw = uniform_in(-box.x_max, box.x_max, box.y_max - height, box.y_max)
            positions[i] = _place_points(sampler, 1, draw, separation, existing=placed)[0]
            placed.append(positions[i])
        goals = [np.array([0.0, config.bounds.y_max - config.extra("region_length") / 2]) if team == 0
                 else np.array([0.0, -config.bounds.y_max + config.extra("region_length") / 2]) for team in teams]
    elif config.scenario in (Scenario.CONNECTIVITY, Scenario.SENSOR_COVERAGE):
        radius = config.extra("cluster_radius")
        if config.scenario is Scenario.CONNECTIVITY:
            center = np.array([0.0, -box.y_max + radius])
        else:
            center = np.array([0.0, 0.0])

        def draw_in_cluster():
            angle = rng.uniform(0.0, 2.0 * np.pi)
            distance = radius * np.sqrt(rng.uniform())
            return center + distance * np.array([np.cos(angle), np.sin(angle)])

        positions = _place_points(sampler, n, draw_in_cluster, separation,
                                  extra_check=lambda p: box.contains(p, 0.0) and clear_of_obstacles(p))
        teams = [0] * n
        if config.scenario is Scenario.CONNECTIVITY:
            goals = [np.array([0.0, config.bounds.y_max - config.extra("region_length") / 2])] * n
        else:
            goals = _place_points(sampler, n, uniform_in(-box.x_max, box.x_max, -box.y_max, box.y_max), 0.5)
    else:
        draw = uniform_in(-box.x_max, box.x_max, -box.y_max, box.y_max)
        positions = _place_points(sampler, n, draw, separation)
        goals = _place_points(sampler, n, draw, 2.0 * config.agent_radius + 0.02)
        teams = list(range(n))

    agents = tuple(
        AgentState(position=positions[i], goal=goals[i], team=teams[i], radius=config.agent_radius)
        for i in range(n)
    )
    logger.debug("Reset %s with seed %d after %d rejections", config.scenario.value, config.seed, sampler.rejections)
    return WorldState(time_index=0, agents=agents, rng_state=rng.bit_generator.state, obstacles=obstacles)


def _goal_displacement(agent: AgentState, config: EnvConfig) -> np.ndarray:
    if config.scenario.uses_regions:
        distance = region_distance(config, agent.position, agent.team)
        return np.array([0.0, distance * team_direction(config, agent.team)])
    return agent.goal - agent.position


def observe_all(state: WorldState, config: EnvConfig) -> list[ObservationGraph]:
    """One observation graph per agent; edges join agents strictly closer than comm_range."""
    positions = state.positions
    box = config.effective_bounds
    observations = []
    for i, agent in enumerate(state.agents):
        edges = []
        for j, other in enumerate(state.agents):
            if j == i:
                continue
            relative = positions[j] - positions[i]
            if np.linalg.norm(relative) < config.comm_range:
                edges.append(NeighborEdge(j, relative, other.team == agent.team))
        nearby = tuple(
            obstacle for obstacle in state.obstacles
            if np.linalg.norm(obstacle.nearest_point(agent.position) - agent.position) < config.comm_range
        )
        obstacle_features = np.zeros(3)
        if nearby:
            nearest = min((obstacle.nearest_point(agent.position) - agent.position for obstacle in nearby),
                          key=np.linalg.norm)
            obstacle_features = np.array([nearest[0], nearest[1], 1.0])
        observations.append(ObservationGraph(
            agent_id=i,
            position=agent.position.copy(),
            goal_displacement=_goal_displacement(agent, config),
            goal=agent.goal.copy(),
            direction=team_direction(config, agent.team),
            wall_distances=box.distances(agent.position),
            neighbor_edges=tuple(edges),
            obstacle_features=obstacle_features,
            nearby_obstacles=nearby,
        ))
    return observations


def connectivity_violation_check(prev_state: WorldState, proposed_controls, config: EnvConfig) -> list[Event]:
    """Linked pairs whose next-step distance would exceed comm_range."""
    positions = prev_state.positions
    proposed = positions + np.asarray(proposed_controls, dtype=np.float64) * config.dt
    events = []
    for i in range(prev_state.n_agents):
        for j in range(i + 1, prev_state.n_agents):
            linked = np.linalg.norm(positions[i] - positions[j]) <= config.comm_range + 1e-9
            if linked and np.linalg.norm(proposed[i] - proposed[j]) > config.comm_range + 1e-9:
                events.append(Event(EventKind.LINK_BREAK_ATTEMPT, (i, j)))
    return events


def _validate_controls(controls, config: EnvConfig, n_agents: int) -> np.ndarray:
    controls = np.asarray(controls, dtype=np.float64)
    if controls.shape != (n_agents, 2):
        raise ValueError(f"Invalid value for 'controls': Expected shape ({n_agents}, 2), but got {controls.shape}.")
    if not np.all(np.isfinite(controls)):
        raise ValueError("Invalid value for 'controls': Expected finite controls.")
    speeds = np.linalg.norm(controls, axis=1)
    if np.any(speeds > config.speed + 1e-6):
        raise ValueError(f"Invalid value for 'controls': Speed {speeds.max():.6f} exceeds the bound {config.speed}.")
    return controls


def step(state: WorldState, controls, config: EnvConfig) -> tuple[WorldState, StepResult]:
    """
    Integrates p' = p + u*dt, resolves contacts, records events and computes rewards.

    Raises:
        ValueError: If a control is not finite, exceeds the speed bound, or the count is wrong.
    """
    n = state.n_agents
    controls = _validate_controls(controls, config, n).copy()
    events: list[Event] = []

    if config.scenario.keeps_links:
        attempts = connectivity_violation_check(state, controls, config)
        events += attempts
        # Offending endpoints are held in place until no linked pair would break.
        while attempts:
            for event in attempts:
                controls[list(event.agents)] = 0.0
            attempts = connectivity_violation_check(state, controls, config)

    previous = state.positions
    positions = previous + controls * config.dt
    box = config.effective_bounds
    escaped = set()
    for i in range(n):
        if any(obstacle.inflate(config.agent_radius).contains(positions[i], tolerance=1e-9) for obstacle in state.obstacles):
            positions[i] = previous[i]
            escaped.add(i)
        if not box.contains(positions[i]):
            positions[i] = box.clamp(positions[i])
            escaped.add(i)
    events += [Event(EventKind.OUT_OF_BOUNDS, (i,)) for i in sorted(escaped)]

    contact = 2.0 * config.agent_radius
    for i in range(n):
        for j in range(i + 1, n):
            delta = positions[i] - positions[j]
            distance = float(np.linalg.norm(delta))
            if distance < contact - CONTACT_TOLERANCE:
                events.append(Event(EventKind.COLLISION, (i, j)))
                direction = delta / distance if distance > 1e-12 else np.array([1.0, 0.0])
                push = 0.5 * (contact - distance) * direction
                positions[i] = box.clamp(positions[i] + push)
                positions[j] = box.clamp(positions[j] - push)

    tolerance = config.extra("goal_tolerance")
    agents = []
    for i, agent in enumerate(state.agents):
        if config.scenario.uses_regions:
            arrived = in_region(config, positions[i], agent.team)
        else:
            arrived = bool(np.linalg.norm(positions[i] - agent.goal) <= tolerance)
        if arrived and not agent.at_goal:
            events.append(Event(EventKind.GOAL_REACHED, (i,)))
        agents.append(agent.moved_to(positions[i], at_goal=arrived))

    next_state = WorldState(
        time_index=state.time_index + 1,
        agents=tuple(agents),
        rng_state=state.rng_state,
        obstacles=state.obstacles,
    )
    terms = reward_terms(state, next_state, config, tuple(events))
    rewards = sum(terms.values())
    result = StepResult(
        rewards=np.asarray(rewards, dtype=np.float64),
        done=next_state.time_index >= config.horizon,
        events=tuple(events),
        reward_terms=terms,
    )
    return next_state, result


class MultiAgentEnv:
    """
    Single-writer wrapper around one environment instance.

    Attributes:
        config (EnvConfig): The instance configuration; reset(seed) swaps its seed.
        state (WorldState): Current world state.
        episode (int): Number of resets so far.
    """

    def __init__(self, config: EnvConfig) -> None:
        self.config = config
        self.state: WorldState | None = None
        self.episode = -1

    def reset(self, seed: int | None = None) -> list[ObservationGraph]:
        if seed is not None:
            self.config = self.config.with_seed(seed)
        self.state = reset(self.config)
        self.episode += 1
        return observe_all(self.state, self.config)

    def observe(self) -> list[ObservationGraph]:
        return observe_all(self.state, self.config)

    def step(self, controls) -> tuple[list[ObservationGraph], StepResult]:
        if self.state is None:
            raise RuntimeError("Call reset() before step().")
        self.state, result = step(self.state, controls, self.config)
        return observe_all(self.state, self.config), result

    @property
    def n_agents(self) -> int:
        return self.config.n_agents
