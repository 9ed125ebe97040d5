"""
Environment configuration and the four scenario presets.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from controllers.params import CBFParams, WorldBounds
from solver.program import NormBound
from utils.validation import as_scalar, validate_type


class Scenario(str, Enum):
    NARROW_CORRIDOR = "narrow_corridor"
    CONNECTIVITY = "connectivity"
    WAYPOINT = "waypoint"
    SENSOR_COVERAGE = "sensor_coverage"

    @property
    def uses_regions(self) -> bool:
        return self in (Scenario.NARROW_CORRIDOR, Scenario.CONNECTIVITY)

    @property
    def keeps_links(self) -> bool:
        return self in (Scenario.CONNECTIVITY, Scenario.SENSOR_COVERAGE)


# Keys understood in EnvConfig.extras, with their defaults.
DEFAULT_EXTRAS = {
    "region_length": 1.0,
    "start_height": 2.0,
    "shaping": 0.1,
    "collision_penalty": 10.0,
    "out_of_bounds_penalty": 10.0,
    "goal_bonus": 5.0,
    "goal_tolerance": 0.1,
    "lambda_prox": 1.0,
    "link_break_penalty": 1.0,
    "min_obstacles": 0,
    "max_obstacles": 0,
    "obstacle_height": 0.3,
    "obstacle_gap": 0.7,
    "cluster_radius": 0.6,
}

SCENARIO_DEFAULTS = {
    Scenario.NARROW_CORRIDOR: {
        "n_agents": 6, "bounds": WorldBounds(0.45, 3.2), "agent_radius": 0.12, "horizon": 300,
        "extras": {"shaping": 0.1},
    },
    Scenario.CONNECTIVITY: {
        "n_agents": 4, "bounds": WorldBounds(1.0, 3.2), "agent_radius": 0.12, "horizon": 300,
        "extras": {"shaping": 0.1, "min_obstacles": 1, "max_obstacles": 2},
    },
    Scenario.WAYPOINT: {
        "n_agents": 4, "bounds": WorldBounds(1.0, 1.0), "agent_radius": 0.2, "horizon": 200,
        "extras": {"shaping": 1.0},
    },
    Scenario.SENSOR_COVERAGE: {
        "n_agents": 4, "bounds": WorldBounds(2.0, 2.0), "agent_radius": 0.12, "horizon": 200,
        "extras": {},
    },
}


@dataclass(frozen=True, eq=False)
class EnvConfig:
    """
    Everything needed to reset and step one environment instance.

    Attributes:
        scenario (Scenario): Which of the four tasks to simulate.
        n_agents (int): Number of agents N.
        dt (float): Integration step in s.
        horizon (int): Episode length T in steps.
        bounds (WorldBounds): The walls.
        comm_range (float): Communication and observation range in m.
        agent_radius (float): Body radius rho in m.
        max_speed (NormBound): Speed limit M.
        cbf (CBFParams): Barrier gain and safe distance of the handcrafted controller.
        seed (int): Seed of the per-instance generator.
        extras (dict): Scenario knobs, see DEFAULT_EXTRAS.
    """
    scenario: Scenario = Scenario.NARROW_CORRIDOR
    n_agents: int = 6
    dt: float = 0.1
    horizon: int = 300
    bounds: WorldBounds = field(default_factory=lambda: WorldBounds(0.45, 3.2))
    comm_range: float = 1.5
    agent_radius: float = 0.12
    max_speed: NormBound = field(default_factory=lambda: NormBound(0.5))
    cbf: CBFParams = field(default_factory=CBFParams)
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        validate_type(self.n_agents, int, f"Invalid value for 'n_agents': Expected an int, not a {type(self.n_agents).__name__}")
        if self.n_agents < 1:
            raise ValueError(f"Invalid value for 'n_agents': Expected at least 1, but got {self.n_agents}.")
        validate_type(self.horizon, int, f"Invalid value for 'horizon': Expected an int, not a {type(self.horizon).__name__}")
        if self.horizon < 1:
            raise ValueError(f"Invalid value for 'horizon': Expected at least 1, but got {self.horizon}.")
        validate_type(self.seed, int, f"Invalid value for 'seed': Expected an int, not a {type(self.seed).__name__}")
        if self.seed < 0:
            raise ValueError(f"Invalid value for 'seed': Expected an unsigned integer, but got {self.seed}.")
        object.__setattr__(self, "dt", as_scalar(self.dt, "dt", minimum=0.0, strict=True))
        object.__setattr__(self, "comm_range", as_scalar(self.comm_range, "comm_range", minimum=0.0, strict=True))
        object.__setattr__(self, "agent_radius", as_scalar(self.agent_radius, "agent_radius", minimum=0.0, strict=True))
        validate_type(self.bounds, WorldBounds, f"Invalid value for 'bounds': Expected WorldBounds, not a {type(self.bounds).__name__}")
        validate_type(self.max_speed, NormBound, f"Invalid value for 'max_speed': Expected NormBound, not a {type(self.max_speed).__name__}")
        validate_type(self.cbf, CBFParams, f"Invalid value for 'cbf': Expected CBFParams, not a {type(self.cbf).__name__}")
        unknown = set(self.extras) - set(DEFAULT_EXTRAS)
        if unknown:
            raise ValueError(f"Invalid value for 'extras': Unknown keys {sorted(unknown)}.")
        if self.dt * self.max_speed.max_speed >= 2.0 * min(self.bounds.x_max, self.bounds.y_max) / 4.0:
            raise ValueError("Invalid EnvConfig: Expected dt * max_speed < min(bounds extents) / 4.")
        if self.agent_radius >= min(self.bounds.x_max, self.bounds.y_max):
            raise ValueError("Invalid value for 'agent_radius': Agents do not fit between the walls.")

    @classmethod
    def for_scenario(cls, scenario, **overrides) -> EnvConfig:
        """
        Scenario preset with overrides; d_min follows the agent radius unless cbf is given.
        """
        scenario = Scenario(scenario)
        preset = dict(SCENARIO_DEFAULTS[scenario])
        extras = dict(preset.pop("extras"))
        extras.update(overrides.pop("extras", {}))
        preset.update(overrides)
        if "cbf" not in preset:
            preset["cbf"] = CBFParams(1.0, 2.0 * preset["agent_radius"] + 0.02)
        return cls(scenario=scenario, extras=extras, **preset)

    def with_seed(self, seed: int) -> EnvConfig:
        return replace(self, seed=seed)

    def extra(self, key: str):
        return self.extras.get(key, DEFAULT_EXTRAS[key])

    @property
    def effective_bounds(self) -> WorldBounds:
        """Box the agent centers must stay in so bodies never touch the walls."""
        return self.bounds.shrink(self.agent_radius)

    @property
    def speed(self) -> float:
        return self.max_speed.max_speed
