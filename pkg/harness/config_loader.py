"""
Flat configuration files with dotted section keys.

    env.dt = 0.1
    env.n_agents = 4
    train.lambda0 = 1000.0
    policy.embed_dim = 64
    eval.n_episodes = 75
    solver.max_iterations = 50

The file is TOML: `[env]` tables and dotted keys read the same way. Every key
must name a known field.
"""
from __future__ import annotations

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, fields
from pathlib import Path

from controllers.params import CBFParams, WorldBounds
from envs.config import DEFAULT_EXTRAS, EnvConfig, Scenario
from harness.evaluation import EvalConfig
from solver.program import NormBound
from solver.qcqp import SolverOptions
from training.config import TrainConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Unknown key or unusable value in a configuration file."""


ENV_KEYS = {"n_agents", "dt", "horizon", "comm_range", "agent_radius", "max_speed",
            "cbf_gain", "cbf_min_distance", "x_max", "y_max"} | set(DEFAULT_EXTRAS)
POLICY_KEYS = {"embed_dim", "hidden_dim", "offset_max"}
SECTIONS = {
    "env": ENV_KEYS,
    "train": {f.name for f in fields(TrainConfig)},
    "policy": POLICY_KEYS,
    "eval": {"n_episodes", "window"},
    "solver": {f.name for f in fields(SolverOptions)},
}


def _flatten(table: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def validate_keys(values: dict) -> None:
    """
    Raises:
        ConfigError: For a key outside the known sections and fields.
    """
    for key in values:
        section, _, name = key.partition(".")
        if section not in SECTIONS or name not in SECTIONS[section]:
            raise ConfigError(f"Invalid config key '{key}': Expected one of the {sorted(SECTIONS)} fields.")


@dataclass
class LabConfig:
    """
    Parsed configuration; each builder applies call-site overrides on top of the file.

    Attributes:
        values (dict): Dotted key -> value.
        source (Path | None): File the values came from.
    """
    values: dict = field(default_factory=dict)
    source: Path | None = None

    def __post_init__(self) -> None:
        validate_keys(self.values)

    def section(self, name: str) -> dict:
        prefix = f"{name}."
        return {key[len(prefix):]: value for key, value in self.values.items() if key.startswith(prefix)}

    def env(self, scenario, **overrides) -> EnvConfig:
        """EnvConfig.for_scenario with the [env] section and overrides applied."""
        values = {**self.section("env"), **{k: v for k, v in overrides.items() if v is not None}}
        preset = {}
        extras = {key: values.pop(key) for key in list(values) if key in DEFAULT_EXTRAS}
        for key in ("n_agents", "dt", "horizon", "comm_range", "agent_radius", "seed"):
            if key in values:
                preset[key] = values.pop(key)
        if "max_speed" in values:
            preset["max_speed"] = NormBound(values.pop("max_speed"))
        if "cbf_gain" in values or "cbf_min_distance" in values:
            radius = preset.get("agent_radius", EnvConfig.for_scenario(scenario).agent_radius)
            preset["cbf"] = CBFParams(values.pop("cbf_gain", 1.0), values.pop("cbf_min_distance", 2.0 * radius + 0.02))
        if "x_max" in values or "y_max" in values:
            default = EnvConfig.for_scenario(scenario).bounds
            preset["bounds"] = WorldBounds(values.pop("x_max", default.x_max), values.pop("y_max", default.y_max))
        if values:
            raise ConfigError(f"Invalid env overrides: Unknown keys {sorted(values)}.")
        try:
            return EnvConfig.for_scenario(Scenario(scenario), extras=extras, **preset)
        except (TypeError, ValueError) as error:
            raise ConfigError(str(error)) from error

    def train(self, **overrides) -> TrainConfig:
        return self._build(TrainConfig, "train", overrides)

    def evaluation(self, **overrides) -> EvalConfig:
        return self._build(EvalConfig, "eval", overrides)

    def solver(self) -> SolverOptions:
        return self._build(SolverOptions, "solver", {})

    def architecture_overrides(self) -> dict:
        return self.section("policy")

    def _build(self, cls, section: str, overrides: dict):
        values = {**self.section(section), **{k: v for k, v in overrides.items() if v is not None}}
        try:
            return cls(**values)
        except (TypeError, ValueError) as error:
            raise ConfigError(f"Invalid [{section}] settings: {error}") from error


def load_config(path: str | Path | None) -> LabConfig:
    """
    Reads a config file into a LabConfig; None gives the defaults.

    Raises:
        ConfigError: If the file is missing, not valid TOML, or names an unknown key.
    """
    if path is None:
        return LabConfig()
    path = Path(path)
    try:
        with open(path, "rb") as file:
            table = tomllib.load(file)
    except FileNotFoundError as error:
        raise ConfigError(f"Config file '{path}' not found.") from error
    except tomllib.TOMLDecodeError as error:
        raise ConfigError(f"Config file '{path}' is not valid: {error}") from error
    values = _flatten(table)
    logger.debug("Loaded %d config keys from %s", len(values), path)
    return LabConfig(values, path)

