from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from utils.validation import as_scalar, as_vector


class GeometryError(ValueError):
    """Raised when positions break a builder's geometric precondition."""


class AugmentationError(ValueError):
    """Raised when a program already carries the learned constraint."""


@dataclass(frozen=True)
class CBFParams:
    """
    Parameters of the barrier h_j = k(||p_ego - p_j||^2 - d_min^2).

    Attributes:
        gain (float): k, in 1/s.
        min_distance (float): d_min, in m.
    """
    gain: float = 1.0
    min_distance: float = 0.26

    def __post_init__(self) -> None:
        object.__setattr__(self, "gain", as_scalar(self.gain, "gain", minimum=0.0, strict=True))
        object.__setattr__(self, "min_distance", as_scalar(self.min_distance, "min_distance", minimum=0.0, strict=True))


@dataclass(frozen=True)
class WorldBounds:
    """The box [-x_max, x_max] x [-y_max, y_max]."""
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "x_max", as_scalar(self.x_max, "x_max", minimum=0.0, strict=True))
        object.__setattr__(self, "y_max", as_scalar(self.y_max, "y_max", minimum=0.0, strict=True))

    def shrink(self, margin: float) -> WorldBounds:
        return WorldBounds(self.x_max - margin, self.y_max - margin)

    def contains(self, position, tolerance: float = 1e-9) -> bool:
        x, y = position
        return abs(x) <= self.x_max + tolerance and abs(y) <= self.y_max + tolerance

    def clamp(self, position) -> np.ndarray:
        return np.clip(np.asarray(position, dtype=np.float64), [-self.x_max, -self.y_max], [self.x_max, self.y_max])

    def distances(self, position) -> np.ndarray:
        """Distances to the right, left, top and bottom walls."""
        x, y = position
        return np.array([self.x_max - x, x + self.x_max, self.y_max - y, y + self.y_max])


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned rectangle [x_min, x_max] x [y_min, y_max]."""
    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "x_max", "y_min", "y_max"):
            object.__setattr__(self, name, as_scalar(getattr(self, name), name))
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"Invalid value for 'Obstacle': Expected min < max on both axes, but got {self}.")

    def inflate(self, margin: float) -> Obstacle:
        return Obstacle(self.x_min - margin, self.x_max + margin, self.y_min - margin, self.y_max + margin)

    def separations(self, position) -> np.ndarray:
        """Signed separation from the left, right, bottom and top faces (positive = outside that face)."""
        x, y = position
        return np.array([self.x_min - x, x - self.x_max, self.y_min - y, y - self.y_max])

    def contains(self, position, tolerance: float = 0.0) -> bool:
        return bool(self.separations(position).max() < -tolerance)

    def nearest_point(self, position) -> np.ndarray:
        return np.array([
            np.clip(position[0], self.x_min, self.x_max),
            np.clip(position[1], self.y_min, self.y_max),
        ])

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "y_min": self.y_min, "y_max": self.y_max}


@dataclass(frozen=True, eq=False)
class ThetaParams:
    """
    Learned ball parameters: reference action a and uncertainty radius b.
    """
    reference_action: np.ndarray
    uncertainty_radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "reference_action", as_vector(self.reference_action, "reference_action"))
        object.__setattr__(self, "uncertainty_radius", as_scalar(self.uncertainty_radius, "uncertainty_radius", minimum=0.0))

    def within_limits(self, max_speed: float, tolerance: float = 1e-9) -> bool:
        """Squashing limits a_max = M and b_max = 2M."""
        return (np.linalg.norm(self.reference_action) <= max_speed + tolerance
                and self.uncertainty_radius <= 2.0 * max_speed + tolerance)


@dataclass(frozen=True, eq=False)
class LinearTheta:
    """Learned half-plane normal'u <= offset, rescaled so the normal has unit length."""
    normal: np.ndarray
    offset: float
    slack_penalty: float = 1e3

    def __post_init__(self) -> None:
        normal = as_vector(self.normal, "normal")
        length = np.linalg.norm(normal)
        if length == 0.0:
            raise ValueError("Invalid value for 'normal': Expected a non-zero vector.")
        object.__setattr__(self, "normal", normal / length)
        object.__setattr__(self, "offset", as_scalar(self.offset, "offset") / length)
        object.__setattr__(self, "slack_penalty", as_scalar(self.slack_penalty, "slack_penalty", minimum=0.0, strict=True))
