"""
Value types describing one agent's per-step convex program and its outcome.

The program is

    minimize    1/2 u'(P + rI)u + q'u + sum_k lambda_k s_k
    subject to  n_j'u <= c_j                      (hard linear rows)
                n_j'u <= c_j + s_j                (slack-bearing linear rows)
                ||u - c_b|| <= r_b                (hard balls)
                ||u - c_b|| <= r_b + s_b          (slack-bearing balls)
                ||u|| <= M
                s >= 0

over a planar control u.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from utils.validation import as_scalar, as_vector, validate_type


class SolveStatus(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE_HARD = "infeasible_hard"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True, eq=False)
class Objective:
    """
    Quadratic-plus-linear objective 1/2 u'Pu + q'u with a diagonal regularization.

    Attributes:
        quad_matrix (np.ndarray): Symmetric positive-semidefinite 2x2 matrix P.
        lin_vector (np.ndarray): Linear term q.
        regularization (float): Non-negative value added to the diagonal of P.
    """
    quad_matrix: np.ndarray
    lin_vector: np.ndarray
    regularization: float = 1e-6

    def __post_init__(self) -> None:
        matrix = np.asarray(self.quad_matrix, dtype=np.float64)
        if matrix.shape != (2, 2) or not np.all(np.isfinite(matrix)):
            raise ValueError(f"Invalid value for 'quad_matrix': Expected a finite 2x2 matrix, but got shape {matrix.shape}.")
        if not np.allclose(matrix, matrix.T, atol=1e-12):
            raise ValueError("Invalid value for 'quad_matrix': Expected a symmetric matrix.")
        if np.linalg.eigvalsh(matrix).min() < -1e-10:
            raise ValueError("Invalid value for 'quad_matrix': Expected a positive-semidefinite matrix.")
        object.__setattr__(self, "quad_matrix", matrix)
        object.__setattr__(self, "lin_vector", as_vector(self.lin_vector, "lin_vector"))
        object.__setattr__(self, "regularization", as_scalar(self.regularization, "regularization", minimum=0.0))

    @classmethod
    def linear(cls, lin_vector, regularization: float = 1e-6) -> Objective:
        return cls(np.zeros((2, 2)), lin_vector, regularization)

    @classmethod
    def tracking(cls, target, weight: float = 1.0, regularization: float = 1e-6) -> Objective:
        """Objective weight*||u - target||^2 up to a constant."""
        target = as_vector(target, "target")
        return cls(2.0 * weight * np.eye(2), -2.0 * weight * target, regularization)

    @property
    def hessian(self) -> np.ndarray:
        return self.quad_matrix + self.regularization * np.eye(2)

    def value(self, u) -> float:
        u = np.asarray(u, dtype=np.float64)
        return float(0.5 * u @ self.hessian @ u + self.lin_vector @ u)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Vectorized value over an (N, 2) array of controls."""
        return 0.5 * np.einsum("ni,ij,nj->n", points, self.hessian, points) + points @ self.lin_vector


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """
    Half-plane normal'u <= offset.

    A constraint with hard=False must carry a slack_penalty; its violation is
    paid at that linear rate instead of being forbidden.
    """
    normal: np.ndarray
    offset: float
    hard: bool = True
    slack_penalty: float | None = None

    def __post_init__(self) -> None:
        normal = as_vector(self.normal, "normal")
        if np.linalg.norm(normal) == 0.0:
            raise ValueError("Invalid value for 'normal': Expected a non-zero vector.")
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", as_scalar(self.offset, "offset"))
        validate_type(self.hard, bool, f"Invalid value for 'hard': Expected a bool, not a {type(self.hard).__name__}")
        if self.hard and self.slack_penalty is not None:
            raise ValueError("Invalid value for 'slack_penalty': A hard row cannot carry a slack penalty.")
        if not self.hard:
            if self.slack_penalty is None:
                raise ValueError("Invalid value for 'slack_penalty': A soft row needs a slack penalty.")
            object.__setattr__(self, "slack_penalty", as_scalar(self.slack_penalty, "slack_penalty", minimum=0.0, strict=True))

    def residual(self, u) -> float:
        return float(self.normal @ np.asarray(u, dtype=np.float64) - self.offset)


@dataclass(frozen=True, eq=False)
class BallConstraint:
    """
    Ball ||u - center|| <= radius, softened by a penalized slack when slack_penalty is set.
    """
    center: np.ndarray
    radius: float
    slack_penalty: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", as_vector(self.center, "center"))
        object.__setattr__(self, "radius", as_scalar(self.radius, "radius", minimum=0.0))
        if self.slack_penalty is not None:
            object.__setattr__(self, "slack_penalty", as_scalar(self.slack_penalty, "slack_penalty", minimum=0.0, strict=True))

    @property
    def hard(self) -> bool:
        return self.slack_penalty is None

    def residual(self, u) -> float:
        return float(np.linalg.norm(np.asarray(u, dtype=np.float64) - self.center) - self.radius)


@dataclass(frozen=True, eq=False)
class NormBound:
    max_speed: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "max_speed", as_scalar(self.max_speed, "max_speed", minimum=0.0, strict=True))


@dataclass(frozen=True, eq=False)
class ConvexProgram:
    """
    One agent's per-step program: objective, linear rows, balls and the speed bound.

    Slack-bearing constraints are ordered linear rows first, then balls; that
    order is the order of SolveResult.slack_values.
    """
    objective: Objective
    norm_bound: NormBound
    linear: tuple[LinearConstraint, ...] = field(default_factory=tuple)
    balls: tuple[BallConstraint, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        validate_type(self.objective, Objective, f"Invalid value for 'objective': Expected an Objective, not a {type(self.objective).__name__}")
        validate_type(self.norm_bound, NormBound, f"Invalid value for 'norm_bound': Expected a NormBound, not a {type(self.norm_bound).__name__}")
        linear = tuple(self.linear)
        balls = tuple(self.balls)
        for row in linear:
            validate_type(row, LinearConstraint, f"Invalid value for 'linear': Expected LinearConstraint items, not a {type(row).__name__}")
        for ball in balls:
            validate_type(ball, BallConstraint, f"Invalid value for 'balls': Expected BallConstraint items, not a {type(ball).__name__}")
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "balls", balls)

    @property
    def soft_linear(self) -> tuple[LinearConstraint, ...]:
        return tuple(row for row in self.linear if not row.hard)

    @property
    def soft_balls(self) -> tuple[BallConstraint, ...]:
        return tuple(ball for ball in self.balls if not ball.hard)

    @property
    def n_slacks(self) -> int:
        return len(self.soft_linear) + len(self.soft_balls)

    def hard_only(self) -> ConvexProgram:
        """The same program with every slack-bearing constraint removed."""
        return replace(
            self,
            linear=tuple(row for row in self.linear if row.hard),
            balls=tuple(ball for ball in self.balls if ball.hard),
        )

    def with_constraints(self, linear=(), balls=()) -> ConvexProgram:
        return replace(self, linear=self.linear + tuple(linear), balls=self.balls + tuple(balls))

    def with_objective(self, objective: Objective) -> ConvexProgram:
        return replace(self, objective=objective)


@dataclass(frozen=True, eq=False)
class SolveResult:
    """
    Outcome of one solve.

    Attributes:
        control (np.ndarray): The minimizer u*; zeros when no solution was found.
        slack_values (tuple[float, ...]): One value per slack-bearing constraint, in program order.
        objective_value (float): Objective plus penalty terms at control (nan without a solution).
        status (SolveStatus): optimal, infeasible_hard or numerical_failure.
        iterations (int): Interior-point iterations spent.
        hard_violation (float): Hard-constraint violation at control. Only the grid oracle
            reports a positive value, when no grid point lies exactly in the hard set.
    """
    control: np.ndarray
    slack_values: tuple[float, ...]
    objective_value: float
    status: SolveStatus
    iterations: int = 0
    hard_violation: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    @property
    def max_slack(self) -> float:
        return max(self.slack_values, default=0.0)
