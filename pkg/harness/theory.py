"""
Executable checks of the controller's guarantees.

- Tracking: a ball of radius eps around a re-anchored reference keeps the
  solved control within eps of it at every step.
- Mixing: with the ball radius r around a strictly feasible a, the solved
  control gains at least r * Delta - 2 eps over a on Q*.
- Solver agreement with the grid oracle on random programs.
- Safety of solver-driven rollouts and training logs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from baselines.handcrafted import handcrafted_rollout
from controllers.constraints import build_boundary_constraints
from controllers.controller import augment_recode
from controllers.params import CBFParams, ThetaParams
from envs.config import EnvConfig, Scenario
from envs.state import EventKind
from solver.program import BallConstraint, ConvexProgram, LinearConstraint, NormBound, Objective
from solver.qcqp import DEFAULT_OPTIONS, SolverOptions, hard_residual, oracle_solve, penalized_objective, solve
from utils.validation import as_scalar, as_vector

logger = logging.getLogger(__name__)

FEASIBILITY_TOLERANCE = 1e-6


class TrackingMarginError(ValueError):
    """A desired action is not hard-feasible with the required margin."""

    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"Step {step}: {message}")
        self.step = step


class BallFeasibilityError(ValueError):
    """The r-ball around the reference action leaves the hard-feasible set."""


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    measured: float
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _clearance(program: ConvexProgram, point: np.ndarray) -> float:
    """Distance from point to the boundary of the hard set (negative outside)."""
    clearance = program.norm_bound.max_speed - float(np.linalg.norm(point))
    for row in program.linear:
        if row.hard:
            clearance = min(clearance, (row.offset - float(row.normal @ point)) / float(np.linalg.norm(row.normal)))
    for ball in program.balls:
        if ball.hard:
            clearance = min(clearance, ball.radius - float(np.linalg.norm(point - ball.center)))
    return clearance


# Tracking

def corridor_program_at(config: EnvConfig) -> Callable[[np.ndarray], ConvexProgram]:
    """Hard program of a lone corridor agent heading up: walls, speed bound, objective -u_y."""
    def program_at(position) -> ConvexProgram:
        walls = build_boundary_constraints(position, config.dt, config.effective_bounds)
        return ConvexProgram(Objective.linear(np.array([0.0, -1.0])), config.max_speed, linear=tuple(walls))
    return program_at


@dataclass
class TrackingResult:
    """
    Attributes:
        thetas (list[ThetaParams]): Emitted (a(t), eps) per step.
        controls (np.ndarray): (T, 2) solved controls.
        states (np.ndarray): (T + 1, 2) actual positions.
        control_errors (np.ndarray): ||u_opt(t) - a(t)|| per step.
        state_deviations (np.ndarray): ||x(t) - x*(t)|| per step, the start included.
    """
    thetas: list = field(default_factory=list)
    controls: np.ndarray = None
    states: np.ndarray = None
    control_errors: np.ndarray = None
    state_deviations: np.ndarray = None


def track_trajectory(desired_trajectory, epsilon: float, lambda0: float, program_at: Callable[[np.ndarray], ConvexProgram],
                     dt: float, margin: float | None = None) -> TrackingResult:
    """
    Rolls out the constructive choice a(t) = u*(t) + (x*(t) - x(t))/dt, b(t) = eps.

    Args:
        desired_trajectory: Sequence of (state x*(t), action u*(t)).
        epsilon: Ball radius b.
        lambda0: Slack penalty.
        program_at: Hard program at an actual position.
        dt: Step length.
        margin: Required clearance of a(t); defaults to 0.1 * M of the program.

    Raises:
        TrackingMarginError: When a(t) is not feasible with the margin at some step.
    """
    epsilon = as_scalar(epsilon, "epsilon", minimum=0.0)
    steps = list(desired_trajectory)
    if not steps:
        raise ValueError("Invalid value for 'desired_trajectory': Expected at least one (state, action) pair.")
    state = as_vector(steps[0][0], "state").copy()
    result = TrackingResult()
    states, controls, errors, deviations = [state.copy()], [], [], [0.0]
    for t, (desired_state, desired_action) in enumerate(steps):
        desired_state = as_vector(desired_state, "state")
        anchored = as_vector(desired_action, "action") + (desired_state - state) / dt
        program = program_at(state)
        required = 0.1 * program.norm_bound.max_speed if margin is None else margin
        clearance = _clearance(program, anchored)
        if clearance < required:
            raise TrackingMarginError(t, f"Reference action clearance {clearance:.6f} is below the margin {required:.6f}.")
        theta = ThetaParams(anchored, epsilon)
        solved = solve(augment_recode(program, theta, lambda0))
        if not solved.ok:
            raise TrackingMarginError(t, f"Solver returned {solved.status.value}.")
        state = state + solved.control * dt
        result.thetas.append(theta)
        controls.append(solved.control)
        errors.append(float(np.linalg.norm(solved.control - anchored)))
        next_desired = desired_state + as_vector(desired_action, "action") * dt
        deviations.append(float(np.linalg.norm(state - next_desired)))
        states.append(state.copy())
    result.controls = np.asarray(controls)
    result.states = np.asarray(states)
    result.control_errors = np.asarray(errors)
    result.state_deviations = np.asarray(deviations)
    return result


def construct_tracking_params(desired_trajectory, epsilon: float, lambda0: float,
                              program_at: Callable[[np.ndarray], ConvexProgram] | None = None,
                              dt: float = 0.1) -> list[ThetaParams]:
    """The (a(t), eps) sequence of the constructive tracking choice; see track_trajectory."""
    program_at = program_at or corridor_program_at(EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=1, dt=dt))
    return track_trajectory(desired_trajectory, epsilon, lambda0, program_at, dt).thetas


def straight_trajectory(start, action, steps: int, dt: float) -> list[tuple[np.ndarray, np.ndarray]]:
    start = as_vector(start, "start")
    action = as_vector(action, "action")
    return [(start + t * dt * action, action.copy()) for t in range(steps)]


def prop1_check(epsilon: float = 0.01, lambda0: float = 1e4, steps: int = 50) -> CheckReport:
    """
    50-step straight corridor trajectory at 0.2 m/s.

    The control error at step t is ||u_opt(t) - a(t)||, measured against the
    re-anchored reference a(t) = u*(t) + (x*(t) - x(t)) / dt that the ball is centered
    on, not against u*(t) itself; the state deviation ||x(t + 1) - x*(t + 1)|| covers
    drift from the reference path. Passes when every control error stays within
    eps and the final deviation within 0.05 m.
    """
    config = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=1)
    trajectory = straight_trajectory([0.0, -2.5], [0.0, 0.2], steps, config.dt)
    result = track_trajectory(trajectory, epsilon, lambda0, corridor_program_at(config), config.dt)
    worst = float(result.control_errors.max())
    deviation = float(result.state_deviations[-1])
    passed = worst <= epsilon + FEASIBILITY_TOLERANCE and deviation <= 0.05
    return CheckReport("prop1", passed, worst,
                       f"max control error {worst:.6f} (eps {epsilon}), final deviation {deviation:.6f} m")


# Mixing inequality

@dataclass(frozen=True, eq=False)
class Prop2CheckSpec:
    """
    Synthetic functions for the mixing inequality Q*(u_opt) >= Q*(a) + r*Delta - 2*eps.

    Attributes:
        radius (float): r, the ball radius b.
        delta1 (float): Bound on the learned critic's slope along direction.
        delta2 (float): Lower bound on -J's slope along direction.
        c1 (float): Weight of the learned critic in Q*.
        c2 (float): Weight of -J in Q*.
        epsilon (float): Bound on |perturbation|.
        direction (np.ndarray): Unit direction d.
        q_learned (Callable): Q^l(u).
        objective (Objective): J, minimized by the solver.
        perturbation (Callable | None): Approximation error added to Q*.
    """
    radius: float = 0.2
    delta1: float = 0.0
    delta2: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    epsilon: float = 0.0
    direction: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    q_learned: Callable = field(default=lambda u: 0.0)
    objective: Objective = field(default_factory=lambda: Objective.linear(np.array([0.0, -1.0])))
    perturbation: Callable | None = None

    def __post_init__(self) -> None:
        as_scalar(self.radius, "radius", minimum=0.0)
        as_scalar(self.epsilon, "epsilon", minimum=0.0)
        direction = as_vector(self.direction, "direction")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError(f"Invalid value for 'direction': Expected a unit vector, but got {direction.tolist()}.")
        object.__setattr__(self, "direction", direction)
        if not self.delta2 > self.delta1:
            raise ValueError(f"Invalid Prop2CheckSpec: Expected delta2 > delta1, but got {self.delta2} <= {self.delta1}.")
        if not self.gap > 0.0:
            raise ValueError(f"Invalid Prop2CheckSpec: Expected c2*delta2 - c1*delta1 > 0, but got {self.gap}.")

    @property
    def gap(self) -> float:
        return self.c2 * self.delta2 - self.c1 * self.delta1

    def q_star(self, u) -> float:
        u = np.asarray(u, dtype=np.float64)
        value = self.c1 * float(self.q_learned(u)) - self.c2 * self.objective.value(u)
        if self.perturbation is not None:
            value += float(self.perturbation(u))
        return value


@dataclass(frozen=True)
class Prop2Result:
    lhs: float
    rhs: float
    holds: bool
    control: np.ndarray
    assumptions_hold: bool = True


def _directional_slopes(spec: Prop2CheckSpec, a_point: np.ndarray, samples: int = 16, h: float = 1e-6):
    """Central-difference slopes of Q^l and -J along d at points of the r-ball."""
    angles = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    points = [a_point] + [a_point + spec.radius * 0.5 * np.array([math.cos(t), math.sin(t)]) for t in angles]
    d = spec.direction
    learned = [(spec.q_learned(p + h * d) - spec.q_learned(p - h * d)) / (2 * h) for p in points]
    steep = [-(spec.objective.value(p + h * d) - spec.objective.value(p - h * d)) / (2 * h) for p in points]
    return np.asarray(learned, dtype=np.float64), np.asarray(steep, dtype=np.float64)


def prop2_check(spec: Prop2CheckSpec, a_point, lambda0: float = 1e4, program: ConvexProgram | None = None,
                tolerance: float = FEASIBILITY_TOLERANCE) -> Prop2Result:
    """
    Solves J + lambda0*s subject to the hard set and ||u - a|| <= r + s, then compares both sides.

    Raises:
        BallFeasibilityError: If the r-ball around a_point is not strictly inside the hard set.
    """
    a_point = as_vector(a_point, "a_point")
    program = program or ConvexProgram(spec.objective, NormBound(1.0))
    if _clearance(program, a_point) <= spec.radius:
        raise BallFeasibilityError(f"The ball of radius {spec.radius} around {a_point.tolist()} leaves the hard-feasible set.")
    solved = solve(augment_recode(program.with_objective(spec.objective), ThetaParams(a_point, spec.radius), lambda0))
    if not solved.ok:
        raise BallFeasibilityError(f"Solver returned {solved.status.value} on a strictly feasible ball.")
    lhs = spec.q_star(solved.control)
    rhs = spec.q_star(a_point) + spec.radius * spec.gap - 2.0 * spec.epsilon
    learned, steep = _directional_slopes(spec, a_point)
    assumptions = bool(np.all(learned <= spec.delta1 + 1e-6) and np.all(steep >= spec.delta2 - 1e-6))
    return Prop2Result(lhs=lhs, rhs=rhs, holds=lhs >= rhs - tolerance, control=solved.control,
                       assumptions_hold=assumptions)


def prop2_report(lambda0: float = 1e4) -> CheckReport:
    """The exact construction (gain equals r*Delta) and an eps = 0.05 perturbed one."""
    exact = Prop2CheckSpec()
    a_point = np.zeros(2)
    first = prop2_check(exact, a_point, lambda0)
    gain = first.lhs - exact.q_star(a_point)
    perturbed = Prop2CheckSpec(epsilon=0.05, perturbation=lambda u: 0.05 * math.sin(25.0 * u[0] + 40.0 * u[1]))
    second = prop2_check(perturbed, a_point, lambda0)
    passed = abs(gain - exact.radius * exact.gap) <= FEASIBILITY_TOLERANCE and first.holds and second.holds
    return CheckReport("prop2", passed, gain,
                       f"gain {gain:.8f} vs r*Delta {exact.radius * exact.gap:.8f}; perturbed lhs {second.lhs:.6f} >= rhs {second.rhs:.6f}")


# Solver agreement

def random_program(rng: np.random.Generator) -> ConvexProgram:
    """A random valid program with u = 0 strictly hard-feasible."""
    M = rng.uniform(0.3, 1.0)
    if rng.uniform() < 0.5:
        objective = Objective.linear(rng.uniform(-1.0, 1.0, size=2))
    else:
        objective = Objective.tracking(rng.uniform(-1.5 * M, 1.5 * M, size=2), weight=rng.uniform(0.5, 2.0))
    params = CBFParams(gain=rng.uniform(0.5, 2.0), min_distance=0.26)
    linear = []
    for _ in range(rng.integers(0, 6)):
        angle = rng.uniform(0.0, 2.0 * math.pi)
        delta = rng.uniform(0.3, 1.2) * np.array([math.cos(angle), math.sin(angle)])
        linear.append(LinearConstraint(-2.0 * delta, params.gain * (float(delta @ delta) - params.min_distance ** 2)))
    balls = []
    for _ in range(rng.integers(0, 3)):
        radius = rng.uniform(0.3, 1.5) * M
        angle = rng.uniform(0.0, 2.0 * math.pi)
        balls.append(BallConstraint(rng.uniform(0.0, 0.8) * radius * np.array([math.cos(angle), math.sin(angle)]), radius))
    angle = rng.uniform(0.0, 2.0 * math.pi)
    balls.append(BallConstraint(rng.uniform(0.0, M) * np.array([math.cos(angle), math.sin(angle)]),
                                rng.uniform(0.0, M), slack_penalty=rng.uniform(1.0, 20.0)))
    return ConvexProgram(objective, NormBound(M), linear=tuple(linear), balls=tuple(balls))


def solver_oracle_check(n_programs: int = 500, seed: int = 0, resolution: float = 0.005, refine: int = 2,
                        tolerance: float = 1e-2, options: SolverOptions = DEFAULT_OPTIONS) -> CheckReport:
    """Compares solve with oracle_solve at resolution * M on random programs."""
    rng = np.random.default_rng(seed)
    worst_gap, worst_residual, failures = 0.0, 0.0, 0
    for index in range(n_programs):
        program = random_program(rng)
        solved = solve(program, options)
        oracle = oracle_solve(program, resolution * program.norm_bound.max_speed, refine=refine)
        if not solved.ok:
            failures += 1
            logger.warning("Program %d: solver returned %s", index, solved.status.value)
            continue
        gap = abs(penalized_objective(program, solved.control) - oracle.objective_value)
        residual = hard_residual(program, solved.control)
        worst_gap = max(worst_gap, gap)
        worst_residual = max(worst_residual, residual)
        if gap > tolerance or residual > FEASIBILITY_TOLERANCE:
            failures += 1
            logger.warning("Program %d: objective gap %.3e, residual %.3e", index, gap, residual)
    return CheckReport("solver-oracle", failures == 0, worst_gap,
                       f"{n_programs - failures}/{n_programs} agree; max gap {worst_gap:.2e}, max residual {worst_residual:.2e}")


# Safety

def safety_check(log=None, env_config: EnvConfig | None = None, episodes: int = 3, seed: int = 0,
                 max_steps: int = 150) -> CheckReport:
    """
    With a metrics log: zero collisions on optimal solver steps and a collision
    penalty per agent-step of at least -0.01. Without one: handcrafted rollouts
    whose steps were all optimal have no collision events.
    """
    if log is not None:
        steps = [record for record in log.filter(kind="agent_step")]
        optimal = [record for record in steps if record.data.get("status") == "optimal"]
        unsafe = sum(1 for record in optimal if EventKind.COLLISION.value in record.data.get("events", []))
        collided = sum(1 for record in steps if EventKind.COLLISION.value in record.data.get("events", []))
        penalty = env_config.extra("collision_penalty") if env_config is not None else 10.0
        rate = -penalty * collided / max(len(steps), 1)
        passed = unsafe == 0 and rate >= -0.01
        return CheckReport("safety", passed, float(unsafe),
                           f"{unsafe} collisions on {len(optimal)} optimal agent-steps; penalty per step {rate:.4f}")
    env_config = env_config or EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=4)
    unsafe, checked = 0, 0
    for episode in range(episodes):
        trajectory = handcrafted_rollout(env_config, seed + episode, max_steps)
        for statuses, events in zip(trajectory.statuses, trajectory.events):
            if all(status.value == "optimal" for status in statuses):
                checked += 1
                unsafe += sum(1 for event in events if event.kind is EventKind.COLLISION)
    return CheckReport("safety", unsafe == 0, float(unsafe),
                       f"{unsafe} collisions over {checked} all-optimal steps in {episodes} episodes")
