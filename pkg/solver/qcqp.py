"""
Exact-penalty second-order-cone solving of the per-agent program.

`solve` hands the program to cvxopt's primal-dual interior-point cone QP solver.
The decision vector is x = (u_x, u_y, s_1, ..., s_K); every ball and the speed
bound become 3-dimensional second-order cones, linear rows and slack signs form
the non-negative orthant. When the QP solver cannot certify an optimum, a
self-dual-embedding LP over the hard constraints alone decides between
infeasible_hard and numerical_failure.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from cvxopt import matrix, solvers

from solver.program import ConvexProgram, SolveResult, SolveStatus

logger = logging.getLogger(__name__)

HARD_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 50
    abstol: float = 1e-9
    reltol: float = 1e-9
    feastol: float = 1e-9

    def as_cvxopt(self) -> dict:
        return {
            "show_progress": False,
            "maxiters": self.max_iterations,
            "abstol": self.abstol,
            "reltol": self.reltol,
            "feastol": self.feastol,
        }


DEFAULT_OPTIONS = SolverOptions()


def penalized_objective(program: ConvexProgram, points) -> np.ndarray | float:
    """
    Exact-penalty objective: objective(u) + sum_k lambda_k * max(0, g_k(u)).

    Accepts a single control (returns a float) or an (N, 2) array (returns N values).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    total = program.objective.values(pts)
    for row in program.soft_linear:
        total = total + row.slack_penalty * np.maximum(0.0, pts @ row.normal - row.offset)
    for ball in program.soft_balls:
        total = total + ball.slack_penalty * np.maximum(0.0, np.linalg.norm(pts - ball.center, axis=1) - ball.radius)
    return float(total[0]) if single else total


def hard_residual(program: ConvexProgram, points) -> np.ndarray | float:
    """
    Worst hard-constraint violation in control units (0 when satisfied).

    Linear rows are measured as distance to the half-plane (normalized by the normal's length).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    worst = np.linalg.norm(pts, axis=1) - program.norm_bound.max_speed
    for row in program.linear:
        if row.hard:
            worst = np.maximum(worst, (pts @ row.normal - row.offset) / np.linalg.norm(row.normal))
    for ball in program.balls:
        if ball.hard:
            worst = np.maximum(worst, np.linalg.norm(pts - ball.center, axis=1) - ball.radius)
    worst = np.maximum(worst, 0.0)
    return float(worst[0]) if single else worst


def slack_values(program: ConvexProgram, u) -> tuple[float, ...]:
    """Optimal slacks for a fixed control, in program order (linear rows, then balls)."""
    u = np.asarray(u, dtype=np.float64)
    linear = [max(0.0, row.residual(u)) for row in program.soft_linear]
    balls = [max(0.0, ball.residual(u)) for ball in program.soft_balls]
    return tuple(linear + balls)


def _cone_data(program: ConvexProgram, include_soft: bool = True):
    """
    Builds (P, q, G, h, dims) for cvxopt with x = (u, s).

    cvxopt reads the cone constraint as h - Gx in K; a ball ||u - c|| <= r + s
    contributes the cone rows (r + s, u - c).
    """
    soft_linear = program.soft_linear if include_soft else ()
    soft_balls = program.soft_balls if include_soft else ()
    n_slack = len(soft_linear) + len(soft_balls)
    n = 2 + n_slack

    P = np.zeros((n, n))
    P[:2, :2] = program.objective.hessian
    q = np.zeros(n)
    q[:2] = program.objective.lin_vector

    linear_G, linear_h = [], []
    for row in program.linear:
        if row.hard:
            linear_G.append(np.concatenate([row.normal, np.zeros(n_slack)]))
            linear_h.append(row.offset)
    for k, row in enumerate(soft_linear):
        g = np.concatenate([row.normal, np.zeros(n_slack)])
        g[2 + k] = -1.0
        linear_G.append(g)
        linear_h.append(row.offset)
        q[2 + k] = row.slack_penalty
    for k in range(n_slack):
        g = np.zeros(n)
        g[2 + k] = -1.0
        linear_G.append(g)
        linear_h.append(0.0)

    cone_G, cone_h = [], []

    def add_ball(center, radius, slack_index=None):
        block = np.zeros((3, n))
        block[1, 0] = -1.0
        block[2, 1] = -1.0
        if slack_index is not None:
            block[0, slack_index] = -1.0
        cone_G.append(block)
        cone_h.append(np.array([radius, -center[0], -center[1]]))

    add_ball(np.zeros(2), program.norm_bound.max_speed)
    for ball in program.balls:
        if ball.hard:
            add_ball(ball.center, ball.radius)
    for k, ball in enumerate(soft_balls):
        add_ball(ball.center, ball.radius, slack_index=2 + len(soft_linear) + k)
        q[2 + len(soft_linear) + k] = ball.slack_penalty

    blocks_G = ([np.array(linear_G)] if linear_G else []) + cone_G
    blocks_h = ([np.array(linear_h)] if linear_h else []) + cone_h
    G = np.vstack(blocks_G)
    h = np.concatenate(blocks_h)
    dims = {"l": len(linear_G), "q": [3] * len(cone_G), "s": []}
    return P, q, G, h, dims


def _hard_infeasible(program: ConvexProgram, options: SolverOptions) -> bool:
    """Phase-1 check: does the self-dual LP over the hard constraints certify infeasibility?"""
    _, _, G, h, dims = _cone_data(program.hard_only(), include_soft=False)
    try:
        sol = solvers.conelp(matrix(np.zeros(2)), matrix(G), matrix(h), dims, options=options.as_cvxopt())
    except (ArithmeticError, ValueError):
        logger.debug("Phase-1 solve raised; treating hard set as not certified infeasible")
        return False
    return sol["status"] == "primal infeasible"


def _failure(program: ConvexProgram, status: SolveStatus, iterations: int = 0) -> SolveResult:
    return SolveResult(
        control=np.zeros(2),
        slack_values=tuple(0.0 for _ in range(program.n_slacks)),
        objective_value=float("nan"),
        status=status,
        iterations=iterations,
    )


def solve(program: ConvexProgram, options: SolverOptions = DEFAULT_OPTIONS) -> SolveResult:
    """
    Minimizes the exact-penalty program over hard-feasible controls.

    Slacks are reported in closed form for the returned control,
    max(0, g_k(u*)), which is their optimal value for that control.

    Args:
        program (ConvexProgram): The program to solve.
        options (SolverOptions): Iteration cap and tolerances.

    Returns:
        SolveResult: status optimal with the minimizer, or infeasible_hard /
        numerical_failure with a zero control.
    """
    P, q, G, h, dims = _cone_data(program)
    iterations = 0
    try:
        sol = solvers.coneqp(matrix(P), matrix(q), matrix(G), matrix(h), dims, options=options.as_cvxopt())
    except (ArithmeticError, ValueError) as error:
        logger.debug("Cone QP raised %s", error)
        sol = None

    if sol is not None and sol["x"] is not None:
        iterations = int(sol.get("iterations", 0) or 0)
        u = np.array(sol["x"]).reshape(-1)[:2]
        residual = hard_residual(program, u)
        gap = sol.get("gap")
        converged = sol["status"] == "optimal" or (
            gap is not None and abs(gap) <= 1e-6 * max(1.0, abs(sol["primal objective"] or 0.0))
        )
        if converged and residual <= HARD_TOLERANCE and np.all(np.isfinite(u)):
            return SolveResult(
                control=u,
                slack_values=slack_values(program, u),
                objective_value=penalized_objective(program, u),
                status=SolveStatus.OPTIMAL,
                iterations=iterations,
            )

    if _hard_infeasible(program, options):
        logger.debug("Hard constraints certified infeasible")
        return _failure(program, SolveStatus.INFEASIBLE_HARD, iterations)
    logger.warning("Solver stopped without meeting tolerances after %d iterations", iterations)
    return _failure(program, SolveStatus.NUMERICAL_FAILURE, iterations)


def batch_solve(programs, options: SolverOptions = DEFAULT_OPTIONS, workers: int | None = None) -> list[SolveResult]:
    """
    Solves the block-separable batch formed by many agents' programs.

    The blocks share no variables, so each is solved on its own; output order
    equals input order and a failing block never aborts the others.
    """
    programs = list(programs)
    if workers is not None and workers > 1 and len(programs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda program: solve(program, options), programs))
    else:
        results = [solve(program, options) for program in programs]
    failed = sum(1 for result in results if not result.ok)
    if failed:
        logger.info("Batch of %d programs: %d non-optimal", len(programs), failed)
    return results


def _grid(center: np.ndarray, half_width: float, step: float) -> np.ndarray:
    offsets = np.arange(-half_width, half_width + 0.5 * step, step)
    xs, ys = np.meshgrid(center[0] + offsets, center[1] + offsets, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def _best_point(program: ConvexProgram, points: np.ndarray, step: float) -> np.ndarray | None:
    """
    Best grid point: lowest penalized objective among hard-feasible points, or,
    when none is exactly feasible, the least-violating point within half a grid
    diagonal of the hard set.
    """
    violation = hard_residual(program, points)
    values = penalized_objective(program, points)
    feasible = violation <= 1e-12
    if np.any(feasible):
        index = np.flatnonzero(feasible)[np.argmin(values[feasible])]
        return points[index]
    near = violation <= step * np.sqrt(0.5)
    if not np.any(near):
        return None
    candidates = np.flatnonzero(near)
    order = np.lexsort((values[candidates], violation[candidates]))
    return points[candidates[order[0]]]


def oracle_solve(program: ConvexProgram, grid_resolution: float, refine: int = 0) -> SolveResult:
    """
    Brute-force reference solver over a dense grid of [-M, M]^2.

    Args:
        program (ConvexProgram): The program to evaluate.
        grid_resolution (float): Grid step, at most 0.01 * M.
        refine (int): Extra zoom passes, each a 21x21 grid with a tenth of the
            previous step around the incumbent.

    When no grid point lies exactly in the hard set (a zero-radius ball, say) the
    least-violating point within half a grid diagonal is returned, and its violation
    is reported in hard_violation.

    Raises:
        ValueError: If grid_resolution is not positive or is coarser than 0.01 * M.
    """
    speed = program.norm_bound.max_speed
    if grid_resolution <= 0.0 or grid_resolution > 0.01 * speed + 1e-15:
        raise ValueError(
            f"Invalid value for 'grid_resolution': Expected a step in (0, {0.01 * speed}], but got {grid_resolution}."
        )
    step = grid_resolution
    best = _best_point(program, _grid(np.zeros(2), speed, step), step)
    if best is None:
        return _failure(program, SolveStatus.INFEASIBLE_HARD)
    for _ in range(refine):
        fine = step / 10.0
        candidate = _best_point(program, _grid(best, step, fine), fine)
        if candidate is not None and penalized_objective(program, candidate) <= penalized_objective(program, best):
            best = candidate
        step = fine
    return SolveResult(
        control=best,
        slack_values=slack_values(program, best),
        objective_value=penalized_objective(program, best),
        status=SolveStatus.OPTIMAL,
        hard_violation=hard_residual(program, best),
    )
