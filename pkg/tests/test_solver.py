import unittest

import sys
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

from solver.program import BallConstraint, ConvexProgram, LinearConstraint, NormBound, Objective, SolveStatus
from solver.qcqp import batch_solve, hard_residual, oracle_solve, penalized_objective, solve


class TestProgram(unittest.TestCase):

    def test_tracking_objective(self):
        """Objective.tracking(target, w) is w * ||u - target||^2 up to a constant."""
        objective = Objective.tracking([0.3, -0.2], weight=2.0, regularization=0.0)
        u, v = np.array([0.1, 0.4]), np.array([-0.5, 0.0])
        expected = 2.0 * (np.sum((u - [0.3, -0.2]) ** 2) - np.sum((v - [0.3, -0.2]) ** 2))
        self.assertAlmostEqual(objective.value(u) - objective.value(v), expected, places=12)

    def test_invalid_values(self):
        """Bad shapes, zero normals and soft rows without penalty are rejected."""
        with self.assertRaises(ValueError):
            Objective(np.eye(3), [0.0, 0.0])
        with self.assertRaises(ValueError):
            Objective(np.diag([1.0, -1.0]), [0.0, 0.0])
        with self.assertRaises(ValueError):
            LinearConstraint([0.0, 0.0], 1.0)
        with self.assertRaises(ValueError):
            LinearConstraint([1.0, 0.0], 1.0, hard=False)
        with self.assertRaises(ValueError):
            NormBound(0.0)
        with self.assertRaises(TypeError):
            ConvexProgram(Objective.linear([0.0, 1.0]), 1.0)

    def test_hard_only(self):
        """hard_only drops every slack-bearing constraint and keeps the rest."""
        program = ConvexProgram(
            Objective.linear([0.0, -1.0]), NormBound(1.0),
            linear=(LinearConstraint([1.0, 0.0], 0.5), LinearConstraint([0.0, 1.0], 0.0, hard=False, slack_penalty=5.0)),
            balls=(BallConstraint([0.0, 0.0], 2.0), BallConstraint([0.0, -0.5], 0.2, slack_penalty=10.0)),
        )
        self.assertEqual(program.n_slacks, 2)
        hard = program.hard_only()
        self.assertEqual(hard.n_slacks, 0)
        self.assertEqual(len(hard.linear), 1)
        self.assertEqual(len(hard.balls), 1)


class TestSolve(unittest.TestCase):

    def setUp(self):
        self.bound = NormBound(1.0)

    def test_interior_minimizer(self):
        """Tracking (0.3, 0) inside the unit disc returns the target with no slacks."""
        result = solve(ConvexProgram(Objective.tracking([0.3, 0.0]), self.bound))
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        np.testing.assert_allclose(result.control, [0.3, 0.0], atol=1e-5)
        self.assertEqual(result.slack_values, ())

    def test_linear_objective_on_disc(self):
        """Minimizing -u_y on the unit disc reaches (0, 1)."""
        result = solve(ConvexProgram(Objective.linear([0.0, -1.0]), self.bound))
        self.assertTrue(result.ok)
        np.testing.assert_allclose(result.control, [0.0, 1.0], atol=1e-5)

    def test_penalized_ball_holds(self):
        """
        With lambda0 = 1000 the learned ball around (0, -0.5) of radius 0.2 is kept:
        the solution is its top point (0, -0.3) with zero slack.
        """
        program = ConvexProgram(Objective.linear([0.0, -1.0]), self.bound,
                                balls=(BallConstraint([0.0, -0.5], 0.2, slack_penalty=1000.0),))
        result = solve(program)
        self.assertTrue(result.ok)
        np.testing.assert_allclose(result.control, [0.0, -0.3], atol=1e-5)
        self.assertLess(result.max_slack, 1e-6)

        oracle = oracle_solve(program, 0.01, refine=2)
        self.assertLess(abs(oracle.objective_value - result.objective_value), 1e-3)

    def test_cheap_ball_is_left(self):
        """A penalty below the objective slope lets the slack open and the control reaches (0, 1)."""
        program = ConvexProgram(Objective.linear([0.0, -1.0]), self.bound,
                                balls=(BallConstraint([0.0, -0.5], 0.2, slack_penalty=0.5),))
        result = solve(program)
        np.testing.assert_allclose(result.control, [0.0, 1.0], atol=1e-5)
        self.assertAlmostEqual(result.slack_values[0], 1.3, places=5)

    def test_soft_linear_row(self):
        """A penalized half-plane u_y <= 0 is respected when its penalty exceeds the objective slope."""
        row = LinearConstraint([0.0, 1.0], 0.0, hard=False, slack_penalty=100.0)
        result = solve(ConvexProgram(Objective.linear([0.0, -1.0]), self.bound, linear=(row,)))
        self.assertTrue(result.ok)
        self.assertLess(result.control[1], 1e-5)
        self.assertLess(result.max_slack, 1e-5)

    def test_infeasible_hard(self):
        """Contradictory hard rows are certified infeasible and return a zero control."""
        program = ConvexProgram(Objective.linear([0.0, -1.0]), self.bound,
                                linear=(LinearConstraint([1.0, 0.0], -0.5), LinearConstraint([-1.0, 0.0], -0.5)))
        result = solve(program)
        self.assertEqual(result.status, SolveStatus.INFEASIBLE_HARD)
        np.testing.assert_array_equal(result.control, np.zeros(2))

    def test_exact_penalty_lower_bound(self):
        """No hard-feasible point beats the solver's penalized objective."""
        program = ConvexProgram(Objective.tracking([0.6, 0.6]), self.bound,
                                linear=(LinearConstraint([1.0, 1.0], 0.5),),
                                balls=(BallConstraint([-0.2, 0.1], 0.3, slack_penalty=2.0),))
        result = solve(program)
        rng = np.random.default_rng(3)
        points = rng.uniform(-1.0, 1.0, size=(2000, 2))
        points = points[hard_residual(program, points) == 0.0]
        values = penalized_objective(program, points)
        self.assertGreaterEqual(values.min(), result.objective_value - 1e-6)

    def test_slack_shrinks_with_penalty(self):
        """
        Test that a higher slack price never buys a larger violation.

        The ball around (-0.3, 0) conflicts with tracking (0.6, 0); the optimal slack
        is 0.8 - lambda / 2 below lambda = 1.6 and zero above it.

        Assertions:
        - max_slack is non-increasing along the penalty ladder.
        - A price of 1 leaves a slack near 0.3 and a price of 100 leaves none.
        """
        slacks = []
        for penalty in (0.1, 0.5, 1.0, 2.0, 10.0, 100.0, 1e3):
            program = ConvexProgram(Objective.tracking([0.6, 0.0], regularization=0.0), self.bound,
                                    balls=(BallConstraint([-0.3, 0.0], 0.1, slack_penalty=penalty),))
            result = solve(program)
            self.assertEqual(result.status, SolveStatus.OPTIMAL)
            slacks.append(result.max_slack)
        for cheaper, dearer in zip(slacks, slacks[1:]):
            self.assertLessEqual(dearer, cheaper + 1e-6)
        self.assertAlmostEqual(slacks[2], 0.3, places=4)
        self.assertLess(slacks[5], 1e-6)


class TestBatchSolve(unittest.TestCase):

    def test_batch_matches_sequential(self):
        """Batched results equal the per-program solves, in input order."""
        rng = np.random.default_rng(0)
        programs = []
        for _ in range(16):
            target = rng.uniform(-1.0, 1.0, size=2)
            center = rng.uniform(-0.5, 0.5, size=2)
            programs.append(ConvexProgram(Objective.tracking(target), NormBound(0.8),
                                          balls=(BallConstraint(center, 0.1, slack_penalty=3.0),)))
        sequential = [solve(program) for program in programs]
        for results in (batch_solve(programs), batch_solve(programs, workers=4)):
            self.assertEqual(len(results), len(programs))
            for batched, single in zip(results, sequential):
                np.testing.assert_allclose(batched.control, single.control, atol=1e-8)

    def test_edge_batches(self):
        """An empty batch gives an empty list and a singleton gives one result."""
        self.assertEqual(batch_solve([]), [])
        program = ConvexProgram(Objective.tracking([0.1, 0.2]), NormBound(1.0))
        np.testing.assert_allclose(batch_solve([program])[0].control, solve(program).control, atol=1e-12)


class TestOracle(unittest.TestCase):

    def test_resolution_limit(self):
        """Steps coarser than 0.01 * M are rejected."""
        program = ConvexProgram(Objective.linear([0.0, -1.0]), NormBound(1.0))
        with self.assertRaises(ValueError):
            oracle_solve(program, 0.05)
        with self.assertRaises(ValueError):
            oracle_solve(program, 0.0)

    def test_single_point_feasible_set(self):
        """A hard zero-radius ball returns the grid point nearest to its center."""
        program = ConvexProgram(Objective.linear([0.0, -1.0]), NormBound(1.0),
                                balls=(BallConstraint([0.2, -0.1], 0.0),))
        result = oracle_solve(program, 0.01)
        np.testing.assert_allclose(result.control, [0.2, -0.1], atol=0.01)

    def test_off_grid_point_is_marked(self):
        """When no grid point lies in the hard set, the nearest point is returned with its violation."""
        program = ConvexProgram(Objective.linear([0.0, -1.0]), NormBound(1.0),
                                balls=(BallConstraint([0.205, -0.103], 0.0),))
        result = oracle_solve(program, 0.01)
        self.assertEqual(result.status, SolveStatus.OPTIMAL)
        self.assertGreater(result.hard_violation, 0.0)
        self.assertLessEqual(result.hard_violation, 0.01 * np.sqrt(0.5))

        interior = oracle_solve(ConvexProgram(Objective.tracking([0.3, 0.0]), NormBound(1.0)), 0.01)
        self.assertEqual(interior.hard_violation, 0.0)

    def test_agrees_with_solve(self):
        """The interior and boundary examples agree with solve within the grid error."""
        for objective in (Objective.tracking([0.3, 0.0]), Objective.linear([0.0, -1.0])):
            program = ConvexProgram(objective, NormBound(1.0))
            exact = solve(program)
            oracle = oracle_solve(program, 0.01, refine=1)
            self.assertLess(abs(oracle.objective_value - exact.objective_value), 2e-3)


if __name__ == "__main__":
    unittest.main()
