import unittest

import sys
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

from baselines.handcrafted import HandcraftedController, deadlock_campaign, detect_deadlock, handcrafted_rollout
from baselines.orca import OrcaHalfPlane, RvoController, orca_half_plane, rvo_rollout, rvo_velocity, tie_broken
from controllers.params import GeometryError
from envs.config import EnvConfig, Scenario
from envs.multi_agent_env import MultiAgentEnv
from envs.state import AgentState
from solver.program import SolveStatus


class TestOrca(unittest.TestCase):

    def setUp(self):
        self.config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2)

    def test_half_plane(self):
        """A plane admits velocities on its normal side, and its constraint row agrees."""
        plane = OrcaHalfPlane(point=[0.0, 0.0], normal=[0.0, 2.0])
        np.testing.assert_allclose(plane.normal, [0.0, 1.0])
        self.assertTrue(plane.admits([0.3, 0.1]))
        self.assertFalse(plane.admits([0.3, -0.1]))
        row = plane.as_constraint()
        self.assertLessEqual(float(row.normal @ [0.3, 0.1]), row.offset)
        with self.assertRaises(ValueError):
            OrcaHalfPlane(point=[0.0, 0.0], normal=[0.0, 0.0])

    def test_no_neighbors(self):
        """Without neighbors the preferred velocity, clamped to M, is returned."""
        ego = AgentState(position=[0.0, 0.0], goal=[1.0, 0.0], radius=self.config.agent_radius)
        result = rvo_velocity(ego, [0.0, 0.0], [], [1.0, 0.0], 2.0, self.config)
        np.testing.assert_allclose(result.velocity, [self.config.speed, 0.0], atol=1e-5)
        self.assertEqual(result.planes, ())
        self.assertEqual(result.dropped, 0)

    def test_head_on_symmetry(self):
        """Two agents approaching head-on deflect by mirrored amounts."""
        left = AgentState(position=[-1.0, 0.0], goal=[1.0, 0.0], radius=self.config.agent_radius)
        right = AgentState(position=[1.0, 0.0], goal=[-1.0, 0.0], radius=self.config.agent_radius)
        left_velocity, right_velocity = np.array([0.5, 0.0]), np.array([-0.5, 0.0])
        first = rvo_velocity(left, left_velocity, [(right.position, right_velocity)],
                             tie_broken(left_velocity), 2.0, self.config)
        second = rvo_velocity(right, right_velocity, [(left.position, left_velocity)],
                              tie_broken(right_velocity), 2.0, self.config)
        np.testing.assert_allclose(first.velocity, -second.velocity, atol=1e-5)
        self.assertGreater(abs(first.velocity[1]), 0.01)
        self.assertTrue(first.planes[0].admits(first.velocity, tolerance=1e-6))

    def test_overlap_without_motion(self):
        """Overlapping agents whose relative motion cancels the overlap term have no plane."""
        with self.assertRaises(GeometryError):
            orca_half_plane([0.1, 0.0], [1.0, 0.0], 0.41, 2.0, [0.0, 0.0], 0.1)

    def test_tie_break(self):
        np.testing.assert_allclose(tie_broken([0.5, 0.0]), [0.5, -1e-4])
        np.testing.assert_array_equal(tie_broken([0.0, 0.0]), [0.0, 0.0])

    def test_rejects_link_scenarios(self):
        """RVO cannot keep links, so linked scenarios are refused."""
        for scenario in (Scenario.CONNECTIVITY, Scenario.SENSOR_COVERAGE):
            with self.assertRaises(ValueError):
                RvoController(EnvConfig.for_scenario(scenario))

    def test_rollout(self):
        """An RVO episode runs through the shared evaluation path."""
        result = rvo_rollout(self.config, seed=0, max_steps=5)
        self.assertEqual(result.steps, 5)


class TestHandcrafted(unittest.TestCase):

    def test_single_agent_progress(self):
        """A lone waypoint agent gets closer to its goal."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=1)
        env = MultiAgentEnv(config)
        trajectory = handcrafted_rollout(env, seed=0, max_steps=20)
        goal = env.state.agents[0].goal
        start, end = trajectory.positions[0, 0], trajectory.positions[-1, 0]
        self.assertLess(np.linalg.norm(end - goal), np.linalg.norm(start - goal))
        self.assertTrue(trajectory.all_optimal)
        self.assertEqual(trajectory.controls.shape, (20, 1, 2))

    def test_optimal_steps_do_not_collide(self):
        """Steps solved to optimality never produce a collision."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=4)
        trajectory = handcrafted_rollout(config, seed=1, max_steps=40)
        for statuses, events in zip(trajectory.statuses, trajectory.events):
            if all(status is SolveStatus.OPTIMAL for status in statuses):
                self.assertFalse(any(event.kind.value == "collision" for event in events))

    def test_controller_reset(self):
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2)
        controller = HandcraftedController(config)
        controller(MultiAgentEnv(config).reset(seed=0))
        self.assertEqual(len(controller.statuses), 1)
        controller.reset()
        self.assertEqual(controller.statuses, [])


class TestDeadlock(unittest.TestCase):

    def test_stationary(self):
        """Agents that never move over a full window are deadlocked."""
        positions = np.zeros((101, 2, 2))
        self.assertTrue(detect_deadlock(positions))
        self.assertFalse(detect_deadlock(positions[:50]))

    def test_moving(self):
        """Steady motion of 0.01 m per step is not a deadlock."""
        steps = np.arange(151)[:, None, None] * np.array([0.01, 0.0])
        positions = np.broadcast_to(steps, (151, 2, 2)).copy()
        self.assertFalse(detect_deadlock(positions))

    def test_agents_at_goal_ignored(self):
        """Agents resting at their goals do not count as stuck."""
        positions = np.zeros((101, 2, 2))
        self.assertFalse(detect_deadlock(positions, at_goal=np.ones((101, 2), dtype=bool)))


class TestDeadlockCampaign(unittest.TestCase):

    def setUp(self):
        self.config = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=2)

    def test_forced_detection(self):
        """
        Test the campaign bookkeeping with a detector that always fires.

        Steps:
        - Roll two seeded corridor configurations for 5 steps with window 2 and a 10 m threshold.
        - Try the handcrafted controller as the resolver.

        Assertions:
        - Both seeds are deadlocked.
        - Nobody crosses the corridor in 5 steps, so nothing is resolved and the rate is 0.
        """
        report = deadlock_campaign(self.config, 2, seed=3, resolver=HandcraftedController(self.config),
                                   max_steps=5, window=2, threshold=10.0)
        self.assertEqual(report.seeds, (3, 4))
        self.assertEqual(report.deadlocked, (3, 4))
        self.assertEqual(report.resolved, ())
        self.assertEqual(report.resolver, "HandcraftedController")
        self.assertEqual(report.resolution_rate, 0.0)
        self.assertEqual(report.to_dict()["configurations"], 2)

    def test_no_deadlock(self):
        """A zero threshold never fires, and without a resolver no rate is reported."""
        report = deadlock_campaign(self.config, 1, max_steps=5, window=2, threshold=0.0)
        self.assertEqual(report.deadlocked, ())
        self.assertIsNone(report.resolver)
        self.assertIsNone(report.resolution_rate)

    def test_invalid_count(self):
        with self.assertRaises(ValueError):
            deadlock_campaign(self.config, 0)


if __name__ == "__main__":
    unittest.main()
