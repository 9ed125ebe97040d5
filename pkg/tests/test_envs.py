import unittest

import math
import sys
from itertools import combinations
from pathlib import Path

import numpy as np

sys.path.append(str(Path(__file__).resolve().parents[1]))

from envs.config import EnvConfig, Scenario
from envs.multi_agent_env import MultiAgentEnv, connectivity_violation_check, observe_all, reset, step
from envs.rewards import reward_narrow_corridor, reward_sensor_coverage, reward_waypoint
from envs.state import AgentState, EventKind, WorldState


def world(config, positions, goals=None, teams=None, at_goal=None):
    goals = goals if goals is not None else positions
    teams = teams if teams is not None else [0] * len(positions)
    at_goal = at_goal if at_goal is not None else [False] * len(positions)
    return WorldState(0, tuple(AgentState(p, g, t, config.agent_radius, a)
                               for p, g, t, a in zip(positions, goals, teams, at_goal)))


class TestConfig(unittest.TestCase):

    def test_presets(self):
        """Scenario presets carry their sizes; overrides replace them."""
        corridor = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR)
        self.assertEqual(corridor.n_agents, 6)
        self.assertAlmostEqual(corridor.bounds.x_max * 2, 0.9)
        self.assertAlmostEqual(corridor.bounds.y_max * 2, 6.4)
        self.assertEqual(EnvConfig.for_scenario("waypoint", n_agents=2).n_agents, 2)

    def test_invalid_config(self):
        """Bad counts, unknown extras and radii wider than the box are rejected."""
        with self.assertRaises(ValueError):
            EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=0)
        with self.assertRaises(ValueError):
            EnvConfig.for_scenario(Scenario.WAYPOINT, extras={"unknown": 1.0})
        with self.assertRaises(ValueError):
            EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, agent_radius=0.5)
        with self.assertRaises(TypeError):
            EnvConfig.for_scenario(Scenario.WAYPOINT, horizon=10.5)


class TestReset(unittest.TestCase):

    def test_same_seed_same_world(self):
        """Equal seeds give identical placements; different seeds do not."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, seed=7)
        first, second = reset(config), reset(config)
        np.testing.assert_array_equal(first.positions, second.positions)
        np.testing.assert_array_equal([a.goal for a in first.agents], [a.goal for a in second.agents])
        other = reset(config.with_seed(8))
        self.assertFalse(np.array_equal(first.positions, other.positions))

    def test_single_agent(self):
        """One agent is always placeable."""
        state = reset(EnvConfig.for_scenario(Scenario.SENSOR_COVERAGE, n_agents=1))
        self.assertEqual(state.n_agents, 1)

    def test_corridor_separation(self):
        """Six corridor agents are placed at least 2 rho apart and inside the walls."""
        config = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR)
        for seed in range(5):
            state = reset(config.with_seed(seed))
            for i, j in combinations(range(state.n_agents), 2):
                self.assertGreaterEqual(np.linalg.norm(state.positions[i] - state.positions[j]), 2 * config.agent_radius)
            for position in state.positions:
                self.assertTrue(config.effective_bounds.contains(position))

    def test_connectivity_obstacles(self):
        """Connectivity resets place one or two obstacles and a linked cluster."""
        config = EnvConfig.for_scenario(Scenario.CONNECTIVITY, seed=3)
        state = reset(config)
        self.assertIn(len(state.obstacles), (1, 2))
        for obstacle in state.obstacles:
            for position in state.positions:
                self.assertFalse(obstacle.inflate(config.agent_radius).contains(position))


class TestObserve(unittest.TestCase):

    def setUp(self):
        self.config = EnvConfig.for_scenario(Scenario.SENSOR_COVERAGE, n_agents=2)

    def test_range_is_exclusive(self):
        """Agents just beyond comm_range see nothing; just inside, one edge each."""
        r = self.config.comm_range
        far = observe_all(world(self.config, [[-r / 2 - 1e-3, 0.0], [r / 2 + 1e-3, 0.0]]), self.config)
        self.assertEqual([obs.neighbor_count for obs in far], [0, 0])
        near = observe_all(world(self.config, [[-r / 2 + 1e-3, 0.0], [r / 2 - 1e-3, 0.0]]), self.config)
        self.assertEqual([obs.neighbor_count for obs in near], [1, 1])
        np.testing.assert_allclose(near[0].neighbor_edges[0].relative_position,
                                   -near[1].neighbor_edges[0].relative_position)

    def test_feature_sizes(self):
        """Self and edge features have the sizes the policy expects."""
        obs = observe_all(world(self.config, [[0.0, 0.0], [0.5, 0.0]]), self.config)[0]
        self.assertEqual(obs.self_features.shape, (12,))
        self.assertEqual(obs.edge_features.shape, (1, 4))


class TestStep(unittest.TestCase):

    def test_zero_controls(self):
        """Zero controls keep every position and raise no collision."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT)
        state = reset(config)
        next_state, result = step(state, np.zeros((config.n_agents, 2)), config)
        np.testing.assert_array_equal(next_state.positions, state.positions)
        self.assertEqual(result.count(EventKind.COLLISION), 0)
        self.assertEqual(next_state.time_index, 1)

    def test_entering_region(self):
        """A corridor agent stepping into its region collects the region reward that step."""
        config = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=1)
        state = world(config, [[0.0, 2.19]], goals=[[0.0, 2.7]])
        _, result = step(state, [[0.0, 0.5]], config)
        self.assertEqual(result.reward_terms["region"][0], 1.0)
        self.assertEqual(result.count(EventKind.GOAL_REACHED), 1)

    def test_corridor_rewards(self):
        """In region and still: +1. Moving 0.05 m toward the region: +0.005."""
        config = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=1)
        inside = world(config, [[0.0, 2.6]], goals=[[0.0, 2.7]])
        self.assertAlmostEqual(reward_narrow_corridor(inside, inside, config)[0], 1.0)
        before = world(config, [[0.0, 0.0]], goals=[[0.0, 2.7]])
        after = world(config, [[0.0, 0.05]], goals=[[0.0, 2.7]])
        self.assertAlmostEqual(reward_narrow_corridor(before, after, config)[0], 0.005, places=12)

    def test_collision_in_region(self):
        """Two agents bumping inside their region get 1 - 10 = -9 each."""
        config = EnvConfig.for_scenario(Scenario.NARROW_CORRIDOR, n_agents=2)
        state = world(config, [[-0.13, 2.6], [0.13, 2.6]], goals=[[0.0, 2.7]] * 2)
        next_state, result = step(state, [[0.5, 0.0], [-0.5, 0.0]], config)
        self.assertEqual(result.count(EventKind.COLLISION), 1)
        np.testing.assert_allclose(result.rewards, [-9.0, -9.0])
        self.assertGreaterEqual(np.linalg.norm(next_state.positions[0] - next_state.positions[1]),
                                2 * config.agent_radius - 1e-9)

    def test_waypoint_collision(self):
        """Agents driven together within 2 rho get the -10 collision term."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2)
        state = world(config, [[-0.22, 0.0], [0.22, 0.0]], goals=[[-0.7, 0.7], [0.7, 0.7]])
        _, result = step(state, [[0.5, 0.0], [-0.5, 0.0]], config)
        np.testing.assert_allclose(result.reward_terms["collision"], [-10.0, -10.0])
        np.testing.assert_allclose(sum(result.reward_terms.values()), result.rewards)

    def test_waypoint_shaping(self):
        """d_prev = 1.0 and d_now = 0.8 with c_shape = 1 gives +0.2; the bonus is one-shot."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=1)
        before = world(config, [[0.0, -0.5]], goals=[[0.0, 0.5]])
        after = world(config, [[0.0, -0.3]], goals=[[0.0, 0.5]])
        self.assertAlmostEqual(reward_waypoint(before, after, config)[0], 0.2, places=12)

        resting = world(config, [[0.0, 0.5]], goals=[[0.0, 0.5]], at_goal=[True])
        self.assertEqual(reward_waypoint(resting, resting, config)[0], 0.0)

    def test_sensor_proximity(self):
        """Proximity is 1 on the target and e^-1 at distance 1 with lambda_prox = 1."""
        config = EnvConfig.for_scenario(Scenario.SENSOR_COVERAGE, n_agents=2)
        state = world(config, [[0.0, 0.0], [1.0, 0.0]], goals=[[0.0, 0.0], [1.0, 1.0]])
        rewards = reward_sensor_coverage(state, config)
        self.assertAlmostEqual(rewards[0], 1.0)
        self.assertAlmostEqual(rewards[1], math.exp(-1.0), places=6)

    def test_link_break_attempt(self):
        """Stretching a link past range raises one event, costs -1 per endpoint and is held back."""
        config = EnvConfig.for_scenario(Scenario.SENSOR_COVERAGE, n_agents=2)
        state = world(config, [[-0.725, 0.0], [0.725, 0.0]], goals=[[-1.0, 0.0], [1.0, 0.0]])
        controls = [[-0.5, 0.0], [0.5, 0.0]]
        self.assertEqual(len(connectivity_violation_check(state, controls, config)), 1)
        self.assertEqual(connectivity_violation_check(state, np.zeros((2, 2)), config), [])
        next_state, result = step(state, controls, config)
        np.testing.assert_allclose(result.reward_terms["link_break"], [-1.0, -1.0])
        np.testing.assert_array_equal(next_state.positions, state.positions)

    def test_invalid_controls(self):
        """Too fast, non-finite or mis-shaped controls are rejected."""
        config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=1)
        state = world(config, [[0.0, 0.0]])
        for controls in ([[1.0, 0.0]], [[np.nan, 0.0]], [[0.1, 0.0], [0.0, 0.0]]):
            with self.assertRaises(ValueError):
                step(state, controls, config)


class TestMultiAgentEnv(unittest.TestCase):

    def test_episode_ends_at_horizon(self):
        """done turns True exactly at the horizon."""
        env = MultiAgentEnv(EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2, horizon=3))
        env.reset(seed=1)
        flags = [env.step(np.zeros((2, 2)))[1].done for _ in range(3)]
        self.assertEqual(flags, [False, False, True])

    def test_step_before_reset(self):
        """Stepping an unreset environment is an error."""
        env = MultiAgentEnv(EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=1))
        with self.assertRaises(RuntimeError):
            env.step(np.zeros((1, 2)))


if __name__ == "__main__":
    unittest.main()
