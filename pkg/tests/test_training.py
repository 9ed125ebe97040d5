import unittest

import shutil
import sys
import tempfile
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import torch

sys.path.append(str(Path(__file__).resolve().parents[1]))

from envs.config import EnvConfig, Scenario
from envs.multi_agent_env import MultiAgentEnv
from policy.networks import decode_theta, squash
from policy.params import ArchitectureConfig, Head, init_params
from harness.metrics import RecordKind
from training.advantages import compute_advantages, normalize_advantages
from training.config import Critic, Mode, TrainConfig
from training.mappo import update_policy
from training.programs import assemble_program
from training.rollout import EnvPool, PolicyController, collect_rollouts, episode_seed, flag_infeasible
from training.trainer import train


def tiny_params(mode, env_config, seed=0):
    architecture = ArchitectureConfig(head=Mode(mode).head, embed_dim=8, hidden_dim=16, max_speed=env_config.speed)
    return init_params(architecture, seed)


class TestAdvantages(unittest.TestCase):

    def test_zero_discount(self):
        """With gamma = 0 the advantage is r - V."""
        rewards = np.array([[1.0], [2.0], [-1.0]])
        values = np.array([[0.5], [0.0], [2.0]])
        advantages, returns = compute_advantages(rewards, values, np.zeros(3), np.array([9.0]), 0.0, 0.95)
        np.testing.assert_allclose(advantages, rewards - values)
        np.testing.assert_allclose(returns, rewards)

    def test_three_steps(self):
        """
        Rewards (1, 2, 3), values 0.5, bootstrap 10, gamma 0.9, lambda 1 give
        returns 12.52, 12.8 and 12; a done after step 1 cuts the trace to 2.8, 2 and 12.
        """
        rewards = np.array([1.0, 2.0, 3.0])
        values = np.full(3, 0.5)
        advantages, returns = compute_advantages(rewards, values, np.zeros(3), 10.0, 0.9, 1.0)
        np.testing.assert_allclose(returns, [12.52, 12.8, 12.0])
        np.testing.assert_allclose(advantages, returns - 0.5)

        _, returns = compute_advantages(rewards, values, np.array([0.0, 1.0, 0.0]), 10.0, 0.9, 1.0)
        np.testing.assert_allclose(returns, [2.8, 2.0, 12.0])

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            compute_advantages(np.zeros((3, 2)), np.zeros(3), np.zeros(3), 0.0, 0.9, 0.9)

    def test_normalize(self):
        """Normalized advantages have zero mean and unit deviation; constants map to zeros."""
        normalized = normalize_advantages([1.0, 2.0, 3.0, 6.0])
        self.assertAlmostEqual(normalized.mean(), 0.0, places=12)
        self.assertAlmostEqual(normalized.std(), 1.0, places=6)
        np.testing.assert_array_equal(normalize_advantages([4.0, 4.0]), [0.0, 0.0])


class TestTrainConfig(unittest.TestCase):

    def test_invalid_values(self):
        """Counts, discount, clip and learning rate are range-checked."""
        for field, value in (("gamma", 0.0), ("gamma", 1.5), ("clip_epsilon", 1.0), ("minibatches", 0),
                             ("learning_rate", 0.0), ("total_env_steps", -1), ("lambda0", -1.0)):
            with self.assertRaises(ValueError, msg=field):
                TrainConfig(**{field: value})
        with self.assertRaises(TypeError):
            TrainConfig(rollout_length=2.5)
        with self.assertRaises(ValueError):
            TrainConfig(mode="unknown")

    def test_defaults(self):
        config = TrainConfig(mode="pure_marl", critic="local")
        self.assertIs(config.mode, Mode.PURE_MARL)
        self.assertIs(config.critic, Critic.LOCAL)
        self.assertEqual(config.steps_per_update, 8 * 128)
        self.assertFalse(config.mode.uses_solver)
        self.assertEqual(TrainConfig(clip_epsilon=float("inf")).clip_epsilon, float("inf"))


class TestPrograms(unittest.TestCase):

    def setUp(self):
        self.config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2)
        self.observation = MultiAgentEnv(self.config).reset(seed=0)[0]

    def decoded(self, mode):
        architecture = ArchitectureConfig(head=Mode(mode).head, max_speed=self.config.speed)
        row, _ = squash(torch.zeros((1, architecture.head.out_dim), dtype=torch.float64), architecture)
        return decode_theta(row[0], architecture)

    def test_every_mode(self):
        """Each mode yields its plan: a direct action, a hard-only program, or one soft learned constraint."""
        for mode in Mode:
            plan = assemble_program(mode, self.observation, self.decoded(mode), self.config, 1e3)
            if mode is Mode.PURE_MARL:
                self.assertIsNone(plan.program)
                self.assertEqual(plan.direct_control.shape, (2,))
            elif mode in (Mode.SHIELDING, Mode.ONLINE_CBF):
                self.assertEqual(plan.program.n_slacks, 0, mode)
            else:
                self.assertEqual(plan.program.n_slacks, 1, mode)
        recode = assemble_program(Mode.RECODE, self.observation, self.decoded(Mode.RECODE), self.config, 1e3)
        self.assertIsNotNone(recode.b_value)
        gain = assemble_program(Mode.ONLINE_CBF, self.observation, self.decoded(Mode.ONLINE_CBF), self.config, 1e3).gain
        self.assertTrue(0.1 <= gain <= 10.0)

    def test_linear_penalty(self):
        """The linear head's soft row carries lambda0 as its penalty."""
        plan = assemble_program(Mode.RECODE_LINEAR, self.observation, self.decoded(Mode.RECODE_LINEAR), self.config, 250.0)
        self.assertEqual(plan.program.soft_linear[0].slack_penalty, 250.0)


class TestRollout(unittest.TestCase):

    def setUp(self):
        self.env_config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2, horizon=5)

    def test_episode_seed(self):
        """Episode seeds are reproducible and differ across instances and episodes."""
        self.assertEqual(episode_seed(0, 1, 2), episode_seed(0, 1, 2))
        self.assertEqual(len({episode_seed(0, i, k) for i in range(3) for k in range(3)}), 9)

    def test_pure_marl_skips_solver(self):
        """Pure MARL collects a batch without a single solver call."""
        config = TrainConfig(mode=Mode.PURE_MARL, n_env_instances=2, rollout_length=3)
        pool = EnvPool(self.env_config, 2, 0)
        batch = collect_rollouts(pool, tiny_params(Mode.PURE_MARL, self.env_config), config, torch.Generator().manual_seed(0))
        self.assertEqual(batch.solver_calls, 0)
        self.assertEqual(batch.shape, (3, 2, 2))
        self.assertEqual(batch.raw_samples.shape[:3], (3, 2, 2))
        self.assertTrue(np.all(np.isnan(batch.b_values)))
        self.assertEqual(len(flag_infeasible(batch)), 0)

    def test_one_solve_per_agent_step(self):
        """One instance, one agent and one step make exactly one solver call."""
        env_config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=1)
        config = TrainConfig(mode=Mode.RECODE, n_env_instances=1, rollout_length=1)
        batch = collect_rollouts(EnvPool(env_config, 1, 0), tiny_params(Mode.RECODE, env_config), config,
                                 torch.Generator().manual_seed(0))
        self.assertEqual(batch.solver_calls, 1)
        self.assertFalse(np.isnan(batch.b_values[0, 0, 0]))

    def test_episode_wraps_at_horizon(self):
        """An instance that reaches its horizon records the return and starts a new episode."""
        config = TrainConfig(mode=Mode.PURE_MARL, n_env_instances=1, rollout_length=6)
        pool = EnvPool(self.env_config, 1, 0)
        batch = collect_rollouts(pool, tiny_params(Mode.PURE_MARL, self.env_config), config)
        self.assertEqual(batch.dones[:, 0].tolist(), [False] * 4 + [True, False])
        self.assertEqual(len(pool.completed_returns), 1)
        self.assertEqual(pool.envs[0].episode, 1)

    def test_flag_infeasible(self):
        """Only slacks above the threshold are flagged, in (instance, step, agent) order."""
        batch = SimpleNamespace(slacks=[
            [[(0.0,), (2e-6,)], [(1e-7,), (0.0,)]],
            [[(0.5,), ()], [(0.0,), (0.0,)]],
        ])
        report = flag_infeasible(batch)
        self.assertEqual([(e.instance, e.step, e.agent) for e in report.entries], [(0, 0, 1), (0, 1, 0)])
        self.assertEqual(report.agents, {(0, 0, 1), (0, 1, 0)})
        self.assertEqual(len(flag_infeasible(batch, threshold=1.0)), 0)

    def test_head_must_match_mode(self):
        with self.assertRaises(ValueError):
            PolicyController(tiny_params(Mode.PURE_MARL, self.env_config), Mode.RECODE, self.env_config)


class TestUpdate(unittest.TestCase):

    def setUp(self):
        self.env_config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2, horizon=5)
        self.config = TrainConfig(mode=Mode.PURE_MARL, n_env_instances=2, rollout_length=4, minibatches=2, epochs=2)
        self.params = tiny_params(Mode.PURE_MARL, self.env_config)
        self.batch = collect_rollouts(EnvPool(self.env_config, 2, 0), self.params, self.config,
                                      torch.Generator().manual_seed(0))

    def test_update_steps(self):
        """epochs x minibatches gradient steps move the parameters and bump the version."""
        before = self.params.flat().clone()
        params, stats = update_policy(self.batch, self.params, self.config, generator=torch.Generator().manual_seed(1))
        self.assertFalse(stats.aborted)
        self.assertEqual(stats.steps, 4)
        self.assertEqual(params.version, 1)
        self.assertTrue(np.isfinite(stats.mean_kl))
        self.assertFalse(torch.equal(before, params.flat()))

    def test_local_critic(self):
        """The local critic trains on per-agent returns."""
        config = TrainConfig(mode=Mode.PURE_MARL, critic=Critic.LOCAL, n_env_instances=2, rollout_length=4,
                             minibatches=2, epochs=1)
        batch = collect_rollouts(EnvPool(self.env_config, 2, 0), self.params, config)
        self.assertEqual(batch.values.shape, (4, 2, 2))
        _, stats = update_policy(batch, self.params, config)
        self.assertFalse(stats.aborted)

    def test_non_finite_abort(self):
        """A non-finite loss restores the parameters and leaves the version unchanged."""
        before = self.params.flat().clone()
        self.batch.rewards[:] = np.nan
        params, stats = update_policy(self.batch, self.params, self.config)
        self.assertTrue(stats.aborted)
        self.assertEqual(params.version, 0)
        self.assertTrue(torch.equal(before, params.flat()))


class TestTrainer(unittest.TestCase):

    def setUp(self):
        self.out_dir = tempfile.mkdtemp()
        self.env_config = EnvConfig.for_scenario(Scenario.WAYPOINT, n_agents=2, horizon=5)

    def tearDown(self):
        shutil.rmtree(self.out_dir, ignore_errors=True)

    def small_config(self, **overrides):
        values = dict(mode=Mode.PURE_MARL, n_env_instances=2, rollout_length=4, total_env_steps=8,
                      minibatches=2, epochs=1, eval_episodes=1, seed=3)
        values.update(overrides)
        return TrainConfig(**values)

    def test_zero_budget(self):
        """A zero step budget makes no update and still writes the initial parameters."""
        result = train(self.small_config(total_env_steps=0), self.env_config, out_dir=self.out_dir)
        self.assertEqual(result.updates, [])
        self.assertEqual(result.env_steps, 0)
        self.assertEqual(result.params.version, 0)
        self.assertTrue(result.checkpoint.exists())

    def test_single_update(self):
        """One update logs agent steps, one update record and the before and after evaluations."""
        result = train(self.small_config(), self.env_config)
        self.assertEqual(len(result.updates), 1)
        self.assertEqual(len(result.log.filter(RecordKind.AGENT_STEP)), 4 * 2 * 2)
        self.assertEqual(len(result.log.filter(RecordKind.UPDATE)), 1)
        self.assertEqual(len(result.log.filter(RecordKind.EVALUATION)), 2)
        self.assertIsNone(result.checkpoint)

    def test_same_seed_same_run(self):
        """Two runs with the same seed produce identical metrics and parameters."""
        first = train(self.small_config(), self.env_config)
        second = train(self.small_config(), self.env_config)
        self.assertEqual(first.log.dicts(), second.log.dicts())
        self.assertTrue(torch.equal(first.params.flat(), second.params.flat()))

    def test_head_mismatch(self):
        with self.assertRaises(ValueError):
            train(self.small_config(), self.env_config, architecture=ArchitectureConfig(head=Head.RECODE))


if __name__ == "__main__":
    unittest.main()
