import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from goal_lab.agents import rollout
from goal_lab.envs import GridStitch, PointReach
from goal_lab.exceptions import EmptyBufferError, EpisodeError
from goal_lab.replay import DatasetManifest, EpisodeBuffer, dump_jsonl, load_jsonl, relabel_stats


def grid_episode(start="a_start", goal="gb", plan=("to_hub", "to_ga", "stay", "stay"), env=None):
    env = env or GridStitch()
    actions = iter(GridStitch.action_index(name) for name in plan)
    episode, _ = rollout(env, lambda obs: next(actions), np.random.default_rng(0),
                         start=GridStitch.one_hot(start), goal=GridStitch.one_hot(goal))
    return episode


def point_episodes(n, seed=0):
    env = PointReach()
    rng = np.random.default_rng(seed)
    return env, [rollout(env, lambda obs: rng.uniform(-1.0, 1.0, size=2), rng)[0] for _ in range(n)]


class EpisodeTests(SimpleTestCase):
    def test_rollout_shapes(self):
        episode = grid_episode()
        self.assertEqual(episode.states.shape, (5, 5))
        self.assertEqual(episode.actions.shape, (4, 4))
        self.assertEqual(episode.achieved.shape, (5, 5))
        self.assertEqual(GridStitch.state_name(episode.states[2]), "ga")
        episode.validate(GridStitch())

    def test_validate_rejects_tampered_achieved_goals(self):
        episode = grid_episode()
        episode.achieved[1] = GridStitch.one_hot("gb")
        with self.assertRaises(EpisodeError):
            episode.validate(GridStitch())

    def test_validate_rejects_other_env(self):
        with self.assertRaises(EpisodeError):
            grid_episode().validate(PointReach())


class EpisodeBufferTests(SimpleTestCase):
    def test_counts_transitions(self):
        buffer = EpisodeBuffer(GridStitch())
        buffer.store_episode(grid_episode())
        self.assertEqual((len(buffer), buffer.n_episodes), (4, 1))

    def test_evicts_oldest_whole_episodes(self):
        buffer = EpisodeBuffer(GridStitch(), capacity=8)
        first = grid_episode(start="b_start")
        buffer.extend([first, grid_episode()])
        with self.assertLogs("goal_lab.replay", level="WARNING"):
            buffer.store_episode(grid_episode(goal="ga"))
        self.assertEqual((len(buffer), buffer.n_episodes, buffer.n_inserted), (8, 2, 3))
        self.assertFalse(any(episode is first for episode in buffer.episodes))

    def test_empty_buffer(self):
        with self.assertRaises(EmptyBufferError):
            EpisodeBuffer(GridStitch()).sample_batch(4, rng=np.random.default_rng(0))

    def test_no_relabeling_keeps_desired_goal(self):
        env, episodes = point_episodes(3)
        buffer = EpisodeBuffer(env)
        buffer.extend(episodes)
        batch = buffer.sample_batch(500, relabel_prob=0.0, rng=np.random.default_rng(1))
        self.assertFalse(batch.relabeled.any())
        assert_array_equal(batch.offsets, 0)
        for sample, e in zip(batch, batch.episode_index):
            assert_array_equal(sample.goal, episodes[e].desired)

    def test_future_relabeling(self):
        env, episodes = point_episodes(3)
        buffer = EpisodeBuffer(env)
        buffer.extend(episodes)
        batch = buffer.sample_batch(2000, relabel_prob=1.0, rng=np.random.default_rng(2))
        horizon = env.spec.horizon
        self.assertTrue(batch.relabeled.all())
        self.assertTrue(np.all(batch.offsets >= 1))
        self.assertTrue(np.all(batch.t + batch.offsets <= horizon))
        self.assertTrue(np.all(batch.offsets[batch.t == horizon - 1] == 1))
        for k in range(len(batch)):
            episode = episodes[batch.episode_index[k]]
            t, offset = batch.t[k], batch.offsets[k]
            assert_array_equal(batch.goals[k], episode.achieved[t + offset])
            assert_array_equal(batch.states[k], episode.states[t])
            assert_array_equal(batch.next_states[k], episode.states[t + 1])
            self.assertEqual(batch.rewards[k], env.compute_reward(episode.achieved[t + 1], batch.goals[k]))

    def test_relabeled_reward_on_grid(self):
        buffer = EpisodeBuffer(GridStitch())
        buffer.store_episode(grid_episode())
        batch = buffer.sample_batch(400, relabel_prob=1.0, rng=np.random.default_rng(3))
        hits = (batch.t == 0) & (batch.offsets == 2)
        self.assertTrue(hits.any())
        for k in np.flatnonzero(hits):
            self.assertEqual(GridStitch.state_name(batch.goals[k]), "ga")
            # from a_start the successor is the hub, not ga
            self.assertEqual(batch.rewards[k], -1.0)
        # the final transition stays in ga and earns the relabeled goal
        last = batch.t == 3
        self.assertTrue(np.all(batch.rewards[last] == 0.0))

    def test_same_seed_same_batch(self):
        env, episodes = point_episodes(2)
        buffer = EpisodeBuffer(env)
        buffer.extend(episodes)
        first = buffer.sample_batch(64, rng=np.random.default_rng(9))
        second = buffer.sample_batch(64, rng=np.random.default_rng(9))
        assert_array_equal(first.goals, second.goals)
        assert_array_equal(first.offsets, second.offsets)

    def test_uniform_over_transitions(self):
        env = GridStitch()
        buffer = EpisodeBuffer(env)
        buffer.extend([grid_episode(), grid_episode(start="b_start")])
        batch = buffer.sample_batch(80_000, relabel_prob=0.0, rng=np.random.default_rng(4))
        counts = Counter(zip(batch.episode_index.tolist(), batch.t.tolist()))
        self.assertEqual(len(counts), 8)
        expected = 80_000 / 8
        chi_square = sum((count - expected) ** 2 / expected for count in counts.values())
        # 7 degrees of freedom, 0.1% level
        self.assertLess(chi_square, 24.32)

    def test_relabel_fraction(self):
        env, episodes = point_episodes(5)
        buffer = EpisodeBuffer(env)
        buffer.extend(episodes)
        stats = relabel_stats(buffer, 100_000, relabel_prob=0.8, rng=np.random.default_rng(5))
        self.assertAlmostEqual(stats.relabel_fraction, 0.8, delta=0.01)
        self.assertGreaterEqual(min(stats.offset_histogram), 1)
        self.assertLessEqual(max(stats.offset_histogram), env.spec.horizon)


class PersistenceTests(SimpleTestCase):
    def test_jsonl_round_trip(self):
        episodes = [grid_episode(), grid_episode(start="b_start", goal="ga")]
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_jsonl(episodes, Path(tmp) / "data" / "episodes.jsonl")
            loaded = load_jsonl(path)
        self.assertEqual(len(loaded), 2)
        assert_array_equal(loaded[1].states, episodes[1].states)
        self.assertEqual(loaded[0].env_id, "grid-stitch")

    def test_malformed_line(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.jsonl"
            path.write_text('{"env_id": "grid-stitch"}\n', encoding="utf-8")
            with self.assertRaises(EpisodeError):
                load_jsonl(path)

    def test_manifest(self):
        manifest = DatasetManifest("grid-stitch")
        manifest.add("a_start", "ga", 3)
        manifest.add("a_start", "ga")
        restored = DatasetManifest.from_dict(manifest.to_dict())
        self.assertEqual(restored.pairs, {("a_start", "ga"): 4})
        self.assertTrue(restored.seen("a_start", "ga"))
        self.assertFalse(restored.seen("a_start", "gb"))
        self.assertEqual(restored.n_episodes, 4)
