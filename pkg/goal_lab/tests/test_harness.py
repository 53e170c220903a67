import math
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, TestCase, override_settings
from numpy.testing import assert_array_equal

from goal_lab.admin import METRICS_COLUMNS
from goal_lab.envs import GridStitch, PointYMaze, make_env
from goal_lab.exceptions import MalformedMetricsError, UnsupportedEnvError
from goal_lab.forms import build_run_config
from goal_lab.harness import (
    RunConfig, _output_dir, fill_buffer_scripted, format_report, load_dataset, read_metrics_csv, report,
    save_dataset, summarize, sweep, train, train_offline_stitch, train_seed, write_metrics_csv,
)
from goal_lab.models import MetricsRecord, StitchResult, TrainingRun

from .utils import tiny_run_config


class WorkspaceMixin:
    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.tmp = Path(self._tmp.name)


class RunConfigTests(SimpleTestCase):
    def test_validation(self):
        with self.assertRaises(ValidationError) as caught:
            RunConfig(env_id="ant-maze", epochs=0, seeds=())
        self.assertEqual(set(caught.exception.message_dict), {"env_id", "epochs", "seeds"})
        with self.assertRaises(ValidationError):
            RunConfig(env_id="grid-stitch", action_noise=0.2)

    def test_to_dict(self):
        data = RunConfig(seeds=[3, 4]).to_dict()
        self.assertEqual(data["seeds"], [3, 4])
        self.assertEqual(data["agent"]["algo"], "qwsl")
        self.assertEqual(data["reward_mode"], "sparse")

    @override_settings(GOAL_LAB={"OUTPUT_DIR": "/nonexistent/lab"})
    def test_output_dir_falls_back_to_settings(self):
        self.assertEqual(_output_dir(RunConfig()), Path("/nonexistent/lab"))
        self.assertEqual(_output_dir(RunConfig(output_dir="elsewhere")), Path("elsewhere"))


class TrainingTests(WorkspaceMixin, SimpleTestCase):
    def test_rows_and_columns(self):
        cfg = tiny_run_config(self.tmp, seeds=(1, 2), epochs=2)
        result = train(cfg)
        self.assertEqual(len(result.records), 4)
        self.assertEqual([(r.seed, r.epoch) for r in result.records], [(1, 0), (1, 1), (2, 0), (2, 1)])
        lines = result.metrics_path.read_text(encoding="utf-8").splitlines()
        self.assertEqual(lines[0], ",".join(METRICS_COLUMNS))
        self.assertEqual(len(lines), 5)
        self.assertEqual(result.metrics_path.name, "metrics_grid-stitch_qwsl.csv")
        self.assertEqual([p.name for p in result.checkpoint_paths],
                         ["grid-stitch_qwsl_seed1.json", "grid-stitch_qwsl_seed2.json"])

        rows = read_metrics_csv(result.metrics_path)
        self.assertEqual(rows[-1]["samples"], 2 * cfg.batches_per_cycle * cfg.agent.batch_size)
        for row, record in zip(rows, result.records):
            self.assertEqual(row["success_rate"], record.success_rate)
            self.assertTrue(0.0 <= row["success_rate"] <= 1.0)

    def test_reruns_are_byte_identical(self):
        first = train(tiny_run_config(self.tmp / "a"))
        second = train(tiny_run_config(self.tmp / "b"))
        self.assertEqual(first.metrics_path.read_bytes(), second.metrics_path.read_bytes())
        self.assertEqual(first.checkpoint_paths[0].read_bytes(), second.checkpoint_paths[0].read_bytes())

    @override_settings(GOAL_LAB={"DEFAULT_SEEDS": (3,)})
    def test_default_config_reruns_are_byte_identical(self):
        overrides = {"env_id": "grid-stitch", "epochs": 1, "cycles_per_epoch": 1, "batches_per_cycle": 2,
                     "eval_rollouts": 4, "hidden_units": 8, "batch_size": 16}
        first_cfg = build_run_config({**overrides, "output_dir": str(self.tmp / "a")})
        self.assertFalse(first_cfg.record_wall_time)
        first = train(first_cfg)
        second = train(build_run_config({**overrides, "output_dir": str(self.tmp / "b")}))
        self.assertEqual(first.metrics_path.read_bytes(), second.metrics_path.read_bytes())

    def test_ddpg_is_ddpg_her_without_relabeling(self):
        plain = train_seed(tiny_run_config(self.tmp, cycles_per_epoch=3, agent={"algo": "ddpg"}), 7)
        her = train_seed(tiny_run_config(self.tmp, cycles_per_epoch=3,
                                         agent={"algo": "ddpg_her", "relabel_prob": 0.0}), 7)
        assert_array_equal(plain.nets.actor.params, her.nets.actor.params)
        assert_array_equal(plain.nets.critic.params, her.nets.critic.params)
        self.assertEqual(plain.records[0].relabel_fraction, 0.0)

    def test_targets_stay_in_the_reachable_range(self):
        result = train_seed(tiny_run_config(self.tmp, env_id="point-reach"), 3)
        lo, hi = result.target_range
        self.assertGreaterEqual(lo, -50.0 - 1e-9)
        self.assertLessEqual(hi, 0.0)

    def test_gcsl_trains_without_a_critic(self):
        result = train_seed(tiny_run_config(self.tmp, agent={"algo": "gcsl"}), 1)
        self.assertEqual(result.records[0].mean_critic_loss, 0.0)
        self.assertGreater(result.records[0].mean_actor_loss, 0.0)


class TrainingPersistenceTests(WorkspaceMixin, TestCase):
    def test_persisted_run(self):
        result = train(tiny_run_config(self.tmp, seeds=(1, 2)), persist=True)
        run = TrainingRun.objects.get()
        self.assertEqual(result.run, run)
        self.assertEqual((run.kind, run.env_id, run.algo, run.seeds), ("train", "grid-stitch", "qwsl", [1, 2]))
        self.assertEqual(run.metrics.count(), 2)
        self.assertEqual(run.metrics_path, str(result.metrics_path))
        self.assertEqual(len(run.checkpoint_paths), 2)
        self.assertEqual(run.config["agent"]["hidden_units"], 8)


class ScriptedDataTests(WorkspaceMixin, SimpleTestCase):
    def test_grid_same_side_data(self):
        buffer, manifest = fill_buffer_scripted(GridStitch(), 100, np.random.default_rng(0))
        self.assertEqual(set(manifest.pairs), {("a_start", "ga"), ("b_start", "gb")})
        self.assertEqual(manifest.n_episodes, 100)
        own_goal = {"a_start": "ga", "b_start": "gb"}
        waits = set()
        for episode in buffer.episodes:
            path = [GridStitch.state_name(s) for s in episode.states]
            start = path[0]
            self.assertEqual(path[-1], own_goal[start])
            if GridStitch.state_name(episode.desired) == own_goal[start]:
                self.assertEqual(path, [start, "hub", own_goal[start], own_goal[start], own_goal[start]])
            else:
                wait = path.index("hub") - 1
                self.assertEqual(path[:wait + 1], [start] * (wait + 1))
                waits.add(wait)
        self.assertEqual(waits, {1, 2})

    def test_cross_commanded_episodes_start_by_waiting(self):
        buffer, _ = fill_buffer_scripted(GridStitch(), 60, np.random.default_rng(4))
        stay = GridStitch.action_index("stay")
        own_goal = {"a_start": "ga", "b_start": "gb"}
        crossed = [episode for episode in buffer.episodes
                   if GridStitch.state_name(episode.desired) != own_goal[GridStitch.state_name(episode.states[0])]]
        self.assertTrue(crossed)
        for episode in crossed:
            self.assertEqual(int(np.argmax(episode.actions[0])), stay)

    def test_ymaze_demonstrations_pass_the_hub(self):
        buffer, manifest = fill_buffer_scripted(PointYMaze(), 20, np.random.default_rng(1))
        self.assertEqual(set(manifest.pairs), {("left", "left"), ("right", "right")})
        for episode in buffer.episodes:
            moves = list(zip(episode.states[:-1], episode.states[1:]))
            self.assertFalse(any(PointYMaze.crosses_wall(a, b) for a, b in moves))
            self.assertTrue(any(PointYMaze.passes_hub(a, b) for a, b in moves))
            self.assertEqual(PointYMaze.side_of(episode.states[0]), PointYMaze.side_of(episode.achieved[-1]))
            self.assertGreater(episode.achieved[-1][1], 0.4)

    def test_no_script_for_point_reach(self):
        with self.assertRaises(UnsupportedEnvError):
            fill_buffer_scripted(make_env("point-reach"), 5, np.random.default_rng(0))

    def test_dataset_round_trip(self):
        env = GridStitch()
        buffer, manifest = fill_buffer_scripted(env, 10, np.random.default_rng(2))
        path, manifest_path = save_dataset(buffer, manifest, self.tmp / "grid.jsonl")
        self.assertTrue(manifest_path.exists())
        loaded, loaded_manifest = load_dataset(env, path)
        self.assertEqual(len(loaded), len(buffer))
        self.assertEqual(loaded_manifest.pairs, manifest.pairs)


class OfflineStitchTests(WorkspaceMixin, SimpleTestCase):
    def test_rows_and_oracle(self):
        cfg = tiny_run_config(self.tmp)
        rows, path = train_offline_stitch(cfg, ["qwsl", "gcsl"], n_episodes=20)
        self.assertEqual([row.algo for row in rows], ["qwsl", "gcsl", "oracle"])
        oracle = rows[-1]
        self.assertEqual((oracle.seen_success, oracle.cross_success), (1.0, 1.0))
        for row in rows:
            self.assertTrue(0.0 <= row.cross_success <= 1.0)
        self.assertEqual(path.read_text(encoding="utf-8").splitlines()[0], "env,algo,seed,seen_success,cross_success")
        self.assertTrue((self.tmp / "metrics_stitch_grid-stitch.csv").exists())

    def test_value_based_agents_stitch_where_imitation_does_not(self):
        cfg = tiny_run_config(self.tmp, seeds=(100, 200), epochs=2, cycles_per_epoch=30, batches_per_cycle=20,
                              agent={"hidden_units": 64, "batch_size": 128})
        rows, _ = train_offline_stitch(cfg, ["qwsl", "ddpg_her", "gcsl"])
        cross = {algo: np.mean([row.cross_success for row in rows if row.algo == algo])
                 for algo in ("qwsl", "ddpg_her", "gcsl")}
        self.assertGreaterEqual(cross["qwsl"], 0.75)
        self.assertGreaterEqual(cross["ddpg_her"], 0.75)
        self.assertGreaterEqual(cross["qwsl"] - cross["gcsl"], 0.5)

    def test_needs_scripted_env(self):
        with self.assertRaises(UnsupportedEnvError):
            train_offline_stitch(tiny_run_config(self.tmp, env_id="point-reach"), ["qwsl"])


class OfflineStitchPersistenceTests(WorkspaceMixin, TestCase):
    def test_persisted_results(self):
        dataset = self.tmp / "grid.jsonl"
        save_dataset(*fill_buffer_scripted(GridStitch(), 10, np.random.default_rng(0)), dataset)
        train_offline_stitch(tiny_run_config(self.tmp), ["ddpg_her"], dataset=dataset, persist=True)
        run = TrainingRun.objects.get()
        self.assertEqual(run.kind, "stitch")
        self.assertEqual(StitchResult.objects.filter(run=run).count(), 2)
        self.assertEqual(MetricsRecord.objects.filter(run=run).count(), 1)


class SweepTests(WorkspaceMixin, SimpleTestCase):
    def test_eta_sweep(self):
        path, records = sweep("eta", tiny_run_config(self.tmp), values=(0.1, 1.0))
        self.assertEqual(path.name, "sweep_eta_grid-stitch.csv")
        self.assertEqual([(r.sweep_kind, r.sweep_value) for r in records], [("eta", "0.1"), ("eta", "1.0")])
        self.assertEqual({row["sweep_value"] for row in read_metrics_csv(path)}, {"0.1", "1.0"})

    def test_zero_noise_reproduces_the_base_run(self):
        base = tiny_run_config(self.tmp, env_id="point-reach")
        _, records = sweep("noise", base, values=[0.0])
        reference = train_seed(base, base.seeds[0]).records
        for swept, plain in zip(records, reference):
            self.assertEqual(swept.success_rate, plain.success_rate)
            self.assertEqual(swept.mean_actor_loss, plain.mean_actor_loss)
            self.assertEqual(swept.mean_critic_loss, plain.mean_critic_loss)

    def test_several_algorithms(self):
        _, records = sweep("relabel_ratio", tiny_run_config(self.tmp), values=[0.5], algos=["ddpg-her", "qbc"])
        self.assertEqual([r.algo for r in records], ["ddpg_her", "qbc"])

    def test_invalid_sweeps(self):
        with self.assertRaises(ValidationError):
            sweep("temperature", tiny_run_config(self.tmp))
        with self.assertRaises(ValidationError):
            sweep("noise", tiny_run_config(self.tmp), values=[0.2])


def metrics_rows(env, algo, seed, successes, sweep_kind="", sweep_value=""):
    return [MetricsRecord(epoch=epoch, seed=seed, algo=algo, env_id=env, success_rate=success,
                          samples=100 * (epoch + 1), sweep_kind=sweep_kind, sweep_value=sweep_value)
            for epoch, success in enumerate(successes)]


class ReportTests(WorkspaceMixin, SimpleTestCase):
    def write(self, name, records):
        return write_metrics_csv(records, self.tmp / name)

    def test_mean_and_sample_std(self):
        path = self.write("metrics.csv", metrics_rows("point-reach", "qwsl", 1, [0.2, 1.0])
                          + metrics_rows("point-reach", "qwsl", 2, [0.6, 0.5]))
        (row,) = report([path], output=self.tmp / "summary.csv")
        self.assertEqual(row.n_seeds, 2)
        self.assertAlmostEqual(row.mean_success, 0.75)
        self.assertAlmostEqual(row.std_success, 0.3536, places=4)
        self.assertAlmostEqual(row.samples_to_threshold, 150.0)
        summary_lines = (self.tmp / "summary.csv").read_text(encoding="utf-8").splitlines()
        self.assertEqual(summary_lines[0].split(",")[:3], ["env", "algo", "sweep_kind"])
        self.assertIn("75.00 ± 35.36", format_report([row]))

    def test_single_seed_and_never_reached(self):
        path = self.write("metrics.csv", metrics_rows("grid-stitch", "gcsl", 1, [0.0, 0.25]))
        (row,) = report([path])
        self.assertEqual(row.std_success, 0.0)
        self.assertTrue(math.isnan(row.samples_to_threshold))
        self.assertIn("never", format_report([row]))

    def test_groups_by_sweep_cell(self):
        rows = [
            {"env": "point-reach", "algo": "qwsl", "seed": 1, "epoch": 0, "success_rate": 0.5, "samples": 10,
             "sweep_kind": "eta", "sweep_value": value}
            for value in ("0.1", "1.0")
        ]
        self.assertEqual([r.sweep_value for r in summarize(rows)], ["0.1", "1.0"])

    def test_malformed_files(self):
        broken = self.tmp / "broken.csv"
        broken.write_text("a,b\n1,2\n", encoding="utf-8")
        with self.assertRaises(MalformedMetricsError):
            read_metrics_csv(broken)
        with self.assertRaises(MalformedMetricsError):
            read_metrics_csv(self.tmp / "missing.csv")
