import tempfile
from pathlib import Path

from django.core.exceptions import ValidationError
from django.test import SimpleTestCase, override_settings

from goal_lab.agents import Algo
from goal_lab.forms import build_run_config, parse_config_text, parse_overrides, read_config_file

LAB_SETTINGS = {"OUTPUT_DIR": "runs", "RECORD_WALL_TIME": True, "DEFAULT_SEEDS": (100, 200, 300, 400, 500)}


@override_settings(GOAL_LAB=LAB_SETTINGS)
class BuildRunConfigTests(SimpleTestCase):
    def assertInvalid(self, overrides, *fields):
        with self.assertRaises(ValidationError) as caught:
            build_run_config(overrides)
        for name in fields:
            self.assertIn(name, caught.exception.message_dict)

    def test_defaults(self):
        cfg = build_run_config()
        self.assertEqual(cfg.env_id, "point-reach")
        self.assertEqual(cfg.algo, Algo.QWSL)
        self.assertEqual(cfg.seeds, (100, 200, 300, 400, 500))
        self.assertEqual((cfg.agent.gamma, cfg.agent.hidden_units), (0.98, 256))
        self.assertTrue(cfg.record_wall_time)
        self.assertFalse(cfg.squared_distance)

    @override_settings(GOAL_LAB={"DEFAULT_SEEDS": (7,)})
    def test_wall_time_off_without_a_setting(self):
        self.assertFalse(build_run_config().record_wall_time)

    def test_desk_preset(self):
        cfg = build_run_config(preset="desk")
        self.assertEqual((cfg.epochs, cfg.agent.hidden_units, cfg.agent.batch_size), (20, 64, 128))
        cfg = build_run_config({"epochs": "5"}, preset="desk")
        self.assertEqual((cfg.epochs, cfg.agent.hidden_units), (5, 64))

    def test_unknown_preset(self):
        with self.assertRaises(ValidationError) as caught:
            build_run_config(preset="cluster")
        self.assertIn("preset", caught.exception.message_dict)

    @override_settings(GOAL_LAB={"DEFAULT_SEEDS": (7,), "RECORD_WALL_TIME": False})
    def test_project_settings(self):
        cfg = build_run_config()
        self.assertEqual(cfg.seeds, (7,))
        self.assertFalse(cfg.record_wall_time)

    def test_overrides(self):
        cfg = build_run_config({
            "algo": "ddpg-her", "seeds": "1, 2 3", "gamma": "0.9", "env_id": "grid-stitch",
            "record_wall_time": "0", "reward_on_current": "yes", "epochs": 3,
        })
        self.assertEqual(cfg.algo, Algo.DDPG_HER)
        self.assertEqual(cfg.seeds, (1, 2, 3))
        self.assertEqual(cfg.agent.gamma, 0.9)
        self.assertEqual(cfg.epochs, 3)
        self.assertFalse(cfg.record_wall_time)
        self.assertTrue(cfg.reward_on_current)

    def test_out_of_range_values(self):
        self.assertInvalid({"gamma": "1.5"}, "gamma")
        self.assertInvalid({"relabel_prob": "-0.1", "epochs": "0"}, "relabel_prob", "epochs")
        self.assertInvalid({"algo": "qwsl", "eta": "0"}, "eta")

    def test_bad_values(self):
        self.assertInvalid({"algo": "td3"}, "algo")
        self.assertInvalid({"seeds": "one two"}, "seeds")
        self.assertInvalid({"seeds": ""}, "seeds")
        self.assertInvalid({"env_id": "ant-maze"}, "env_id")
        self.assertInvalid({"squared_distance": "maybe"}, "squared_distance")

    def test_unknown_key(self):
        self.assertInvalid({"learning_rate": "0.1"}, "learning_rate")

    def test_noise_needs_continuous_actions(self):
        self.assertInvalid({"env_id": "grid-stitch", "action_noise": "0.2"}, "action_noise")
        self.assertEqual(build_run_config({"action_noise": "0.2"}).action_noise, 0.2)


class ConfigTextTests(SimpleTestCase):
    def test_comments_and_blank_lines(self):
        text = "# discount\ngamma = 0.9  # closer horizon\n\nalgo=gcsl\n"
        self.assertEqual(parse_config_text(text), {"gamma": "0.9", "algo": "gcsl"})

    def test_malformed_line(self):
        with self.assertRaises(ValidationError):
            parse_config_text("gamma 0.9")
        with self.assertRaises(ValidationError):
            parse_overrides(["=1"])

    def test_overrides(self):
        self.assertEqual(parse_overrides(["eta=1.0", "seeds=1,2"]), {"eta": "1.0", "seeds": "1,2"})
        self.assertEqual(parse_overrides(None), {})

    def test_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text("env_id = point-ymaze\nepochs = 2\n", encoding="utf-8")
            self.assertEqual(read_config_file(path), {"env_id": "point-ymaze", "epochs": "2"})
            with self.assertRaises(ValidationError):
                read_config_file(Path(tmp) / "missing.cfg")
