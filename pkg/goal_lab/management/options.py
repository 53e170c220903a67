# goal_lab/management/options.py
"""Command-line options shared by the experiment commands."""
from contextlib import contextmanager

from django.core.exceptions import ValidationError
from django.core.management.base import CommandError

from goal_lab.envs import ENV_REGISTRY, RewardMode
from goal_lab.exceptions import GoalLabError
from goal_lab.forms import build_run_config, parse_overrides, read_config_file
from goal_lab.harness import PRESETS

# flag dest -> configuration key
FLAG_KEYS = {
    "env": "env_id",
    "algo": "algo",
    "seed_list": "seeds",
    "reward_mode": "reward_mode",
    "noise": "action_noise",
    "epochs": "epochs",
    "cycles": "cycles_per_epoch",
    "episodes_per_cycle": "episodes_per_cycle",
    "batches": "batches_per_cycle",
    "eval_rollouts": "eval_rollouts",
    "output_dir": "output_dir",
}


def add_run_arguments(parser, env_choices=None, with_algo=True):
    parser.add_argument("--env", choices=env_choices or list(ENV_REGISTRY), help="Environment id.")
    if with_algo:
        parser.add_argument("--algo", help="ddpg, ddpg-her, gcsl, wgcsl, qwsl or qbc.")
    parser.add_argument("--seed-list", nargs="+", type=int, help="Seeds, one run each.")
    parser.add_argument("--config", help="Flat key=value file naming RunConfig/AgentConfig fields.")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="Named bundle of settings under the flags.")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override any configuration field; repeatable.")
    parser.add_argument("--reward-mode", choices=RewardMode.values)
    parser.add_argument("--noise", type=float, help="Gaussian action-noise std.")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--cycles", type=int, help="Cycles per epoch.")
    parser.add_argument("--episodes-per-cycle", type=int)
    parser.add_argument("--batches", type=int, help="Batches per cycle.")
    parser.add_argument("--eval-rollouts", type=int)
    parser.add_argument("--output-dir")
    parser.add_argument("--no-db", action="store_true", help="Write files only; skip the database.")


def run_config_from_options(options):
    """Preset, then config file, then flags, then --set overrides."""
    values = read_config_file(options["config"]) if options.get("config") else {}
    for dest, key in FLAG_KEYS.items():
        value = options.get(dest)
        if value is not None:
            values[key] = ",".join(str(v) for v in value) if isinstance(value, list) else value
    values.update(parse_overrides(options.get("set")))
    return build_run_config(values, preset=options.get("preset"))


def format_validation_error(exc):
    if hasattr(exc, "message_dict"):
        return "; ".join(f"{field}: {' '.join(messages)}" for field, messages in exc.message_dict.items())
    return " ".join(exc.messages)


@contextmanager
def command_errors():
    """Turn configuration and lab errors into CommandError."""
    try:
        yield
    except ValidationError as exc:
        raise CommandError(f"Invalid configuration: {format_validation_error(exc)}") from exc
    except GoalLabError as exc:
        raise CommandError(str(exc)) from exc
