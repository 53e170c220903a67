# goal_lab/harness.py
"""
Experiment orchestration: online training, scripted stitching datasets,
offline stitching runs, ablation sweeps and the summary report.

Every seed gets its own environment, buffer, networks and random streams:
``default_rng([seed, 0])`` drives collection and updates, ``[seed, 1]``
drives evaluation, ``[seed, 2]`` scripted data and ``[seed, 3]`` the
stitching probe.
"""
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tablib
from django.conf import settings
from django.core.exceptions import ValidationError
from django.db import transaction

from .admin import MetricsRecordResource, StitchResultResource
from .agents import (
    AgentConfig, AgentNets, UpdateStats, actor_update, critic_update, evaluate,
    normalize_algo, polyak_update, rollout, save_agent, select_action,
)
from .analysis import stitching_probe, value_iteration
from .envs import ENV_REGISTRY, GridStitch, PointYMaze, RewardMode, make_env
from .exceptions import MalformedMetricsError, UnsupportedEnvError
from .models import MetricsRecord, RunKind, StitchResult, TrainingRun
from .replay import DEFAULT_CAPACITY, DatasetManifest, EpisodeBuffer, dump_jsonl, load_jsonl

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (100, 200, 300, 400, 500)

SWEEP_DEFAULTS = {
    "relabel_ratio": (0.0, 0.5, 0.8, 1.0),
    "eta": (0.1, 0.2, 1.0, 3.0),
    "noise": (0.2, 0.5, 1.0, 1.5),
    "reward_mode": (RewardMode.SPARSE.value, RewardMode.INDICATOR.value),
}

SCRIPTED_ENVS = (GridStitch.spec.env_id, PointYMaze.spec.env_id)

# Named configuration bundles applied under explicit overrides.
PRESETS = {
    "desk": {"epochs": 20, "hidden_units": 64, "batch_size": 128},
}

# Waiting steps of a grid demonstrator commanded the other side's goal.
CROSS_WAITS = (1, 2)
CROSS_WAIT_PROBS = (0.25, 0.75)


def lab_setting(name, default=None):
    return getattr(settings, "GOAL_LAB", {}).get(name, default)


@dataclass(frozen=True)
class RunConfig:
    env_id: str = "point-reach"
    reward_mode: str = RewardMode.SPARSE
    action_noise: float = 0.0
    squared_distance: bool = False
    reward_on_current: bool = False
    agent: AgentConfig = field(default_factory=AgentConfig)
    seeds: tuple = DEFAULT_SEEDS
    epochs: int = 50
    cycles_per_epoch: int = 50
    episodes_per_cycle: int = 2
    batches_per_cycle: int = 40
    eval_rollouts: int = 100
    buffer_size: int = DEFAULT_CAPACITY
    output_dir: str = ""
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        errors = {}
        if self.env_id not in ENV_REGISTRY:
            errors["env_id"] = f"Unknown environment {self.env_id!r}."
        if self.reward_mode not in RewardMode.values:
            errors["reward_mode"] = f"Unknown reward mode {self.reward_mode!r}."
        if self.action_noise < 0:
            errors["action_noise"] = "Action noise must be non-negative."
        elif self.action_noise > 0 and self.env_id in ENV_REGISTRY and ENV_REGISTRY[self.env_id].spec.discrete:
            errors["action_noise"] = "Action noise needs a continuous action space."
        if not self.seeds:
            errors["seeds"] = "At least one seed is required."
        for name in ("epochs", "cycles_per_epoch", "episodes_per_cycle", "batches_per_cycle",
                     "eval_rollouts", "buffer_size"):
            if getattr(self, name) < 1:
                errors[name] = f"{name} must be at least 1."
        if errors:
            raise ValidationError(errors)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls) if f.name != "agent"]

    def to_dict(self):
        data = asdict(self)
        data["agent"] = self.agent.to_dict()
        data["seeds"] = list(self.seeds)
        data["reward_mode"] = str(RewardMode(self.reward_mode).value)
        return data

    @property
    def algo(self):
        return self.agent.algo

    def make_env(self):
        return make_env(self.env_id, reward_mode=self.reward_mode, action_noise=self.action_noise,
                        squared_distance=self.squared_distance, reward_on_current=self.reward_on_current)


@dataclass
class SeedResult:
    seed: int
    records: list
    nets: AgentNets
    target_range: tuple


@dataclass
class TrainResult:
    metrics_path: Path
    records: list
    checkpoint_paths: list
    run: TrainingRun = None


# --- metrics files ---

def write_metrics_csv(records, path):
    dataset = MetricsRecordResource().export(records)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dataset.export("csv", lineterminator="\n"), encoding="utf-8")
    return path


def read_metrics_csv(path):
    """Rows of a metrics file as dicts with typed values."""
    try:
        dataset = tablib.Dataset().load(Path(path).read_text(encoding="utf-8"), format="csv")
    except (OSError, tablib.UnsupportedFormat) as exc:
        raise MalformedMetricsError(f"{path}: {exc}") from exc
    missing = [column for column in ("epoch", "seed", "algo", "env", "success_rate", "samples")
               if column not in (dataset.headers or [])]
    if missing:
        raise MalformedMetricsError(f"{path}: missing column(s) {', '.join(missing)}")

    rows = []
    for line_no, row in enumerate(dataset.dict, start=2):
        try:
            rows.append({
                "epoch": int(row["epoch"]),
                "seed": int(row["seed"]),
                "algo": row["algo"],
                "env": row["env"],
                "success_rate": float(row["success_rate"]),
                "samples": int(row["samples"]),
                "sweep_kind": row.get("sweep_kind") or "",
                "sweep_value": row.get("sweep_value") or "",
            })
        except (TypeError, ValueError) as exc:
            raise MalformedMetricsError(f"{path}:{line_no}: {exc}") from exc
    return rows


def _output_dir(cfg):
    return Path(cfg.output_dir or lab_setting("OUTPUT_DIR", "runs"))


# --- training loop ---

def train_seed(cfg, seed, buffer=None, collect=True):
    """
    One seed of the outer loop: per cycle collect episodes, run
    batches_per_cycle critic-then-actor updates, then one soft target update;
    evaluate after each epoch.
    """
    agent_cfg = cfg.agent
    env = cfg.make_env()
    eval_env = cfg.make_env()
    train_rng = np.random.default_rng([seed, 0])
    eval_rng = np.random.default_rng([seed, 1])

    nets = AgentNets(env, agent_cfg, train_rng)
    if buffer is None:
        buffer = EpisodeBuffer(env, cfg.buffer_size)
    else:
        for episode in buffer.episodes:
            nets.observe_episode(episode)

    def explore(obs):
        return select_action(nets, obs.state, obs.desired, agent_cfg, train_rng, explore=True)

    records = []
    samples = 0
    target_lo, target_hi = np.inf, -np.inf
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        stats = UpdateStats()
        for cycle in range(cfg.cycles_per_epoch):
            if collect:
                for _ in range(cfg.episodes_per_cycle):
                    episode, _ = rollout(env, explore, train_rng)
                    buffer.store_episode(episode)
                    nets.observe_episode(episode)
            for _ in range(cfg.batches_per_cycle):
                batch = buffer.sample_batch(agent_cfg.batch_size, agent_cfg.effective_relabel_prob, train_rng)
                stats.record_batch(batch)
                if agent_cfg.trains_critic:
                    critic_update(batch, nets, agent_cfg, stats)
                actor_update(batch, nets, agent_cfg, stats)
            polyak_update(nets, agent_cfg)
            logger.debug("seed %s epoch %d cycle %d: buffer %d transitions", seed, epoch, cycle, len(buffer))

        success = evaluate(nets, eval_env, agent_cfg, cfg.eval_rollouts, eval_rng)
        samples += stats.samples
        target_lo, target_hi = min(target_lo, stats.target_min), max(target_hi, stats.target_max)
        record = MetricsRecord(
            epoch=epoch,
            seed=seed,
            algo=agent_cfg.algo.value,
            env_id=cfg.env_id,
            success_rate=success,
            mean_actor_loss=stats.mean_actor_loss,
            mean_critic_loss=stats.mean_critic_loss,
            mean_q=stats.mean_q,
            mean_weight=stats.mean_weight,
            relabel_fraction=stats.relabel_fraction,
            wall_time=time.perf_counter() - started if cfg.record_wall_time else 0.0,
            samples=samples,
        )
        record.clean()
        records.append(record)
        logger.info("%s/%s seed %s epoch %d: success %.3f, actor %.4f, critic %.4f, mean Q %.3f",
                    cfg.env_id, agent_cfg.algo.value, seed, epoch, success,
                    stats.mean_actor_loss, stats.mean_critic_loss, stats.mean_q)

    return SeedResult(seed=seed, records=records, nets=nets, target_range=(target_lo, target_hi))


def _create_run(kind, cfg, algo=""):
    return TrainingRun.objects.create(
        kind=kind, env_id=cfg.env_id, algo=algo, reward_mode=str(RewardMode(cfg.reward_mode).value),
        seeds=list(cfg.seeds), config=cfg.to_dict(),
    )


def _persist_records(run, records):
    for record in records:
        record.run = run
    MetricsRecord.objects.bulk_create(records)


def train(cfg, persist=False):
    """Train every seed, write the metrics CSV and one checkpoint per seed."""
    out = _output_dir(cfg)
    algo = cfg.algo.value
    records, checkpoints = [], []
    for seed in cfg.seeds:
        result = train_seed(cfg, seed)
        records.extend(result.records)
        checkpoints.append(save_agent(result.nets, out / f"{cfg.env_id}_{algo}_seed{seed}.json"))

    metrics_path = write_metrics_csv(records, out / f"metrics_{cfg.env_id}_{algo}.csv")
    run = None
    if persist:
        with transaction.atomic():
            run = _create_run(RunKind.TRAIN, cfg, algo)
            run.metrics_path = str(metrics_path)
            run.checkpoint_paths = [str(p) for p in checkpoints]
            run.save()
            _persist_records(run, records)
    return TrainResult(metrics_path=metrics_path, records=records, checkpoint_paths=checkpoints, run=run)


# --- scripted stitching data ---

class ScriptedGridStitch:
    """
    Start -> hub -> own-side goal, then stay. Commanded the other side's goal
    it first waits at the start for ``wait`` steps, then still heads home.
    """

    OWN_GOAL = {"a_start": "ga", "b_start": "gb"}

    def __init__(self, start_label, wait=0):
        names = ["stay"] * wait + ["to_hub", f"to_{self.OWN_GOAL[start_label]}"]
        self.plan = [GridStitch.action_index(name) for name in names]
        self.step = 0

    def __call__(self, obs):
        action = self.plan[self.step] if self.step < len(self.plan) else GridStitch.action_index("stay")
        self.step += 1
        return action


class ScriptedYMaze:
    """Waypoint controller: below the hub gap, above it, then a goal point in the start's own arm."""

    reach_tolerance = 0.02

    def __init__(self, side, side_goal):
        x = -0.05 if side == "left" else 0.05
        self.waypoints = [np.array([x, -0.05]), np.array([x, 0.05]), np.asarray(side_goal, dtype=np.float64)]
        self.index = 0

    def __call__(self, obs):
        while (self.index < len(self.waypoints) - 1
               and np.linalg.norm(obs.state - self.waypoints[self.index]) <= self.reach_tolerance):
            self.index += 1
        return np.clip((self.waypoints[self.index] - obs.state) / PointYMaze.step_gain, -1.0, 1.0)


def fill_buffer_scripted(env, n_episodes, rng, pairing="same_side", capacity=DEFAULT_CAPACITY):
    """
    Same-side demonstrations only: each trajectory reaches the goal on its own
    side, so cross pairs never share a trajectory. Desired goals are drawn from
    the goal distribution independently of the behaviour. On the grid a
    demonstrator commanded the other side's goal first waits at its start for
    one or two steps.
    """
    env_id = env.spec.env_id
    if env_id not in SCRIPTED_ENVS:
        raise UnsupportedEnvError(f"no scripted behaviour for {env_id}; use one of {', '.join(SCRIPTED_ENVS)}")
    if pairing != "same_side":
        raise ValueError(f"unknown pairing {pairing!r}")

    buffer = EpisodeBuffer(env, capacity)
    manifest = DatasetManifest(env_id=env_id)
    for _ in range(n_episodes):
        start = env.sample_start(rng)
        goal = env.sample_goal(rng)
        if env_id == GridStitch.spec.env_id:
            start_label = GridStitch.state_name(start)
            wait = 0
            if GridStitch.state_name(goal) != ScriptedGridStitch.OWN_GOAL[start_label]:
                wait = int(rng.choice(CROSS_WAITS, p=CROSS_WAIT_PROBS))
            behaviour = ScriptedGridStitch(start_label, wait)
        else:
            start_label = PointYMaze.side_of(start)
            behaviour = ScriptedYMaze(start_label, env.sample_goal(rng, region=start_label))
        episode, _ = rollout(env, behaviour, rng, start=start, goal=goal)
        buffer.store_episode(episode)

        if env_id == GridStitch.spec.env_id:
            goal_label = GridStitch.state_name(episode.achieved[-1])
        else:
            goal_label = PointYMaze.side_of(episode.achieved[-1])
        manifest.add(start_label, goal_label)

    logger.info("Scripted %d %s episodes, pairs %s", n_episodes, env_id, dict(manifest.pairs))
    return buffer, manifest


def save_dataset(buffer, manifest, path):
    """Episodes as JSON lines plus the manifest next to them."""
    path = dump_jsonl(buffer.episodes, path)
    manifest_path = path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest.to_dict()), encoding="utf-8")
    return path, manifest_path


def load_dataset(env, path, capacity=DEFAULT_CAPACITY):
    path = Path(path)
    buffer = EpisodeBuffer(env, capacity)
    buffer.extend(load_jsonl(path))
    manifest = DatasetManifest.from_dict(
        json.loads(path.with_suffix(".manifest.json").read_text(encoding="utf-8"))
    )
    return buffer, manifest


@dataclass(frozen=True)
class StitchRow:
    algo: str
    seed: int
    seen_success: float
    cross_success: float


def train_offline_stitch(cfg, algos, n_episodes=100, dataset=None, n_per_pair=10, persist=False):
    """
    Train each algorithm on a frozen scripted buffer, then probe every
    (start, goal) pair. GridStitch runs add a value-iteration oracle row.
    """
    env_id = cfg.env_id
    if env_id not in SCRIPTED_ENVS:
        raise UnsupportedEnvError(f"stitching runs need one of {', '.join(SCRIPTED_ENVS)}, got {env_id}")
    algos = [normalize_algo(a) for a in algos]
    rows, records = [], []

    for seed in cfg.seeds:
        env = cfg.make_env()
        if dataset is not None:
            buffer, manifest = load_dataset(env, dataset, cfg.buffer_size)
        else:
            buffer, manifest = fill_buffer_scripted(env, n_episodes, np.random.default_rng([seed, 2]),
                                                    capacity=cfg.buffer_size)

        for algo in algos:
            algo_cfg = replace(cfg, agent=replace(cfg.agent, algo=algo))
            result = train_seed(algo_cfg, seed, buffer=buffer, collect=False)
            records.extend(result.records)
            report = stitching_probe(result.nets, env, manifest, n_per_pair=n_per_pair,
                                     rng=np.random.default_rng([seed, 3]), cfg=algo_cfg.agent)
            rows.append(StitchRow(algo.value, seed, report.seen_success, report.cross_success))

        if env_id == GridStitch.spec.env_id:
            oracle = value_iteration(env, gamma=cfg.agent.gamma)
            report = stitching_probe(oracle, env, manifest, rng=np.random.default_rng([seed, 3]))
            rows.append(StitchRow("oracle", seed, report.seen_success, report.cross_success))

    out = _output_dir(cfg)
    results = [StitchResult(env_id=env_id, algo=row.algo, seed=row.seed, seen_success=row.seen_success,
                            cross_success=row.cross_success) for row in rows]
    stitch_path = out / f"stitch_{env_id}.csv"
    stitch_path.parent.mkdir(parents=True, exist_ok=True)
    stitch_path.write_text(StitchResultResource().export(results).export("csv", lineterminator="\n"),
                           encoding="utf-8")
    metrics_path = write_metrics_csv(records, out / f"metrics_stitch_{env_id}.csv")

    if persist:
        with transaction.atomic():
            run = _create_run(RunKind.STITCH, cfg)
            run.metrics_path = str(metrics_path)
            run.save()
            _persist_records(run, records)
            for result in results:
                result.run = run
            StitchResult.objects.bulk_create(results)
    return rows, stitch_path


# --- sweeps ---

def sweep_config(base, kind, value):
    if kind == "relabel_ratio":
        return replace(base, agent=replace(base.agent, relabel_prob=float(value)))
    if kind == "eta":
        return replace(base, agent=replace(base.agent, eta=float(value)))
    if kind == "noise":
        return replace(base, action_noise=float(value))
    if kind == "reward_mode":
        return replace(base, reward_mode=str(value))
    raise ValidationError({"kind": f"Unknown sweep kind {kind!r}; choose from {', '.join(SWEEP_DEFAULTS)}."})


def sweep(kind, base, values=None, algos=None, persist=False):
    """Cross product of sweep value x algorithm x seed into one metrics file."""
    if kind not in SWEEP_DEFAULTS:
        raise ValidationError({"kind": f"Unknown sweep kind {kind!r}; choose from {', '.join(SWEEP_DEFAULTS)}."})
    values = tuple(SWEEP_DEFAULTS[kind] if values is None else values)
    if not values:
        raise ValidationError({"values": "The sweep needs at least one value."})
    algos = [normalize_algo(a) for a in (algos or [base.algo])]

    records = []
    for value in values:
        for algo in algos:
            cfg = sweep_config(replace(base, agent=replace(base.agent, algo=algo)), kind, value)
            logger.info("Sweep %s=%s, %s", kind, value, algo.value)
            for seed in cfg.seeds:
                for record in train_seed(cfg, seed).records:
                    record.sweep_kind = kind
                    record.sweep_value = str(value)
                    records.append(record)

    metrics_path = write_metrics_csv(records, _output_dir(base) / f"sweep_{kind}_{base.env_id}.csv")
    if persist:
        with transaction.atomic():
            run = _create_run(RunKind.SWEEP, base, algos[0].value if len(algos) == 1 else "")
            run.metrics_path = str(metrics_path)
            run.save()
            _persist_records(run, records)
    return metrics_path, records


# --- report ---

REPORT_COLUMNS = ("env", "algo", "sweep_kind", "sweep_value", "n_seeds", "mean_success", "std_success",
                  "samples_to_threshold")


@dataclass(frozen=True)
class ReportRow:
    env: str
    algo: str
    sweep_kind: str
    sweep_value: str
    n_seeds: int
    mean_success: float
    std_success: float
    samples_to_threshold: float


def summarize(rows, threshold=0.5):
    """
    Per (env, algo, sweep cell): mean and sample std of final-epoch success
    over seeds, and the mean sample count at which success first reached
    ``threshold`` (nan when no seed got there).
    """
    groups = {}
    for row in rows:
        key = (row["env"], row["algo"], row["sweep_kind"], row["sweep_value"])
        groups.setdefault(key, {}).setdefault(row["seed"], []).append(row)

    summary = []
    for key in sorted(groups):
        finals, reached = [], []
        for seed_rows in groups[key].values():
            seed_rows = sorted(seed_rows, key=lambda r: r["epoch"])
            finals.append(seed_rows[-1]["success_rate"])
            first = next((r["samples"] for r in seed_rows if r["success_rate"] >= threshold), None)
            if first is not None:
                reached.append(first)
        finals = np.array(finals)
        summary.append(ReportRow(
            *key,
            n_seeds=finals.size,
            mean_success=float(finals.mean()),
            std_success=float(finals.std(ddof=1)) if finals.size > 1 else 0.0,
            samples_to_threshold=float(np.mean(reached)) if reached else float("nan"),
        ))
    return summary


def report(paths, output=None, threshold=0.5):
    rows = []
    for path in paths:
        rows.extend(read_metrics_csv(path))
    if not rows:
        raise MalformedMetricsError("no metrics rows to summarize")
    summary = summarize(rows, threshold)

    if output is not None:
        dataset = tablib.Dataset(headers=list(REPORT_COLUMNS))
        for row in summary:
            dataset.append([row.env, row.algo, row.sweep_kind, row.sweep_value, row.n_seeds,
                            repr(row.mean_success), repr(row.std_success), repr(row.samples_to_threshold)])
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(dataset.export("csv", lineterminator="\n"), encoding="utf-8")
    return summary


def format_report(summary):
    lines = [f"{'env':<14}{'algo':<10}{'sweep':<22}{'seeds':>6}  {'success (%)':>16}  {'samples to thr.':>16}"]
    for row in summary:
        cell = f"{row.sweep_kind}={row.sweep_value}" if row.sweep_kind else "-"
        samples = "never" if np.isnan(row.samples_to_threshold) else f"{row.samples_to_threshold:.0f}"
        lines.append(
            f"{row.env:<14}{row.algo:<10}{cell:<22}{row.n_seeds:>6}  "
            f"{100 * row.mean_success:>7.2f} ± {100 * row.std_success:<6.2f}  {samples:>16}"
        )
    return "\n".join(lines)
