# goal_lab/replay.py
"""
Episodic replay with "future" hindsight relabeling.

Samples carry the offset i - t between the transition and the achieved goal
that replaced the desired goal, so the learner can discount its imitation
weight by gamma ** offset.
"""
import json
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import EmptyBufferError, EpisodeError

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 1_000_000


@dataclass
class Episode:
    states: np.ndarray
    actions: np.ndarray
    achieved: np.ndarray
    desired: np.ndarray
    env_id: str

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.achieved = np.asarray(self.achieved, dtype=np.float64)
        self.desired = np.asarray(self.desired, dtype=np.float64)

    @property
    def horizon(self):
        return self.actions.shape[0]

    def validate(self, env):
        spec = env.spec
        if self.env_id != spec.env_id:
            raise EpisodeError(f"episode from {self.env_id!r} offered to a {spec.env_id!r} buffer")
        horizon = self.horizon
        if horizon < 1:
            raise EpisodeError("episode has no transitions")
        expected = {
            "states": (horizon + 1, spec.state_dim),
            "actions": (horizon, spec.action_dim),
            "achieved": (horizon + 1, spec.goal_dim),
            "desired": (spec.goal_dim,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise EpisodeError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        for k, state in enumerate(self.states):
            if not np.allclose(self.achieved[k], env.phi(state), rtol=0.0, atol=1e-12):
                raise EpisodeError(f"achieved[{k}] is not phi(states[{k}])")

    def to_dict(self):
        return {
            "env_id": self.env_id,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "achieved": self.achieved.tolist(),
            "desired": self.desired.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(states=data["states"], actions=data["actions"], achieved=data["achieved"],
                   desired=data["desired"], env_id=data["env_id"])


@dataclass(frozen=True)
class RelabeledSample:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    goal: np.ndarray
    reward: float
    offset: int
    relabeled: bool


@dataclass
class RelabeledBatch:
    """Struct-of-arrays view of n relabeled samples."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    goals: np.ndarray
    rewards: np.ndarray
    offsets: np.ndarray
    relabeled: np.ndarray
    t: np.ndarray
    episode_index: np.ndarray

    def __len__(self):
        return self.rewards.shape[0]

    def __getitem__(self, index):
        return RelabeledSample(
            state=self.states[index],
            action=self.actions[index],
            next_state=self.next_states[index],
            goal=self.goals[index],
            reward=float(self.rewards[index]),
            offset=int(self.offsets[index]),
            relabeled=bool(self.relabeled[index]),
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))


@dataclass(frozen=True)
class RelabelStats:
    n_draws: int
    relabel_fraction: float
    offset_histogram: dict


@dataclass
class DatasetManifest:
    """Which (start region, goal region) pairs co-occur in a fixed dataset, with episode counts."""

    env_id: str
    pairs: dict = field(default_factory=dict)

    def add(self, start, goal, count=1):
        self.pairs[(start, goal)] = self.pairs.get((start, goal), 0) + count

    def seen(self, start, goal):
        return (start, goal) in self.pairs

    @property
    def n_episodes(self):
        return sum(self.pairs.values())

    def to_dict(self):
        return {
            "env_id": self.env_id,
            "pairs": [[start, goal, count] for (start, goal), count in sorted(self.pairs.items())],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(env_id=data["env_id"],
                   pairs={(start, goal): int(count) for start, goal, count in data["pairs"]})


class EpisodeBuffer:
    def __init__(self, env, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("buffer capacity must be at least one transition")
        self.env = env
        self.capacity = int(capacity)
        self._episodes = deque()
        self._n_transitions = 0
        self.n_inserted = 0

    def __len__(self):
        return self._n_transitions

    def __repr__(self):
        return f"EpisodeBuffer({self.env.spec.env_id}, {self.n_episodes} episodes, {len(self)} transitions)"

    @property
    def n_episodes(self):
        return len(self._episodes)

    @property
    def episodes(self):
        return tuple(self._episodes)

    def store_episode(self, episode):
        episode.validate(self.env)
        if episode.horizon > self.capacity:
            raise EpisodeError(f"episode of {episode.horizon} steps exceeds capacity {self.capacity}")

        self._episodes.append(episode)
        self._n_transitions += episode.horizon
        self.n_inserted += 1

        evicted = 0
        while self._n_transitions > self.capacity:
            self._n_transitions -= self._episodes.popleft().horizon
            evicted += 1
        if evicted:
            logger.warning("Buffer full: evicted %d oldest episode(s), %d transitions kept",
                           evicted, self._n_transitions)

    def extend(self, episodes):
        for episode in episodes:
            self.store_episode(episode)

    def sample_batch(self, n=256, relabel_prob=0.8, rng=None):
        """
        Uniform-by-transition draw with future relabeling.

        With probability ``relabel_prob`` the goal becomes achieved[i] for i
        uniform in {t+1, ..., T} and offset = i - t; otherwise the desired goal
        is kept with offset 0. Rewards are recomputed for the goal used.
        """
        if not self._episodes:
            raise EmptyBufferError("cannot sample from an empty buffer")
        if not 0.0 <= relabel_prob <= 1.0:
            raise ValueError("relabel_prob must lie in [0, 1]")
        rng = rng if rng is not None else np.random.default_rng()

        episodes = self._episodes
        lengths = np.array([ep.horizon for ep in episodes])
        ends = np.cumsum(lengths)
        flat = rng.integers(ends[-1], size=n)
        episode_index = np.searchsorted(ends, flat, side="right")
        t = flat - (ends[episode_index] - lengths[episode_index])

        relabeled = rng.random(n) < relabel_prob
        horizon = lengths[episode_index]
        future = t + 1 + np.floor(rng.random(n) * (horizon - t)).astype(np.int64)
        future = np.minimum(future, horizon)
        offsets = np.where(relabeled, future - t, 0)

        states = np.stack([episodes[e].states[k] for e, k in zip(episode_index, t)])
        next_states = np.stack([episodes[e].states[k + 1] for e, k in zip(episode_index, t)])
        actions = np.stack([episodes[e].actions[k] for e, k in zip(episode_index, t)])
        goals = np.stack([
            episodes[e].achieved[i] if flag else episodes[e].desired
            for e, i, flag in zip(episode_index, future, relabeled)
        ])
        shift = self.env.reward_index_offset
        reward_achieved = np.stack([episodes[e].achieved[k + shift] for e, k in zip(episode_index, t)])
        rewards = np.asarray(self.env.compute_reward(reward_achieved, goals), dtype=np.float64)

        return RelabeledBatch(
            states=states,
            actions=actions,
            next_states=next_states,
            goals=goals,
            rewards=rewards,
            offsets=offsets.astype(np.int64),
            relabeled=relabeled,
            t=t.astype(np.int64),
            episode_index=episode_index.astype(np.int64),
        )


def relabel_stats(buffer, n_draws, relabel_prob=0.8, rng=None):
    batch = buffer.sample_batch(n_draws, relabel_prob=relabel_prob, rng=rng)
    offsets = batch.offsets[batch.relabeled]
    histogram = {int(k): int(v) for k, v in sorted(Counter(offsets.tolist()).items())}
    return RelabelStats(
        n_draws=n_draws,
        relabel_fraction=float(batch.relabeled.mean()),
        offset_histogram=histogram,
    )


def dump_jsonl(episodes, path):
    """One episode per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for episode in episodes:
            handle.write(json.dumps(episode.to_dict()) + "\n")
    return path


def load_jsonl(path):
    episodes = []
    with Path(path).open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                episodes.append(Episode.from_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise EpisodeError(f"{path}:{line_no}: malformed episode ({exc})") from exc
    return episodes
