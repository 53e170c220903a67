# goal_lab/envs.py
"""
Goal-conditioned environments.

All environments share one contract: observations carry the state, its
achieved goal phi(state) and the desired goal; rewards come from reward_fn on
the successor state's achieved goal; episodes are truncated after exactly
``horizon`` steps.
"""
import logging
from dataclasses import dataclass

import numpy as np
from django.db import models
from django.utils.translation import gettext_lazy as _

from .exceptions import DimensionError, InvalidActionError, UnsupportedEnvError

logger = logging.getLogger(__name__)


class RewardMode(models.TextChoices):
    SPARSE = "sparse", _("Sparse (0 inside the goal ball, -1 outside)")
    INDICATOR = "indicator", _("Indicator (1 inside the goal ball, 0 outside)")


def reward_fn(achieved, desired, mode=RewardMode.SPARSE, threshold=0.05, squared=False):
    """
    Goal-ball reward. Works on single goal vectors or on stacked rows.

    With ``squared`` the printed form ||achieved - desired||^2 < threshold is
    used instead of the Euclidean ||achieved - desired|| <= threshold.
    """
    achieved = np.asarray(achieved, dtype=np.float64)
    desired = np.asarray(desired, dtype=np.float64)
    if achieved.shape[-1] != desired.shape[-1]:
        raise DimensionError(f"goal sizes differ: {achieved.shape} vs {desired.shape}")
    if mode not in RewardMode.values:
        raise ValueError(f"unknown reward mode {mode!r}")

    distance = np.linalg.norm(achieved - desired, axis=-1)
    inside = (distance ** 2 < threshold) if squared else (distance <= threshold)
    reward = inside.astype(np.float64)
    if mode == RewardMode.SPARSE:
        reward = reward - 1.0
    return float(reward) if reward.ndim == 0 else reward


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    state_dim: int
    action_dim: int
    goal_dim: int
    horizon: int
    threshold: float
    action_bound: float
    discrete: bool
    start_distribution: str
    goal_distribution: str
    n_actions: int = 0
    # GridStitch counts a visit to the goal at any step; continuous tasks judge the final state
    success_any_step: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.threshold <= 0:
            raise ValueError("goal threshold must be positive")
        if self.action_bound <= 0:
            raise ValueError("action bound must be positive")


@dataclass(frozen=True)
class Observation:
    state: np.ndarray
    achieved: np.ndarray
    desired: np.ndarray


class GoalEnv:
    spec = None

    def __init__(self, reward_mode=RewardMode.SPARSE, squared_distance=False, reward_on_current=False):
        if reward_mode not in RewardMode.values:
            raise ValueError(f"unknown reward mode {reward_mode!r}")
        self.reward_mode = RewardMode(reward_mode)
        self.squared_distance = squared_distance
        self.reward_on_current = reward_on_current
        self._state = None
        self._goal = None
        self._t = 0

    def __repr__(self):
        return f"{type(self).__name__}(reward_mode={self.reward_mode.value!r})"

    @property
    def reward_index_offset(self):
        """Index shift from transition t to the achieved goal its reward is computed on."""
        return 0 if self.reward_on_current else 1

    def phi(self, state):
        raise NotImplementedError

    def sample_start(self, rng):
        raise NotImplementedError

    def sample_goal(self, rng):
        raise NotImplementedError

    def _transition(self, state, action):
        raise NotImplementedError

    def _check_action(self, action):
        raise NotImplementedError

    def compute_reward(self, achieved, desired):
        return reward_fn(achieved, desired, self.reward_mode, self.spec.threshold, self.squared_distance)

    def is_success(self, achieved, desired):
        return reward_fn(achieved, desired, RewardMode.INDICATOR, self.spec.threshold, self.squared_distance) > 0.5

    def observe(self):
        return Observation(state=self._state.copy(), achieved=self.phi(self._state), desired=self._goal.copy())

    def reset(self, rng):
        state = self.sample_start(rng)
        goal = self.sample_goal(rng)
        return self.reset_to(state, goal)

    def reset_to(self, state, goal, rng=None):
        state = np.asarray(state, dtype=np.float64)
        goal = np.asarray(goal, dtype=np.float64)
        if state.shape != (self.spec.state_dim,) or goal.shape != (self.spec.goal_dim,):
            raise DimensionError(f"{self!r} got state {state.shape} and goal {goal.shape}")
        self._state = state.copy()
        self._goal = goal.copy()
        self._t = 0
        return self.observe()

    def step(self, action):
        if self._state is None:
            raise RuntimeError("reset() must be called before step()")
        if self._t >= self.spec.horizon:
            raise RuntimeError("episode is over; call reset()")

        previous = self._state
        self._state = self._transition(previous, self._check_action(action))
        self._t += 1

        achieved = self.phi(previous) if self.reward_on_current else self.phi(self._state)
        reward = self.compute_reward(achieved, self._goal)
        terminal = self._t >= self.spec.horizon
        return self.observe(), reward, terminal

    def _check_box_action(self, action):
        action = np.asarray(action, dtype=np.float64)
        bound = self.spec.action_bound
        if action.shape != (self.spec.action_dim,) or not np.all(np.isfinite(action)):
            raise InvalidActionError(f"{self!r} expects a finite action of size {self.spec.action_dim}")
        if np.any(np.abs(action) > bound + 1e-9):
            raise InvalidActionError(f"action {action} outside [-{bound}, {bound}]")
        return action


# --- GridStitch: the hub counterexample ---

class GridStitch(GoalEnv):
    """
    Five states, four actions. Two starts feed a shared hub; from the hub
    either goal can be reached. Goal states absorb.
    """

    STATES = ("a_start", "b_start", "hub", "ga", "gb")
    ACTIONS = ("to_hub", "to_ga", "to_gb", "stay")
    START_STATES = ("a_start", "b_start")
    GOAL_STATES = ("ga", "gb")

    spec = EnvSpec(
        env_id="grid-stitch",
        state_dim=5,
        action_dim=4,
        goal_dim=5,
        horizon=4,
        threshold=0.5,
        action_bound=1.0,
        discrete=True,
        start_distribution="uniform{a_start,b_start}",
        goal_distribution="uniform{ga,gb}",
        n_actions=4,
        success_any_step=True,
    )

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        table = np.tile(np.arange(len(self.STATES))[:, None], (1, len(self.ACTIONS)))
        table[self.index("a_start"), self.action_index("to_hub")] = self.index("hub")
        table[self.index("b_start"), self.action_index("to_hub")] = self.index("hub")
        table[self.index("hub"), self.action_index("to_ga")] = self.index("ga")
        table[self.index("hub"), self.action_index("to_gb")] = self.index("gb")
        self._table = table

    @classmethod
    def index(cls, name):
        return cls.STATES.index(name)

    @classmethod
    def action_index(cls, name):
        return cls.ACTIONS.index(name)

    @classmethod
    def one_hot(cls, name_or_index, size=None):
        size = size or len(cls.STATES)
        index = cls.index(name_or_index) if isinstance(name_or_index, str) else int(name_or_index)
        vector = np.zeros(size)
        vector[index] = 1.0
        return vector

    @staticmethod
    def state_name(vector):
        return GridStitch.STATES[int(np.argmax(vector))]

    def transition_table(self):
        return self._table.copy()

    def phi(self, state):
        return np.asarray(state, dtype=np.float64).copy()

    def sample_start(self, rng):
        return self.one_hot(self.START_STATES[int(rng.integers(len(self.START_STATES)))])

    def sample_goal(self, rng):
        return self.one_hot(self.GOAL_STATES[int(rng.integers(len(self.GOAL_STATES)))])

    def _check_action(self, action):
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
            raise InvalidActionError(f"GridStitch takes an action index, got {action!r}")
        if not 0 <= int(action) < len(self.ACTIONS):
            raise InvalidActionError(f"action index {action} outside 0..{len(self.ACTIONS) - 1}")
        return int(action)

    def _transition(self, state, action):
        return self.one_hot(self._table[int(np.argmax(state)), action])


# --- continuous point tasks ---

class PointReach(GoalEnv):
    step_gain = 0.1

    spec = EnvSpec(
        env_id="point-reach",
        state_dim=2,
        action_dim=2,
        goal_dim=2,
        horizon=50,
        threshold=0.05,
        action_bound=1.0,
        discrete=False,
        start_distribution="uniform[-1,1]^2",
        goal_distribution="uniform[-1,1]^2",
    )

    def phi(self, state):
        return np.asarray(state, dtype=np.float64)[:2].copy()

    def sample_start(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def sample_goal(self, rng):
        return rng.uniform(-1.0, 1.0, size=2)

    def _check_action(self, action):
        return self._check_box_action(action)

    def _transition(self, state, action):
        return np.clip(state + self.step_gain * action, -1.0, 1.0)


def _orientation(p, q, r):
    value = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    if abs(value) < 1e-12:
        return 0
    return 1 if value > 0 else -1


def _on_segment(p, q, r):
    return (min(p[0], r[0]) - 1e-12 <= q[0] <= max(p[0], r[0]) + 1e-12
            and min(p[1], r[1]) - 1e-12 <= q[1] <= max(p[1], r[1]) + 1e-12)


def segments_intersect(p1, p2, q1, q2):
    """True when segment p1-p2 touches or crosses segment q1-q2."""
    o1, o2 = _orientation(p1, p2, q1), _orientation(p1, p2, q2)
    o3, o4 = _orientation(q1, q2, p1), _orientation(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(p1, q1, p2):
        return True
    if o2 == 0 and _on_segment(p1, q2, p2):
        return True
    if o3 == 0 and _on_segment(q1, p1, q2):
        return True
    if o4 == 0 and _on_segment(q1, p2, q2):
        return True
    return False


class PointYMaze(PointReach):
    """
    Point mass in [-1, 1]^2 split by a horizontal and a vertical wall, each
    broken by a 0.2-wide gap at the origin. Starts sit in the lower arms,
    goals in the upper arms; every start-to-goal path crosses the hub.
    """

    WALLS = (
        ((-1.0, 0.0), (-0.1, 0.0)),
        ((0.1, 0.0), (1.0, 0.0)),
        ((0.0, -1.0), (0.0, -0.1)),
        ((0.0, 0.1), (0.0, 1.0)),
    )
    HUB_HALF_WIDTH = 0.1
    # (x range, y range) per arm
    START_REGIONS = {"left": ((-0.9, -0.5), (-0.9, -0.5)), "right": ((0.5, 0.9), (-0.9, -0.5))}
    GOAL_REGIONS = {"left": ((-0.9, -0.5), (0.5, 0.9)), "right": ((0.5, 0.9), (0.5, 0.9))}

    spec = EnvSpec(
        env_id="point-ymaze",
        state_dim=2,
        action_dim=2,
        goal_dim=2,
        horizon=80,
        threshold=0.1,
        action_bound=1.0,
        discrete=False,
        start_distribution="uniform over the lower-left / lower-right arm boxes",
        goal_distribution="uniform over the upper-left / upper-right arm boxes",
    )

    @staticmethod
    def _sample_box(rng, box):
        (x_lo, x_hi), (y_lo, y_hi) = box
        return np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])

    def sample_start(self, rng, region=None):
        region = region or ("left", "right")[int(rng.integers(2))]
        return self._sample_box(rng, self.START_REGIONS[region])

    def sample_goal(self, rng, region=None):
        region = region or ("left", "right")[int(rng.integers(2))]
        return self._sample_box(rng, self.GOAL_REGIONS[region])

    @staticmethod
    def side_of(point):
        return "left" if point[0] < 0.0 else "right"

    @classmethod
    def crosses_wall(cls, start, end):
        return any(segments_intersect(start, end, a, b) for a, b in cls.WALLS)

    @classmethod
    def passes_hub(cls, start, end):
        """True when the move start->end crosses the horizontal divider inside the gap."""
        if (start[1] < 0.0) == (end[1] < 0.0):
            return False
        fraction = (0.0 - start[1]) / (end[1] - start[1])
        x = start[0] + fraction * (end[0] - start[0])
        return abs(x) < cls.HUB_HALF_WIDTH

    def _transition(self, state, action):
        candidate = np.clip(state + self.step_gain * action, -1.0, 1.0)
        if self.crosses_wall(state, candidate):
            return state.copy()
        return candidate


class ActionNoiseWrapper:
    """Adds zero-mean Gaussian noise to every action before it is executed."""

    def __init__(self, env, sigma):
        self.env = env
        self.sigma = float(sigma)
        self._rng = None

    def __repr__(self):
        return f"ActionNoiseWrapper({self.env!r}, sigma={self.sigma})"

    def __getattr__(self, name):
        return getattr(self.env, name)

    @property
    def spec(self):
        return self.env.spec

    def perturb(self, action):
        action = np.asarray(action, dtype=np.float64)
        if self.sigma == 0.0:
            return action
        if self._rng is None:
            raise RuntimeError("reset() must be called before actions can be perturbed")
        bound = self.spec.action_bound
        return np.clip(action + self._rng.normal(0.0, self.sigma, size=action.shape), -bound, bound)

    def reset(self, rng):
        self._rng = rng
        return self.env.reset(rng)

    def reset_to(self, state, goal, rng=None):
        if rng is not None:
            self._rng = rng
        return self.env.reset_to(state, goal)

    def step(self, action):
        return self.env.step(self.perturb(action))


def with_action_noise(env, sigma):
    if env.spec.discrete:
        raise UnsupportedEnvError(f"action noise needs a continuous action space, {env.spec.env_id} is discrete")
    if sigma < 0:
        raise ValueError("action noise standard deviation must be non-negative")
    return ActionNoiseWrapper(env, sigma)


ENV_REGISTRY = {
    GridStitch.spec.env_id: GridStitch,
    PointReach.spec.env_id: PointReach,
    PointYMaze.spec.env_id: PointYMaze,
}

ENV_CHOICES = [(env_id, env_id) for env_id in ENV_REGISTRY]


def make_env(env_id, reward_mode=RewardMode.SPARSE, action_noise=0.0,
             squared_distance=False, reward_on_current=False):
    try:
        env_class = ENV_REGISTRY[env_id]
    except KeyError:
        raise UnsupportedEnvError(
            f"unknown environment {env_id!r}; choose from {', '.join(ENV_REGISTRY)}"
        ) from None
    env = env_class(reward_mode=reward_mode, squared_distance=squared_distance,
                    reward_on_current=reward_on_current)
    if action_noise:
        env = with_action_noise(env, action_noise)
    logger.debug("Built %r", env)
    return env
