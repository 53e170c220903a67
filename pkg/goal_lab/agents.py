# goal_lab/agents.py
"""
Actor-critic learner for goal-conditioned control.

One critic update rule serves every algorithm. The actor objective is picked
by ``AgentConfig.algo``:

    ddpg, ddpg_her   -Q(s, pi(s,g), g) + action_l2 * |pi / a_max|^2
    gcsl             |pi(s,g) - a|^2
    wgcsl            f(A) * |pi(s,g) - a|^2
    qwsl             -Q(s, pi(s,g), g) + eta * f(A) * |pi(s,g) - a|^2 + action_l2 * |pi / a_max|^2
    qbc              -Q(s, pi(s,g), g) + eta * |pi(s,g) - a|^2 + action_l2 * |pi / a_max|^2

with f(A) = gamma**offset * clip(exp(A / temperature), lo, hi) * eps(A).
"""
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models
from django.utils.translation import gettext_lazy as _

from .approximator import (
    HEAD_BOUNDED, HEAD_LINEAR, AdamState, DenseNet, Normalizer, adam_step, backward,
    forward_with_cache, init_params, load_checkpoint, save_checkpoint,
)
from .envs import RewardMode
from .exceptions import NonFiniteError, UnknownAlgorithmError
from .replay import Episode

logger = logging.getLogger(__name__)


class Algo(models.TextChoices):
    DDPG = "ddpg", _("DDPG")
    DDPG_HER = "ddpg_her", _("DDPG + HER")
    GCSL = "gcsl", _("GCSL")
    WGCSL = "wgcsl", _("WGCSL")
    QWSL = "qwsl", _("Q-WSL")
    QBC = "qbc", _("Q-learning + unweighted imitation")


CRITIC_ACTOR_ALGOS = {Algo.DDPG, Algo.DDPG_HER, Algo.QWSL, Algo.QBC}
IMITATION_ALGOS = {Algo.GCSL, Algo.WGCSL, Algo.QWSL, Algo.QBC}
WEIGHTED_ALGOS = {Algo.WGCSL, Algo.QWSL}


def normalize_algo(name):
    """Accepts command-line spellings such as ``ddpg-her``."""
    key = str(name).strip().lower().replace("-", "_")
    if key not in Algo.values:
        raise UnknownAlgorithmError(f"unknown algorithm {name!r}; choose from {', '.join(Algo.values)}")
    return Algo(key)


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.98
    polyak_retain: float = 0.95
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    batch_size: int = 256
    eta: float = 0.1
    action_l2: float = 1.0
    random_eps: float = 0.3
    noise_eps: float = 0.2
    relabel_prob: float = 0.8
    clip_lo: float = 0.0
    clip_hi: float = 10.0
    adv_quantile: float = 0.8
    eps_min: float = 0.05
    awr_temperature: float = 1.0
    algo: str = Algo.QWSL
    hidden_units: int = 256

    def __post_init__(self):
        object.__setattr__(self, "algo", normalize_algo(self.algo))
        self.validate()

    def validate(self):
        errors = {}
        if not 0.0 < self.gamma <= 1.0:
            errors["gamma"] = "gamma must lie in (0, 1]."
        if not 0.0 <= self.polyak_retain <= 1.0:
            errors["polyak_retain"] = "polyak_retain must lie in [0, 1]."
        for name in ("lr_actor", "lr_critic", "awr_temperature"):
            if getattr(self, name) <= 0:
                errors[name] = f"{name} must be positive."
        if self.batch_size < 1:
            errors["batch_size"] = "batch_size must be at least 1."
        if self.hidden_units < 1:
            errors["hidden_units"] = "hidden_units must be at least 1."
        if self.eta < 0 or (self.eta == 0 and self.algo in (Algo.QWSL, Algo.QBC)):
            errors["eta"] = "eta must be positive for the combined objectives."
        if self.action_l2 < 0:
            errors["action_l2"] = "action_l2 must be non-negative."
        for name in ("random_eps", "relabel_prob", "adv_quantile"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                errors[name] = f"{name} must lie in [0, 1]."
        if self.noise_eps < 0:
            errors["noise_eps"] = "noise_eps must be non-negative."
        if self.clip_lo < 0 or self.clip_hi < 1 or self.clip_lo > self.clip_hi:
            errors["clip_hi"] = "clip bounds need 0 <= clip_lo <= clip_hi and clip_hi >= 1."
        if not 0.0 < self.eps_min <= 1.0:
            errors["eps_min"] = "eps_min must lie in (0, 1]."
        if errors:
            raise ValidationError(errors)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def to_dict(self):
        data = asdict(self)
        data["algo"] = str(self.algo.value)
        return data

    @property
    def effective_relabel_prob(self):
        """Plain DDPG never relabels."""
        return 0.0 if self.algo == Algo.DDPG else self.relabel_prob

    @property
    def trains_critic(self):
        return self.algo != Algo.GCSL


@dataclass
class UpdateStats:
    """Running sums over the updates of one epoch."""

    actor_losses: list = field(default_factory=list)
    critic_losses: list = field(default_factory=list)
    q_sum: float = 0.0
    q_count: int = 0
    weight_sum: float = 0.0
    weight_count: int = 0
    relabeled: int = 0
    samples: int = 0
    target_min: float = np.inf
    target_max: float = -np.inf

    def record_batch(self, batch):
        self.relabeled += int(np.count_nonzero(batch.relabeled))
        self.samples += len(batch)

    @staticmethod
    def _mean(values):
        return float(np.mean(values)) if len(values) else 0.0

    @property
    def mean_actor_loss(self):
        return self._mean(self.actor_losses)

    @property
    def mean_critic_loss(self):
        return self._mean(self.critic_losses)

    @property
    def mean_q(self):
        return self.q_sum / self.q_count if self.q_count else 0.0

    @property
    def mean_weight(self):
        return self.weight_sum / self.weight_count if self.weight_count else 0.0

    @property
    def relabel_fraction(self):
        return self.relabeled / self.samples if self.samples else 0.0


class AgentNets:
    """Online and target actor/critic plus input normalizers and optimizer moments."""

    def __init__(self, env, cfg, rng):
        spec = env.spec
        self.spec = spec
        self.reward_mode = RewardMode(env.reward_mode)
        self.a_max = spec.action_bound
        hidden = [cfg.hidden_units] * 3

        actor_dims = [spec.state_dim + spec.goal_dim, *hidden, spec.action_dim]
        critic_dims = [spec.state_dim + spec.goal_dim + spec.action_dim, *hidden, 1]
        self.actor = DenseNet(actor_dims, head=HEAD_BOUNDED, scale=self.a_max,
                              params=init_params(actor_dims, rng))
        self.critic = DenseNet(critic_dims, head=HEAD_LINEAR, params=init_params(critic_dims, rng))
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()

        self.state_norm = Normalizer(spec.state_dim)
        self.goal_norm = Normalizer(spec.goal_dim)
        self.actor_opt = AdamState.zeros_like(self.actor.params)
        self.critic_opt = AdamState.zeros_like(self.critic.params)
        # (state, action) pairs present in the data; discrete envs only
        self.action_support = np.zeros((spec.state_dim, spec.n_actions), dtype=bool) if spec.discrete else None

    def __repr__(self):
        return f"AgentNets({self.spec.env_id}, actor={self.actor!r}, critic={self.critic!r})"

    @property
    def discrete(self):
        return self.spec.discrete

    @property
    def action_candidates(self):
        return np.eye(self.spec.action_dim) * self.a_max

    def observe_episode(self, episode):
        """Fold a stored episode into the normalizers and, for discrete envs, the action support."""
        self.state_norm.update(episode.states)
        self.goal_norm.update(np.vstack([episode.achieved, episode.desired[None, :]]))
        if self.discrete:
            states = np.argmax(episode.states[:-1], axis=1)
            actions = np.argmax(episode.actions, axis=1)
            self.action_support[states, actions] = True

    def supported_actions(self, states):
        """
        Boolean (n, n_actions) mask of actions seen in each state. A state with
        no recorded action allows all of them.
        """
        rows = self.action_support[np.argmax(np.atleast_2d(states), axis=1)]
        rows[~rows.any(axis=1)] = True
        return rows

    def actor_input(self, states, goals):
        return np.concatenate([self.state_norm.normalize(states), self.goal_norm.normalize(goals)], axis=-1)

    def critic_input(self, states, goals, actions):
        return np.concatenate([self.actor_input(states, goals), np.asarray(actions) / self.a_max], axis=-1)

    def policy(self, states, goals, target=False):
        net = self.target_actor if target else self.actor
        return net(self.actor_input(states, goals))

    def q_value(self, states, goals, actions, target=False):
        net = self.target_critic if target else self.critic
        out = net(self.critic_input(states, goals, actions))
        return out[..., 0]

    def candidate_q(self, states, goals, target=False):
        """Q of every one-hot action, shape (n, n_actions)."""
        states = np.atleast_2d(states)
        goals = np.atleast_2d(goals)
        columns = [
            self.q_value(states, goals, np.tile(candidate, (states.shape[0], 1)), target=target)
            for candidate in self.action_candidates
        ]
        return np.stack(columns, axis=1)

    def supported_q(self, states, goals, target=False):
        """candidate_q with unsupported actions at -inf."""
        q = self.candidate_q(states, goals, target=target)
        return np.where(self.supported_actions(states), q, -np.inf)

    def state_value(self, states, goals, target=False):
        """
        V(s, g) = Q(s, pi(s, g), g). Discrete actions bootstrap with the best
        one-hot action among those the data has taken in s.
        """
        if self.discrete:
            return self.supported_q(states, goals, target=target).max(axis=1)
        return self.q_value(states, goals, self.policy(states, goals, target=target), target=target)


def q_target_bounds(gamma, reward_mode):
    reach = np.inf if gamma >= 1.0 else 1.0 / (1.0 - gamma)
    if reward_mode == RewardMode.INDICATOR:
        return 0.0, reach
    return -reach, 0.0


def _check_finite(name, values):
    if not np.all(np.isfinite(values)):
        bad = int(np.count_nonzero(~np.isfinite(values)))
        logger.error("Aborting: %d non-finite value(s) in %s", bad, name)
        raise NonFiniteError(f"{bad} non-finite value(s) in {name}")


def compute_q_target(batch, nets, cfg):
    """y = r + gamma * Q_target(s', pi_target(s', g), g), clipped to the reachable return range."""
    next_value = nets.state_value(batch.next_states, batch.goals, target=True)
    targets = batch.rewards + cfg.gamma * next_value
    _check_finite("Q targets", targets)
    lo, hi = q_target_bounds(cfg.gamma, nets.reward_mode)
    return np.clip(targets, lo, hi)


def critic_update(batch, nets, cfg, stats=None):
    targets = compute_q_target(batch, nets, cfg)
    inputs = nets.critic_input(batch.states, batch.goals, batch.actions)
    out, cache = forward_with_cache(nets.critic, inputs)
    q = out[:, 0]
    residual = q - targets
    loss = float(np.mean(residual ** 2))
    _check_finite("critic loss", loss)

    upstream = (2.0 / len(batch)) * residual[:, None]
    grad, _ = backward(nets.critic, inputs, upstream, cache=cache)
    nets.critic.params, nets.critic_opt = adam_step(nets.critic.params, grad, nets.critic_opt, cfg.lr_critic)

    if stats is not None:
        stats.critic_losses.append(loss)
        stats.q_sum += float(q.sum())
        stats.q_count += q.size
        stats.target_min = min(stats.target_min, float(targets.min()))
        stats.target_max = max(stats.target_max, float(targets.max()))
    return loss


def compute_advantage(batch, nets, cfg, value=None):
    """A = r + gamma * V(s', g) - V(s, g); ``value`` may carry V(s, g) when already computed."""
    value_next = nets.state_value(batch.next_states, batch.goals)
    if value is None:
        value = nets.state_value(batch.states, batch.goals)
    return batch.rewards + cfg.gamma * value_next - value


def wgcsl_weight(advantage, offset, threshold, cfg):
    """gamma**offset * clip(exp(A / temperature), lo, hi) * (1 if A > threshold else eps_min)."""
    advantage = np.asarray(advantage, dtype=np.float64)
    offset = np.asarray(offset)
    if np.any(offset < 0):
        raise ValueError("relabel offsets are non-negative")
    exponent = np.minimum(advantage / cfg.awr_temperature, np.log(cfg.clip_hi) + 1.0)
    clipped = np.clip(np.exp(exponent), cfg.clip_lo, cfg.clip_hi)
    best = np.where(advantage > threshold, 1.0, cfg.eps_min)
    weight = cfg.gamma ** offset * clipped * best
    return float(weight) if weight.ndim == 0 else weight


def imitation_weights(batch, nets, cfg, value=None):
    """Per-sample imitation weights; constants with respect to the actor."""
    if cfg.algo not in WEIGHTED_ALGOS:
        return np.ones(len(batch))
    advantage = compute_advantage(batch, nets, cfg, value=value)
    threshold = float(np.quantile(advantage, cfg.adv_quantile))
    return wgcsl_weight(advantage, batch.offsets, threshold, cfg)


def _actor_objective(batch, nets, cfg, weights=None):
    n = len(batch)
    inputs = nets.actor_input(batch.states, batch.goals)
    pi, actor_cache = forward_with_cache(nets.actor, inputs)
    loss = 0.0
    grad_pi = np.zeros_like(pi)
    q = None

    if cfg.algo in CRITIC_ACTOR_ALGOS:
        critic_in = nets.critic_input(batch.states, batch.goals, pi)
        out, critic_cache = forward_with_cache(nets.critic, critic_in)
        q = out[:, 0]
        loss += float(-q.mean())
        _, input_grad = backward(nets.critic, critic_in, np.full((n, 1), -1.0 / n), cache=critic_cache)
        grad_pi += input_grad[:, -pi.shape[1]:] / nets.a_max

        scaled = pi / nets.a_max
        loss += cfg.action_l2 * float(np.mean(np.sum(scaled ** 2, axis=1)))
        grad_pi += cfg.action_l2 * 2.0 * pi / (nets.a_max ** 2 * n)

    if cfg.algo in IMITATION_ALGOS:
        if weights is None:
            # Q(s, pi(s, g), g) is V(s, g) for continuous actions
            value = q if q is not None and not nets.discrete else None
            weights = imitation_weights(batch, nets, cfg, value=value)
        coefficient = cfg.eta if cfg.algo in (Algo.QWSL, Algo.QBC) else 1.0
        residual = pi - batch.actions
        loss += coefficient * float(np.mean(weights * np.sum(residual ** 2, axis=1)))
        grad_pi += coefficient * 2.0 * weights[:, None] * residual / n

    _check_finite("actor loss", loss)
    grad, _ = backward(nets.actor, inputs, grad_pi, cache=actor_cache)
    return loss, grad, weights


def actor_loss_and_grad(batch, nets, cfg, weights=None):
    """Actor objective for ``cfg.algo`` and its gradient with respect to the actor parameters."""
    loss, grad, _ = _actor_objective(batch, nets, cfg, weights)
    return loss, grad


def actor_update(batch, nets, cfg, stats=None):
    loss, grad, weights = _actor_objective(batch, nets, cfg)
    nets.actor.params, nets.actor_opt = adam_step(nets.actor.params, grad, nets.actor_opt, cfg.lr_actor)
    if stats is not None:
        stats.actor_losses.append(loss)
        if weights is not None:
            stats.weight_sum += float(np.sum(weights))
            stats.weight_count += weights.size
    return loss


def polyak_update(nets, cfg):
    retain = cfg.polyak_retain
    nets.target_actor.params = retain * nets.target_actor.params + (1.0 - retain) * nets.actor.params
    nets.target_critic.params = retain * nets.target_critic.params + (1.0 - retain) * nets.critic.params


def greedy_action(nets, state, goal, cfg):
    if nets.discrete:
        if cfg.algo in CRITIC_ACTOR_ALGOS:
            return int(np.argmax(nets.supported_q(state, goal)[0]))
        return int(np.argmax(nets.policy(state, goal)))
    return np.clip(nets.policy(state, goal), -nets.a_max, nets.a_max)


def select_action(nets, state, goal, cfg, rng, explore=False):
    """
    Greedy or exploratory action. Continuous: with probability random_eps a
    uniform box sample, otherwise the actor output plus Gaussian noise of std
    noise_eps * a_max. Discrete: epsilon-greedy over action indices.
    """
    if not explore:
        return greedy_action(nets, state, goal, cfg)

    u = rng.random()
    if nets.discrete:
        if u < cfg.random_eps:
            return int(rng.integers(nets.spec.n_actions))
        return greedy_action(nets, state, goal, cfg)

    if u < cfg.random_eps:
        return rng.uniform(-nets.a_max, nets.a_max, size=nets.spec.action_dim)
    noise = rng.normal(0.0, cfg.noise_eps * nets.a_max, size=nets.spec.action_dim)
    return np.clip(nets.policy(state, goal) + noise, -nets.a_max, nets.a_max)


def action_vector(spec, action):
    """Stored form of an action: one-hot for discrete envs."""
    if spec.discrete:
        vector = np.zeros(spec.action_dim)
        vector[int(action)] = spec.action_bound
        return vector
    return np.asarray(action, dtype=np.float64)


def rollout(env, act, rng, start=None, goal=None):
    """
    Run one episode with ``act(observation) -> action``.

    Returns (episode, success). Success is judged on the final state, or on
    any visited state for envs whose spec says so.
    """
    if start is None:
        obs = env.reset(rng)
    else:
        obs = env.reset_to(start, goal, rng=rng)

    states, achieved, actions = [obs.state], [obs.achieved], []
    success = env.is_success(obs.achieved, obs.desired) and env.spec.success_any_step
    terminal = False
    while not terminal:
        action = act(obs)
        obs, _, terminal = env.step(action)
        actions.append(action_vector(env.spec, action))
        states.append(obs.state)
        achieved.append(obs.achieved)
        if env.spec.success_any_step and env.is_success(obs.achieved, obs.desired):
            success = True
    if not env.spec.success_any_step:
        success = bool(env.is_success(obs.achieved, obs.desired))

    episode = Episode(states=np.array(states), actions=np.array(actions), achieved=np.array(achieved),
                      desired=obs.desired, env_id=env.spec.env_id)
    return episode, bool(success)


def evaluate(agent, env, cfg=None, n_rollouts=100, rng=None):
    """
    Greedy success rate over fresh start/goal draws. ``agent`` is an AgentNets
    (acting greedily under ``cfg``) or any ``policy(observation) -> action``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    if isinstance(agent, AgentNets):
        if cfg is None:
            raise ValueError("evaluating an AgentNets needs its AgentConfig")

        def act(obs):
            return greedy_action(agent, obs.state, obs.desired, cfg)
    else:
        act = agent
    successes = 0
    for _ in range(n_rollouts):
        _, success = rollout(env, act, rng)
        successes += success
    return successes / n_rollouts


NETWORK_NAMES = ("actor", "critic", "target_actor", "target_critic")


def save_agent(nets, path):
    return save_checkpoint(
        path,
        networks={name: getattr(nets, name) for name in NETWORK_NAMES},
        normalizers={"state": nets.state_norm, "goal": nets.goal_norm},
        extras={"action_support": None if nets.action_support is None else nets.action_support.tolist()},
    )


def load_agent(path, env, cfg):
    networks, normalizers, extras = load_checkpoint(path, with_extras=True)
    nets = AgentNets(env, cfg, np.random.default_rng(0))
    for name in NETWORK_NAMES:
        setattr(nets, name, networks[name])
    nets.state_norm = normalizers["state"]
    nets.goal_norm = normalizers["goal"]
    if extras.get("action_support") is not None:
        nets.action_support = np.array(extras["action_support"], dtype=bool)
    nets.actor_opt = AdamState.zeros_like(nets.actor.params)
    nets.critic_opt = AdamState.zeros_like(nets.critic.params)
    return nets
