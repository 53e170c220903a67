# goal_lab/analysis.py
"""
Ground truth and theory checks.

value_iteration gives the exact Q table of a finite env; tabular_q_learning
shows sampled Q-learning reaches it. stitching_probe rolls a policy out on
every (start, goal) pair and splits success by whether the pair ever shared a
trajectory in the training data. The objective estimators and
check_objective_ordering test that the combined objective bounds the weighted
and plain imitation objectives from above; check_gradients compares the
hand-written reverse pass against central finite differences.
"""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import AgentConfig, AgentNets, Algo, compute_advantage, greedy_action, rollout, wgcsl_weight
from .approximator import DenseNet, activation_pattern, backward, forward
from .envs import GridStitch, PointYMaze, RewardMode, reward_fn
from .exceptions import EmptyBufferError, ManifestMismatchError, UnsupportedEnvError

logger = logging.getLogger(__name__)

VALUE_TOLERANCE = 1e-10
CHECK_TOLERANCE = 1e-9


# --- tabular oracle ---

@dataclass
class TabularQ:
    """Q[s, a, g] over the enumerated states, actions and goal states of a finite env."""

    values: np.ndarray
    gamma: float
    states: tuple = GridStitch.STATES
    actions: tuple = GridStitch.ACTIONS

    def q(self, state, action, goal):
        return float(self.values[self.states.index(state), self.actions.index(action), self.states.index(goal)])

    def best_actions(self, state, goal, tol=1e-6):
        """Indices of every action within ``tol`` of the maximum."""
        row = self.values[state, :, goal]
        return set(np.flatnonzero(row >= row.max() - tol).tolist())

    def greedy(self, state, goal):
        return int(np.argmax(self.values[state, :, goal]))

    def policy(self):
        return lambda obs: self.greedy(int(np.argmax(obs.state)), int(np.argmax(obs.desired)))


def _finite_problem(env, reward_mode):
    if not hasattr(env, "transition_table"):
        raise UnsupportedEnvError(f"{env.spec.env_id} does not expose a transition table")
    table = env.transition_table()
    n_states, n_actions = table.shape
    mode = RewardMode(reward_mode or env.reward_mode)
    eye = np.eye(n_states)

    achieved_index = np.tile(np.arange(n_states)[:, None], (1, n_actions)) if env.reward_on_current else table
    rewards = np.empty((n_states, n_actions, n_states))
    for g in range(n_states):
        rewards[:, :, g] = reward_fn(eye[achieved_index], eye[g], mode, env.spec.threshold, env.squared_distance)
    if not np.all(np.isfinite(rewards)):
        raise ValueError("reward table is not finite")
    return table, rewards, mode


def _lowest_return(gamma, mode):
    if mode == RewardMode.INDICATOR:
        return 0.0
    return -1.0 / (1.0 - gamma) if gamma < 1.0 else -1e6


def _goal_values(rewards, gamma):
    """Return of staying on each goal forever: r(g, g) / (1 - gamma)."""
    on_goal = np.array([rewards[g, :, g].max() for g in range(rewards.shape[0])])
    if gamma < 1.0:
        return on_goal / (1.0 - gamma)
    if np.any(on_goal != 0.0):
        raise ValueError("rewards paid on the goal need gamma < 1")
    return on_goal


def value_iteration(env, gamma=0.98, reward_mode=None, tol=VALUE_TOLERANCE, max_sweeps=100_000):
    """
    Fixed point of Q(s,a,g) = r(s',g) + gamma * max_a' Q(s',a',g) with
    Q(g, ., g) pinned to the return of staying on the goal: 0 for sparse
    rewards, 1 / (1 - gamma) for indicator rewards.
    """
    table, rewards, _ = _finite_problem(env, reward_mode)
    n_states, n_actions = table.shape
    goal_values = _goal_values(rewards, gamma)
    pinned = np.zeros((n_states, n_actions, n_states), dtype=bool)
    pinned_values = np.zeros((n_states, n_actions, n_states))
    for g in range(n_states):
        pinned[g, :, g] = True
        pinned_values[g, :, g] = goal_values[g]

    q = np.zeros((n_states, n_actions, n_states))
    for sweep in range(1, max_sweeps + 1):
        best = q.max(axis=1)  # (s, g)
        updated = rewards + gamma * best[table, :]
        updated[pinned] = pinned_values[pinned]
        change = float(np.max(np.abs(updated - q)))
        q = updated
        if change <= tol:
            logger.debug("Value iteration converged after %d sweeps", sweep)
            break
    else:
        logger.warning("Value iteration stopped after %d sweeps, last change %.3g", max_sweeps, change)
    return TabularQ(values=q, gamma=gamma)


def bellman_residual(tabular, env, reward_mode=None):
    """Largest |Q - (r + gamma * max Q')| over all non-pinned entries."""
    table, rewards, _ = _finite_problem(env, reward_mode)
    q = tabular.values
    backup = rewards + tabular.gamma * q.max(axis=1)[table, :]
    residual = np.abs(q - backup)
    for g in range(q.shape[2]):
        residual[g, :, g] = 0.0
    return float(residual.max())


def tabular_q_learning(env, gamma=0.98, n_episodes=50_000, explore_eps=0.5, step_decay=1e-3,
                       reward_mode=None, rng=None):
    """
    Sampled Q-learning with exploring starts over every (state, goal) pair,
    epsilon-greedy actions and step size 1 / (1 + visits * step_decay).
    Entries start at the lowest achievable return.
    """
    rng = rng if rng is not None else np.random.default_rng()
    table, rewards, mode = _finite_problem(env, reward_mode)
    n_states, n_actions = table.shape
    horizon = env.spec.horizon

    goal_values = _goal_values(rewards, gamma)
    q = np.full((n_states, n_actions, n_states), _lowest_return(gamma, mode))
    for g in range(n_states):
        q[g, :, g] = goal_values[g]
    visits = np.zeros_like(q, dtype=np.int64)
    pairs = [(s, g) for s in range(n_states) for g in range(n_states) if s != g]

    for _ in range(n_episodes):
        state, goal = pairs[int(rng.integers(len(pairs)))]
        for _ in range(horizon):
            if rng.random() < explore_eps:
                action = int(rng.integers(n_actions))
            else:
                action = int(np.argmax(q[state, :, goal]))
            next_state = int(table[state, action])
            bootstrap = goal_values[goal] if next_state == goal else q[next_state, :, goal].max()
            alpha = 1.0 / (1.0 + visits[state, action, goal] * step_decay)
            target = rewards[state, action, goal] + gamma * bootstrap
            q[state, action, goal] += alpha * (target - q[state, action, goal])
            visits[state, action, goal] += 1
            if next_state == goal:
                break
            state = next_state
    return TabularQ(values=q, gamma=gamma)


@dataclass(frozen=True)
class OracleComparison:
    sup_norm: float
    argmax_mismatches: list

    @property
    def argmax_agree(self):
        return not self.argmax_mismatches


def compare_to_oracle(learned, oracle, tol=1e-6):
    """Sup-norm gap and the (state, goal) pairs whose greedy action is not optimal."""
    mismatches = []
    n_states = oracle.values.shape[0]
    for s in range(n_states):
        for g in range(n_states):
            if s == g:
                continue
            if learned.greedy(s, g) not in oracle.best_actions(s, g, tol=tol):
                mismatches.append((oracle.states[s], oracle.states[g]))
    return OracleComparison(sup_norm=float(np.max(np.abs(learned.values - oracle.values))),
                            argmax_mismatches=mismatches)


# --- stitching probe ---

@dataclass(frozen=True)
class PairOutcome:
    start: str
    goal: str
    seen: bool
    success_rate: float
    first_action: str


@dataclass
class StitchReport:
    env_id: str
    outcomes: list = field(default_factory=list)

    def _rate(self, seen):
        rates = [o.success_rate for o in self.outcomes if o.seen == seen]
        return float(np.mean(rates)) if rates else float("nan")

    @property
    def seen_success(self):
        return self._rate(True)

    @property
    def cross_success(self):
        return self._rate(False)


def probe_pairs(env):
    if env.spec.env_id == GridStitch.spec.env_id:
        return [(s, g) for s in GridStitch.START_STATES for g in GridStitch.GOAL_STATES]
    if env.spec.env_id == PointYMaze.spec.env_id:
        return [(s, g) for s in PointYMaze.START_REGIONS for g in PointYMaze.GOAL_REGIONS]
    raise UnsupportedEnvError(f"no stitching pairs defined for {env.spec.env_id}")


def as_policy(agent, cfg=None):
    """Policy callable from a TabularQ, an AgentNets (with its config) or a callable."""
    if isinstance(agent, TabularQ):
        return agent.policy()
    if isinstance(agent, AgentNets):
        if cfg is None:
            raise ValueError("an AgentNets policy needs its AgentConfig")
        return lambda obs: greedy_action(agent, obs.state, obs.desired, cfg)
    if callable(agent):
        return agent
    raise TypeError(f"cannot build a policy from {type(agent).__name__}")


def _describe_action(env, action):
    if env.spec.discrete:
        return GridStitch.ACTIONS[int(action)]
    return "(" + ", ".join(f"{x:.3f}" for x in np.asarray(action)) + ")"


def stitching_probe(agent, env, manifest, n_per_pair=10, rng=None, cfg=None):
    """Greedy rollouts on every (start, goal) pair, split into seen and cross pairs."""
    rng = rng if rng is not None else np.random.default_rng()
    pairs = probe_pairs(env)
    if manifest.env_id != env.spec.env_id:
        raise ManifestMismatchError(f"manifest is for {manifest.env_id}, env is {env.spec.env_id}")
    known = {label for pair in pairs for label in pair}
    unknown = {label for pair in manifest.pairs for label in pair} - known
    if unknown:
        raise ManifestMismatchError(f"manifest names regions {sorted(unknown)} unknown to {env.spec.env_id}")

    act = as_policy(agent, cfg)
    discrete = env.spec.discrete
    report = StitchReport(env_id=env.spec.env_id)
    for start_label, goal_label in pairs:
        successes = 0
        first_action = None
        # GridStitch is deterministic; one rollout settles the pair.
        n_rollouts = 1 if discrete else n_per_pair
        for _ in range(n_rollouts):
            if discrete:
                start, goal = GridStitch.one_hot(start_label), GridStitch.one_hot(goal_label)
            else:
                start = env.sample_start(rng, region=start_label)
                goal = env.sample_goal(rng, region=goal_label)
            episode, success = rollout(env, act, rng, start=start, goal=goal)
            successes += success
            if first_action is None:
                first_action = int(np.argmax(episode.actions[0])) if discrete else episode.actions[0]
        report.outcomes.append(PairOutcome(
            start=start_label,
            goal=goal_label,
            seen=manifest.seen(start_label, goal_label),
            success_rate=successes / n_rollouts,
            first_action=_describe_action(env, first_action),
        ))
    logger.info("Stitching probe on %s: seen %.2f, cross %.2f",
                env.spec.env_id, report.seen_success, report.cross_success)
    return report


# --- objective ordering ---

@dataclass(frozen=True)
class ObjectiveEstimates:
    gcsl: float
    wgcsl: float
    qwsl: float

    def ordered(self, tol=CHECK_TOLERANCE):
        return self.qwsl >= self.wgcsl - tol and self.wgcsl >= self.gcsl - tol


def gaussian_log_likelihood(actions, means, sigma=1.0):
    residual = np.asarray(actions, dtype=np.float64) - np.asarray(means, dtype=np.float64)
    dim = residual.shape[-1]
    return -0.5 * np.sum(residual ** 2, axis=-1) / sigma ** 2 - 0.5 * dim * np.log(2.0 * np.pi * sigma ** 2)


def objective_estimates(actions, means, advantages, offsets, rewards, cfg, sigma=1.0, cap_weights=True):
    """
    Plain, weighted and combined imitation objectives on one batch.

    The policy is a Gaussian of std ``sigma`` centred on the actor output.
    With ``cap_weights`` the advantage factor exp_clip(A) * eps(A) is
    capped at 1, which makes every weight at most 1 against a log-likelihood
    that is never positive for sigma >= 1/sqrt(2*pi). Without it raw weights
    are used and the ordering can fail.
    """
    advantages = np.asarray(advantages, dtype=np.float64)
    if advantages.size == 0:
        raise EmptyBufferError("cannot estimate objectives on an empty batch")
    offsets = np.asarray(offsets)
    log_likelihood = gaussian_log_likelihood(actions, means, sigma)

    threshold = float(np.quantile(advantages, cfg.adv_quantile))
    factor = wgcsl_weight(advantages, np.zeros_like(offsets), threshold, cfg)
    factor = np.atleast_1d(factor)
    if cap_weights:
        factor = np.minimum(factor, 1.0)
    weights = cfg.gamma ** offsets * factor

    j_gcsl = float(np.mean(log_likelihood))
    j_wgcsl = float(np.mean(weights * log_likelihood))
    j_qwsl = float(np.mean(cfg.gamma ** offsets * np.asarray(rewards, dtype=np.float64))) + cfg.eta * j_wgcsl
    return ObjectiveEstimates(gcsl=j_gcsl, wgcsl=j_wgcsl, qwsl=j_qwsl)


def estimate_objectives(batch, nets, cfg, sigma=1.0, cap_weights=True):
    """Objective estimates on a replay batch; rewards are taken in indicator form."""
    if len(batch) == 0:
        raise EmptyBufferError("cannot estimate objectives on an empty batch")
    rewards = batch.rewards + 1.0 if nets.reward_mode == RewardMode.SPARSE else batch.rewards
    return objective_estimates(
        actions=batch.actions,
        means=nets.policy(batch.states, batch.goals),
        advantages=compute_advantage(batch, nets, cfg),
        offsets=batch.offsets,
        rewards=rewards,
        cfg=cfg,
        sigma=sigma,
        cap_weights=cap_weights,
    )


@dataclass(frozen=True)
class OrderingCheck:
    n_batches: int
    violations: int
    smallest_gap: float


def synthetic_batch(rng, batch_size=64, action_dim=2, max_offset=10):
    means = rng.normal(size=(batch_size, action_dim))
    spread = rng.uniform(0.0, 2.0)
    return {
        "actions": means + spread * rng.normal(size=(batch_size, action_dim)),
        "means": means,
        "advantages": rng.normal(0.0, 2.0, size=batch_size),
        "offsets": rng.integers(0, max_offset + 1, size=batch_size),
        "rewards": (rng.random(batch_size) < 0.5).astype(np.float64),
    }


def check_objective_ordering(n_batches=1000, rng=None, cap_weights=True, batch_size=64,
                             action_dim=2, tol=CHECK_TOLERANCE, base_cfg=None):
    """
    Count random batches where combined >= weighted >= plain fails by more than ``tol``.
    gamma and eta are redrawn in (0, 1] for every batch.
    """
    rng = rng if rng is not None else np.random.default_rng()
    base_cfg = base_cfg or AgentConfig(algo=Algo.QWSL)
    violations = 0
    smallest_gap = np.inf
    for _ in range(n_batches):
        cfg = replace(base_cfg, gamma=1.0 - rng.random(), eta=1.0 - rng.random())
        estimates = objective_estimates(**synthetic_batch(rng, batch_size, action_dim), cfg=cfg,
                                        cap_weights=cap_weights)
        gap = min(estimates.qwsl - estimates.wgcsl, estimates.wgcsl - estimates.gcsl)
        smallest_gap = min(smallest_gap, gap)
        if not estimates.ordered(tol):
            violations += 1
    if violations:
        logger.warning("Objective ordering failed on %d of %d batches", violations, n_batches)
    return OrderingCheck(n_batches=n_batches, violations=violations, smallest_gap=float(smallest_gap))


# --- gradient check ---

@dataclass(frozen=True)
class GradientCheck:
    n_nets: int
    n_checked: int
    n_skipped: int
    max_rel_error: float


def relative_error(analytic, numeric, floor=1e-4):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(n_nets=100, rng=None, coords_per_net=20, h=1e-5):
    """
    Central differences against backward() on random three-hidden-layer nets.

    Coordinates whose perturbation flips a ReLU are skipped; the difference
    quotient is meaningless across a kink.
    """
    rng = rng if rng is not None else np.random.default_rng()
    max_error = 0.0
    checked = skipped = 0
    for _ in range(n_nets):
        dims = [int(rng.integers(2, 7)), *rng.integers(3, 9, size=3).tolist(), int(rng.integers(1, 4))]
        head = ("linear", "bounded")[int(rng.integers(2))]
        net = DenseNet(dims, head=head, scale=float(rng.uniform(0.5, 2.0)), seed=int(rng.integers(2 ** 31)))
        x = rng.normal(size=(3, dims[0]))
        upstream = rng.normal(size=(3, dims[-1]))
        param_grad, input_grad = backward(net, x, upstream)
        base_pattern = activation_pattern(net, x)

        def objective(candidate):
            return float(np.sum(upstream * forward(candidate, x)))

        coords = rng.choice(net.n_params, size=min(coords_per_net, net.n_params), replace=False)
        for k in coords:
            plus, minus = net.copy(), net.copy()
            plus.params[k] += h
            minus.params[k] -= h
            if (not np.array_equal(activation_pattern(plus, x), base_pattern)
                    or not np.array_equal(activation_pattern(minus, x), base_pattern)):
                skipped += 1
                continue
            numeric = (objective(plus) - objective(minus)) / (2.0 * h)
            max_error = max(max_error, relative_error(param_grad[k], numeric))
            checked += 1

        row, col = int(rng.integers(3)), int(rng.integers(dims[0]))
        x_plus, x_minus = x.copy(), x.copy()
        x_plus[row, col] += h
        x_minus[row, col] -= h
        if (np.array_equal(activation_pattern(net, x_plus), base_pattern)
                and np.array_equal(activation_pattern(net, x_minus), base_pattern)):
            numeric = (np.sum(upstream * forward(net, x_plus)) - np.sum(upstream * forward(net, x_minus))) / (2.0 * h)
            max_error = max(max_error, relative_error(input_grad[row, col], numeric))
            checked += 1
        else:
            skipped += 1

    logger.info("Gradient check: %d coordinates, %d skipped, max relative error %.3g",
                checked, skipped, max_error)
    return GradientCheck(n_nets=n_nets, n_checked=checked, n_skipped=skipped, max_rel_error=max_error)
