import numpy as np

from goal_lab.agents import AgentConfig, AgentNets
from goal_lab.harness import RunConfig
from goal_lab.replay import RelabeledBatch


def tiny_agent_config(**overrides):
    values = {"hidden_units": 8, "batch_size": 16}
    values.update(overrides)
    return AgentConfig(**values)


def tiny_run_config(output_dir, env_id="grid-stitch", seeds=(1,), **overrides):
    agent_overrides = overrides.pop("agent", {})
    values = {
        "env_id": env_id,
        "agent": tiny_agent_config(**agent_overrides),
        "seeds": seeds,
        "epochs": 1,
        "cycles_per_epoch": 1,
        "episodes_per_cycle": 2,
        "batches_per_cycle": 2,
        "eval_rollouts": 4,
        "output_dir": str(output_dir),
        "record_wall_time": False,
    }
    values.update(overrides)
    return RunConfig(**values)


def make_nets(env, cfg=None, seed=0):
    return AgentNets(env, cfg or tiny_agent_config(), np.random.default_rng(seed))


def set_constant(net, value):
    """Zero every weight and bias, then set the output bias: the net outputs ``value`` everywhere."""
    net.params[:] = 0.0
    net.params[-net.output_dim:] = value


def make_batch(env, rewards, actions=None, offsets=None, seed=0):
    rng = np.random.default_rng(seed)
    spec = env.spec
    n = len(rewards)
    if actions is None:
        actions = rng.uniform(-spec.action_bound, spec.action_bound, size=(n, spec.action_dim))
    return RelabeledBatch(
        states=rng.uniform(-1.0, 1.0, size=(n, spec.state_dim)),
        actions=np.asarray(actions, dtype=np.float64),
        next_states=rng.uniform(-1.0, 1.0, size=(n, spec.state_dim)),
        goals=rng.uniform(-1.0, 1.0, size=(n, spec.goal_dim)),
        rewards=np.asarray(rewards, dtype=np.float64),
        offsets=np.zeros(n, dtype=np.int64) if offsets is None else np.asarray(offsets),
        relabeled=np.zeros(n, dtype=bool),
        t=np.zeros(n, dtype=np.int64),
        episode_index=np.zeros(n, dtype=np.int64),
    )
