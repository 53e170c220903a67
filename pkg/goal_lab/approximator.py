# goal_lab/approximator.py
"""
Dense feed-forward approximators for the actor and the critic.

Everything here is plain numpy in float64: forward and reverse passes are
written out by hand so the actor loss can pull dQ/da out of the critic.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, NonFiniteError

logger = logging.getLogger(__name__)

HEAD_LINEAR = "linear"
HEAD_BOUNDED = "bounded"

OUTPUT_HEADS = (HEAD_LINEAR, HEAD_BOUNDED)

# float64 tanh saturates to exactly 1; the bounded head stays strictly inside its scale.
TANH_LIMIT = 1.0 - 1e-12


def param_count(layer_dims):
    return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]))


def init_params(layer_dims, rng):
    """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases alike."""
    chunks = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(chunks)


class DenseNet:
    """
    ReLU network with a linear or bounded (scale * tanh) output head.

    Parameters are one flat float64 vector, layer by layer: the weight matrix
    (fan_in x fan_out, row-major) then the bias.
    """

    def __init__(self, layer_dims, head=HEAD_LINEAR, scale=1.0, params=None, seed=None):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise DimensionError(f"layer_dims needs at least two positive sizes, got {layer_dims!r}")
        if head not in OUTPUT_HEADS:
            raise ValueError(f"unknown output head {head!r}")
        if scale <= 0:
            raise ValueError("output scale must be positive")

        self.layer_dims = dims
        self.head = head
        self.scale = float(scale)

        if params is None:
            params = init_params(dims, np.random.default_rng(seed))
        params = np.array(params, dtype=np.float64)
        if params.shape != (param_count(dims),):
            raise DimensionError(
                f"expected {param_count(dims)} parameters for {dims}, got {params.size}"
            )
        self.params = params

    def __repr__(self):
        return f"DenseNet({list(self.layer_dims)}, head={self.head!r})"

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def output_dim(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return self.params.size

    def layers(self, params=None):
        """Yield (weights, bias) views into the flat parameter vector."""
        params = self.params if params is None else params
        offset = 0
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            weights = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = params[offset:offset + fan_out]
            offset += fan_out
            yield weights, bias

    def copy(self):
        return DenseNet(self.layer_dims, self.head, self.scale, params=self.params)

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self):
        return {
            "layer_dims": list(self.layer_dims),
            "head": self.head,
            "scale": self.scale,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["layer_dims"], head=data.get("head", HEAD_LINEAR),
                   scale=data.get("scale", 1.0), params=data["params"])


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != net.input_dim:
        raise DimensionError(f"{net!r} expects inputs of size {net.input_dim}, got shape {x.shape}")
    return batch, single


def _forward_cache(net, batch):
    activations = [batch]
    pre_activations = []
    layers = list(net.layers())
    hidden = batch
    for index, (weights, bias) in enumerate(layers):
        z = hidden @ weights + bias
        pre_activations.append(z)
        if index < len(layers) - 1:
            hidden = np.maximum(z, 0.0)
            activations.append(hidden)
    if net.head == HEAD_BOUNDED:
        out = net.scale * np.clip(np.tanh(z), -TANH_LIMIT, TANH_LIMIT)
    else:
        out = z
    return out, activations, pre_activations


def forward(net, x):
    """Network output for one input vector or a batch of rows."""
    batch, single = _as_batch(net, x)
    out, _, _ = _forward_cache(net, batch)
    return out[0] if single else out


def forward_with_cache(net, x):
    """Batch output plus the intermediate values backward() would otherwise recompute."""
    batch, _ = _as_batch(net, x)
    out, activations, pre_activations = _forward_cache(net, batch)
    return out, (activations, pre_activations)


def activation_pattern(net, x):
    """Flat boolean mask of active hidden ReLUs for the given input(s)."""
    batch, _ = _as_batch(net, x)
    _, _, pre_activations = _forward_cache(net, batch)
    return np.concatenate([(z > 0.0).ravel() for z in pre_activations[:-1]])


def backward(net, x, upstream, cache=None):
    """
    Reverse pass of upstream . output.

    Returns (param_grad, input_grad). For a batch, param_grad is summed over
    rows and input_grad keeps one row per input.
    ``cache`` is the second value of forward_with_cache() on the same input.
    """
    batch, single = _as_batch(net, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if single:
        upstream = upstream[None, :] if upstream.ndim == 1 else upstream
    if upstream.shape != (batch.shape[0], net.output_dim):
        raise DimensionError(
            f"upstream shape {upstream.shape} does not match output {(batch.shape[0], net.output_dim)}"
        )

    if cache is None:
        _, activations, pre_activations = _forward_cache(net, batch)
    else:
        activations, pre_activations = cache
    if net.head == HEAD_BOUNDED:
        delta = upstream * net.scale * (1.0 - np.tanh(pre_activations[-1]) ** 2)
    else:
        delta = upstream

    layers = list(net.layers())
    grads = []
    for index in reversed(range(len(layers))):
        weights, _ = layers[index]
        grads.append((activations[index].T @ delta, delta.sum(axis=0)))
        delta = delta @ weights.T
        if index > 0:
            delta = delta * (pre_activations[index - 1] > 0.0)

    param_grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in reversed(grads)])
    input_grad = delta[0] if single else delta
    return param_grad, input_grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs):
        params = np.asarray(params, dtype=np.float64)
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), **kwargs)


def adam_step(params, grad, state, lr):
    """One bias-corrected Adam update. Returns (new_params, new_state)."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise DimensionError(
            f"Adam shapes disagree: params {params.shape}, grad {grad.shape}, moments {state.m.shape}"
        )
    if not np.all(np.isfinite(grad)):
        bad = int(np.count_nonzero(~np.isfinite(grad)))
        logger.error("Aborting update: %d of %d gradient components are not finite", bad, grad.size)
        raise NonFiniteError(f"{bad} non-finite gradient components at Adam step {state.t + 1}")

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m=m, v=v, t=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps)


@dataclass
class Normalizer:
    """Running mean/std standardizer with pre- and post-clipping."""

    size: int
    eps_std: float = 0.01
    obs_clip: float = 200.0
    norm_clip: float = 5.0
    total: np.ndarray = field(default=None, repr=False)
    total_sq: np.ndarray = field(default=None, repr=False)
    count: int = 0

    def __post_init__(self):
        if self.total is None:
            self.total = np.zeros(self.size)
        if self.total_sq is None:
            self.total_sq = np.zeros(self.size)
        self.total = np.asarray(self.total, dtype=np.float64)
        self.total_sq = np.asarray(self.total_sq, dtype=np.float64)

    def _rows(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.size:
            raise DimensionError(f"normalizer of size {self.size} got shape {x.shape}")
        return np.clip(x, -self.obs_clip, self.obs_clip)

    def update(self, batch):
        rows = self._rows(batch).reshape(-1, self.size)
        self.total += rows.sum(axis=0)
        self.total_sq += (rows ** 2).sum(axis=0)
        self.count += rows.shape[0]

    @property
    def mean(self):
        if self.count == 0:
            return np.zeros(self.size)
        return self.total / self.count

    @property
    def std(self):
        if self.count == 0:
            return np.ones(self.size)
        variance = np.maximum(self.total_sq / self.count - self.mean ** 2, 0.0)
        return np.maximum(np.sqrt(variance), self.eps_std)

    def normalize(self, x):
        standardized = (self._rows(x) - self.mean) / self.std
        return np.clip(standardized, -self.norm_clip, self.norm_clip)

    def to_dict(self):
        return {
            "size": self.size,
            "eps_std": self.eps_std,
            "obs_clip": self.obs_clip,
            "norm_clip": self.norm_clip,
            "total": self.total.tolist(),
            "total_sq": self.total_sq.tolist(),
            "count": self.count,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def save_checkpoint(path, networks, normalizers, extras=None):
    """Write networks, normalizers and any JSON-ready extras as one document."""
    document = {
        "networks": {name: net.to_dict() for name, net in networks.items()},
        "normalizers": {name: norm.to_dict() for name, norm in normalizers.items()},
        "extras": extras or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


def load_checkpoint(path, with_extras=False):
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    networks = {name: DenseNet.from_dict(data) for name, data in document["networks"].items()}
    normalizers = {name: Normalizer.from_dict(data) for name, data in document["normalizers"].items()}
    if with_extras:
        return networks, normalizers, document.get("extras", {})
    return networks, normalizers
