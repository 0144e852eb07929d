"""Small feed-forward approximators with hand-written reverse-mode
gradients, an Adam optimizer, a ring replay buffer, and the one-step
delta dynamics model.

The networks are plain numpy: softplus hidden layers, identity output.
``MLP.backward`` returns exact gradients of a downstream scalar loss with
respect to every parameter and, when asked, the input batch - that input
gradient is what the actor update chains through the critics. Everything
is float64 and deterministic given the generator streams.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import Transition


def softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + e^x), overflow-safe: for large x this is x to double precision.
    return np.where(x > 30.0, x, np.log1p(np.exp(np.minimum(x, 30.0))))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class OptimSpec:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class MLP:
    """Fully-connected net: softplus hidden layers, linear output.

    forward accepts (d,) or (N, d); caches enough to run backward once.
    """

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator | None = None,
                 out_scale: float = 1.0):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = rng or np.random.default_rng(0)
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes, layer_sizes[1:])):
            scale = np.sqrt(2.0 / fan_in)
            if i == len(layer_sizes) - 2:
                scale *= out_scale
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self._cache = None

    # -- parameter plumbing -------------------------------------------------

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def copy(self) -> "MLP":
        dup = MLP.__new__(MLP)
        dup.layer_sizes = list(self.layer_sizes)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup._cache = None
        return dup

    def set_params_from(self, other: "MLP") -> None:
        for dst, src in zip(self.params, other.params):
            dst[...] = src

    def zero_params(self) -> None:
        for p in self.params:
            p[...] = 0.0

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    # -- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, cache: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        h = np.atleast_2d(x)
        if h.shape[1] != self.layer_sizes[0]:
            raise ValueError(f"input width {h.shape[1]} != {self.layer_sizes[0]}")
        acts = [h]
        pre = []
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < n_layers - 1:
                pre.append(z)
                h = softplus(z)
                acts.append(h)
            else:
                h = z
        self._cache = (acts, pre) if cache else None
        return h[0] if single else h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def backward(self, d_out: np.ndarray, need_input_grad: bool = False):
        """Backprop ``d_out`` (dLoss/dOutput for the cached batch).

        Returns (grads, d_input) where grads aligns with ``self.params``
        (weights then biases); d_input is None unless requested.
        """
        if self._cache is None:
            raise RuntimeError("call forward(..., cache=True) first")
        acts, pre = self._cache
        d = np.atleast_2d(np.asarray(d_out, dtype=float))
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] = acts[i].T @ d
            gb[i] = d.sum(axis=0)
            if i > 0 or need_input_grad:
                d = d @ self.weights[i].T
                if i > 0:
                    d = d * sigmoid(pre[i - 1])
        self._cache = None
        d_input = d if need_input_grad else None
        return gw + gb, d_input


class Adam:
    """Adaptive-moment updates with bias correction over a parameter list."""

    def __init__(self, params: list[np.ndarray], spec: OptimSpec):
        self.params = params
        self.spec = spec
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        s = self.spec
        self.t += 1
        bc1 = 1.0 - s.beta1 ** self.t
        bc2 = 1.0 - s.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            p -= s.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + s.eps)


def optim_step(params: list[np.ndarray], grads: list[np.ndarray],
               state: Adam) -> None:
    """One optimizer update; ``state`` carries moments and the step count."""
    if params is not state.params:
        raise ValueError("state was built for a different parameter list")
    state.step(grads)


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    shaped_rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.obs)

    @staticmethod
    def concat(parts: list["Batch"]) -> "Batch":
        return Batch(*[np.concatenate([getattr(p, f) for p in parts])
                       for f in ("obs", "actions", "rewards", "shaped_rewards",
                                 "next_obs", "dones")])


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored as flat arrays.

    Stores observation-space vectors (whatever the trainer feeds it),
    raw and shaped rewards, and done flags. Sampling is uniform without
    replacement within a batch and deterministic under a fixed generator.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.shaped_rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def add(self, obs, action, reward: float, shaped_reward: float,
            next_obs, done: bool) -> None:
        i = self._head
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.shaped_rewards[i] = shaped_reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_transition(self, t: Transition, observe=None) -> None:
        f = observe if observe is not None else (lambda s: s)
        self.add(f(t.state), t.action, t.reward, t.shaped_reward,
                 f(t.next_state), t.done)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if n <= 0:
            raise ValueError("batch size must be positive")
        n = min(n, self.size)
        idx = rng.choice(self.size, size=n, replace=False)
        return Batch(self.obs[idx].copy(), self.actions[idx].copy(),
                     self.rewards[idx].copy(), self.shaped_rewards[idx].copy(),
                     self.next_obs[idx].copy(), self.dones[idx].copy())

    def all(self) -> Batch:
        return Batch(self.obs[:self.size].copy(), self.actions[:self.size].copy(),
                     self.rewards[:self.size].copy(),
                     self.shaped_rewards[:self.size].copy(),
                     self.next_obs[:self.size].copy(), self.dones[:self.size].copy())


def sample_batch(buffer: ReplayBuffer, n: int, rng: np.random.Generator) -> Batch:
    return buffer.sample(n, rng)


# ---------------------------------------------------------------------------
# Normalization and the dynamics model
# ---------------------------------------------------------------------------

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(x: np.ndarray, floor: float = 1e-6) -> "NormStats":
        x = np.atleast_2d(x)
        return NormStats(x.mean(axis=0), np.maximum(x.std(axis=0), floor))

    @staticmethod
    def identity(dim: int) -> "NormStats":
        return NormStats(np.zeros(dim), np.ones(dim))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


class DynamicsModel:
    """One-step model: predicts the next observation as obs + scaled net output.

    Inputs are (normalized obs, action); the target is the observation
    delta scaled by its per-dimension std (no mean shift, so a zeroed net
    is exactly the identity map).
    """

    def __init__(self, obs_dim: int, action_dim: int, hidden: tuple[int, ...] = (128, 128),
                 rng: np.random.Generator | None = None,
                 obs_norm: NormStats | None = None):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.net = MLP([obs_dim + action_dim, *hidden, obs_dim], rng=rng, out_scale=0.1)
        self.obs_norm = obs_norm or NormStats.identity(obs_dim)
        self.delta_scale = np.ones(obs_dim)

    def _inputs(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        obs2 = np.atleast_2d(obs)
        act2 = np.atleast_2d(actions)
        return np.concatenate([self.obs_norm.normalize(obs2), act2], axis=1)

    def predict(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        single = np.asarray(obs).ndim == 1
        out = np.atleast_2d(obs) + self.net.forward(self._inputs(obs, actions)) * self.delta_scale
        return out[0] if single else out


@dataclass
class FitReport:
    train_losses: list[float]
    heldout_delta_rmse: float   # in normalized delta units
    heldout_state_mae: float    # mean L2 error of the raw next-state prediction
    n_train: int
    n_heldout: int
    discarded_nonfinite: int = 0


def fit_dynamics(model: DynamicsModel, buffer: ReplayBuffer, spec: OptimSpec,
                 epochs: int, rng: np.random.Generator,
                 adam: Adam | None = None, heldout_frac: float = 0.2) -> FitReport:
    """Minimize MSE of the normalized observation delta.

    A deterministic held-out split reports one-step generalization. When
    the buffer is smaller than the batch size, training runs on the full
    buffer each step.
    """
    data = buffer.all()
    n = len(data)
    deltas = data.next_obs - data.obs
    model.delta_scale = np.maximum(np.std(deltas, axis=0), 1e-6)
    perm = rng.permutation(n)
    n_held = min(int(n * heldout_frac), n - 1) if n > 4 else 0
    held, train = perm[:n_held], perm[n_held:]
    adam = adam or Adam(model.net.params, spec)

    x_train = model._inputs(data.obs[train], data.actions[train])
    y_train = deltas[train] / model.delta_scale
    losses = []
    b = min(spec.batch_size, len(train))
    for _ in range(max(1, epochs)):
        order = rng.permutation(len(train))
        epoch_loss = 0.0
        count = 0
        for start in range(0, len(train), b):
            idx = order[start:start + b]
            pred = model.net.forward(x_train[idx], cache=True)
            err = pred - y_train[idx]
            loss = float(np.mean(err ** 2))
            grads, _ = model.net.backward(2.0 * err / err.size)
            adam.step(grads)
            epoch_loss += loss * len(idx)
            count += len(idx)
        losses.append(epoch_loss / max(count, 1))

    if n_held:
        pred = model.predict(data.obs[held], data.actions[held])
        delta_err = (pred - data.next_obs[held]) / model.delta_scale
        rmse = float(np.sqrt(np.mean(delta_err ** 2)))
        mae = float(np.mean(np.linalg.norm(pred - data.next_obs[held], axis=1)))
    else:
        rmse, mae = float("nan"), float("nan")
    return FitReport(losses, rmse, mae, len(train), n_held)


# ---------------------------------------------------------------------------
# Checkpoints: JSON with full-precision floats.
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def net_to_json(net: MLP, norm: NormStats | None = None) -> dict:
    return {
        "version": CHECKPOINT_VERSION,
        "layer_sizes": net.layer_sizes,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "norm_stats": None if norm is None else
            {"mean": norm.mean.tolist(), "std": norm.std.tolist()},
    }


def net_from_json(obj: dict) -> tuple[MLP, NormStats | None]:
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    net = MLP(obj["layer_sizes"])
    net.weights = [np.asarray(w, dtype=float) for w in obj["weights"]]
    net.biases = [np.asarray(b, dtype=float) for b in obj["biases"]]
    norm = None
    if obj.get("norm_stats"):
        norm = NormStats(np.asarray(obj["norm_stats"]["mean"], dtype=float),
                         np.asarray(obj["norm_stats"]["std"], dtype=float))
    return net, norm


def save_checkpoint(path, net: MLP, norm: NormStats | None = None) -> None:
    with open(path, "w") as f:
        json.dump(net_to_json(net, norm), f)


def load_checkpoint(path) -> tuple[MLP, NormStats | None]:
    with open(path) as f:
        return net_from_json(json.load(f))
