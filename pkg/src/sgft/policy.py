"""Off-policy actor-critic used for sim pretraining and as the
fine-tuning backbone.

Squashed-Gaussian policy (tanh of a reparameterized Gaussian, exact
log-det correction), twin critics with EMA target networks, optional
entropy-temperature auto-tuning, and distillation of a state-value
network toward E_{a~pi}[min Q] - the function that later serves as the
frozen potential.

All gradients are assembled by hand through the MLP backward passes; the
actor chains through the critics' input gradients. The done-bootstrap
cutoff is the one-step-horizon mechanism: transitions flagged done
contribute no bootstrapped critic term to their targets, so with every
transition flagged the critic regresses on shaped one-step rewards only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .approx import MLP, Adam, Batch, NormStats, OptimSpec, ReplayBuffer, net_from_json, net_to_json
from .environments.base import Env
from .rng import stream

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0
_SQUASH_EPS = 1e-6


class PretrainError(RuntimeError):
    pass


@dataclass
class PolicyHead:
    """Squashed-Gaussian policy: net maps obs -> (mean, log_std) per action dim."""

    net: MLP
    action_scale: np.ndarray
    action_bias: np.ndarray

    @property
    def action_dim(self) -> int:
        return self.net.layer_sizes[-1] // 2

    def dist_params(self, obs: np.ndarray, cache: bool = False):
        out = np.atleast_2d(self.net.forward(obs, cache=cache))
        a = self.action_dim
        mu = out[:, :a]
        raw_ls = out[:, a:]
        return mu, np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX), raw_ls

    def sample(self, obs: np.ndarray, rng: np.random.Generator):
        """Reparameterized action and its log-prob (no caching)."""
        mu, ls, _ = self.dist_params(obs)
        xi = rng.standard_normal(mu.shape)
        return self._squash(mu, ls, xi)

    def _squash(self, mu, ls, xi):
        std = np.exp(ls)
        u = mu + std * xi
        t = np.tanh(u)
        act = t * self.action_scale + self.action_bias
        sq = self.action_scale * (1.0 - t ** 2) + _SQUASH_EPS
        logp = (-0.5 * xi ** 2 - ls - 0.5 * math.log(2.0 * math.pi)
                - np.log(sq)).sum(axis=1)
        return act, logp

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        single = np.asarray(obs).ndim == 1
        mu, _, _ = self.dist_params(obs)
        act = np.tanh(mu) * self.action_scale + self.action_bias
        return act[0] if single else act


@dataclass
class ActorCritic:
    """The trainable bundle: policy, twin critics (+targets), value net."""

    policy: PolicyHead
    q1: MLP
    q2: MLP
    q1_target: MLP
    q2_target: MLP
    value: MLP
    norm: NormStats
    log_alpha: float
    adam_policy: Adam
    adam_q1: Adam
    adam_q2: Adam
    adam_value: Adam
    alpha_m: float = 0.0
    alpha_v: float = 0.0
    alpha_t: int = 0

    @property
    def temperature(self) -> float:
        return math.exp(self.log_alpha)


def build_actor_critic(obs_dim: int, action_dim: int, action_low, action_high,
                       hidden: tuple[int, ...], spec: OptimSpec,
                       rng: np.random.Generator, norm: NormStats,
                       init_temperature: float = 1.0,
                       policy_net: MLP | None = None) -> ActorCritic:
    action_low = np.asarray(action_low, dtype=float)
    action_high = np.asarray(action_high, dtype=float)
    scale = (action_high - action_low) / 2.0
    bias = (action_high + action_low) / 2.0
    pnet = policy_net.copy() if policy_net is not None else MLP(
        [obs_dim, *hidden, 2 * action_dim], rng=rng, out_scale=0.01)
    q1 = MLP([obs_dim + action_dim, *hidden, 1], rng=rng)
    q2 = MLP([obs_dim + action_dim, *hidden, 1], rng=rng)
    value = MLP([obs_dim, *hidden, 1], rng=rng)
    ac = ActorCritic(
        policy=PolicyHead(pnet, scale, bias),
        q1=q1, q2=q2, q1_target=q1.copy(), q2_target=q2.copy(),
        value=value, norm=norm, log_alpha=math.log(init_temperature),
        adam_policy=Adam(pnet.params, spec), adam_q1=Adam(q1.params, spec),
        adam_q2=Adam(q2.params, spec), adam_value=Adam(value.params, spec))
    return ac


def ema_update(target: MLP, main: MLP, tau: float) -> None:
    for t, m in zip(target.params, main.params):
        t *= (1.0 - tau)
        t += tau * m


def critic_update(batch: Batch, nets: ActorCritic, gamma: float,
                  temperature: float, use_done_bootstrap_cutoff: bool,
                  rng: np.random.Generator, use_shaped: bool = True) -> dict:
    """Twin-critic soft Bellman regression.

    With the done cutoff active, transitions flagged done receive the
    reward alone as their target - no bootstrapped term of any kind.
    """
    obs = nets.norm.normalize(batch.obs)
    next_obs = nets.norm.normalize(batch.next_obs)
    rewards = batch.shaped_rewards if use_shaped else batch.rewards
    n = len(batch)

    next_act, next_logp = nets.policy.sample(next_obs, rng)
    next_in = np.concatenate([next_obs, next_act], axis=1)
    qt = np.minimum(nets.q1_target.forward(next_in)[:, 0],
                    nets.q2_target.forward(next_in)[:, 0])
    boot = qt - temperature * next_logp
    if use_done_bootstrap_cutoff:
        mask = 1.0 - batch.dones.astype(float)
    else:
        mask = np.ones(n)
    targets = rewards + gamma * mask * boot
    if use_done_bootstrap_cutoff:
        # The one-step-horizon contract: done rows must carry no critic term.
        assert np.allclose(targets[batch.dones], rewards[batch.dones])

    q_in = np.concatenate([obs, batch.actions], axis=1)
    losses = {}
    for name, net, adam in (("q1", nets.q1, nets.adam_q1),
                            ("q2", nets.q2, nets.adam_q2)):
        q = net.forward(q_in, cache=True)[:, 0]
        err = q - targets
        losses[f"{name}_loss"] = float(np.mean(err ** 2))
        grads, _ = net.backward((2.0 * err / n)[:, None])
        adam.step(grads)
    losses["target_mean"] = float(np.mean(targets))
    if not all(math.isfinite(v) for v in losses.values()):
        raise PretrainError(f"critic update diverged: {losses}")
    return losses


def actor_update(batch: Batch, nets: ActorCritic, temperature: float,
                 rng: np.random.Generator) -> dict:
    """Maximize E[min twin Q - temperature * log pi] with reparameterized
    actions; the exact gradient flows through the tanh squashing and the
    critics' input gradients."""
    obs = nets.norm.normalize(batch.obs)
    n, a_dim = len(batch), nets.policy.action_dim
    mu, ls, raw_ls = nets.policy.dist_params(obs, cache=True)
    std = np.exp(ls)
    xi = rng.standard_normal(mu.shape)
    u = mu + std * xi
    t = np.tanh(u)
    act = t * nets.policy.action_scale + nets.policy.action_bias
    sq = nets.policy.action_scale * (1.0 - t ** 2) + _SQUASH_EPS
    logp = (-0.5 * xi ** 2 - ls - 0.5 * math.log(2.0 * math.pi)
            - np.log(sq)).sum(axis=1)

    q_in = np.concatenate([obs, act], axis=1)
    q1 = nets.q1.forward(q_in, cache=True)[:, 0]
    q2 = nets.q2.forward(q_in, cache=True)[:, 0]
    take1 = q1 <= q2
    loss = float(np.mean(temperature * logp - np.minimum(q1, q2)))

    # dL/da via the selected critic's input gradient.
    d_q1 = np.where(take1, -1.0 / n, 0.0)[:, None]
    d_q2 = np.where(take1, 0.0, -1.0 / n)[:, None]
    _, g1 = nets.q1.backward(d_q1, need_input_grad=True)
    _, g2 = nets.q2.backward(d_q2, need_input_grad=True)
    d_act = (g1 + g2)[:, obs.shape[1]:]

    dt_du = 1.0 - t ** 2
    # d log pi / du through the squash correction only (xi is fixed noise).
    dlogp_du = 2.0 * nets.policy.action_scale * t * dt_du / sq
    d_u = (temperature / n) * dlogp_du + d_act * nets.policy.action_scale * dt_du
    d_mu = d_u
    clip_mask = ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX)).astype(float)
    d_ls = (d_u * std * xi - temperature / n) * clip_mask
    grads, _ = nets.policy.net.backward(np.concatenate([d_mu, d_ls], axis=1))
    nets.adam_policy.step(grads)

    if not math.isfinite(loss):
        raise PretrainError("actor update diverged")
    return {"actor_loss": loss, "entropy_est": float(-np.mean(logp))}


def temperature_update(nets: ActorCritic, mean_logp: float, target_entropy: float,
                       lr: float = 3e-4) -> dict:
    """Adam step on log alpha toward the entropy target."""
    g = -(mean_logp + target_entropy)
    nets.alpha_t += 1
    nets.alpha_m = 0.9 * nets.alpha_m + 0.1 * g
    nets.alpha_v = 0.999 * nets.alpha_v + 0.001 * g * g
    m_hat = nets.alpha_m / (1.0 - 0.9 ** nets.alpha_t)
    v_hat = nets.alpha_v / (1.0 - 0.999 ** nets.alpha_t)
    nets.log_alpha -= lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    return {"alpha": nets.temperature}


def distill_value(nets: ActorCritic, obs_raw: np.ndarray,
                  rng: np.random.Generator) -> dict:
    """Regress V(s) toward min-twin Q at fresh policy actions."""
    obs = nets.norm.normalize(obs_raw)
    act, _ = nets.policy.sample(obs, rng)
    q_in = np.concatenate([obs, act], axis=1)
    target = np.minimum(nets.q1.forward(q_in)[:, 0], nets.q2.forward(q_in)[:, 0])
    v = nets.value.forward(obs, cache=True)[:, 0]
    err = v - target
    grads, _ = nets.value.backward((2.0 * err / len(err))[:, None])
    nets.adam_value.step(grads)
    return {"value_loss": float(np.mean(err ** 2))}


# ---------------------------------------------------------------------------
# Rollouts and evaluation
# ---------------------------------------------------------------------------

def rollout_episode(env: Env, act_fn: Callable[[np.ndarray], np.ndarray],
                    rng: np.random.Generator):
    """One episode; returns (states incl. final, actions, rewards)."""
    state = env.sample_init(rng)
    states, actions, rewards = [state], [], []
    for _ in range(env.episode_len):
        action = np.atleast_1d(np.asarray(act_fn(env.observe(state)), dtype=float))
        rewards.append(float(env.reward(state)))
        state = env.step(state, action, rng)
        states.append(state)
        actions.append(action)
    return states, actions, rewards


def evaluate_policy(env: Env, act_fn: Callable[[np.ndarray], np.ndarray],
                    episodes: int, rng: np.random.Generator) -> tuple[float, float]:
    """Deterministic evaluation, episodes run in lockstep.

    Success is measured at the final state; return is the undiscounted
    reward sum. ``act_fn`` receives a batch of observations.
    """
    states = np.stack([env.sample_init(rng) for _ in range(episodes)])
    returns = np.zeros(episodes)
    for _ in range(env.episode_len):
        obs = env.observe(states)
        actions = np.atleast_2d(np.asarray(act_fn(obs), dtype=float))
        returns += np.asarray(env.reward(states), dtype=float)
        states = env.step(states, actions, rng)
    success = np.asarray(env.success(states), dtype=float)
    return float(success.mean()), float(returns.mean())


# ---------------------------------------------------------------------------
# Pretraining
# ---------------------------------------------------------------------------

@dataclass
class PretrainConfig:
    steps_budget: int = 150_000
    warmup_steps: int = 1_000
    eval_every: int = 2_000
    eval_episodes: int = 20
    success_threshold: float = 0.95
    utd: int = 1
    gamma: float = 0.99
    hidden: tuple[int, ...] = (128, 128)
    batch_size: int = 256
    learning_rate: float = 3e-4
    buffer_capacity: int = 200_000
    init_temperature: float = 1.0
    target_entropy: float | None = None
    tau: float = 0.005
    obs_noise_std: float = 0.004
    obs_noise_prob: float = 0.3
    seed: int = 0


@dataclass
class PretrainedBundle:
    """Frozen product of sim pretraining: the policy and the potential.

    ``value_table`` (exact per-state values) takes precedence over the
    value net when present - tabular instances carry the exact table.
    """

    policy_net: MLP
    value_net: MLP | None
    norm: NormStats
    action_low: np.ndarray
    action_high: np.ndarray
    gamma: float
    metadata: dict = field(default_factory=dict)
    value_table: np.ndarray | None = None

    def policy_head(self) -> PolicyHead:
        scale = (self.action_high - self.action_low) / 2.0
        bias = (self.action_high + self.action_low) / 2.0
        return PolicyHead(self.policy_net, scale, bias)

    def make_potential(self, env: Env) -> Callable[[np.ndarray], np.ndarray]:
        """Potential over raw states (vectorized over a leading batch axis)."""
        if self.value_table is not None:
            table = np.asarray(self.value_table, dtype=float)

            def phi_table(state):
                s = np.asarray(state, dtype=float)
                if s.ndim == 1:
                    return float(table[int(s[0])])
                return table[s[:, 0].astype(int)]
            return phi_table

        net, norm = self.value_net, self.norm

        def phi_net(state):
            s = np.asarray(state, dtype=float)
            obs = norm.normalize(np.atleast_2d(env.observe(s)))
            v = net.forward(obs)[:, 0]
            return float(v[0]) if s.ndim == 1 else v
        return phi_net

    def to_json(self) -> dict:
        return {
            "policy": net_to_json(self.policy_net, self.norm),
            "value": None if self.value_net is None else net_to_json(self.value_net),
            "value_table": None if self.value_table is None else self.value_table.tolist(),
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
            "gamma": self.gamma,
            "metadata": self.metadata,
        }

    @staticmethod
    def from_json(obj: dict) -> "PretrainedBundle":
        policy_net, norm = net_from_json(obj["policy"])
        value_net = None
        if obj.get("value") is not None:
            value_net, _ = net_from_json(obj["value"])
        table = obj.get("value_table")
        return PretrainedBundle(
            policy_net=policy_net, value_net=value_net,
            norm=norm or NormStats.identity(policy_net.layer_sizes[0]),
            action_low=np.asarray(obj["action_low"], dtype=float),
            action_high=np.asarray(obj["action_high"], dtype=float),
            gamma=float(obj["gamma"]), metadata=obj.get("metadata", {}),
            value_table=None if table is None else np.asarray(table, dtype=float))

    def save(self, path) -> None:
        import json
        with open(path, "w") as f:
            json.dump(self.to_json(), f)

    @staticmethod
    def load(path) -> "PretrainedBundle":
        import json
        with open(path) as f:
            return PretrainedBundle.from_json(json.load(f))


def _augment(obs: np.ndarray, cfg: PretrainConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.obs_noise_std <= 0 or cfg.obs_noise_prob <= 0:
        return obs
    mask = rng.random(obs.shape[0]) < cfg.obs_noise_prob
    noise = rng.normal(0.0, cfg.obs_noise_std, size=obs.shape)
    return obs + noise * mask[:, None]


def pretrain_sim(env_sim: Env, cfg: PretrainConfig) -> PretrainedBundle:
    """Train the off-policy actor-critic on the sim environment.

    Returns as soon as the deterministic evaluation success rate clears
    the configured threshold, or when the step budget is exhausted.
    Raises PretrainError on divergence.
    """
    seed = cfg.seed
    rng_env = stream(seed, "pretrain", "env")
    rng_act = stream(seed, "pretrain", "act")
    rng_upd = stream(seed, "pretrain", "update")
    rng_eval = stream(seed, "pretrain", "eval")
    spec = OptimSpec(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size)
    buffer = ReplayBuffer(cfg.buffer_capacity, env_sim.obs_dim, env_sim.action_dim)

    # Warmup with uniform random actions; the frozen normalization stats
    # come from this pre-collected data.
    state = env_sim.sample_init(rng_env)
    t_in_ep = 0
    warm_obs = []
    for _ in range(cfg.warmup_steps):
        action = rng_act.uniform(env_sim.action_low, env_sim.action_high)
        nxt = env_sim.step(state, action, rng_env)
        obs, nobs = env_sim.observe(state), env_sim.observe(nxt)
        warm_obs.append(obs)
        r = float(env_sim.reward(state))
        t_in_ep += 1
        done = t_in_ep >= env_sim.episode_len
        buffer.add(obs, action, r, r, nobs, done)
        state, t_in_ep = (env_sim.sample_init(rng_env), 0) if done else (nxt, t_in_ep)
    norm = NormStats.fit(np.asarray(warm_obs))

    nets = build_actor_critic(env_sim.obs_dim, env_sim.action_dim,
                              env_sim.action_low, env_sim.action_high,
                              cfg.hidden, spec, stream(seed, "pretrain", "init"),
                              norm, cfg.init_temperature)
    target_entropy = (cfg.target_entropy if cfg.target_entropy is not None
                      else -float(env_sim.action_dim))

    def eval_now() -> tuple[float, float]:
        return evaluate_policy(env_sim, nets.policy.mean_action,
                               cfg.eval_episodes, stream(seed, "pretrain", "eval-run"))

    steps = 0
    success, eval_return = 0.0, float("nan")
    state = env_sim.sample_init(rng_env)
    t_in_ep = 0
    history = []
    while steps < cfg.steps_budget:
        obs = env_sim.observe(state)
        action, _ = nets.policy.sample(norm.normalize(obs[None, :]), rng_act)
        action = action[0]
        nxt = env_sim.step(state, action, rng_env)
        r = float(env_sim.reward(state))
        t_in_ep += 1
        done = t_in_ep >= env_sim.episode_len
        buffer.add(obs, action, r, r, env_sim.observe(nxt), done)
        state, t_in_ep = (env_sim.sample_init(rng_env), 0) if done else (nxt, t_in_ep)
        steps += 1

        for _ in range(cfg.utd):
            batch = buffer.sample(cfg.batch_size, rng_upd)
            batch.obs = _augment(batch.obs, cfg, rng_upd)
            batch.next_obs = _augment(batch.next_obs, cfg, rng_upd)
            alpha = nets.temperature
            critic_update(batch, nets, cfg.gamma, alpha, False, rng_upd,
                          use_shaped=False)
            au = actor_update(batch, nets, alpha, rng_upd)
            temperature_update(nets, -au["entropy_est"], target_entropy)
            distill_value(nets, batch.obs, rng_upd)
            ema_update(nets.q1_target, nets.q1, cfg.tau)
            ema_update(nets.q2_target, nets.q2, cfg.tau)

        if steps % cfg.eval_every == 0:
            success, eval_return = eval_now()
            history.append((steps, success, eval_return))
            if success >= cfg.success_threshold:
                break

    if steps % cfg.eval_every != 0 or not history:
        success, eval_return = eval_now()
        history.append((steps, success, eval_return))
    return PretrainedBundle(
        policy_net=nets.policy.net, value_net=nets.value, norm=norm,
        action_low=env_sim.action_low.copy(), action_high=env_sim.action_high.copy(),
        gamma=cfg.gamma,
        metadata={"env": env_sim.name, "seed": seed, "steps": steps,
                  "eval_success": success, "eval_return": eval_return,
                  "history": history})
