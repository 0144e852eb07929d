"""Torque-limited pendulum with a controlled sim/real misspecification.

Dynamics (explicit Euler, angle wrapped to (-pi, pi]):

    theta'    = wrap(theta + dt * theta_dot)
    theta_dot' = theta_dot + dt * (g/l * sin(theta) + a + e(theta, theta_dot))

where the disturbance e is active only in the "real" twin:

    e(theta, theta_dot) = k1 * theta_dot + k2 * sin(2 * theta).

Because e depends on the state alone, the misspecification is additive in
action space: the real twin can reproduce any sim transition by playing
a - e(s), so the set of feasible motions is shared even though the
required torques differ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .base import Env


def wrap_angle(theta):
    """Wrap to (-pi, pi], ties mapped to pi."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class PerturbationSpec:
    viscous_coeff: float = 1.5   # k1, multiplies angular velocity
    wave_coeff: float = 2.0      # k2, multiplies sin(2*theta)
    enabled: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.viscous_coeff) and math.isfinite(self.wave_coeff)):
            raise ValueError("perturbation coefficients must be finite")


@dataclass(frozen=True)
class PendulumParams:
    dt: float = 0.05
    g: float = 9.81
    l: float = 1.0
    torque_limit: float = 2.5
    perturbation: PerturbationSpec = field(default_factory=PerturbationSpec)
    goal_angle: float = math.pi
    episode_len: int = 100
    speed_limit: float = 8.0     # |theta_dot| clamp; also normalizes the reward
    init_noise: float = 0.1

    def __post_init__(self):
        if self.dt <= 0 or self.l <= 0 or self.torque_limit <= 0:
            raise ValueError("dt, l and torque_limit must be positive")


def perturbation_term(state: np.ndarray, spec: PerturbationSpec) -> np.ndarray:
    s = np.atleast_2d(np.asarray(state, dtype=float))
    if not spec.enabled:
        return np.zeros(s.shape[0])
    return spec.viscous_coeff * s[:, 1] + spec.wave_coeff * np.sin(2.0 * s[:, 0])


def pendulum_step(state: np.ndarray, action, params: PendulumParams,
                  real: bool) -> np.ndarray:
    """Advance one step; accepts a (2,) state or an (N, 2) batch."""
    s = np.asarray(state, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    if not np.all(np.isfinite(s)):
        raise ValueError("diverged state")
    a = np.clip(np.asarray(action, dtype=float).reshape(s.shape[0], -1)[:, 0],
                -params.torque_limit, params.torque_limit)
    theta, theta_dot = wrap_angle(s[:, 0]), s[:, 1]
    accel = params.g / params.l * np.sin(theta) + a
    if real:
        accel = accel + perturbation_term(np.stack([theta, theta_dot], axis=1),
                                          params.perturbation)
    new_theta = wrap_angle(theta + params.dt * theta_dot)
    new_dot = np.clip(theta_dot + params.dt * accel,
                      -params.speed_limit, params.speed_limit)
    out = np.stack([new_theta, new_dot], axis=1)
    if not np.all(np.isfinite(out)):
        raise ValueError("diverged state")
    return out[0] if single else out


def pendulum_reward(state: np.ndarray, params: PendulumParams):
    """Quadratic wrapped-angle cost, normalized to [-1, 0]."""
    s = np.atleast_2d(np.asarray(state, dtype=float))
    err = wrap_angle(s[:, 0] - params.goal_angle)
    cost = err ** 2 + 0.1 * s[:, 1] ** 2
    r = -cost / (math.pi ** 2 + 0.1 * params.speed_limit ** 2)
    return float(r[0]) if np.asarray(state).ndim == 1 else r


def pendulum_success(state: np.ndarray, params: PendulumParams):
    s = np.atleast_2d(np.asarray(state, dtype=float))
    ok = (np.abs(wrap_angle(s[:, 0] - params.goal_angle)) < 0.15) & (np.abs(s[:, 1]) < 0.5)
    return bool(ok[0]) if np.asarray(state).ndim == 1 else ok


class PendulumEnv(Env):
    """Stateless-math pendulum environment; ``real`` switches the twin."""

    state_dim = 2
    obs_dim = 3
    action_dim = 1

    def __init__(self, params: PendulumParams | None = None, real: bool = False):
        self.params = params or PendulumParams()
        self.real = real
        self.name = "pendulum_real" if real else "pendulum_sim"
        self.episode_len = self.params.episode_len
        self.action_low = np.array([-self.params.torque_limit])
        self.action_high = np.array([self.params.torque_limit])

    def sample_init(self, rng: np.random.Generator) -> np.ndarray:
        n = self.params.init_noise
        return np.array([wrap_angle(rng.uniform(-n, n)), rng.uniform(-n, n)])

    def step(self, state, action, rng=None) -> np.ndarray:
        return pendulum_step(state, action, self.params, self.real)

    def reward(self, state):
        return pendulum_reward(state, self.params)

    def success(self, state):
        return pendulum_success(state, self.params)

    def observe(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        single = s.ndim == 1
        s = np.atleast_2d(s)
        obs = np.stack([np.cos(s[:, 0]), np.sin(s[:, 0]), s[:, 1]], axis=1)
        return obs[0] if single else obs

    def state_from_obs(self, obs) -> np.ndarray:
        o = np.asarray(obs, dtype=float)
        single = o.ndim == 1
        o = np.atleast_2d(o)
        state = np.stack([np.arctan2(o[:, 1], o[:, 0]), o[:, 2]], axis=1)
        return state[0] if single else state
