"""Kinematic planar pusher with a friction-based sim/real gap.

The end effector and the pushed object are disks; when the end effector
overlaps the object, the object translates along the contact normal by
the penetration depth scaled by (1 - friction). Friction differs between
the sim and real twins, which is the whole misspecification.

Reward (distances in meters): the end effector is steered to the back of
the object (offset ``contact_offset`` opposite the push direction), the
object toward ``goal_x``, with a +1 bonus inside ``success_threshold``
and a -1 penalty once the object leaves the workspace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import Env


@dataclass(frozen=True)
class PusherParams:
    workspace: tuple[float, float, float, float] = (0.0, 0.6, -0.3, 0.3)  # xmin,xmax,ymin,ymax
    goal_x: float = 0.55
    contact_offset: float = 0.035   # combined disk radius = back-of-object offset
    success_threshold: float = 0.025
    friction_sim: float = 0.0
    friction_real: float = 0.4
    episode_len: int = 40
    step_limit: float = 0.02        # max end-effector travel per step

    def __post_init__(self):
        if self.success_threshold <= 0:
            raise ValueError("success_threshold must be positive")
        xmin, xmax, ymin, ymax = self.workspace
        if not (xmin < self.goal_x < xmax):
            raise ValueError("goal must lie inside the workspace")


def _outside(obj: np.ndarray, params: PusherParams) -> np.ndarray:
    xmin, xmax, ymin, ymax = params.workspace
    return ((obj[:, 0] < xmin) | (obj[:, 0] > xmax)
            | (obj[:, 1] < ymin) | (obj[:, 1] > ymax))


def pusher_step(state: np.ndarray, action: np.ndarray, params: PusherParams,
                real: bool) -> np.ndarray:
    """State is [ee_x, ee_y, obj_x, obj_y]; action a displacement [dx, dy]."""
    s = np.asarray(state, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    a = np.atleast_2d(np.asarray(action, dtype=float))
    norm = np.linalg.norm(a, axis=1, keepdims=True)
    scale = np.where(norm > params.step_limit, params.step_limit / np.maximum(norm, 1e-12), 1.0)
    a = a * scale

    xmin, xmax, ymin, ymax = params.workspace
    ee = s[:, :2] + a
    ee = np.stack([np.clip(ee[:, 0], xmin, xmax), np.clip(ee[:, 1], ymin, ymax)], axis=1)
    obj = s[:, 2:].copy()

    delta = obj - ee
    dist = np.linalg.norm(delta, axis=1)
    contact = dist < params.contact_offset
    if np.any(contact):
        friction = params.friction_real if real else params.friction_sim
        # Degenerate coincident centers push along +x.
        safe = np.where(dist[:, None] > 1e-12, delta / np.maximum(dist, 1e-12)[:, None],
                        np.array([1.0, 0.0]))
        depth = params.contact_offset - dist
        obj = obj + np.where(contact[:, None], safe * depth[:, None] * (1.0 - friction), 0.0)

    out = np.concatenate([ee, obj], axis=1)
    return out[0] if single else out


def pusher_reward(state: np.ndarray, params: PusherParams):
    s = np.atleast_2d(np.asarray(state, dtype=float))
    ee, obj = s[:, :2], s[:, 2:]
    behind = np.linalg.norm(ee - obj + np.array([params.contact_offset, 0.0]), axis=1)
    goal_dist = np.abs(obj[:, 0] - params.goal_x)
    r = (-behind - goal_dist
         + (goal_dist <= params.success_threshold).astype(float)
         - _outside(obj, params).astype(float))
    return float(r[0]) if np.asarray(state).ndim == 1 else r


def pusher_success(state: np.ndarray, params: PusherParams):
    s = np.atleast_2d(np.asarray(state, dtype=float))
    obj = s[:, 2:]
    ok = (np.abs(obj[:, 0] - params.goal_x) <= params.success_threshold) & ~_outside(obj, params)
    return bool(ok[0]) if np.asarray(state).ndim == 1 else ok


class PusherEnv(Env):
    state_dim = 4
    obs_dim = 4
    action_dim = 2

    def __init__(self, params: PusherParams | None = None, real: bool = False):
        self.params = params or PusherParams()
        self.real = real
        self.name = "pusher_real" if real else "pusher_sim"
        self.episode_len = self.params.episode_len
        self.action_low = np.array([-self.params.step_limit] * 2)
        self.action_high = np.array([self.params.step_limit] * 2)

    def sample_init(self, rng: np.random.Generator) -> np.ndarray:
        ee = np.array([0.05, 0.0]) + rng.uniform(-0.01, 0.01, size=2)
        obj = np.array([rng.uniform(0.1, 0.3), rng.uniform(-0.15, 0.15)])
        return np.concatenate([ee, obj])

    def step(self, state, action, rng=None) -> np.ndarray:
        return pusher_step(state, action, self.params, self.real)

    def reward(self, state):
        return pusher_reward(state, self.params)

    def success(self, state):
        return pusher_success(state, self.params)

    def observe(self, state) -> np.ndarray:
        return np.asarray(state, dtype=float).copy()

    def state_from_obs(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=float).copy()
