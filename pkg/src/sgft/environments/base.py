"""Common environment interface for the sim/real twins.

Environments are thin and mostly functional: the pure step/reward math
lives in module-level functions, and the Env classes bundle parameters
with episode bookkeeping. All state/observation math accepts either a
single state vector or a batch (leading axis), which the planner and the
vectorized evaluator rely on.
"""

from __future__ import annotations

import numpy as np


class Env:
    """Base class; subclasses fill in the attributes and methods below."""

    name: str = "env"
    obs_dim: int
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    episode_len: int

    def sample_init(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, state: np.ndarray, action: np.ndarray,
             rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def reward(self, state: np.ndarray) -> np.ndarray | float:
        raise NotImplementedError

    def success(self, state: np.ndarray) -> np.ndarray | bool:
        raise NotImplementedError

    def observe(self, state: np.ndarray) -> np.ndarray:
        """Feature vector the function approximators consume."""
        raise NotImplementedError

    def state_from_obs(self, obs: np.ndarray) -> np.ndarray:
        """Map an observation (e.g. a model prediction) back to a state."""
        raise NotImplementedError

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        return np.clip(action, self.action_low, self.action_high)
