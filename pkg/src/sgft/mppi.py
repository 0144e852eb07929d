"""Sampling-based trajectory optimization over a one-step model.

Candidate action sequences come from Gaussian noise around the previous
solution plus a fraction seeded by a stochastic policy prior rolled out
through the model. Sequences are scored by the discounted reward sum
plus the discounted frozen terminal value; the top elites are averaged
with exponential weights and the procedure iterates. Only the first
action of the final mean is executed (receding horizon).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ModelStep = Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray]
BatchFn = Callable[[np.ndarray], np.ndarray]
PriorFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass
class PlannerConfig:
    horizon: int = 4
    n_samples: int = 256
    n_elites: int = 32
    temperature_lambda: float = 0.5
    noise_std: float | list | None = None   # None -> 0.3 * action range, per dim
    n_iterations: int = 6
    policy_prior_fraction: float = 0.25

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("planner horizon must be >= 1")
        if self.n_elites > self.n_samples:
            raise ValueError("n_elites must not exceed n_samples")
        if not (0.0 <= self.policy_prior_fraction <= 1.0):
            raise ValueError("policy_prior_fraction must lie in [0, 1]")


@dataclass
class PlanResult:
    plan: np.ndarray            # (H, A)
    first_action: np.ndarray    # (A,)
    expected_shaped_return: float
    fell_back: bool = False


def resolve_noise_std(cfg: PlannerConfig, action_low, action_high) -> np.ndarray:
    if cfg.noise_std is None:
        return 0.3 * (np.asarray(action_high, dtype=float)
                      - np.asarray(action_low, dtype=float))
    return np.broadcast_to(np.asarray(cfg.noise_std, dtype=float),
                           np.asarray(action_low).shape).astype(float)


def _score(candidates: np.ndarray, obs0: np.ndarray, model_step: ModelStep,
           reward_fn: BatchFn, value_fn: BatchFn, gamma: float,
           rng: np.random.Generator) -> np.ndarray:
    n, h, _ = candidates.shape
    obs = np.broadcast_to(obs0, (n, obs0.shape[-1])).copy()
    scores = np.zeros(n)
    g = 1.0
    for t in range(h):
        scores += g * np.asarray(reward_fn(obs), dtype=float)
        obs = model_step(obs, candidates[:, t], rng)
        g *= gamma
    scores += g * np.asarray(value_fn(obs), dtype=float)
    return scores


def mppi_plan(model_step: ModelStep, value_fn: BatchFn, reward_fn: BatchFn,
              obs0: np.ndarray, cfg: PlannerConfig,
              action_low: np.ndarray, action_high: np.ndarray,
              gamma: float, rng: np.random.Generator,
              policy_prior: PriorFn | None = None,
              prev_plan: np.ndarray | None = None,
              initial_candidates: np.ndarray | None = None) -> PlanResult:
    """Plan from ``obs0``; returns the receding-horizon action and the plan.

    ``initial_candidates`` (N, H, A) overrides sampling in the first
    iteration - used for exhaustive enumeration on discrete instances.
    If every candidate scores non-finite, falls back to the policy prior
    mean (or the previous plan) and flags the event.
    """
    action_low = np.asarray(action_low, dtype=float)
    action_high = np.asarray(action_high, dtype=float)
    a_dim = action_low.shape[0]
    h = cfg.horizon
    obs0 = np.asarray(obs0, dtype=float)

    mean = (np.array(prev_plan, dtype=float, copy=True) if prev_plan is not None
            else np.zeros((h, a_dim)))
    std = np.broadcast_to(resolve_noise_std(cfg, action_low, action_high),
                          (h, a_dim)).copy()
    std_floor = 0.1 * std

    n_prior = int(round(cfg.policy_prior_fraction * cfg.n_samples)) \
        if policy_prior is not None else 0
    expected = float("nan")
    for it in range(cfg.n_iterations):
        if initial_candidates is not None and it == 0:
            cand = np.array(initial_candidates, dtype=float, copy=True)
        else:
            n_gauss = cfg.n_samples - n_prior
            cand = mean[None] + rng.standard_normal((n_gauss, h, a_dim)) * std[None]
            if n_prior:
                pc = np.empty((n_prior, h, a_dim))
                obs = np.broadcast_to(obs0, (n_prior, obs0.shape[-1])).copy()
                for t in range(h):
                    acts = np.atleast_2d(policy_prior(obs, rng))
                    pc[:, t] = acts
                    obs = model_step(obs, acts, rng)
                cand = np.concatenate([cand, pc], axis=0)
        cand = np.clip(cand, action_low, action_high)

        scores = _score(cand, obs0, model_step, reward_fn, value_fn, gamma, rng)
        finite = np.isfinite(scores)
        if not np.any(finite):
            fallback = (np.atleast_2d(policy_prior(obs0[None], rng))[0]
                        if policy_prior is not None else mean[0])
            return PlanResult(mean, np.asarray(fallback, dtype=float),
                              float("nan"), fell_back=True)
        cand, scores = cand[finite], scores[finite]

        k = min(cfg.n_elites, len(scores))
        elite_idx = np.argpartition(-scores, k - 1)[:k]
        elite = cand[elite_idx]
        es = scores[elite_idx]
        w = np.exp((es - es.max()) / max(cfg.temperature_lambda, 1e-9))
        w /= w.sum()
        mean = np.einsum("n,nha->ha", w, elite)
        var = np.einsum("n,nha->ha", w, (elite - mean[None]) ** 2)
        std = np.maximum(np.sqrt(var), std_floor)
        expected = float(np.dot(w, es))

    phi0 = float(np.asarray(value_fn(obs0[None]), dtype=float)[0])
    return PlanResult(mean, mean[0].copy(), expected - phi0)
