"""Foundational MDP types, return computations, and the potential-based
reward transform shared by every other module.

Rewards are state-only: a transition leaving state ``s`` carries reward
``r(s)``. The shaped reward is ``r + gamma * phi(s') - phi(s)`` for a
potential ``phi``; summed over an H-step segment it telescopes to
``gamma^H phi(s_H) + sum_t gamma^t r(s_t) - phi(s_0)``.

All types here are immutable after construction and safe to share across
workers.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

# A potential / value function: maps a raw state vector to a scalar.
ValueFn = Callable[[np.ndarray], float]

_PROB_TOL = 1e-12


class CoreError(ValueError):
    """Raised on contract violations in core types and operations."""


@dataclass(frozen=True)
class DiscountSpec:
    gamma: float

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise CoreError(f"discount gamma must lie in [0, 1), got {self.gamma}")


@dataclass(frozen=True)
class HorizonSpec:
    h: int

    def __post_init__(self):
        if self.h < 1:
            raise CoreError(f"horizon must be >= 1, got {self.h}")


@dataclass(frozen=True)
class TabularMDP:
    """Finite MDP with an explicit transition tensor and state rewards.

    transition[s, a, s'] is the probability of moving to s' after playing
    a in s. Rows must be probability distributions; the reward vector is
    indexed by the *source* state.
    """

    n_states: int
    n_actions: int
    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S,)
    initial_dist: np.ndarray  # (S,)
    discount: DiscountSpec

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=float)
        r = np.asarray(self.reward, dtype=float)
        d = np.asarray(self.initial_dist, dtype=float)
        if t.shape != (self.n_states, self.n_actions, self.n_states):
            raise CoreError(f"transition tensor shape {t.shape} does not match "
                            f"({self.n_states}, {self.n_actions}, {self.n_states})")
        if np.any(t < 0.0):
            raise CoreError("transition probabilities must be nonnegative")
        row_sums = t.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > _PROB_TOL:
            raise CoreError("transition rows must sum to 1 within 1e-12")
        if r.shape != (self.n_states,) or not np.all(np.isfinite(r)):
            raise CoreError("reward must be a finite vector of length n_states")
        if d.shape != (self.n_states,) or abs(d.sum() - 1.0) > _PROB_TOL or np.any(d < 0):
            raise CoreError("initial_dist must be a distribution over states")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", d)
        self.transition.setflags(write=False)
        self.reward.setflags(write=False)
        self.initial_dist.setflags(write=False)

    @property
    def gamma(self) -> float:
        return self.discount.gamma


@dataclass(frozen=True)
class Transition:
    """One (s, a, r, r-bar, s', done) record.

    ``reward`` is the raw state reward at the source state; ``shaped_reward``
    is its potential-reshaped counterpart when a potential was applied
    (otherwise equal to ``reward``).
    """

    state: np.ndarray
    action: np.ndarray
    reward: float
    shaped_reward: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self):
        object.__setattr__(self, "state", np.atleast_1d(np.asarray(self.state, dtype=float)))
        object.__setattr__(self, "action", np.atleast_1d(np.asarray(self.action, dtype=float)))
        object.__setattr__(self, "next_state",
                           np.atleast_1d(np.asarray(self.next_state, dtype=float)))


@dataclass(frozen=True)
class Trajectory:
    transitions: tuple[Transition, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        for a, b in zip(self.transitions, self.transitions[1:]):
            if not np.array_equal(a.next_state, b.state):
                raise CoreError("consecutive transitions must chain: next_state != state")
            if a.done:
                raise CoreError("done may only be set on the final transition")

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def states(self) -> list[np.ndarray]:
        """All visited states, s_0 .. s_T (length len + 1)."""
        if not self.transitions:
            return []
        return [t.state for t in self.transitions] + [self.transitions[-1].next_state]


def reshape_reward(r: float, phi_s: float, phi_next: float, gamma: float) -> float:
    """Potential-based reshaping: r + gamma * phi(s') - phi(s)."""
    if not all(math.isfinite(v) for v in (r, phi_s, phi_next, gamma)):
        raise CoreError("non-finite shaping input")
    return r + gamma * phi_next - phi_s


def discounted_return(traj: Trajectory, gamma: float, use_shaped: bool = False) -> float:
    """Sum of gamma^t * r_t (or the shaped rewards) along a trajectory."""
    if len(traj) == 0:
        raise CoreError("empty trajectory")
    total = 0.0
    g = 1.0
    for t in traj.transitions:
        total += g * (t.shaped_reward if use_shaped else t.reward)
        g *= gamma
    return total


def h_step_return(traj_prefix: Trajectory, phi: ValueFn, gamma: float, h: HorizonSpec) -> float:
    """Telescoped H-step shaped objective over an H-transition prefix.

    Returns gamma^H * phi(s_H) + sum_{t<H} gamma^t r(s_t) - phi(s_0),
    which equals the discounted sum of shaped rewards produced with the
    same potential.
    """
    if len(traj_prefix) != h.h:
        raise CoreError(f"horizon mismatch: prefix has {len(traj_prefix)} transitions, "
                        f"expected {h.h}")
    raw = discounted_return(traj_prefix, gamma, use_shaped=False)
    s0 = traj_prefix.transitions[0].state
    s_h = traj_prefix.transitions[-1].next_state
    return gamma ** h.h * float(phi(s_h)) + raw - float(phi(s0))


def relabel_shaped(traj: Trajectory, phi: ValueFn, gamma: float) -> Trajectory:
    """Return a copy of ``traj`` with shaped rewards recomputed under ``phi``."""
    out = []
    for t in traj.transitions:
        shaped = reshape_reward(t.reward, float(phi(t.state)), float(phi(t.next_state)), gamma)
        out.append(Transition(t.state, t.action, t.reward, shaped, t.next_state, t.done))
    return Trajectory(tuple(out), seed=traj.seed)


# ---------------------------------------------------------------------------
# Trajectory serialization: one CSV row per transition.
# ---------------------------------------------------------------------------

def trajectory_to_csv(traj: Trajectory) -> str:
    """Serialize with columns step,state*,action*,reward,shaped_reward,next_state*,done."""
    if len(traj) == 0:
        raise CoreError("empty trajectory")
    sd = len(traj.transitions[0].state)
    ad = len(traj.transitions[0].action)
    header = (["step"]
              + [f"state{i}" for i in range(sd)]
              + [f"action{i}" for i in range(ad)]
              + ["reward", "shaped_reward"]
              + [f"next_state{i}" for i in range(sd)]
              + ["done"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for k, t in enumerate(traj.transitions):
        row = ([k] + [format(v, ".17g") for v in t.state]
               + [format(v, ".17g") for v in t.action]
               + [format(t.reward, ".17g"), format(t.shaped_reward, ".17g")]
               + [format(v, ".17g") for v in t.next_state]
               + [int(t.done)])
        w.writerow(row)
    return buf.getvalue()


def trajectory_from_csv(text: str, seed: int = 0) -> Trajectory:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    sd = sum(1 for c in header if c.startswith("state"))
    ad = sum(1 for c in header if c.startswith("action"))
    out = []
    for row in body:
        vals = row[1:]
        state = np.array([float(v) for v in vals[:sd]])
        action = np.array([float(v) for v in vals[sd:sd + ad]])
        reward = float(vals[sd + ad])
        shaped = float(vals[sd + ad + 1])
        nxt = np.array([float(v) for v in vals[sd + ad + 2:sd + ad + 2 + sd]])
        done = bool(int(vals[-1]))
        out.append(Transition(state, action, reward, shaped, nxt, done))
    return Trajectory(tuple(out), seed=seed)


def make_trajectory(states: Sequence[np.ndarray],
                    actions: Sequence[np.ndarray],
                    rewards: Sequence[float],
                    phi: ValueFn | None = None,
                    gamma: float = 0.99,
                    done_last: bool = True,
                    seed: int = 0) -> Trajectory:
    """Assemble a trajectory from aligned state/action/reward sequences.

    ``states`` has one more entry than ``actions``/``rewards``. Shaped
    rewards are filled from ``phi`` when given, else copied from raw.
    """
    if len(states) != len(actions) + 1 or len(actions) != len(rewards):
        raise CoreError("states must have len(actions)+1 entries")
    ts = []
    n = len(actions)
    for i in range(n):
        r = float(rewards[i])
        if phi is None:
            shaped = r
        else:
            shaped = reshape_reward(r, float(phi(np.asarray(states[i]))),
                                    float(phi(np.asarray(states[i + 1]))), gamma)
        ts.append(Transition(states[i], actions[i], r, shaped, states[i + 1],
                             done=(done_last and i == n - 1)))
    return Trajectory(tuple(ts), seed=seed)
