"""Random tabular MDP pairs with a controlled transition gap.

``make_tabular_pair`` draws a sim MDP from a Dirichlet construction and
builds its "real" twin by moving probability mass inside transition rows
until the largest per-(s, a) L1 distance equals ``gap_alpha`` exactly.
With ``force_improvable`` the rows of the sim-greedy actions are left
untouched, so the sim value function provably stays improvable under the
real dynamics: at every state the greedy action still realizes the sim
transition distribution.

``TabularEnv`` wraps a tabular MDP as a continuous-interface environment
(one-hot observations, a scalar action binned into the discrete action
set) so the same policy-optimization stack runs on exactly solvable
instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DiscountSpec, TabularMDP
from ..solver import policy_evaluation, value_iteration
from .base import Env


class TabularGenError(ValueError):
    pass


@dataclass(frozen=True)
class TabularPairSpec:
    n_states: int
    n_actions: int
    gap_alpha: float = 0.0       # target max-(s,a) L1 transition gap
    force_improvable: bool = False
    seed: int = 0
    gamma: float = 0.9
    dirichlet_conc: float = 0.5

    def __post_init__(self):
        if self.n_states < 2 or self.n_actions < 2:
            raise TabularGenError("need n_states >= 2 and n_actions >= 2")
        if not (0.0 <= self.gap_alpha <= 2.0):
            raise TabularGenError(f"gap_alpha must lie in [0, 2], got {self.gap_alpha}")


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator,
               gamma: float = 0.9, dirichlet_conc: float = 0.5) -> TabularMDP:
    """Dirichlet transition rows, uniform initial distribution, U[0,1) rewards."""
    transition = rng.dirichlet(np.full(n_states, dirichlet_conc),
                               size=(n_states, n_actions))
    reward = rng.uniform(0.0, 1.0, size=n_states)
    initial = np.full(n_states, 1.0 / n_states)
    return TabularMDP(n_states, n_actions, transition, reward, initial,
                      DiscountSpec(gamma))


def shift_row_mass(row: np.ndarray, l1_target: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Return a probability row at L1 distance exactly ``l1_target`` from ``row``.

    Moves ``l1_target / 2`` mass onto the lowest-mass entry, draining the
    remaining entries proportionally. Raises if the row cannot host the
    move (the recipient already holds too much mass).
    """
    row = np.asarray(row, dtype=float)
    m = l1_target / 2.0
    if m == 0.0:
        return row.copy()
    minima = np.flatnonzero(row == row.min())
    rec = int(rng.choice(minima))
    headroom = 1.0 - row[rec]
    if m > headroom + 1e-12:
        raise TabularGenError(
            f"cannot realize L1 gap {l1_target}: recipient headroom {headroom:.3g}")
    out = row - row * (m / headroom)
    out[rec] = row[rec] + m
    return out


def row_l1_feasible(row: np.ndarray) -> float:
    """Largest L1 shift ``shift_row_mass`` can realize on this row."""
    return 2.0 * (1.0 - float(np.min(row)))


def max_l1_gap(p: np.ndarray, q: np.ndarray) -> float:
    """max over (s, a) of the L1 distance between transition rows."""
    return float(np.abs(p - q).sum(axis=2).max())


def perturb_transitions(transition: np.ndarray, alpha: float,
                        rng: np.random.Generator,
                        frozen: np.ndarray | None = None) -> np.ndarray:
    """Perturb rows so the max (s, a) L1 gap from ``transition`` is exactly alpha.

    ``frozen`` is an optional (S, A) boolean mask of rows to leave intact.
    One eligible row receives the exact target; the rest random sub-target
    shifts.
    """
    if alpha == 0.0:
        return transition.copy()
    s_n, a_n, _ = transition.shape
    out = transition.copy()
    eligible = [(s, a) for s in range(s_n) for a in range(a_n)
                if (frozen is None or not frozen[s, a])
                and row_l1_feasible(transition[s, a]) >= alpha - 1e-12]
    if not eligible:
        raise TabularGenError(f"no transition row can host an L1 gap of {alpha}")
    exact_idx = eligible[int(rng.integers(len(eligible)))]
    for s in range(s_n):
        for a in range(a_n):
            if frozen is not None and frozen[s, a]:
                continue
            if (s, a) == exact_idx:
                target = alpha
            else:
                target = min(rng.uniform(0.0, alpha),
                             row_l1_feasible(transition[s, a]))
            out[s, a] = shift_row_mass(transition[s, a], target, rng)
    return out


def make_tabular_pair(spec: TabularPairSpec) -> tuple[TabularMDP, TabularMDP]:
    """Build (sim, real) sharing rewards and start distribution."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed)))
    sim = random_mdp(spec.n_states, spec.n_actions, rng, spec.gamma,
                     spec.dirichlet_conc)
    frozen = None
    if spec.force_improvable:
        greedy = value_iteration(sim).policy
        frozen = np.zeros((spec.n_states, spec.n_actions), dtype=bool)
        frozen[np.arange(spec.n_states), greedy] = True
    real_t = perturb_transitions(sim.transition, spec.gap_alpha, rng, frozen)
    real = TabularMDP(spec.n_states, spec.n_actions, real_t, sim.reward,
                      sim.initial_dist, sim.discount)
    return sim, real


def sim_value_potential(sim: TabularMDP):
    """Exact V* of the sim MDP (the potential SGFT freezes), via greedy
    policy evaluation so the TD identity holds to solver precision."""
    greedy = value_iteration(sim).policy
    return policy_evaluation(sim, greedy)


class TabularEnv(Env):
    """Continuous-interface wrapper: one-hot observations, binned actions."""

    def __init__(self, mdp: TabularMDP, episode_len: int = 40, name: str = "tabular"):
        self.mdp = mdp
        self.name = name
        self.state_dim = 1
        self.obs_dim = mdp.n_states
        self.action_dim = 1
        self.action_low = np.array([-1.0])
        self.action_high = np.array([1.0])
        self.episode_len = episode_len

    def bin_action(self, action) -> np.ndarray:
        a = np.atleast_2d(np.asarray(action, dtype=float))[:, 0]
        idx = np.floor((np.clip(a, -1.0, 1.0) + 1.0) / 2.0 * self.mdp.n_actions)
        return np.clip(idx, 0, self.mdp.n_actions - 1).astype(int)

    def action_center(self, idx: int) -> np.ndarray:
        """Continuous action at the center of bin ``idx``."""
        return np.array([-1.0 + (2.0 * idx + 1.0) / self.mdp.n_actions])

    def sample_init(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([float(rng.choice(self.mdp.n_states, p=self.mdp.initial_dist))])

    def step(self, state, action, rng=None) -> np.ndarray:
        if rng is None:
            raise ValueError("tabular step requires an rng")
        s = np.asarray(state, dtype=float)
        single = s.ndim == 1
        s2 = np.atleast_2d(s)
        bins = self.bin_action(action)
        out = np.empty((s2.shape[0], 1))
        for i in range(s2.shape[0]):
            row = self.mdp.transition[int(s2[i, 0]), bins[i]]
            out[i, 0] = rng.choice(self.mdp.n_states, p=row)
        return out[0] if single else out

    def reward(self, state):
        s = np.asarray(state, dtype=float)
        if s.ndim == 1:
            return float(self.mdp.reward[int(s[0])])
        return self.mdp.reward[s[:, 0].astype(int)]

    def success(self, state):
        # Random tabular instances carry no success notion.
        s = np.asarray(state, dtype=float)
        return False if s.ndim == 1 else np.zeros(s.shape[0], dtype=bool)

    def observe(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        single = s.ndim == 1
        s2 = np.atleast_2d(s)
        obs = np.zeros((s2.shape[0], self.mdp.n_states))
        obs[np.arange(s2.shape[0]), s2[:, 0].astype(int)] = 1.0
        return obs[0] if single else obs

    def state_from_obs(self, obs) -> np.ndarray:
        o = np.asarray(obs, dtype=float)
        single = o.ndim == 1
        o2 = np.atleast_2d(o)
        state = o2.argmax(axis=1).astype(float)[:, None]
        return state[0] if single else state
