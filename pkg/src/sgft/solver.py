"""Exact dynamic programming on tabular MDPs.

Provides infinite-horizon value iteration, exact policy evaluation by
linear solve, the H-step shaped-objective recursion (stage values V_k,
stage Q tables, stage-greedy policies), the improvability check on a
potential, and the receding-horizon oracle policy built from the H-step
recursion.

Conventions: rewards are state-only; ties in every argmax break to the
lowest action index; the zero-step value V_0 is identically zero, which
makes the recursion agree exactly with the telescoped shaped objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HorizonSpec, TabularMDP


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class TabularValueFn:
    """Dense per-state value table, callable on a state index."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise SolverError("values must be a finite 1-D vector")
        object.__setattr__(self, "values", v)
        self.values.setflags(write=False)

    def __call__(self, state) -> float:
        idx = int(np.atleast_1d(np.asarray(state))[0])
        return float(self.values[idx])

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ValueIterationResult:
    values: TabularValueFn
    policy: np.ndarray  # greedy action per state
    iterations: int
    residual: float


@dataclass(frozen=True)
class HStepSolution:
    """All stages of the H-step shaped-objective recursion.

    v[k] is the optimal k-steps-remaining value (v[0] == 0). q[k-1] is the
    stage-k action-value table; policy[k-1] its greedy policy. The action
    an H-step planner takes *now* is ``policy[h-1]`` (all H steps remain);
    the action at elapsed time t is ``policy[h-1-t]``.
    """

    v: np.ndarray  # (H+1, S)
    q: np.ndarray  # (H, S, A)
    policy: np.ndarray  # (H, S) int

    @property
    def first_action_policy(self) -> np.ndarray:
        return self.policy[-1]

    def time_policy(self, t: int) -> np.ndarray:
        return self.policy[self.policy.shape[0] - 1 - t]


def bellman_backup(mdp: TabularMDP, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One optimality backup with state rewards: returns (new_v, q)."""
    q = mdp.reward[:, None] + mdp.gamma * (mdp.transition @ v)
    return q.max(axis=1), q


def value_iteration(mdp: TabularMDP, tol: float = 1e-10,
                    max_iters: int = 10 ** 6) -> ValueIterationResult:
    """Iterate the Bellman optimality operator to a sup-norm fixed point.

    Raises SolverError (carrying the final residual) if the residual does
    not drop below ``tol`` within ``max_iters`` sweeps.
    """
    if tol <= 0:
        raise SolverError("tol must be positive")
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for it in range(1, max_iters + 1):
        new_v, q = bellman_backup(mdp, v)
        residual = float(np.max(np.abs(new_v - v)))
        v = new_v
        if residual <= tol:
            return ValueIterationResult(TabularValueFn(v), q.argmax(axis=1), it, residual)
    raise SolverError(f"value iteration did not converge: residual {residual:.3e} "
                      f"after {max_iters} iterations (tol {tol:.1e})")


def policy_evaluation(mdp: TabularMDP, policy: np.ndarray) -> TabularValueFn:
    """Exact V^pi by solving (I - gamma * P_pi) V = r."""
    policy = np.asarray(policy, dtype=int)
    if policy.shape != (mdp.n_states,) or policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise SolverError("policy must map every state to a valid action index")
    p_pi = mdp.transition[np.arange(mdp.n_states), policy]  # (S, S)
    a = np.eye(mdp.n_states) - mdp.gamma * p_pi
    return TabularValueFn(np.linalg.solve(a, mdp.reward))


def _shaped_backup(mdp_real: TabularMDP, phi: np.ndarray,
                   v_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One stage of the shaped recursion.

    q_k(s, a) = sum_s' p(s'|s,a) * [r(s) + gamma*phi(s') - phi(s) + gamma*v_prev(s')]
              = r(s) - phi(s) + gamma * (P @ (phi + v_prev))(s, a)
    """
    base = mdp_real.reward - phi
    q = base[:, None] + mdp_real.gamma * (mdp_real.transition @ (phi + v_prev))
    return q.max(axis=1), q


def h_step_dp(mdp_real: TabularMDP, phi: TabularValueFn, h: HorizonSpec) -> HStepSolution:
    """Solve the H-step shaped objective exactly for every state and stage."""
    s, a = mdp_real.n_states, mdp_real.n_actions
    phi_v = phi.values
    if len(phi_v) != s:
        raise SolverError("potential length does not match n_states")
    v = np.zeros((h.h + 1, s))
    q = np.zeros((h.h, s, a))
    pol = np.zeros((h.h, s), dtype=int)
    for k in range(1, h.h + 1):
        v[k], q[k - 1] = _shaped_backup(mdp_real, phi_v, v[k - 1])
        pol[k - 1] = q[k - 1].argmax(axis=1)
    return HStepSolution(v=v, q=q, policy=pol)


@dataclass(frozen=True)
class ImprovabilityResult:
    improvable: bool
    worst_state: int
    slack: float

    def __iter__(self):
        return iter((self.improvable, self.worst_state, self.slack))


def check_improvability(mdp_real: TabularMDP, phi: TabularValueFn,
                        tol: float = 1e-10) -> ImprovabilityResult:
    """Check min_s [max_a gamma * E[phi(s')] - phi(s) + r(s)] >= 0.

    ``tol`` absorbs linear-solve rounding when phi is itself an exact
    value function (the defining case has slack exactly zero).
    """
    phi_v = phi.values
    gain = mdp_real.gamma * (mdp_real.transition @ phi_v).max(axis=1) - phi_v + mdp_real.reward
    worst = int(gain.argmin())
    slack = float(gain[worst])
    return ImprovabilityResult(slack >= -tol, worst, slack)


def oracle_mpc_policy(mdp_real: TabularMDP, phi: TabularValueFn,
                      h: HorizonSpec) -> np.ndarray:
    """Receding-horizon policy: at each state, the first action of the
    freshly re-solved H-step plan. Equals the full-horizon stage-greedy
    policy of ``h_step_dp`` at every state simultaneously."""
    return h_step_dp(mdp_real, phi, h).first_action_policy.copy()


def h_step_policy_eval(mdp: TabularMDP, phi: TabularValueFn,
                       policy_seq: np.ndarray) -> np.ndarray:
    """Exact H-step shaped return of a time-varying policy under ``mdp``.

    ``policy_seq`` is (H, S) of action indices or (H, S, A) of action
    probabilities, time-major (entry t is the policy applied at time t).
    Returns the vector of H-step shaped values from every start state.
    """
    policy_seq = np.asarray(policy_seq)
    h = policy_seq.shape[0]
    if policy_seq.ndim == 2:
        probs = np.zeros((h, mdp.n_states, mdp.n_actions))
        for t in range(h):
            probs[t, np.arange(mdp.n_states), policy_seq[t].astype(int)] = 1.0
    else:
        probs = policy_seq.astype(float)
    phi_v = phi.values
    base = mdp.reward - phi_v
    g = np.zeros(mdp.n_states)
    # Backward in time: step t contributes with k = H - t steps remaining.
    for t in range(h - 1, -1, -1):
        future = mdp.transition @ (phi_v + g)  # (S, A)
        g = base + mdp.gamma * np.einsum("sa,sa->s", probs[t], future)
    return g


def dump_dp_tables(mdp: TabularMDP, phi: TabularValueFn, h: HorizonSpec) -> dict:
    """JSON-ready dump of V*, the stage values V_k, and stage Q tables."""
    vi = value_iteration(mdp)
    sol = h_step_dp(mdp, phi, h)
    return {
        "gamma": mdp.gamma,
        "v_star": vi.values.values.tolist(),
        "greedy_policy": vi.policy.tolist(),
        "h": h.h,
        "v_h": sol.v.tolist(),
        "q_h": sol.q.tolist(),
        "stage_policy": sol.policy.tolist(),
    }
