"""Executable certificates for the suboptimality analysis on tabular MDPs.

Every bound quantity (the value gap epsilon, the transition gap alpha,
the advantage slack delta, the reward and potential ranges) is computed
by exhaustive maximization over the finite instance; each certificate
records both sides of its inequality so a failure carries an auditable
witness.

Checked statements, with Phi the frozen potential and gamma the discount:

* model-return gap:  max_s |V-hat_H^pi - V_H^pi|
    <= gamma * ((1-gamma^(H-1))/(1-gamma) * dr/2 + gamma^H * dV/2) * alpha * H
* planner loss (derived form, the alpha*H*gamma factor restored from the
  proof):  max_s [V_H^* - V_H^{pi-hat}]
    <= gamma * ((1-gamma^(H-1))/(1-gamma) * dr + gamma^H * dV) * alpha * H
* monotonicity: improvability implies V_H^* >= V_{H-1}^* at every state
* advantage-to-return: policies with H-step advantage slack delta satisfy
    V* - V^pi <= gamma^H * epsilon + delta / (1-gamma)
* end-to-end: the receding-horizon policy planned under the model obeys
    V* - V^pi <= C1 * gamma/(1-gamma) * alpha * H + gamma^H * epsilon,
  with C1 = dr + (1-gamma) * gamma^(H-1) * dV made explicit.
* shaping invariance: greedy policies under the reshaped reward match the
  original optimal values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import DiscountSpec, HorizonSpec, TabularMDP
from .environments.tabular import (TabularPairSpec, make_tabular_pair,
                                   max_l1_gap, perturb_transitions, random_mdp,
                                   sim_value_potential)
from .rng import stream
from .solver import (TabularValueFn, check_improvability, h_step_dp,
                     h_step_policy_eval, oracle_mpc_policy, policy_evaluation,
                     value_iteration)

BOUND_TOL = 1e-9


@dataclass(frozen=True)
class BoundReport:
    """One checked inequality: passed iff lhs <= rhs + 1e-9."""

    instance_id: str
    kind: str
    epsilon: float
    alpha: float
    delta: float
    delta_r: float
    delta_v: float
    lhs: float
    rhs: float
    passed: bool
    slack: float
    witness_state: int | None = None
    hypothesis_failed: bool = False
    note: str = ""

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _report(instance_id, kind, *, lhs, rhs, epsilon=float("nan"), alpha=float("nan"),
            delta=float("nan"), delta_r=float("nan"), delta_v=float("nan"),
            witness=None, hypothesis_failed=False, note="") -> BoundReport:
    passed = bool(lhs <= rhs + BOUND_TOL) and not hypothesis_failed
    return BoundReport(instance_id, kind, float(epsilon), float(alpha), float(delta),
                       float(delta_r), float(delta_v), float(lhs), float(rhs),
                       passed, float(rhs - lhs), witness, hypothesis_failed, note)


def value_range(x: np.ndarray) -> float:
    return float(np.max(x) - np.min(x))


def perturb_model(mdp_real: TabularMDP, alpha: float, seed: int) -> TabularMDP:
    """A model tensor at max-(s,a) L1 distance exactly ``alpha`` from real."""
    if not (0.0 <= alpha <= 2.0):
        raise ValueError(f"alpha must lie in [0, 2], got {alpha}")
    rng = stream(seed, "perturb-model")
    t = perturb_transitions(mdp_real.transition, alpha, rng)
    return TabularMDP(mdp_real.n_states, mdp_real.n_actions, t, mdp_real.reward,
                      mdp_real.initial_dist, mdp_real.discount)


def _with_gamma(mdp: TabularMDP, gamma: float | None) -> TabularMDP:
    if gamma is None or gamma == mdp.gamma:
        return mdp
    return TabularMDP(mdp.n_states, mdp.n_actions, mdp.transition, mdp.reward,
                      mdp.initial_dist, DiscountSpec(gamma))


def verify_model_return_gap(real: TabularMDP, model: TabularMDP,
                            phi: TabularValueFn, h: HorizonSpec,
                            policy_seq: np.ndarray, gamma: float | None = None,
                            instance_id: str = "") -> BoundReport:
    """H-step returns of one policy under model vs true dynamics."""
    real = _with_gamma(real, gamma)
    model = _with_gamma(model, gamma)
    g = real.gamma
    v_real = h_step_policy_eval(real, phi, policy_seq)
    v_model = h_step_policy_eval(model, phi, policy_seq)
    diff = np.abs(v_model - v_real)
    alpha = max_l1_gap(real.transition, model.transition)
    dr, dv = value_range(real.reward), value_range(phi.values)
    hh = h.h
    rhs = g * ((1.0 - g ** (hh - 1)) / (1.0 - g) * dr / 2.0 + g ** hh * dv / 2.0) * alpha * hh
    witness = int(diff.argmax())
    return _report(instance_id, "model_return_gap", lhs=diff.max(), rhs=rhs,
                   alpha=alpha, delta_r=dr, delta_v=dv, witness=witness)


def verify_lemma_dyn(real: TabularMDP, model: TabularMDP, phi: TabularValueFn,
                     h: HorizonSpec, gamma: float | None = None,
                     instance_id: str = "") -> BoundReport:
    """Loss of the model-planned H-step policy, evaluated on real dynamics."""
    real = _with_gamma(real, gamma)
    model = _with_gamma(model, gamma)
    g = real.gamma
    sol_real = h_step_dp(real, phi, h)
    sol_model = h_step_dp(model, phi, h)
    # Time-major sequence of the model's stage-greedy actions.
    policy_seq = sol_model.policy[::-1]
    v_pi = h_step_policy_eval(real, phi, policy_seq)
    gap = sol_real.v[h.h] - v_pi
    alpha = max_l1_gap(real.transition, model.transition)
    dr, dv = value_range(real.reward), value_range(phi.values)
    hh = h.h
    rhs = g * ((1.0 - g ** (hh - 1)) / (1.0 - g) * dr + g ** hh * dv) * alpha * hh
    witness = int(gap.argmax())
    return _report(instance_id, "planner_loss", lhs=gap.max(), rhs=rhs,
                   alpha=alpha, delta_r=dr, delta_v=dv, witness=witness)


@dataclass(frozen=True)
class MonotonicityReport:
    instance_id: str
    improvable: bool
    slack: float
    max_violation: float        # max over (s, H) of V_{H-1} - V_H
    violations: int
    passed: bool
    witness: tuple[int, int] | None


def verify_monotonicity(real: TabularMDP, phi: TabularValueFn, h_max: int,
                        gamma: float | None = None,
                        instance_id: str = "") -> MonotonicityReport:
    """Check V_H^* >= V_{H-1}^* for all H <= h_max when phi is improvable.

    For non-improvable instances the observed violations are reported
    informationally (passed is then not asserted on the inequality).
    """
    real = _with_gamma(real, gamma)
    imp = check_improvability(real, phi)
    sol = h_step_dp(real, phi, HorizonSpec(h_max))
    diffs = sol.v[:-1] - sol.v[1:]          # (H, S): positive entries are violations
    max_violation = float(diffs.max())
    violations = int((diffs > BOUND_TOL).sum())
    witness = None
    if violations:
        k, s = np.unravel_index(int(diffs.argmax()), diffs.shape)
        witness = (int(s), int(k) + 1)
    passed = (max_violation <= BOUND_TOL) if imp.improvable else True
    return MonotonicityReport(instance_id, imp.improvable, imp.slack,
                              max_violation, violations, passed, witness)


def verify_subopt_bound(real: TabularMDP, phi: TabularValueFn, h: HorizonSpec,
                        policy: np.ndarray, gamma: float | None = None,
                        instance_id: str = "") -> BoundReport:
    """Advantage-slack suboptimality bound for a stationary policy."""
    real = _with_gamma(real, gamma)
    g = real.gamma
    imp = check_improvability(real, phi)
    if not imp.improvable:
        return _report(instance_id, "subopt_bound", lhs=0.0, rhs=0.0,
                       hypothesis_failed=True, witness=imp.worst_state,
                       note=f"improvability violated, slack {imp.slack:.3e}")
    sol = h_step_dp(real, phi, h)
    q_pi = sol.q[h.h - 1][np.arange(real.n_states), np.asarray(policy, dtype=int)]
    delta = float(np.max(sol.v[h.h] - q_pi))
    v_star = value_iteration(real, tol=1e-12).values.values
    epsilon = float(np.max(np.abs(phi.values - v_star)))
    v_pi = policy_evaluation(real, policy).values
    subopt = v_star - v_pi
    rhs = g ** h.h * epsilon + delta / (1.0 - g)
    witness = int(subopt.argmax())
    return _report(instance_id, "subopt_bound", lhs=subopt.max(), rhs=rhs,
                   epsilon=epsilon, delta=delta, witness=witness)


def verify_theorem1(real: TabularMDP, model: TabularMDP, phi: TabularValueFn,
                    h: HorizonSpec, gamma: float | None = None,
                    instance_id: str = "") -> BoundReport:
    """End-to-end bound for the receding-horizon policy planned on the model."""
    real = _with_gamma(real, gamma)
    model = _with_gamma(model, gamma)
    g = real.gamma
    imp = check_improvability(real, phi)
    if not imp.improvable:
        return _report(instance_id, "theorem1", lhs=0.0, rhs=0.0,
                       hypothesis_failed=True, witness=imp.worst_state,
                       note=f"improvability violated, slack {imp.slack:.3e}")
    policy = oracle_mpc_policy(model, phi, h)
    v_star = value_iteration(real, tol=1e-12).values.values
    v_pi = policy_evaluation(real, policy).values
    subopt = v_star - v_pi
    alpha = max_l1_gap(real.transition, model.transition)
    epsilon = float(np.max(np.abs(phi.values - v_star)))
    dr, dv = value_range(real.reward), value_range(phi.values)
    hh = h.h
    c1 = dr + (1.0 - g) * g ** (hh - 1) * dv
    rhs = c1 * g / (1.0 - g) * alpha * hh + g ** hh * epsilon
    witness = int(subopt.argmax())
    return _report(instance_id, "theorem1", lhs=subopt.max(), rhs=rhs,
                   epsilon=epsilon, alpha=alpha, delta_r=dr, delta_v=dv,
                   witness=witness, note=f"C1={c1:.6g}, C2=1")


def verify_pbrs_invariance(mdp: TabularMDP, phi: TabularValueFn,
                           instance_id: str = "", tol: float = 1e-8) -> BoundReport:
    """Greedy-under-reshaped-reward policies attain the original optimum.

    Solves the infinite-horizon problem under r and under the expected
    shaped reward per (s, a), then compares the two greedy policies'
    values under the ORIGINAL reward (argmax-level invariance: ties give
    different policies with equal values).
    """
    vi = value_iteration(mdp, tol=1e-12)
    # Action-dependent reshaped reward: r(s) + gamma * E[phi(s')] - phi(s).
    r_shaped = (mdp.reward[:, None] + mdp.gamma * (mdp.transition @ phi.values)
                - phi.values[:, None])
    v = np.zeros(mdp.n_states)
    for _ in range(10 ** 6):
        q = r_shaped + mdp.gamma * (mdp.transition @ v)
        new_v = q.max(axis=1)
        if np.max(np.abs(new_v - v)) <= 1e-12:
            v = new_v
            break
        v = new_v
    shaped_greedy = q.argmax(axis=1)
    v_orig = policy_evaluation(mdp, vi.policy).values
    v_shaped_pol = policy_evaluation(mdp, shaped_greedy).values
    diff = np.abs(v_orig - v_shaped_pol)
    witness = int(diff.argmax())
    rep = _report(instance_id, "pbrs_invariance", lhs=diff.max(), rhs=0.0,
                  witness=witness)
    passed = bool(diff.max() <= tol)
    return dataclasses.replace(rep, passed=passed, slack=float(tol - diff.max()))


# ---------------------------------------------------------------------------
# Suite drivers
# ---------------------------------------------------------------------------

def trap_instance() -> tuple[TabularMDP, TabularValueFn]:
    """3-state counterexample: every action leads from the high-potential
    state into an absorbing trap, so no action can sustain the potential."""
    t = np.zeros((3, 2, 3))
    t[0, :, 1] = 1.0            # both actions fall into the trap
    t[1, :, 1] = 1.0            # trap is absorbing
    t[2, :, 2] = 1.0
    mdp = TabularMDP(3, 2, t, np.zeros(3), np.array([1.0, 0.0, 0.0]),
                     DiscountSpec(0.9))
    return mdp, TabularValueFn(np.array([1.0, 0.0, 0.0]))


def random_time_varying_policy(n_states: int, n_actions: int, h: int,
                               rng: np.random.Generator) -> np.ndarray:
    """Random stochastic time-varying policy, (H, S, A) simplex rows."""
    raw = rng.dirichlet(np.ones(n_actions), size=(h, n_states))
    return raw


def _improvable_setup(seed: int, n_states: int, n_actions: int, gap: float,
                      gamma: float):
    spec = TabularPairSpec(n_states, n_actions, gap_alpha=gap,
                           force_improvable=True, seed=seed, gamma=gamma)
    sim, real = make_tabular_pair(spec)
    return sim, real, sim_value_potential(sim)


def run_suite(suite: str, n: int, seed: int, h_max: int = 8) -> list[BoundReport]:
    """Generate ``n`` random instances and run one verification suite.

    Instance sizes stay within |S| <= 12, |A| <= 5, H <= 8 so every
    quantity is computed exhaustively in seconds.
    """
    reports: list[BoundReport] = []
    for i in range(n):
        rng = stream(seed, suite, i)
        inst = f"{suite}-{seed}-{i}"
        if suite == "pbrs":
            s_n = int(rng.integers(2, 11))
            a_n = int(rng.integers(2, 5))
            mdp = random_mdp(s_n, a_n, rng, gamma=0.9)
            phi = TabularValueFn(rng.normal(0.0, 2.0, size=s_n))
            reports.append(verify_pbrs_invariance(mdp, phi, inst))
        elif suite == "lemma1":
            s_n = int(rng.integers(2, 9))
            a_n = int(rng.integers(2, 5))
            h = HorizonSpec(int(rng.integers(1, 5)))
            real = random_mdp(s_n, a_n, rng, gamma=0.9)
            alpha = float(rng.uniform(0.0, 0.6))
            model = perturb_model(real, alpha, seed=seed * 100003 + i)
            phi = TabularValueFn(rng.normal(0.0, 1.0, size=s_n))
            pol = random_time_varying_policy(s_n, a_n, h.h, rng)
            reports.append(verify_model_return_gap(real, model, phi, h, pol,
                                                   instance_id=inst))
        elif suite == "lemma2":
            s_n = int(rng.integers(2, 9))
            a_n = int(rng.integers(2, 5))
            h = HorizonSpec(int(rng.integers(1, 5)))
            real = random_mdp(s_n, a_n, rng, gamma=0.9)
            alpha = float(rng.uniform(0.0, 0.6))
            model = perturb_model(real, alpha, seed=seed * 100003 + i)
            phi = TabularValueFn(rng.normal(0.0, 1.0, size=s_n))
            reports.append(verify_lemma_dyn(real, model, phi, h, instance_id=inst))
        elif suite == "lemma4":
            s_n = int(rng.integers(3, 13))
            a_n = int(rng.integers(2, 6))
            h = HorizonSpec(int(rng.integers(1, h_max + 1)))
            gap = float(rng.uniform(0.1, 0.5))
            sim, real, phi = _improvable_setup(seed * 77003 + i, s_n, a_n, gap, 0.9)
            alpha = float(rng.uniform(0.0, 0.4))
            model = perturb_model(real, alpha, seed=seed * 55001 + i)
            policy = oracle_mpc_policy(model, phi, h)
            reports.append(verify_subopt_bound(real, phi, h, policy, instance_id=inst))
        elif suite == "theorem1":
            s_n = int(rng.integers(3, 13))
            a_n = int(rng.integers(2, 6))
            h = HorizonSpec(int(rng.integers(1, h_max + 1)))
            gap = float(rng.uniform(0.1, 0.5))
            sim, real, phi = _improvable_setup(seed * 88007 + i, s_n, a_n, gap, 0.9)
            alpha = float(rng.uniform(0.0, 0.4))
            model = perturb_model(real, alpha, seed=seed * 99013 + i)
            reports.append(verify_theorem1(real, model, phi, h, instance_id=inst))
        else:
            raise ValueError(f"unknown suite '{suite}'")
    return reports


def run_monotonicity_suite(n: int, seed: int, h_max: int = 8) -> list[MonotonicityReport]:
    """Improvable pairs must be stage-monotone; plus one trap violation."""
    reports = []
    for i in range(n):
        rng = stream(seed, "monotone", i)
        s_n = int(rng.integers(3, 13))
        a_n = int(rng.integers(2, 6))
        gap = float(rng.uniform(0.1, 0.6))
        sim, real, phi = _improvable_setup(seed * 13007 + i, s_n, a_n, gap, 0.9)
        reports.append(verify_monotonicity(real, phi, h_max,
                                           instance_id=f"monotone-{seed}-{i}"))
    mdp, phi = trap_instance()
    trap = verify_monotonicity(mdp, phi, h_max, instance_id="trap")
    reports.append(trap)
    return reports


def sweep_alpha(seed: int, alphas=(0.0, 0.1, 0.2, 0.4), n_seeds: int = 20,
                h: int = 2, n_states: int = 6, n_actions: int = 3) -> dict:
    """Mean measured suboptimality per alpha over model-perturbation seeds.

    The trend check asserts the seed-averaged suboptimality is
    nondecreasing in alpha (direction only; individual draws may cross).
    """
    sim, real, phi = _improvable_setup(seed, n_states, n_actions, 0.3, 0.9)
    v_star = value_iteration(real, tol=1e-12).values.values
    means = []
    all_pass = True
    for alpha in alphas:
        vals = []
        for k in range(n_seeds):
            model = perturb_model(real, alpha, seed=seed * 31 + 1000 * k)
            rep = verify_theorem1(real, model, phi, HorizonSpec(h))
            all_pass &= rep.passed
            policy = oracle_mpc_policy(model, phi, HorizonSpec(h))
            v_pi = policy_evaluation(real, policy).values
            vals.append(float(np.max(v_star - v_pi)))
        means.append(float(np.mean(vals)))
    tol = 1e-9
    nondecreasing = all(means[i] <= means[i + 1] + tol for i in range(len(means) - 1))
    return {"alphas": list(alphas), "mean_subopt": means,
            "nondecreasing": nondecreasing, "bounds_hold": all_pass}


def sweep_h(seed: int, h_values=(1, 2, 3, 4, 5, 6), phi_noise: float = 0.5,
            n_states: int = 6, n_actions: int = 3) -> dict:
    """Bound behaviour across horizons with a deliberately imperfect potential
    and an exact model (alpha = 0): the gamma^H * epsilon term must decay
    geometrically and the bound must hold at every H."""
    rng = stream(seed, "sweep-h")
    sim, real, phi0 = _improvable_setup(seed, n_states, n_actions, 0.3, 0.9)
    # Corrupt the potential away from V* while keeping improvability: shift
    # by a constant plus noise, then fall back to the clean potential if the
    # noise broke the hypothesis.
    noisy = phi0.values + rng.normal(0.0, phi_noise, size=n_states)
    phi = TabularValueFn(noisy)
    if not check_improvability(real, phi).improvable:
        phi = TabularValueFn(phi0.values + phi_noise)
    reports = [verify_theorem1(real, real, phi, HorizonSpec(h)) for h in h_values]
    eps_terms = [real.gamma ** h * r.epsilon for h, r in zip(h_values, reports)]
    decays = all(eps_terms[i] > eps_terms[i + 1] for i in range(len(eps_terms) - 1))
    return {"h_values": list(h_values),
            "epsilon_terms": eps_terms,
            "bounds_hold": all(r.passed for r in reports),
            "epsilon_term_decays": bool(decays),
            "measured_subopt": [r.lhs for r in reports]}


def adversarial_lemma1_ratio(h: int = 1, gamma: float = 0.9) -> dict:
    """Grid search over two-state instances for a near-tight model-gap case.

    At H = 1 moving alpha/2 mass from the low-potential to the
    high-potential successor makes the return gap equal the bound, so the
    certificate is not vacuous.
    """
    best = {"ratio": -np.inf}
    phi = TabularValueFn(np.array([0.0, 1.0]))
    for alpha in (0.2, 0.5, 1.0):
        for p_stay in (1.0, 0.8):
            t = np.zeros((2, 2, 2))
            t[:, :, 0] = p_stay
            t[:, :, 1] = 1.0 - p_stay
            real = TabularMDP(2, 2, t, np.array([0.0, 1.0]),
                              np.array([1.0, 0.0]), DiscountSpec(gamma))
            tm = t.copy()
            # Shift alpha/2 mass toward the high-potential state.
            shift = min(alpha / 2.0, p_stay)
            tm[:, :, 0] -= shift
            tm[:, :, 1] += shift
            model = TabularMDP(2, 2, tm, real.reward, real.initial_dist,
                               real.discount)
            policy = np.zeros((h, 2), dtype=int)
            rep = verify_model_return_gap(real, model, phi, HorizonSpec(h), policy)
            if rep.rhs > 0:
                ratio = rep.lhs / rep.rhs
                if ratio > best["ratio"]:
                    best = {"ratio": float(ratio), "alpha": alpha,
                            "p_stay": p_stay, "report": rep}
    return best
