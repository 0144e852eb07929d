"""Sim/real environment pairs with controlled misspecification."""

from __future__ import annotations

from dataclasses import dataclass

from .base import Env
from .pendulum import (PendulumEnv, PendulumParams, PerturbationSpec,
                       pendulum_reward, pendulum_step, pendulum_success,
                       wrap_angle)
from .pusher import PusherEnv, PusherParams, pusher_reward, pusher_step, pusher_success
from .tabular import (TabularEnv, TabularGenError, TabularPairSpec,
                      make_tabular_pair, max_l1_gap, perturb_transitions,
                      random_mdp, shift_row_mass, sim_value_potential)

__all__ = [
    "Env", "EnvPair", "make_env_pair",
    "PendulumEnv", "PendulumParams", "PerturbationSpec",
    "pendulum_step", "pendulum_reward", "pendulum_success", "wrap_angle",
    "PusherEnv", "PusherParams", "pusher_step", "pusher_reward", "pusher_success",
    "TabularEnv", "TabularPairSpec", "TabularGenError", "make_tabular_pair",
    "random_mdp", "shift_row_mass", "perturb_transitions", "max_l1_gap",
    "sim_value_potential",
]


@dataclass(frozen=True)
class EnvPair:
    """A sim environment and its misspecified real twin."""

    name: str
    sim: Env
    real: Env


def make_env_pair(name: str, params: dict | None = None) -> EnvPair:
    """Build a named sim/real pair from config-style parameters.

    ``pendulum`` and ``pusher`` accept their dataclass fields as keys
    (perturbation fields nested under "perturbation"); ``tabular`` accepts
    TabularPairSpec fields plus ``episode_len``.
    """
    params = dict(params or {})
    if name == "pendulum":
        pert = params.pop("perturbation", None)
        if pert is not None:
            params["perturbation"] = PerturbationSpec(**pert)
        p = PendulumParams(**params)
        return EnvPair(name, PendulumEnv(p, real=False), PendulumEnv(p, real=True))
    if name == "pusher":
        p = PusherParams(**params)
        return EnvPair(name, PusherEnv(p, real=False), PusherEnv(p, real=True))
    if name == "tabular":
        episode_len = int(params.pop("episode_len", 40))
        spec = TabularPairSpec(**params)
        sim, real = make_tabular_pair(spec)
        return EnvPair(name,
                       TabularEnv(sim, episode_len, name="tabular_sim"),
                       TabularEnv(real, episode_len, name="tabular_real"))
    raise ValueError(f"unknown environment '{name}' (expected pendulum, pusher or tabular)")
