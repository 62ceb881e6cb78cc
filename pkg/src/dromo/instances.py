"""Seeded random offline problems used by the verification suites and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .critic import InterpolatedWorld, build_world
from .dynamics import LearnedModel, fit_model, tv_distance
from .mdp import BoundConstants, TabularMDP, random_mdp, random_policy
from .offline_data import Dataset, empirical_mdp, generate_dataset


@dataclass(frozen=True, eq=False)
class OfflineInstance:
    truth: TabularMDP
    data: Dataset
    behavior: np.ndarray
    policy: np.ndarray
    model: LearnedModel
    empirical: TabularMDP
    world: InterpolatedWorld


def random_instance(rng: np.random.Generator, n_states: int, n_actions: int, *, gamma: float = 0.9,
                    f: float = 0.5, n_transitions: int = 200, episode_length: int = 20,
                    model_smoothing: float = 0.5, policy_concentration: float = 0.5) -> OfflineInstance:
    """Random truth, behavior and evaluation policies, a dataset, and the derived world.

    The model is a smoothed count model and the empirical MDP the raw counts;
    both use the true start distribution, which the bounds take as known.
    """
    truth = random_mdp(rng, n_states, n_actions, gamma)
    behavior = random_policy(rng, n_states, n_actions)
    policy = random_policy(rng, n_states, n_actions, policy_concentration)
    data = generate_dataset(truth, behavior, n_transitions, int(rng.integers(2**31)), episode_length)
    shape = truth.shape
    model = fit_model(data, shape, model_smoothing, gamma, truth.initial_dist)
    empirical = empirical_mdp(data, shape, 0.0, gamma, truth.initial_dist)
    world = build_world(model, data, policy, behavior, f)
    return OfflineInstance(truth, data, behavior, policy, model, empirical, world)


def oracle_constants(truth: TabularMDP, empirical: TabularMDP, n_total: int, kappa_var: float = 1.0) -> BoundConstants:
    """Constants read off the truth: the smallest C_{r,T,delta} covering the empirical MDP's error.

    C R_max / ((1 - g) sqrt|D|) must dominate |r~ - r| + 2 g R_max / (1 - g) TV(T~, T)
    at every pair; with the truth available this is computed rather than assumed.
    """
    g = truth.gamma
    rmax = truth.r_max
    dev = np.abs(empirical.reward - truth.reward) + 2 * g * rmax / (1 - g) * tv_distance(empirical, truth)
    c = float(dev.max()) * (1 - g) * np.sqrt(n_total) / rmax
    return BoundConstants(r_max=rmax, c_rt_delta=c, kappa_var=kappa_var)
