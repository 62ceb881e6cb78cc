"""COMBO and MOPO on the same plumbing as the DROMO critic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .critic import CriticConfig, InterpolatedWorld, critic_update
from .dynamics import LearnedModel, fit_model, uncertainty
from .loop import LoopConfig, LoopState, Trace, actor_update, mean_q, polyak, run_dromo, start_distribution
from .mdp import TabularMDP, bellman_expectation, occupancy, policy_return
from .offline_data import Dataset

MOPO_TRACE_COLUMNS = ("iter", "alpha_t", "mean_q", "return_on_truth", "return_on_model")


@dataclass(frozen=True)
class MopoConfig:
    lambda_pen: float = 0.0
    delta_t: float = 0.0
    eta_alpha: float = 0.01
    auto_temp: bool = False
    max_steps: int = 1000

    def __post_init__(self):
        if self.eta_alpha <= 0:
            raise ValueError("eta_alpha must be positive")
        if self.lambda_pen < 0:
            raise ValueError("lambda_pen must be nonnegative")


def combo_critic_update(q_prev: np.ndarray, world: InterpolatedWorld, cfg: CriticConfig, model, empirical,
                        policy: np.ndarray | None = None) -> np.ndarray:
    """T_hat Q - beta (rho - d) / d_f: the DROMO update with alpha forced to 0."""
    return critic_update(q_prev, world, cfg.with_(alpha=0.0), model, empirical, policy)


def mopo_penalized_mdp(model: LearnedModel, lambda_pen: float) -> TabularMDP:
    """Model MDP with reward r_hat - lambda * entropy(T_hat(.|s, a))."""
    mdp = model.mdp_hat
    if lambda_pen == 0:
        return mdp
    return mdp.replace(reward=mdp.reward - lambda_pen * uncertainty(model))


def expected_log_likelihood(model: LearnedModel, visit: np.ndarray, samples: Dataset) -> float:
    """E[log T_hat(s'|s, a)] over ``samples``, each pair reweighted to its visit mass.

    Pairs with visit mass but no samples are dropped and the weights renormalized.
    """
    T = model.mdp_hat.transition
    S, A = model.shape
    n = np.zeros((S, A))
    np.add.at(n, (samples.s, samples.a), 1.0)
    mass = np.where(n > 0, visit, 0.0)
    if mass.sum() <= 0:
        raise ValueError("visit distribution has no mass on sampled pairs")
    w = mass[samples.s, samples.a] / n[samples.s, samples.a] / mass.sum()
    p = T[samples.s, samples.a, samples.s_next]
    if np.any((p <= 0) & (w > 0)):
        raise ValueError("model assigns zero probability to an observed transition")
    return float(w @ np.log(np.where(p > 0, p, 1.0)))


def mopo_temperature_step(alpha_t: float, model: LearnedModel, visit: np.ndarray, samples: Dataset,
                          cfg: MopoConfig) -> float:
    """alpha <- max(0, alpha - eta (E[log T_hat] + delta_T))."""
    if alpha_t < 0:
        raise ValueError("alpha_t must be nonnegative")
    return max(0.0, alpha_t - cfg.eta_alpha * (expected_log_likelihood(model, visit, samples) + cfg.delta_t))


def evaluate(mdp: TabularMDP, policy: np.ndarray, q0: np.ndarray, k_max: int, tol: float) -> np.ndarray:
    """Fitted evaluation: iterate T^pi on ``mdp`` from ``q0``."""
    q = q0
    for _ in range(k_max):
        new = bellman_expectation(mdp, policy, q)
        done = np.max(np.abs(new - q)) < tol
        q = new
        if done:
            break
    return q


def run_mopo(truth: TabularMDP, dataset: Dataset, mopo: MopoConfig, loop: LoopConfig = LoopConfig(),
             model: LearnedModel | None = None) -> tuple[LoopState, Trace]:
    """Actor-critic on the uncertainty-penalized model, with optional dual temperature steps.

    Stops after ``loop.max_iters`` iterations (``mopo.max_steps`` when the
    temperature adapts) or once both the policy and the temperature settle.
    """
    shape = truth.shape
    if model is None:
        mu0 = start_distribution(dataset, shape[0], loop.start_mode)
        model = fit_model(dataset, shape, loop.model_smoothing, truth.gamma, mu0)
    pi0 = np.full(shape, 1.0 / shape[1])
    state = LoopState(np.zeros(shape), np.zeros(shape), pi0, pi0.copy(), loop.tau,
                      start_dist=model.mdp_hat.initial_dist)
    alpha_t = mopo.lambda_pen
    trace = Trace()
    n_iters = mopo.max_steps if mopo.auto_temp else loop.max_iters
    for it in range(1, n_iters + 1):
        penalized = mopo_penalized_mdp(model, alpha_t)
        evaluated = state.policy_target
        q = evaluate(penalized, evaluated, state.q_target, loop.critic_iters, loop.critic_tol)
        new_pi = actor_update(q, loop.entropy_weight)
        change = float(np.max(np.abs(new_pi - state.policy)))
        state.q, state.policy, state.evaluated = q, new_pi, evaluated
        state.q_target = polyak(q, state.q_target, loop.tau)
        state.policy_target = polyak(new_pi, state.policy_target, loop.tau, simplex=True)
        state.iter = it
        trace.add(iter=it, alpha_t=alpha_t, mean_q=mean_q(model.mdp_hat, evaluated, q),
                  return_on_truth=policy_return(truth, new_pi), return_on_model=policy_return(model.mdp_hat, new_pi))
        moved = 0.0
        if mopo.auto_temp:
            visit = occupancy(model.mdp_hat, new_pi)
            new_alpha = mopo_temperature_step(alpha_t, model, visit, dataset, mopo)
            moved = abs(new_alpha - alpha_t)
            alpha_t = new_alpha
        if change < 1e-8 and moved < 1e-12:
            break
    state.alpha_t = alpha_t
    return state, trace


def run_baseline(kind: str, truth: TabularMDP, dataset: Dataset, cfg: CriticConfig | None = None,
                 loop: LoopConfig = LoopConfig(), mopo: MopoConfig | None = None, seed: int = 0):
    """Returns (final state, trace); COMBO is the DROMO loop with alpha = 0."""
    if kind == "combo":
        cfg = cfg or CriticConfig()
        return run_dromo(truth, dataset, cfg.with_(alpha=0.0), loop, seed)
    if kind == "mopo":
        return run_mopo(truth, dataset, mopo or MopoConfig(), loop)
    raise ValueError(f"unknown baseline {kind!r}")
