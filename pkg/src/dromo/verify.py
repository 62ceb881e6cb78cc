"""Verification suites: each runs one checker over seeded random instances
and yields report rows (check_name, lhs, rhs, pass).

Brute-force oracles used by the suites live here too so that the harness is
self-contained.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .critic import (AssumptionViolation, CriticConfig, OnSupportRegime, beta_threshold, build_world,
                     check_gap_expanding, critic_objective, gap_expansion_threshold, lambda_expectation_bound,
                     mixed_backup, penalized_target, run_critic, solve_critic, variance_weights)
from .dro import ChiSquareBall, FiniteDistribution, robust_sup, variance_surrogate
from .dynamics import calibration_value_gap_check, fit_model
from .instances import OfflineInstance, oracle_constants, random_instance
from .linear import (FeatureMap, LinearCritic, linear_update, ntk_one_step_check, start_weights,
                     linear_threshold_terms, xi_slack)
from .mdp import BoundConstants, TabularMDP, bellman_expectation, exact_q
from .offline_data import Dataset, empirical_mdp

REPORT_COLUMNS = ("check_name", "lhs", "rhs", "pass")
RADII = (1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class Row:
    check_name: str
    lhs: float
    rhs: float
    passed: bool
    hard: bool = True


# --- oracles --------------------------------------------------------------------

def chi2_bruteforce(z: np.ndarray, q: np.ndarray, radius: float) -> float:
    """max E_p[Z] over the chi-square ball by enumerating the support of p.

    On a fixed support S the problem is a linear objective over an ellipsoid
    intersected with the face {sum_S p = 1}, which has a closed-form maximizer;
    every candidate that is a valid distribution is kept.
    """
    idx = np.flatnonzero(q > 0)
    best = -np.inf
    for k in range(1, idx.size + 1):
        for sub in itertools.combinations(idx, k):
            S = np.array(sub)
            qs, zs = q[S], z[S]
            mass = qs.sum()
            b = 1.0 - mass
            budget = radius - b - b**2 / mass
            if budget < -1e-15:
                continue
            if np.ptp(zs) == 0:
                # no spread to tilt along; rounding would make t blow up
                best = max(best, float(zs[0]))
                continue
            m = qs @ zs / mass
            v = qs @ (zs - m) ** 2
            t = np.sqrt(max(budget, 0.0) / v)
            p = qs + qs * b / mass + t * qs * (zs - m)
            if p.min() < -1e-12:
                continue
            best = max(best, float(p @ zs))
    return best


def coordinate_descent(world, cfg: CriticConfig, backup: np.ndarray, x0: np.ndarray | None = None,
                       max_sweeps: int = 20000, tol: float = 1e-14) -> np.ndarray:
    """Minimize the critic objective one action column at a time.

    With the rest of a row fixed, the row's pi_f-variance is a quadratic
    p_a (1 - p_a)(v - m_rest)^2 + (1 - p_a) V_rest in the free entry v, so each
    one-dimensional subproblem has a monotone derivative and is solved by
    bisection between the target and m_rest for all states at once. Rows whose
    optimum has zero spread sit on a kink where this method stalls, so each
    row is finally compared with its best constant row (the d_f-weighted mean
    of the target on the support of pi_f) and the lower objective is kept.
    """
    t = penalized_target(world, cfg.beta, backup)
    w, p = world.d_f, world.pi_f
    kap = variance_weights(world, cfg.alpha)
    x = t.copy() if x0 is None else np.array(x0, dtype=float)
    S, A = x.shape
    for _ in range(max_sweeps):
        old = x.copy()
        for a in range(A):
            pa = p[:, a]
            rest = 1.0 - pa
            po = p.copy()
            po[:, a] = 0.0
            m_o = np.divide((po * x).sum(1), rest, out=np.zeros(S), where=rest > 0)
            v_o = np.divide((po * (x - m_o[:, None]) ** 2).sum(1), rest, out=np.zeros(S), where=rest > 0)
            qa, qb = pa * rest, rest * v_o
            wa, ta = w[:, a], t[:, a]

            def slope(v):
                r = np.sqrt(qa * (v - m_o) ** 2 + qb)
                return wa * (v - ta) + np.divide(kap * qa * (v - m_o), r, out=np.zeros(S), where=r > 0)

            lo = np.minimum(ta, m_o) - 1e-12
            hi = np.maximum(ta, m_o) + 1e-12
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                up = slope(mid) > 0
                hi = np.where(up, mid, hi)
                lo = np.where(up, lo, mid)
                if np.all(hi - lo < 1e-15 * np.maximum(1.0, np.abs(hi))):
                    break
            x[:, a] = 0.5 * (lo + hi)
        if np.max(np.abs(x - old)) < tol:
            break
    on = p > 0
    wp = np.where(on, w, 0.0)
    c = np.divide((wp * t).sum(1), wp.sum(1), out=(p * t).sum(1), where=wp.sum(1) > 0)
    flat = np.where(on, c[:, None], t)

    def row_obj(y):
        m = (p * y).sum(1, keepdims=True)
        return 0.5 * (w * (y - t) ** 2).sum(1) + kap * np.sqrt((p * (y - m) ** 2).sum(1))

    better = row_obj(flat) < row_obj(x)
    x[better] = flat[better]
    return x


def finite_difference_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    flat = g.reshape(-1)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        e = e.reshape(x.shape)
        flat[i] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def collapse_ratio(world, cfg: CriticConfig, backup: np.ndarray) -> np.ndarray:
    """kappa_s over the largest kappa that still leaves row s with positive spread."""
    t = penalized_target(world, cfg.beta, backup)
    w, p = world.d_f, world.pi_f
    on = p > 0
    wp = np.where(on, w, 0.0)
    m = (wp * t).sum(1) / np.maximum(wp.sum(1), 1e-300)
    limit = np.sqrt((wp**2 * (t - m[:, None]) ** 2 / np.where(on, p, 1.0)).sum(1))
    kap = variance_weights(world, cfg.alpha)
    return np.divide(kap, limit, out=np.full(kap.shape, np.inf), where=limit > 0)


# --- instance helpers -------------------------------------------------------------

def _sizes(rng, max_s: int = 6, max_a: int = 4) -> tuple[int, int]:
    return int(rng.integers(2, max_s + 1)), int(rng.integers(2, max_a + 1))


def _instance(rng, **kw) -> OfflineInstance:
    S, A = _sizes(rng)
    return random_instance(rng, S, A, f=float(rng.uniform(0.2, 0.8)), **kw)


def _mu_pi(inst: OfflineInstance) -> np.ndarray:
    return inst.truth.initial_dist[:, None] * inst.policy


def adversarial_instance(f: float = 0.5, gamma: float = 0.9) -> OfflineInstance:
    """A lucky dataset: the only transition seen from the start reaches the rewarding state,
    which the truth reaches one time in ten."""
    T = np.zeros((3, 1, 3))
    T[0, 0] = [0.0, 0.1, 0.9]
    T[1, 0, 1] = 1.0
    T[2, 0, 2] = 1.0
    r = np.array([[0.0], [1.0], [0.0]])
    truth = TabularMDP(T, r, np.array([1.0, 0.0, 0.0]), gamma)
    s = np.array([0, 1, 1, 2, 2, 2])
    s2 = np.array([1, 1, 1, 2, 2, 2])
    data = Dataset(s, np.zeros(6, dtype=int), s2, r[s, 0])
    model = fit_model(data, truth.shape, 0.5, gamma, truth.initial_dist)
    empirical = empirical_mdp(data, truth.shape, 0.0, gamma, truth.initial_dist)
    one = np.ones((3, 1))
    world = build_world(model, data, one, one, f)
    return OfflineInstance(truth, data, one, one, model, empirical, world)


# --- suites -----------------------------------------------------------------------

def suite_duchi(rng, n: int) -> Iterator[Row]:
    for i in range(n):
        k = int(rng.integers(1, 9))
        z = rng.normal(size=k)
        q = rng.dirichlet(np.ones(k))
        radius = RADII[i % len(RADII)]
        dist = FiniteDistribution(z, q)
        sup, _ = robust_sup(ChiSquareBall(dist, radius))
        sur = variance_surrogate(dist, radius)
        yield Row(f"duchi[{i}]", sup, sur, sup <= sur + 1e-12 * (1 + abs(sur)))
        if k <= 4:
            err = abs(sup - chi2_bruteforce(z, q, radius))
            yield Row(f"duchi_bruteforce[{i}]", err, 1e-4, err <= 1e-4)


def stationarity_case(rng) -> tuple:
    """A random world, config and backup with alpha capped below row collapse."""
    inst = _instance(rng)
    w = inst.world
    cfg = CriticConfig(alpha=float(rng.uniform(0.05, 0.5)), beta=float(rng.uniform(0, 1)), f=w.f)
    q = rng.normal(size=w.shape)
    backup = mixed_backup(q, inst.model, inst.empirical, inst.policy, w.f)
    ratio = collapse_ratio(w, cfg, backup).max()
    if ratio > 0.8:
        cfg = cfg.with_(alpha=cfg.alpha * 0.8 / ratio)
    return inst, cfg, q, backup


def suite_lemma1(rng, n: int) -> Iterator[Row]:
    for i in range(n):
        inst, cfg, q, backup = stationarity_case(rng)
        w = inst.world
        x = solve_critic(w, cfg, backup)
        fd = finite_difference_gradient(lambda y: critic_objective(y, w, cfg, backup), x)
        g = float(np.abs(fd).max())
        yield Row(f"lemma1_stationary[{i}]", g, 1e-5, g <= 1e-5)
        err = float(np.abs(x - coordinate_descent(w, cfg, backup)).max())
        yield Row(f"lemma1_minimizer[{i}]", err, 1e-5, err <= 1e-5)


def _lower_bound_row(name: str, inst: OfflineInstance, cfg: CriticConfig, expect_hold: bool = True) -> Row:
    run = run_critic(inst.world, cfg, inst.model, inst.empirical, k_max=5000, tol=1e-10)
    mp = _mu_pi(inst)
    lhs = float((mp * run.q).sum())
    rhs = float((mp * exact_q(inst.truth, inst.policy)).sum())
    ok = lhs <= rhs if expect_hold else lhs > rhs
    return Row(name, lhs, rhs, ok and run.converged)


def suite_thm2(rng, n: int) -> Iterator[Row]:
    adv = adversarial_instance()
    const = oracle_constants(adv.truth, adv.empirical, adv.world.n_total)
    base = CriticConfig(f=adv.world.f)
    yield _lower_bound_row("thm2_adversarial_beta0_fails", adv, base, expect_hold=False)
    thr = beta_threshold(adv.world, base, adv.model, adv.truth, constants=const)
    yield _lower_bound_row("thm2_adversarial_beta_threshold", adv, base.with_(beta=2 * thr))
    i = 0
    while i < n:
        inst = _instance(rng)
        const = oracle_constants(inst.truth, inst.empirical, inst.world.n_total)
        cfg = CriticConfig(alpha=float(rng.uniform(0, 0.5)), f=inst.world.f)
        try:
            thr = beta_threshold(inst.world, cfg, inst.model, inst.truth, constants=const)
        except OnSupportRegime:
            continue
        yield _lower_bound_row(f"thm2[{i}]", inst, cfg.with_(beta=2 * thr))
        i += 1


def suite_thm4(rng, n: int) -> Iterator[Row]:
    i = 0
    while i < n:
        inst = _instance(rng)
        w = inst.world
        if np.allclose(w.rho, w.d, rtol=0, atol=1e-14):
            continue
        const = oracle_constants(inst.truth, inst.empirical, w.n_total)
        cfg = CriticConfig(alpha=float(rng.uniform(0, 0.5)), f=w.f)
        thr = max(beta_threshold(w, cfg, inst.model, inst.truth, constants=const), gap_expansion_threshold(w, cfg))
        run = run_critic(w, cfg.with_(beta=2 * thr), inst.model, inst.empirical, k_max=200, tol=1e-8, record=True)
        margin = min(r.gap_hat - r.gap_true for r in (check_gap_expanding(x, b, w) for b, x in run.history))
        yield Row(f"thm4_expands[{i}]", margin, 0.0, margin > 0)
        plain = run_critic(w, CriticConfig(f=w.f), inst.model, inst.empirical, k_max=200, tol=1e-8, record=True)
        diff = max(abs(r.gap_hat - r.gap_true) for r in (check_gap_expanding(x, b, w) for b, x in plain.history))
        yield Row(f"thm4_unpenalized_equal[{i}]", diff, 1e-10, diff <= 1e-10)
        i += 1


def linear_case(rng, features: str = "random"):
    inst = _instance(rng)
    w = inst.world
    S, A = w.shape
    n = S * A
    fm = FeatureMap.random(rng, n, -(-n // 2)) if features == "random" else FeatureMap.identity(n)
    q_k = exact_q(inst.model.mdp_hat, inst.policy)
    backup = mixed_backup(q_k, inst.model, inst.empirical, inst.policy, w.f)
    omega_k = np.linalg.lstsq(fm.features, q_k.reshape(-1), rcond=None)[0]
    return inst, fm, q_k, backup, omega_k


def suite_thm5(rng, n: int) -> Iterator[Row]:
    i = rejected = 0
    while i < n:
        inst, fm, q_k, backup, omega_k = linear_case(rng)
        w = inst.world
        const = oracle_constants(inst.truth, inst.empirical, w.n_total)
        cfg = CriticConfig(alpha=float(rng.uniform(0, 0.5)), f=w.f)
        start = start_weights(inst.truth, inst.policy)
        try:
            terms = linear_threshold_terms(w, cfg, fm, omega_k, backup, start, xi_slack(w, inst.model, inst.truth, const))
        except OnSupportRegime:
            rejected += 1
            continue
        cfg = cfg.with_(beta=max(0.0, 1.5 * terms.value))
        lin = float(start @ (fm.features @ linear_update(omega_k, fm, w, cfg, backup)))
        tab = float(start @ backup.reshape(-1))
        tru = float(start @ bellman_expectation(inst.truth, inst.policy, q_k).reshape(-1))
        yield Row(f"thm5_vs_tabular[{i}]", lin, tab, lin <= tab + 1e-10 * (1 + abs(tab)))
        yield Row(f"thm5_vs_truth[{i}]", lin, tru, lin <= tru + 1e-10 * (1 + abs(tru)))

        ident = FeatureMap.identity(fm.features.shape[0])
        plain = CriticConfig(beta=float(rng.uniform(0, 1)), f=w.f)
        omega = linear_update(np.zeros(ident.dim), ident, w, plain, backup).reshape(w.shape)
        err = float(np.abs(omega - solve_critic(w, plain, backup)).max())
        yield Row(f"thm5_identity_combo[{i}]", err, 1e-6, err <= 1e-6)
        i += 1
    yield Row("thm5_rejected_worlds", float(rejected), float(n + rejected), True, hard=False)


def suite_ntk(rng, n: int) -> Iterator[Row]:
    for i in range(n):
        inst = _instance(rng)
        w = inst.world
        S, A = w.shape
        dim = int(rng.integers(1, S * A + 1))
        fm = FeatureMap.random(rng, S * A, dim)
        critic = LinearCritic(rng.normal(size=dim), float(rng.uniform(0.01, 0.5)))
        q = fm.q(critic.weights, w.shape)
        backup = mixed_backup(q, inst.model, inst.empirical, inst.policy, w.f)
        truth_backup = bellman_expectation(inst.truth, inst.policy, q)
        xi = float(np.abs(backup - truth_backup).max())
        start = start_weights(inst.truth, inst.policy)
        cfg = CriticConfig(alpha=float(rng.uniform(0, 0.5)), beta=0.0, f=w.f)
        probe = ntk_one_step_check(critic, fm, w, cfg, backup, None, truth_backup, start, xi)
        if probe.beta_condition is not None:
            cfg = cfg.with_(beta=max(0.0, 1.5 * probe.beta_condition))
        rep = ntk_one_step_check(critic, fm, w, cfg, backup, None, truth_backup, start, xi)
        yield Row(f"ntk_decomposition[{i}]", rep.max_error, 1e-8, rep.max_error <= 1e-8)
        if rep.bound_lhs is not None:
            yield Row(f"ntk_lower_bound[{i}]", rep.bound_lhs, rep.bound_rhs, rep.bound_lhs <= rep.bound_rhs + 1e-12)


def suite_calibration(rng, n: int) -> Iterator[Row]:
    for i in range(n):
        inst = _instance(rng, model_smoothing=float(rng.choice([0.0, 0.5])),
                         n_transitions=int(rng.choice([50, 200, 1000])))
        rep = calibration_value_gap_check(inst.model, inst.truth, inst.policy, BoundConstants(r_max=inst.truth.r_max))
        yield Row(f"calibration[{i}]", rep.gap, rep.bound, rep.passed)


def suite_bound_c(rng, n: int) -> Iterator[Row]:
    i = rejected = 0
    while i < n:
        inst = _instance(rng)
        w = inst.world
        q = rng.normal(scale=rng.uniform(0.5, 3.0), size=w.shape)
        cfg = CriticConfig(alpha=float(rng.uniform(0, 1)), f=w.f)
        try:
            chk = lambda_expectation_bound(w, cfg, BoundConstants(r_max=1.0, kappa_var=1.0), q)
        except AssumptionViolation:
            rejected += 1
            continue
        yield Row(f"bound_c[{i}]", chk.lhs, chk.rhs, chk.passed)
        i += 1
    yield Row("bound_c_rejected_instances", float(rejected), float(n + rejected), True, hard=False)


SUITES: dict[str, tuple[int, Callable, int]] = {
    # name: (stream id, suite, default instance count)
    "duchi": (1, suite_duchi, 200),
    "lemma1": (2, suite_lemma1, 100),
    "thm2": (3, suite_thm2, 100),
    "thm4": (4, suite_thm4, 100),
    "thm5": (5, suite_thm5, 50),
    "ntk": (6, suite_ntk, 50),
    "calibration": (7, suite_calibration, 50),
    "bound_c": (8, suite_bound_c, 100),
}


def run_suite(name: str, seed: int, n_instances: int | None = None) -> list[Row]:
    if name == "all":
        return [row for key in SUITES for row in run_suite(key, seed, n_instances)]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join([*SUITES, 'all'])}")
    stream, fn, default = SUITES[name]
    rng = np.random.default_rng([seed, stream])
    return list(fn(rng, default if n_instances is None else n_instances))


def write_report(rows: list[Row], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow([r.check_name, repr(float(r.lhs)), repr(float(r.rhs)), int(r.passed)])


def failures(rows: list[Row]) -> list[Row]:
    return [r for r in rows if r.hard and not r.passed]
