"""End-to-end acceptance checks, one test per criterion."""

from __future__ import annotations

import subprocess
import sys
import time

import numpy as np
import pytest

from dromo.baselines import MopoConfig, combo_critic_update, expected_log_likelihood, run_baseline, run_mopo
from dromo.critic import CriticConfig, build_world
from dromo.dynamics import fit_model
from dromo.envs import entropy_chain
from dromo.loop import LoopConfig, run_dromo
from dromo.mdp import exact_q, occupancy, random_mdp, random_policy
from dromo.offline_data import empirical_mdp, generate_dataset
from dromo.verify import failures, run_suite

SEED = 42


def _timed(name):
    t0 = time.perf_counter()
    rows = run_suite(name, SEED)
    return rows, time.perf_counter() - t0


def _named(rows, prefix):
    return [r for r in rows if r.check_name.startswith(prefix + "[")]


def test_criterion_01_robust_sup_below_surrogate(verdict):
    rows, secs = _timed("duchi")
    sup = _named(rows, "duchi")
    brute = _named(rows, "duchi_bruteforce")
    ok = len(sup) == 200 and bool(brute) and not failures(rows) and secs < 10
    assert verdict(1, ok, f"{len(sup)} distributions, {len(brute)} brute-force checks, "
                          f"{len(failures(rows))} violations, {secs:.1f}s")


def test_criterion_02_critic_update_is_stationary(verdict):
    rows, secs = _timed("lemma1")
    stat = _named(rows, "lemma1_stationary")
    mini = _named(rows, "lemma1_minimizer")
    worst = max(r.lhs for r in stat + mini)
    ok = len(stat) == len(mini) == 100 and not failures(rows) and secs < 60
    assert verdict(2, ok, f"100 worlds, worst partial/mismatch {worst:.2e}, {secs:.1f}s")


def test_criterion_03_lower_bound(verdict):
    rows, secs = _timed("thm2")
    inst = _named(rows, "thm2")
    adv = {r.check_name: r.passed for r in rows if "adversarial" in r.check_name}
    ok = len(inst) == 100 and all(adv.values()) and len(adv) == 2 and not failures(rows) and secs < 120
    assert verdict(3, ok, f"{sum(r.passed for r in inst)}/100 instances hold, adversarial beta=0 fails as "
                          f"expected: {adv.get('thm2_adversarial_beta0_fails')}, {secs:.1f}s")


def test_criterion_04_gap_expansion(verdict):
    rows, secs = _timed("thm4")
    exp = _named(rows, "thm4_expands")
    eq = _named(rows, "thm4_unpenalized_equal")
    ok = len(exp) == len(eq) == 100 and not failures(rows)
    assert verdict(4, ok, f"strict expansion on {sum(r.passed for r in exp)}/100, "
                          f"unpenalized max gap difference {max(r.lhs for r in eq):.1e}, {secs:.1f}s")


def test_criterion_05_reductions(verdict, tmp_path):
    truth = random_mdp(np.random.default_rng(SEED), 4, 2, 0.9)
    data = generate_dataset(truth, np.full((4, 2), 0.5), 2000, SEED)
    loop = LoopConfig(max_iters=8, rho_mode="buffer", rollouts_k=20, rollout_h=20)
    cfg = CriticConfig(alpha=0.0, beta=0.5)
    run_baseline("combo", truth, data, cfg.with_(alpha=0.8), loop, seed=SEED)[1].write(tmp_path / "combo.csv")
    run_dromo(truth, data, cfg, loop, seed=SEED)[1].write(tmp_path / "dromo.csv")
    same_trace = (tmp_path / "combo.csv").read_bytes() == (tmp_path / "dromo.csv").read_bytes()

    model = fit_model(data, truth.shape, 0.0, truth.gamma, truth.initial_dist)
    emp = empirical_mdp(data, truth.shape, 0.0, truth.gamma, truth.initial_dist)
    pi = random_policy(np.random.default_rng(SEED), 4, 2)
    world = build_world(model, data, pi, np.full((4, 2), 0.5), 0.0)
    q = np.zeros(truth.shape)
    for _ in range(5000):
        new = combo_critic_update(q, world, CriticConfig(beta=0.0, f=0.0), model, emp)
        done = np.abs(new - q).max() < 1e-12
        q = new
        if done:
            break
    err = float(np.abs(q - exact_q(emp, pi)).max())
    ok = same_trace and err <= 1e-8
    assert verdict(5, ok, f"dromo(alpha=0) trace identical to combo: {same_trace}; "
                          f"combo(beta=0) vs exact empirical Q {err:.1e}")


def test_criterion_06_linear_threshold(verdict):
    rows, secs = _timed("thm5")
    tab = _named(rows, "thm5_vs_tabular")
    ident = _named(rows, "thm5_identity_combo")
    ok = len(tab) == len(ident) == 50 and not failures(rows)
    rejected = next(r for r in rows if r.check_name == "thm5_rejected_worlds")
    assert verdict(6, ok, f"{sum(r.passed for r in tab)}/50 linear <= tabular, identity max error "
                          f"{max(r.lhs for r in ident):.1e}, {int(rejected.lhs)} worlds skipped, {secs:.1f}s")


def test_criterion_07_ntk_decomposition(verdict):
    rows, secs = _timed("ntk")
    dec = _named(rows, "ntk_decomposition")
    ok = len(dec) == 50 and not failures(rows)
    assert verdict(7, ok, f"50 instances, max decomposition error {max(r.lhs for r in dec):.1e}")


def test_criterion_08_calibration_bound(verdict):
    rows, secs = _timed("calibration")
    cal = _named(rows, "calibration")
    ok = len(cal) == 50 and not failures(rows)
    worst = max(r.lhs / r.rhs for r in cal if r.rhs > 0)
    assert verdict(8, ok, f"{sum(r.passed for r in cal)}/50 within bound, worst ratio {worst:.2f}")


def _temperature(k, delta):
    mdp, data = entropy_chain(k)
    cfg = MopoConfig(lambda_pen=0.2, delta_t=delta, eta_alpha=0.01, auto_temp=True, max_steps=5000)
    state, _ = run_mopo(mdp, data, cfg, LoopConfig(entropy_weight=0.1, critic_iters=2000, critic_tol=1e-12))
    model = fit_model(data, mdp.shape, 0.0, mdp.gamma, mdp.initial_dist)
    ent = -expected_log_likelihood(model, occupancy(model.mdp_hat, state.policy), data)
    return state.alpha_t, ent


def test_criterion_09_temperature(verdict):
    alpha, ent = _temperature(4, 0.5)
    slack_alpha, _ = _temperature(4, 2.0)
    ok = alpha > 0 and abs(ent - 0.5) <= 1e-3 and slack_alpha == 0.0
    assert verdict(9, ok, f"active: alpha={alpha:.4f}, |entropy - budget|={abs(ent - 0.5):.1e}; "
                          f"slack: alpha={slack_alpha}")


def test_criterion_10_lambda_bound(verdict):
    rows, secs = _timed("bound_c")
    chk = _named(rows, "bound_c")
    rejected = next(r for r in rows if r.check_name == "bound_c_rejected_instances")
    ok = len(chk) == 100 and not failures(rows)
    assert verdict(10, ok, f"{sum(r.passed for r in chk)}/100 hold, {int(rejected.lhs)} instances rejected")


@pytest.mark.slow
def test_criterion_11_end_to_end_determinism(verdict, tmp_path):
    reports, times = [], []
    for run in ("first", "second"):
        out = tmp_path / run
        t0 = time.perf_counter()
        proc = subprocess.run([sys.executable, "-m", "dromo.cli", "verify", "--suite", "all", "--seed", str(SEED),
                               "--out", str(out)], capture_output=True, text=True)
        times.append(time.perf_counter() - t0)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        reports.append((out / "verify_all.csv").read_bytes())
    ok = reports[0] == reports[1] and max(times) < 300
    assert verdict(11, ok, f"reports identical: {reports[0] == reports[1]}, "
                           f"runs took {times[0]:.0f}s and {times[1]:.0f}s")
