from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dromo.mdp import (TabularMDP, bellman_expectation, check_policy, exact_q, exact_v, greedy_policy, load_mdp,
                       occupancy, policy_iteration, policy_return, random_mdp, random_policy, save_mdp,
                       state_occupancy, truncated_occupancy)


def value_iteration_q(mdp: TabularMDP, policy: np.ndarray, iters: int = 10_000) -> np.ndarray:
    q = np.zeros(mdp.shape)
    for _ in range(iters):
        v = (policy * q).sum(axis=1)
        q = mdp.reward + mdp.gamma * np.einsum("sat,t->sa", mdp.transition, v)
    return q


def test_zero_discount_q_is_reward(small_mdp, rng):
    mdp = small_mdp.replace(gamma=0.0)
    pi = random_policy(rng, *mdp.shape)
    np.testing.assert_array_equal(exact_q(mdp, pi), mdp.reward)


def test_single_state_geometric_series():
    mdp = TabularMDP(np.ones((1, 1, 1)), np.ones((1, 1)), np.ones(1), 0.9)
    assert exact_q(mdp, np.ones((1, 1)))[0, 0] == pytest.approx(10.0, abs=1e-12)
    assert occupancy(mdp, np.ones((1, 1)))[0, 0] == pytest.approx(1.0)


def test_exact_q_matches_value_iteration(small_mdp, rng):
    pi = random_policy(rng, *small_mdp.shape)
    q = exact_q(small_mdp, pi)
    np.testing.assert_allclose(q, value_iteration_q(small_mdp, pi), atol=1e-8)
    assert np.abs(q - bellman_expectation(small_mdp, pi, q)).max() <= 1e-10


def test_bellman_matches_double_sum(small_mdp, rng):
    mdp = small_mdp.replace(gamma=0.5)
    pi = random_policy(rng, *mdp.shape)
    q = rng.normal(size=mdp.shape)
    S, A = mdp.shape
    expect = np.array([[mdp.reward[s, a] + 0.5 * sum(mdp.transition[s, a, t] * pi[t, b] * q[t, b]
                                                      for t in range(S) for b in range(A))
                        for a in range(A)] for s in range(S)])
    np.testing.assert_allclose(bellman_expectation(mdp, pi, q), expect, atol=1e-12)
    np.testing.assert_array_equal(bellman_expectation(mdp, pi, np.zeros((S, A))), mdp.reward)


def test_value_of_deterministic_and_uniform_policies(small_mdp):
    S, A = small_mdp.shape
    det = greedy_policy(np.random.default_rng(0).normal(size=(S, A)))
    q = exact_q(small_mdp, det)
    np.testing.assert_allclose(exact_v(small_mdp, det), q[np.arange(S), det.argmax(1)])
    two = random_mdp(np.random.default_rng(1), 3, 2, 0.8)
    uni = np.full((3, 2), 0.5)
    q2 = exact_q(two, uni)
    np.testing.assert_allclose(exact_v(two, uni), q2.mean(axis=1))


def test_value_matches_monte_carlo():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 3, 2, 0.5)
    pi = random_policy(rng, 3, 2)
    n, horizon = 200_000, 40
    s = rng.choice(3, size=n, p=mdp.initial_dist)
    ret = np.zeros(n)
    for t in range(horizon):
        a = (rng.random(n)[:, None] > np.cumsum(pi[s], axis=1)).sum(1)
        ret += mdp.gamma**t * mdp.reward[s, a]
        s = (rng.random(n)[:, None] > np.cumsum(mdp.transition[s, a], axis=1)).sum(1)
    se = ret.std() / np.sqrt(n)
    assert abs(ret.mean() - mdp.initial_dist @ exact_v(mdp, pi)) < 3 * se + 1e-9


def test_absorbing_chain_occupancy():
    T = np.zeros((2, 1, 2))
    T[0, 0, 1] = 1.0
    T[1, 0, 1] = 1.0
    mdp = TabularMDP(T, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.5)
    # state 0 is visited only at t = 0
    assert state_occupancy(mdp, np.ones((2, 1)))[0] == pytest.approx(0.5)


def test_occupancy_flow_and_return(small_mdp, rng):
    pi = random_policy(rng, *small_mdp.shape)
    d = occupancy(small_mdp, pi)
    assert d.sum() == pytest.approx(1.0, abs=1e-12)
    ds = d.sum(1)
    flow = (1 - small_mdp.gamma) * small_mdp.initial_dist + small_mdp.gamma * np.einsum("sa,sat->t", d, small_mdp.transition)
    np.testing.assert_allclose(ds, flow, atol=1e-12)
    assert policy_return(small_mdp, pi) == pytest.approx(small_mdp.initial_dist @ exact_v(small_mdp, pi), abs=1e-8)


@pytest.mark.parametrize("value,expect", [(0.0, 0.0), (1.0, 10.0)])
def test_constant_reward_returns(small_mdp, rng, value, expect):
    mdp = small_mdp.replace(reward=np.full(small_mdp.shape, value))
    assert policy_return(mdp, random_policy(rng, *mdp.shape)) == pytest.approx(expect, abs=1e-9)


def test_truncated_occupancy_first_step(small_mdp, rng):
    pi = random_policy(rng, *small_mdp.shape)
    mu = small_mdp.initial_dist
    np.testing.assert_allclose(truncated_occupancy(small_mdp, pi, mu, 1), mu[:, None] * pi)
    assert truncated_occupancy(small_mdp, pi, mu, 7).sum() == pytest.approx(1.0)


def test_policy_iteration_beats_every_deterministic_policy():
    mdp = random_mdp(np.random.default_rng(5), 3, 2, 0.9)
    pi, q = policy_iteration(mdp)
    best = max(policy_return(mdp, np.eye(2)[list(c)]) for c in itertools.product(range(2), repeat=3))
    assert policy_return(mdp, pi) == pytest.approx(best, abs=1e-10)
    np.testing.assert_allclose(q, exact_q(mdp, pi))


def test_validation_errors():
    with pytest.raises(ValueError, match="sum to 1"):
        TabularMDP(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9)
    with pytest.raises(ValueError, match="gamma"):
        TabularMDP(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError, match="negative"):
        check_policy(np.array([[1.5, -0.5]]))


def test_arrays_are_read_only(small_mdp):
    with pytest.raises(ValueError):
        small_mdp.reward[0, 0] = 5.0


def test_save_load_roundtrip(tmp_path, small_mdp):
    p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
    save_mdp(small_mdp, p1)
    back = load_mdp(p1)
    np.testing.assert_array_equal(back.transition, small_mdp.transition)
    np.testing.assert_array_equal(back.reward, small_mdp.reward)
    save_mdp(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_reports_line(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("mdp 1 1 0.9\nr 0 0 x\n")
    with pytest.raises(ValueError, match=":2:"):
        load_mdp(p)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.floats(0.0, 0.95), st.integers(0, 2**31))
def test_occupancy_is_distribution(S, A, gamma, seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S, A, gamma)
    d = occupancy(mdp, random_policy(rng, S, A))
    assert d.min() >= 0
    assert d.sum() == pytest.approx(1.0, abs=1e-10)
