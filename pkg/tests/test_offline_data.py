from __future__ import annotations

import numpy as np
import pytest

from dromo.envs import chain
from dromo.mdp import BoundConstants, TabularMDP, occupancy, random_mdp
from dromo.offline_data import (CountTable, Dataset, behavior_mle, empirical_mdp, generate_dataset, load_dataset,
                                sampling_error_bound, save_dataset, state_action_frequencies)


def _deterministic_cycle() -> TabularMDP:
    T = np.zeros((3, 1, 3))
    for s in range(3):
        T[s, 0, (s + 1) % 3] = 1.0
    return TabularMDP(T, np.arange(3.0)[:, None], np.array([1.0, 0, 0]), 0.9)


def test_deterministic_rollout_repeats_the_trajectory():
    data = generate_dataset(_deterministic_cycle(), np.ones((3, 1)), 9, seed=0, episode_length=3)
    np.testing.assert_array_equal(data.s, [0, 1, 2] * 3)
    np.testing.assert_array_equal(data.s_next, [1, 2, 0] * 3)
    np.testing.assert_array_equal(data.r, [0.0, 1.0, 2.0] * 3)


def test_same_seed_same_bytes(tmp_path):
    mdp = chain(4)
    pi = np.full((4, 2), 0.5)
    a, b = tmp_path / "a", tmp_path / "b"
    save_dataset(generate_dataset(mdp, pi, 500, 3), a)
    save_dataset(generate_dataset(mdp, pi, 500, 3), b)
    assert a.read_bytes() == b.read_bytes()
    assert generate_dataset(mdp, pi, 500, 3) != generate_dataset(mdp, pi, 500, 4)


def test_long_run_frequencies_track_truncated_visitation():
    # with restarts every L steps the data follows the L-step undiscounted visitation
    mdp = random_mdp(np.random.default_rng(2), 3, 2, 0.9)
    pi = np.full((3, 2), 0.5)
    from dromo.mdp import truncated_occupancy
    data = generate_dataset(mdp, pi, 100_000, seed=1, episode_length=100)
    freq = state_action_frequencies(data, mdp.shape)
    expect = truncated_occupancy(mdp, pi, mdp.initial_dist, 100)
    assert 0.5 * np.abs(freq - expect).sum() < 0.01


def test_empirical_mdp_hand_cases():
    data = Dataset(np.array([0]), np.array([0]), np.array([1]), np.array([2.0]))
    m = empirical_mdp(data, (2, 2))
    assert m.transition[0, 0, 1] == 1.0 and m.reward[0, 0] == 2.0
    np.testing.assert_array_equal(m.transition[1, 1], [0.5, 0.5])
    assert m.reward[1, 1] == 0.0
    smoothed = empirical_mdp(data, (2, 2), smoothing=1.0)
    np.testing.assert_array_equal(smoothed.transition[1, 0], [0.5, 0.5])
    np.testing.assert_allclose(smoothed.transition[0, 0], [1 / 3, 2 / 3])


def test_empirical_mdp_recovers_truth():
    truth = random_mdp(np.random.default_rng(4), 3, 2, 0.9)
    data = generate_dataset(truth, np.full((3, 2), 0.5), 1_000_000, seed=0)
    m = empirical_mdp(data, truth.shape)
    assert (0.5 * np.abs(m.transition - truth.transition).sum(-1)).max() < 0.01
    np.testing.assert_allclose(m.reward, truth.reward)


def test_behavior_mle():
    truth = random_mdp(np.random.default_rng(5), 3, 2, 0.9)
    data = generate_dataset(truth, np.full((3, 2), 0.5), 100_000, seed=0)
    assert np.abs(behavior_mle(data, truth.shape) - 0.5).max() < 0.02
    det = Dataset(np.array([0, 0]), np.array([1, 1]), np.array([1, 0]), np.zeros(2))
    pi = behavior_mle(det, (3, 2))
    np.testing.assert_array_equal(pi[0], [0, 1])
    np.testing.assert_array_equal(pi[2], [0.5, 0.5])


@pytest.mark.parametrize("count,c,expect", [(0, 1.0, 1.0), (100, 1.0, 0.1), (4, 2.0, 1.0)])
def test_sampling_error_bound(count, c, expect):
    table = CountTable(np.array([[count]]), np.array([count]), count)
    assert sampling_error_bound(table, BoundConstants(r_max=1, c_rt_delta=c))[0, 0] == pytest.approx(expect)


def test_quadrupling_counts_halves_bound():
    k = BoundConstants(r_max=1, c_rt_delta=3.0)
    one = sampling_error_bound(CountTable(np.array([[9]]), np.array([9]), 9), k)
    four = sampling_error_bound(CountTable(np.array([[36]]), np.array([36]), 36), k)
    assert four[0, 0] == pytest.approx(one[0, 0] / 2)


def test_roundtrip_and_errors(tmp_path):
    data = generate_dataset(chain(3), np.full((3, 2), 0.5), 50, 0)
    p = tmp_path / "d.txt"
    save_dataset(data, p)
    assert load_dataset(p, (3, 2)) == data
    p.write_text("0 0 1\n")
    with pytest.raises(ValueError, match=":1:"):
        load_dataset(p)
    p.write_text("0 5 1 0.0\n")
    with pytest.raises(ValueError, match="out of range"):
        load_dataset(p, (3, 2))
    with pytest.raises(ValueError, match="empty"):
        Dataset(np.array([], dtype=int), np.array([], dtype=int), np.array([], dtype=int), np.array([]))


def test_coverage():
    data = Dataset(np.array([0, 1]), np.array([0, 1]), np.array([1, 0]), np.zeros(2))
    assert CountTable.from_dataset(data, (2, 2)).coverage() == 0.5
