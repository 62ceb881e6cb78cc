from __future__ import annotations

import numpy as np
import pytest

from dromo.envs import chain, entropy_chain, gridworld, make_behavior, make_env
from dromo.mdp import policy_iteration


@pytest.mark.parametrize("name,shape", [("chain5", (5, 2)), ("gridworld3", (9, 4)), ("random4x3", (4, 3))])
def test_make_env_shapes(name, shape):
    assert make_env(name).shape == shape


def test_make_env_rejects_unknown():
    with pytest.raises(ValueError, match="unknown environment"):
        make_env("maze")


def test_chain_optimal_policy_moves_right():
    pi, _ = policy_iteration(chain(5))
    np.testing.assert_array_equal(pi[:, 1], 1.0)


def test_gridworld_rows_and_reward():
    g = gridworld(3)
    assert g.reward[8].max() == 1.0 and g.reward[:8].max() == 0.0
    assert g.initial_dist[0] == 1.0


def test_entropy_chain_dataset_is_exact():
    from dromo.offline_data import empirical_mdp
    mdp, data = entropy_chain(3)
    np.testing.assert_allclose(empirical_mdp(data, mdp.shape).transition, mdp.transition)


@pytest.mark.parametrize("kind", ["uniform", "random", "epsilon"])
def test_behaviors_are_policies(kind):
    pi = make_behavior(kind, chain(4), seed=1, epsilon=0.2)
    np.testing.assert_allclose(pi.sum(1), 1.0)
    if kind == "epsilon":
        assert pi.min() == pytest.approx(0.1)
    with pytest.raises(ValueError):
        make_behavior("greedy", chain(4))
