"""Builtin environments and behavior policies."""

from __future__ import annotations

import re

import numpy as np

from .mdp import TabularMDP, policy_iteration, random_mdp, random_policy
from .offline_data import Dataset

SLIP = 0.1


def chain(n: int, gamma: float = 0.9, slip: float = SLIP) -> TabularMDP:
    """States 0..n-1, actions left/right; the move reverses with probability ``slip``.

    Reward 1 in the last state, start in state 0.
    """
    if n < 2:
        raise ValueError("chain needs at least 2 states")
    T = np.zeros((n, 2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        T[s, 0, left] += 1 - slip
        T[s, 0, right] += slip
        T[s, 1, right] += 1 - slip
        T[s, 1, left] += slip
    r = np.zeros((n, 2))
    r[n - 1] = 1.0
    mu = np.zeros(n)
    mu[0] = 1.0
    return TabularMDP(T, r, mu, gamma)


def gridworld(n: int, gamma: float = 0.9, slip: float = SLIP) -> TabularMDP:
    """n x n grid, actions up/right/down/left; with probability ``slip`` a uniform action is taken.

    Reward 1 in the bottom-right cell, start in the top-left cell.
    """
    if n < 2:
        raise ValueError("gridworld needs n >= 2")
    moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]
    S = n * n
    T = np.zeros((S, 4, S))
    for i in range(n):
        for j in range(n):
            s = i * n + j
            dest = [min(max(i + di, 0), n - 1) * n + min(max(j + dj, 0), n - 1) for di, dj in moves]
            for a in range(4):
                T[s, a, dest[a]] += 1 - slip
                for b in range(4):
                    T[s, a, dest[b]] += slip / 4
    r = np.zeros((S, 4))
    r[S - 1] = 1.0
    mu = np.zeros(S)
    mu[0] = 1.0
    return TabularMDP(T, r, mu, gamma)


def entropy_chain(k: int, gamma: float = 0.9) -> tuple[TabularMDP, Dataset]:
    """k-cycle where action 0 steps deterministically to s+1 (reward 0) and
    action 1 jumps uniformly (reward 1), with a dataset whose count model is exact.

    Under entropy penalty alpha, action 1 is worth 1 - alpha ln k more than action 0.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    T = np.zeros((k, 2, k))
    T[np.arange(k), 0, (np.arange(k) + 1) % k] = 1.0
    T[:, 1, :] = 1.0 / k
    r = np.zeros((k, 2))
    r[:, 1] = 1.0
    mdp = TabularMDP(T, r, np.full(k, 1.0 / k), gamma)
    s = np.concatenate([np.arange(k), np.repeat(np.arange(k), k)])
    a = np.concatenate([np.zeros(k, dtype=int), np.ones(k * k, dtype=int)])
    s2 = np.concatenate([(np.arange(k) + 1) % k, np.tile(np.arange(k), k)])
    return mdp, Dataset(s, a, s2, r[s, a])


def make_env(name: str, seed: int = 0, gamma: float = 0.9) -> TabularMDP:
    """Parse ``chain{N}``, ``gridworld{N}`` or ``random{S}x{A}``."""
    if m := re.fullmatch(r"chain(\d+)", name):
        return chain(int(m.group(1)), gamma)
    if m := re.fullmatch(r"gridworld(\d+)", name):
        return gridworld(int(m.group(1)), gamma)
    if m := re.fullmatch(r"random(\d+)x(\d+)", name):
        return random_mdp(np.random.default_rng(seed), int(m.group(1)), int(m.group(2)), gamma)
    raise ValueError(f"unknown environment {name!r} (expected chainN, gridworldN or randomSxA)")


def make_behavior(kind: str, mdp: TabularMDP, seed: int = 0, epsilon: float = 0.3) -> np.ndarray:
    """``uniform``, ``random`` (Dirichlet rows) or ``epsilon`` (epsilon-greedy on the optimal policy)."""
    S, A = mdp.shape
    if kind == "uniform":
        return np.full((S, A), 1.0 / A)
    if kind == "random":
        return random_policy(np.random.default_rng(seed), S, A)
    if kind == "epsilon":
        pi, _ = policy_iteration(mdp)
        return (1 - epsilon) * pi + epsilon / A
    raise ValueError(f"unknown behavior {kind!r} (expected uniform, random or epsilon)")
