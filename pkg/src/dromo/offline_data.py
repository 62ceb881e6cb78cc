"""Offline datasets: generation, loading, counts and the empirical MDP."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import BoundConstants, TabularMDP, check_policy

DEFAULT_EPISODE_LENGTH = 100


@dataclass(frozen=True, eq=False)
class Dataset:
    """Transitions (s, a, s', r) stored column-wise."""

    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        cols = [np.asarray(self.s, dtype=np.int64), np.asarray(self.a, dtype=np.int64),
                np.asarray(self.s_next, dtype=np.int64), np.asarray(self.r, dtype=float)]
        n = cols[0].shape[0]
        if n == 0:
            raise ValueError("dataset is empty")
        if any(c.shape != (n,) for c in cols):
            raise ValueError("dataset columns must be 1-D and equally long")
        for name, col in zip(("s", "a", "s_next", "r"), cols):
            col.flags.writeable = False
            object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return self.s.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("s", "a", "s_next", "r"))

    def validate(self, n_states: int, n_actions: int) -> None:
        for name, col, hi in (("s", self.s, n_states), ("a", self.a, n_actions), ("s_next", self.s_next, n_states)):
            bad = (col < 0) | (col >= hi)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ValueError(f"record {i}: {name}={col[i]} out of range [0, {hi})")

    def shuffled(self, rng: np.random.Generator) -> "Dataset":
        idx = rng.permutation(len(self))
        return Dataset(self.s[idx], self.a[idx], self.s_next[idx], self.r[idx])


@dataclass(frozen=True, eq=False)
class CountTable:
    n_sa: np.ndarray
    n_s: np.ndarray
    n_total: int

    @classmethod
    def from_dataset(cls, data: Dataset, shape: tuple[int, int]) -> "CountTable":
        data.validate(*shape)
        n_sa = np.zeros(shape, dtype=np.int64)
        np.add.at(n_sa, (data.s, data.a), 1)
        return cls(n_sa, n_sa.sum(axis=1), int(n_sa.sum()))

    def coverage(self) -> float:
        """Fraction of (s, a) pairs seen at least once."""
        return float((self.n_sa > 0).mean())


def _sample_rows(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    u = rng.random(probs.shape[0])
    idx = (np.cumsum(probs, axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def generate_dataset(mdp: TabularMDP, behavior: np.ndarray, n_transitions: int, seed,
                     episode_length: int = DEFAULT_EPISODE_LENGTH) -> Dataset:
    """Roll out ``behavior`` on ``mdp``, restarting from mu every ``episode_length`` steps.

    Episodes are simulated in lockstep and flattened episode-major, so the
    output is a deterministic function of ``seed``.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    if episode_length < 1:
        raise ValueError("episode_length must be >= 1")
    pi = check_policy(behavior, *mdp.shape)
    rng = np.random.default_rng(seed)
    n_ep = -(-n_transitions // episode_length)
    steps = min(episode_length, n_transitions)
    S = np.empty((n_ep, steps), dtype=np.int64)
    A = np.empty_like(S)
    S2 = np.empty_like(S)
    state = _sample_rows(rng, np.broadcast_to(mdp.initial_dist, (n_ep, mdp.n_states)))
    for t in range(steps):
        act = _sample_rows(rng, pi[state])
        nxt = _sample_rows(rng, mdp.transition[state, act])
        S[:, t], A[:, t], S2[:, t] = state, act, nxt
        state = nxt
    s, a, s2 = (x.reshape(-1)[:n_transitions] for x in (S, A, S2))
    return Dataset(s, a, s2, mdp.reward[s, a])


def empirical_mdp(data: Dataset, shape: tuple[int, int], smoothing: float = 0.0,
                  gamma: float = 0.99, initial_dist: np.ndarray | None = None) -> TabularMDP:
    """Count-based MDP: (count + smoothing) / (row total + smoothing * S).

    Unvisited (s, a) rows with zero smoothing fall back to uniform transitions
    and reward 0. The start distribution defaults to the empirical distribution
    of dataset states.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    S, A = shape
    data.validate(S, A)
    counts = np.zeros((S, A, S))
    np.add.at(counts, (data.s, data.a, data.s_next), 1.0)
    n_sa = counts.sum(axis=2)
    T = counts + smoothing
    tot = T.sum(axis=2, keepdims=True)
    T = np.where(tot > 0, T / np.where(tot > 0, tot, 1.0), 1.0 / S)
    r_sum = np.zeros((S, A))
    np.add.at(r_sum, (data.s, data.a), data.r)
    r = np.divide(r_sum, n_sa, out=np.zeros((S, A)), where=n_sa > 0)
    if initial_dist is None:
        initial_dist = np.bincount(data.s, minlength=S) / len(data)
    return TabularMDP(T, r, initial_dist, gamma)


def behavior_mle(data: Dataset, shape: tuple[int, int]) -> np.ndarray:
    """pi_beta(a|s) = n(s, a) / n(s); unvisited states get a uniform row."""
    c = CountTable.from_dataset(data, shape)
    n_s = c.n_s[:, None].astype(float)
    return np.where(n_s > 0, c.n_sa / np.where(n_s > 0, n_s, 1.0), 1.0 / shape[1])


def state_action_frequencies(data: Dataset, shape: tuple[int, int]) -> np.ndarray:
    c = CountTable.from_dataset(data, shape)
    return c.n_sa / c.n_total


def sampling_error_bound(counts: CountTable, constants: BoundConstants) -> np.ndarray:
    """C_{r,T,delta} / sqrt(max(1, |D(s,a)|)) per state-action pair."""
    return constants.c_rt_delta / np.sqrt(np.maximum(counts.n_sa, 1))


def save_dataset(data: Dataset, path: str | Path) -> None:
    lines = ["# s a s_next r"]
    lines += [f"{s} {a} {t} {r!r}" for s, a, t, r in zip(data.s.tolist(), data.a.tolist(),
                                                         data.s_next.tolist(), data.r.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path, shape: tuple[int, int] | None = None) -> Dataset:
    rows = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if len(tok) != 4:
            raise ValueError(f"{path}:{lineno}: expected 's a s_next r', got {line!r}")
        try:
            rows.append((int(tok[0]), int(tok[1]), int(tok[2]), float(tok[3])))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: no records")
    s, a, t, r = zip(*rows)
    data = Dataset(np.array(s), np.array(a), np.array(t), np.array(r))
    if shape is not None:
        data.validate(*shape)
    return data
