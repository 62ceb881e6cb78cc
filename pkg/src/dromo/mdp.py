"""Finite MDPs, exact policy evaluation and discounted occupancy measures.

Everything else in the package is checked against the dense solvers here, so
they favour exactness over speed: evaluation is a single LU solve over the
|S||A| state-action space.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROW_TOL = 1e-12
RENORM_TOL = 1e-9
MAX_STATE_ACTIONS = 10_000


def _normalize_rows(arr: np.ndarray, name: str) -> np.ndarray:
    """Validate probability rows along the last axis.

    Rows off by less than ``RENORM_TOL`` are renormalized; anything worse is
    an error rather than something to silently fix.
    """
    arr = np.array(arr, dtype=float)
    if np.any(~np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    if np.any(arr < -RENORM_TOL):
        raise ValueError(f"{name} has negative entries (min {arr.min():.3g})")
    arr = np.clip(arr, 0.0, None)
    sums = arr.sum(axis=-1, keepdims=True)
    dev = np.abs(sums - 1.0).max() if sums.size else 0.0
    if dev > RENORM_TOL:
        raise ValueError(f"{name} rows do not sum to 1 (max deviation {dev:.3g})")
    if dev > ROW_TOL:
        arr = arr / sums
    return arr


def check_policy(policy: np.ndarray, n_states: int | None = None, n_actions: int | None = None) -> np.ndarray:
    """Return ``policy`` as a validated (S, A) row-stochastic array."""
    pi = _normalize_rows(policy, "policy")
    if pi.ndim != 2:
        raise ValueError(f"policy must be 2-D, got shape {pi.shape}")
    if n_states is not None and pi.shape[0] != n_states:
        raise ValueError(f"policy has {pi.shape[0]} states, expected {n_states}")
    if n_actions is not None and pi.shape[1] != n_actions:
        raise ValueError(f"policy has {pi.shape[1]} actions, expected {n_actions}")
    return pi


@dataclass(frozen=True)
class BoundConstants:
    """Concentration and regularity constants used by the threshold checkers."""

    r_max: float
    c_r_delta: float = 0.0
    c_t_delta: float = 0.0
    c_rt_delta: float = 0.0
    kappa_var: float = 1.0
    c_s: float = 1.0
    delta: float = 0.05

    def __post_init__(self):
        for name in ("r_max", "c_r_delta", "c_t_delta", "c_rt_delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.kappa_var <= 0 or self.c_s <= 0:
            raise ValueError("kappa_var and c_s must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite discounted MDP.

    ``transition[s, a, s']`` and ``reward[s, a]`` are dense arrays; instances
    are immutable (arrays are marked read-only) and validated on construction.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    gamma: float

    def __post_init__(self):
        T = _normalize_rows(self.transition, "transition")
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {T.shape}")
        S, A, _ = T.shape
        if S * A > MAX_STATE_ACTIONS:
            raise ValueError(f"|S||A| = {S * A} exceeds the dense-solver cap {MAX_STATE_ACTIONS}")
        r = np.array(self.reward, dtype=float)
        if r.shape != (S, A):
            raise ValueError(f"reward must have shape {(S, A)}, got {r.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("reward has non-finite entries")
        mu = _normalize_rows(self.initial_dist, "initial_dist")
        if mu.shape != (S,):
            raise ValueError(f"initial_dist must have shape {(S,)}, got {mu.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for arr in (T, r, mu):
            arr.flags.writeable = False
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.transition.shape[:2]

    @property
    def r_max(self) -> float:
        return float(np.abs(self.reward).max())

    def replace(self, **changes) -> "TabularMDP":
        fields = dict(transition=self.transition, reward=self.reward,
                      initial_dist=self.initial_dist, gamma=self.gamma)
        fields.update(changes)
        return TabularMDP(**fields)


def state_action_transition(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """P^pi[(s,a), (s',a')] = T(s'|s,a) pi(a'|s')."""
    S, A = mdp.shape
    P = mdp.transition[:, :, :, None] * policy[None, None, :, :]
    return P.reshape(S * A, S * A)


def state_transition(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) T(s'|s,a)."""
    return np.einsum("sa,sat->st", policy, mdp.transition)


def exact_q(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Solve Q = r + gamma P^pi Q exactly."""
    pi = check_policy(policy, *mdp.shape)
    S, A = mdp.shape
    P = state_action_transition(mdp, pi)
    q = np.linalg.solve(np.eye(S * A) - mdp.gamma * P, mdp.reward.reshape(-1))
    return q.reshape(S, A)


def exact_v(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    pi = check_policy(policy, *mdp.shape)
    return (pi * exact_q(mdp, pi)).sum(axis=1)


def bellman_expectation(mdp: TabularMDP, policy: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Apply T^pi once: r + gamma E_{s'~T, a'~pi}[Q(s', a')]."""
    v_next = (policy * q).sum(axis=1)
    return mdp.reward + mdp.gamma * mdp.transition @ v_next


def state_occupancy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Normalized discounted state visitation, solving d = (1-g) mu + g P_pi^T d."""
    pi = check_policy(policy, *mdp.shape)
    P = state_transition(mdp, pi)
    S = mdp.n_states
    d = np.linalg.solve(np.eye(S) - mdp.gamma * P.T, (1.0 - mdp.gamma) * mdp.initial_dist)
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def occupancy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """State-action occupancy d(s, a) = d(s) pi(a|s)."""
    pi = check_policy(policy, *mdp.shape)
    return state_occupancy(mdp, pi)[:, None] * pi


def policy_return(mdp: TabularMDP, policy: np.ndarray) -> float:
    """Expected discounted return, computed from the occupancy measure."""
    w = occupancy(mdp, policy)
    return float((w * mdp.reward).sum() / (1.0 - mdp.gamma))


def truncated_occupancy(mdp: TabularMDP, policy: np.ndarray, start: np.ndarray, horizon: int) -> np.ndarray:
    """Undiscounted (s, a) visitation frequencies of ``horizon``-step rollouts from ``start``."""
    pi = check_policy(policy, *mdp.shape)
    P = state_transition(mdp, pi)
    dist = np.asarray(start, dtype=float)
    total = np.zeros(mdp.n_states)
    for _ in range(horizon):
        total += dist
        dist = dist @ P
    return total[:, None] * pi / horizon


def greedy_policy(q: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(q)
    pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return pi


def policy_iteration(mdp: TabularMDP, max_iters: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Howard policy iteration with lowest-index tie-breaking; returns (policy, Q)."""
    S, A = mdp.shape
    pi = np.full((S, A), 1.0 / A)
    for _ in range(max_iters):
        q = exact_q(mdp, pi)
        new = greedy_policy(q)
        if np.array_equal(new, pi):
            break
        # keep the current action when it is still (numerically) optimal
        cur = np.argmax(pi, axis=1)
        best = q.max(axis=1)
        keep = (pi.max(axis=1) == 1.0) & (q[np.arange(S), cur] >= best - 1e-12)
        new[keep] = pi[keep]
        if np.array_equal(new, pi):
            break
        pi = new
    return pi, exact_q(mdp, pi)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               concentration: float = 1.0, r_max: float = 1.0) -> TabularMDP:
    """Dirichlet transitions, uniform rewards in [-r_max, r_max], Dirichlet start."""
    T = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    r = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    return TabularMDP(T, r, mu, gamma)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int, concentration: float = 1.0) -> np.ndarray:
    return rng.dirichlet(np.full(n_actions, concentration), size=n_states)


# --- text format -------------------------------------------------------------

def save_mdp(mdp: TabularMDP, path: str | Path) -> None:
    """Write the line-oriented ``mdp`` text format (zero transitions omitted)."""
    S, A = mdp.shape
    lines = [f"mdp {S} {A} {mdp.gamma!r}"]
    for s in range(S):
        for a in range(A):
            lines.append(f"r {s} {a} {float(mdp.reward[s, a])!r}")
    for s in range(S):
        for a in range(A):
            for t in np.flatnonzero(mdp.transition[s, a]):
                lines.append(f"t {s} {a} {t} {float(mdp.transition[s, a, t])!r}")
    for s in np.flatnonzero(mdp.initial_dist):
        lines.append(f"mu {s} {float(mdp.initial_dist[s])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mdp(path: str | Path) -> TabularMDP:
    T = r = mu = None
    gamma = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "mdp":
                S, A, gamma = int(tok[1]), int(tok[2]), float(tok[3])
                T = np.zeros((S, A, S))
                r = np.zeros((S, A))
                mu = np.zeros(S)
            elif T is None:
                raise ValueError("missing 'mdp' header")
            elif tok[0] == "r":
                r[int(tok[1]), int(tok[2])] = float(tok[3])
            elif tok[0] == "t":
                T[int(tok[1]), int(tok[2]), int(tok[3])] = float(tok[4])
            elif tok[0] == "mu":
                mu[int(tok[1])] = float(tok[2])
            else:
                raise ValueError(f"unknown record {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if T is None:
        raise ValueError(f"{path}: empty MDP file")
    return TabularMDP(T, r, mu, gamma)
