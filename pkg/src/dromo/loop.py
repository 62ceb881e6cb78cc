"""Offline actor-critic loop: model rollouts, critic, actor and target averaging."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .critic import (CriticConfig, OnSupportRegime, beta_threshold, build_world, run_critic)
from .dynamics import LearnedModel, fit_model
from .instances import oracle_constants
from .mdp import TabularMDP, check_policy, occupancy, policy_return
from .offline_data import Dataset, _sample_rows, behavior_mle, empirical_mdp

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "mean_q_hat", "return_true", "return_model", "beta", "alpha", "f")
POLICY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class RolloutBuffer:
    """Model transitions with the step index of each one inside its trajectory."""

    transitions: Dataset | None
    steps: np.ndarray
    capacity: int
    horizon: int
    n_trajectories: int

    def __len__(self) -> int:
        return 0 if self.transitions is None else len(self.transitions)

    def merged(self, newer: "RolloutBuffer") -> "RolloutBuffer":
        """Append ``newer`` and drop the oldest records beyond capacity."""
        if self.transitions is None:
            return replace(newer, capacity=self.capacity)
        cols = [np.concatenate([getattr(self.transitions, k), getattr(newer.transitions, k)])[-self.capacity:]
                for k in ("s", "a", "s_next", "r")]
        steps = np.concatenate([self.steps, newer.steps])[-self.capacity:]
        return RolloutBuffer(Dataset(*cols), steps, self.capacity, newer.horizon, newer.n_trajectories)

    def occupancy(self, shape: tuple[int, int], gamma: float | None = None) -> np.ndarray:
        """(s, a) frequencies; with ``gamma`` each record is weighted by gamma**step."""
        if self.transitions is None:
            raise ValueError("empty buffer")
        w = np.ones(len(self)) if gamma is None else gamma ** self.steps.astype(float)
        out = np.zeros(shape)
        np.add.at(out, (self.transitions.s, self.transitions.a), w)
        return out / out.sum()


def start_distribution(data: Dataset, n_states: int, mode: str = "states") -> np.ndarray:
    """Rollout start states: uniform over distinct dataset states, or over records."""
    if mode == "states":
        seen = np.zeros(n_states)
        seen[np.unique(data.s)] = 1.0
        return seen / seen.sum()
    if mode == "records":
        return np.bincount(data.s, minlength=n_states) / len(data)
    raise ValueError(f"unknown start mode {mode!r}")


def generate_rollouts(model: LearnedModel, policy: np.ndarray, dataset: Dataset, K: int, H: int, seed,
                      start_mode: str = "states", capacity: int | None = None) -> RolloutBuffer:
    if K < 1 or H < 1:
        raise ValueError("K and H must be >= 1")
    mdp = model.mdp_hat
    pi = check_policy(policy, *mdp.shape)
    rng = np.random.default_rng(seed)
    mu = start_distribution(dataset, mdp.n_states, start_mode)
    state = _sample_rows(rng, np.broadcast_to(mu, (K, mdp.n_states)))
    S = np.empty((K, H), dtype=np.int64)
    A = np.empty_like(S)
    S2 = np.empty_like(S)
    for t in range(H):
        act = _sample_rows(rng, pi[state])
        nxt = _sample_rows(rng, mdp.transition[state, act])
        S[:, t], A[:, t], S2[:, t] = state, act, nxt
        state = nxt
    s, a, s2 = S.reshape(-1), A.reshape(-1), S2.reshape(-1)
    steps = np.tile(np.arange(H), K)
    cap = K * H if capacity is None else capacity
    data = Dataset(s[-cap:], a[-cap:], s2[-cap:], mdp.reward[s, a][-cap:])
    return RolloutBuffer(data, steps[-cap:], cap, H, K)


def actor_update(q: np.ndarray, entropy_weight: float) -> np.ndarray:
    """Per-state maximizer of <pi, Q> + w H(pi): softmax(Q / w), or greedy one-hot at w = 0."""
    if entropy_weight < 0:
        raise ValueError("entropy_weight must be nonnegative")
    q = np.asarray(q, dtype=float)
    if entropy_weight == 0:
        pi = np.zeros_like(q)
        pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return pi
    z = (q - q.max(axis=1, keepdims=True)) / entropy_weight
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def polyak(current: np.ndarray, target: np.ndarray, tau: float, simplex: bool = False) -> np.ndarray:
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    out = tau * np.asarray(current, dtype=float) + (1 - tau) * np.asarray(target, dtype=float)
    if simplex:
        out = out / out.sum(axis=-1, keepdims=True)
    return out


@dataclass
class LoopState:
    q: np.ndarray
    q_target: np.ndarray
    policy: np.ndarray
    policy_target: np.ndarray
    tau: float = 1.0
    iter: int = 0
    alpha_t: float | None = None
    start_dist: np.ndarray | None = None
    evaluated: np.ndarray | None = None  # the policy that ``q`` evaluates


@dataclass(frozen=True)
class LoopConfig:
    max_iters: int = 50
    critic_iters: int = 500
    critic_tol: float = 1e-8
    entropy_weight: float = 0.0
    tau: float = 1.0
    rho_mode: str = "analytic"
    rollouts_k: int = 100
    rollout_h: int = 50
    accumulate: bool = False
    capacity: int = 100_000
    start_mode: str = "states"
    model_smoothing: float = 0.0
    beta_auto: bool = False
    safety_factor: float = 2.0

    def __post_init__(self):
        if self.rho_mode not in ("analytic", "buffer"):
            raise ValueError("rho_mode must be 'analytic' or 'buffer'")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")


@dataclass
class Trace:
    rows: list = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def write(self, path: str | Path, columns=TRACE_COLUMNS) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in columns])


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def mean_q(start: TabularMDP | np.ndarray, policy: np.ndarray, q: np.ndarray) -> float:
    """E_{s~mu, a~pi}[Q(s, a)] for a start distribution or an MDP's own."""
    mu = start.initial_dist if isinstance(start, TabularMDP) else np.asarray(start)
    return float((mu[:, None] * policy * q).sum())


def run_dromo(truth: TabularMDP, dataset: Dataset, cfg: CriticConfig, loop: LoopConfig = LoopConfig(),
              seed: int = 0) -> tuple[LoopState, Trace]:
    """Fit a model, then alternate critic and actor updates.

    The truth MDP feeds only the trace and, when ``loop.beta_auto`` is set,
    the oracle constants of the beta threshold. The model starts from the
    rollout start distribution, and ``mean_q_hat`` is taken under it so that
    it is comparable with the lower bound; ``return_true`` uses the true start.
    """
    shape = truth.shape
    S, A = shape
    rng = np.random.default_rng(seed)
    mu0 = start_distribution(dataset, S, loop.start_mode)
    model = fit_model(dataset, shape, loop.model_smoothing, truth.gamma, mu0)
    empirical = empirical_mdp(dataset, shape, 0.0, truth.gamma, mu0)
    behavior = behavior_mle(dataset, shape)
    constants = oracle_constants(truth, empirical, len(dataset)) if loop.beta_auto else None

    pi0 = np.full(shape, 1.0 / A)
    state = LoopState(np.zeros(shape), np.zeros(shape), pi0, pi0.copy(), loop.tau, start_dist=mu0)
    trace = Trace()
    buffer = None
    for it in range(1, loop.max_iters + 1):
        try:
            rho = None
            if loop.rho_mode == "buffer":
                fresh = generate_rollouts(model, state.policy_target, dataset, loop.rollouts_k, loop.rollout_h,
                                          int(rng.integers(2**63)), loop.start_mode, loop.capacity)
                buffer = buffer.merged(fresh) if (loop.accumulate and buffer is not None) else fresh
                rho = buffer.occupancy(shape, truth.gamma)
            world = build_world(model, dataset, state.policy_target, behavior, cfg.f, cfg.interp_convention, rho)
            step_cfg = cfg
            if loop.beta_auto:
                try:
                    thr = beta_threshold(world, cfg, model, truth, constants=constants)
                except OnSupportRegime:
                    thr = 0.0
                step_cfg = cfg.with_(beta=loop.safety_factor * thr)
                log.info("iter %d: beta = %.6g", it, step_cfg.beta)
            run = run_critic(world, step_cfg, model, empirical, state.policy_target,
                             loop.critic_iters, loop.critic_tol, q0=state.q_target)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise RuntimeError(f"iteration {it}: {exc}") from exc
        new_pi = actor_update(run.q, loop.entropy_weight)
        change = float(np.max(np.abs(new_pi - state.policy)))
        state.q, state.evaluated = run.q, world.policy
        state.policy = new_pi
        state.q_target = polyak(run.q, state.q_target, loop.tau)
        state.policy_target = polyak(new_pi, state.policy_target, loop.tau, simplex=True)
        state.iter = it
        trace.add(iter=it, mean_q_hat=mean_q(mu0, world.policy, run.q),
                  return_true=policy_return(truth, new_pi), return_model=policy_return(model.mdp_hat, new_pi),
                  beta=step_cfg.beta, alpha=step_cfg.alpha, f=step_cfg.f)
        if change < POLICY_TOL:
            break
    return state, trace


# --- flat key = value configuration ------------------------------------------

def parse_config(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text(), str(path))


def coerce(value: str, kind):
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value)


def loop_config_from(values: dict[str, str]) -> LoopConfig:
    kinds = {f.name: type(f.default) for f in fields(LoopConfig)}
    kw = {k: coerce(v, kinds[k]) for k, v in values.items() if k in kinds}
    return LoopConfig(**kw)
