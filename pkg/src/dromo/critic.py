"""Tabular distributionally robust critic.

The critic minimizes, per iteration,

    1/2 E_{d_f}[(Q - B)^2]
      + alpha E_{s~d_f}[ sqrt(Var_{pi_f}(Q(s,.)) / |D(s)|) ]
      + beta (E_rho[Q] - E_D[Q])

where B is the mixed empirical Bellman backup of the previous iterate. The
objective separates over states. Folding the linear term into the square
gives a target t = B - beta (rho - d) / d_f, and each row is the proximal
point of a weighted standard deviation around t:

    Q(s,a) = (1 - w_sa) t(s,a) + w_sa m_s,   w_sa = theta_s pi_f(a|s) / (d_f(s,a) + theta_s pi_f(a|s))

with m_s the pi_f-mean of the new row and theta_s = kappa_s / std_s. The
implicit dependence on the new row's spread reduces to the scalar equation
theta_s * std_s(theta_s) = kappa_s, solved by bisection for all states at once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import LearnedModel, tv_distance
from .mdp import BoundConstants, TabularMDP, bellman_expectation, check_policy, occupancy
from .offline_data import CountTable, Dataset, state_action_frequencies

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-8
CONVENTIONS = ("verbatim", "data")


class OnSupportRegime(ValueError):
    """Raised when E_rho[(rho - d) / d_f] <= 0, so no positive beta is needed."""


class AssumptionViolation(ValueError):
    """An instance does not satisfy a precondition of a checker."""


@dataclass(frozen=True)
class CriticConfig:
    alpha: float = 0.0
    beta: float = 0.0
    f: float = 0.5
    inner_iters: int = 200
    inner_tol: float = 1e-13
    interp_convention: str = "verbatim"

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise ValueError("f must lie in [0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.interp_convention not in CONVENTIONS:
            raise ValueError(f"interp_convention must be one of {CONVENTIONS}")

    def with_(self, **changes) -> "CriticConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class InterpolatedWorld:
    """Everything the critic needs besides the backup.

    ``state_counts`` holds |D(s)| as floats; for synthetic worlds it is
    |D| * d(s) rather than an integer count.
    """

    rho: np.ndarray
    d: np.ndarray
    d_f: np.ndarray
    pi_f: np.ndarray
    policy: np.ndarray
    behavior: np.ndarray
    state_counts: np.ndarray
    n_total: float
    f: float
    counts: CountTable | None = field(default=None)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rho.shape

    @property
    def clamped_state_counts(self) -> np.ndarray:
        return np.maximum(self.state_counts, 1.0)

    @property
    def d_beta_state(self) -> np.ndarray:
        """|D(s)| / |D| with the count clamped to 1."""
        return self.clamped_state_counts / self.n_total

    def shift(self) -> np.ndarray:
        """(rho - d) / d_f, zero where d_f vanishes."""
        on = self.d_f > 0
        return np.divide(self.rho - self.d, self.d_f, out=np.zeros(self.shape), where=on)

    def nu(self) -> float:
        return float((self.rho * self.shift()).sum())


def interpolate(rho: np.ndarray, d: np.ndarray, f: float, convention: str = "verbatim") -> np.ndarray:
    if convention == "verbatim":
        return f * rho + (1.0 - f) * d
    if convention == "data":
        return f * d + (1.0 - f) * rho
    raise ValueError(f"unknown convention {convention!r}")


def make_world(rho, d, policy, behavior, state_counts, n_total, f, convention="verbatim",
               counts: CountTable | None = None) -> InterpolatedWorld:
    rho = np.asarray(rho, dtype=float)
    d = np.asarray(d, dtype=float)
    policy = check_policy(policy, *rho.shape)
    behavior = check_policy(behavior, *rho.shape)
    d_f = interpolate(rho, d, f, convention)
    bad = (d_f <= 0) & ((rho > 0) | (d > 0))
    if bad.any():
        raise ValueError("d_f vanishes on pairs charged by rho or d; use f strictly inside (0, 1)")
    pi_f = f * behavior + (1.0 - f) * policy
    return InterpolatedWorld(rho, d, d_f, pi_f, policy, behavior,
                             np.asarray(state_counts, dtype=float), float(n_total), float(f), counts)


def build_world(model: LearnedModel, data: Dataset, policy: np.ndarray, behavior: np.ndarray,
                f: float, convention: str = "verbatim", rho: np.ndarray | None = None) -> InterpolatedWorld:
    """rho from the model occupancy of ``policy`` (or as given), d from dataset frequencies."""
    shape = model.shape
    if rho is None:
        rho = occupancy(model.mdp_hat, policy)
    counts = CountTable.from_dataset(data, shape)
    d = state_action_frequencies(data, shape)
    return make_world(rho, d, policy, behavior, counts.n_s, counts.n_total, f, convention, counts)


def mixed_backup(q: np.ndarray, model: LearnedModel | TabularMDP, empirical: TabularMDP,
                 policy: np.ndarray, f: float) -> np.ndarray:
    """f T^pi_empirical Q + (1 - f) T^pi_model Q."""
    mdp_hat = model.mdp_hat if isinstance(model, LearnedModel) else model
    out = (1.0 - f) * bellman_expectation(mdp_hat, policy, q)
    if f > 0:
        out = out + f * bellman_expectation(empirical, policy, q)
    return out


def row_variance(q: np.ndarray, probs: np.ndarray) -> np.ndarray:
    m = (probs * q).sum(axis=1, keepdims=True)
    return (probs * (q - m) ** 2).sum(axis=1)


def variance_weights(world: InterpolatedWorld, alpha: float) -> np.ndarray:
    """kappa_s = alpha d_f(s) / sqrt(|D(s)|): the weight of each row's std in the objective."""
    return alpha * world.d_f.sum(axis=1) / np.sqrt(world.clamped_state_counts)


def critic_objective(q: np.ndarray, world: InterpolatedWorld, cfg: CriticConfig, backup: np.ndarray) -> float:
    fit = 0.5 * float((world.d_f * (q - backup) ** 2).sum())
    std = np.sqrt(row_variance(q, world.pi_f))
    var_pen = float((variance_weights(world, cfg.alpha) * std).sum())
    cons = cfg.beta * float(((world.rho - world.d) * q).sum())
    return fit + var_pen + cons


def critic_gradient(q: np.ndarray, world: InterpolatedWorld, cfg: CriticConfig, backup: np.ndarray) -> np.ndarray:
    """Analytic gradient of ``critic_objective`` (rows with zero spread use subgradient 0)."""
    p = world.pi_f
    m = (p * q).sum(axis=1, keepdims=True)
    std = np.sqrt(row_variance(q, p))[:, None]
    kappa = variance_weights(world, cfg.alpha)[:, None]
    var_grad = np.divide(kappa * p * (q - m), std, out=np.zeros_like(q), where=std > 0)
    return world.d_f * (q - backup) + var_grad + cfg.beta * (world.rho - world.d)


def penalized_target(world: InterpolatedWorld, beta: float, backup: np.ndarray) -> np.ndarray:
    return backup - beta * world.shift()


def _rows_at(theta: np.ndarray, t: np.ndarray, w: np.ndarray, p: np.ndarray):
    """Shrunk rows and their pi_f-std for per-state multipliers ``theta``."""
    den = w + theta[:, None] * p
    keep = np.divide(w, den, out=np.ones_like(w), where=den > 0)
    pk = p * keep
    mass = pk.sum(axis=1)
    m = np.divide((pk * t).sum(axis=1), mass, out=(p * t).sum(axis=1), where=mass > 0)
    x = keep * t + (1.0 - keep) * m[:, None]
    std = np.sqrt((p * (x - m[:, None]) ** 2).sum(axis=1))
    return x, std


def prox_rows(t: np.ndarray, w: np.ndarray, p: np.ndarray, kappa: np.ndarray,
              max_iters: int = 200, rtol: float = 1e-13) -> np.ndarray:
    """argmin_x 1/2 sum_a w_a (x_a - t_a)^2 + kappa sqrt(Var_p(x)) for every row."""
    x = t.copy()
    rows = np.flatnonzero(kappa > 0)
    if rows.size == 0:
        return x
    t, w, p, kap = t[rows], w[rows], p[rows], kappa[rows]

    # theta * std(theta) increases to a finite limit; past it the row collapses
    on = p > 0
    wp = np.where(on, w, 0.0)
    wsum = wp.sum(axis=1)
    m_inf = np.divide((wp * t).sum(axis=1), wsum, out=(p * t).sum(axis=1), where=wsum > 0)
    limit = np.sqrt(np.divide(wp**2 * (t - m_inf[:, None]) ** 2, p, out=np.zeros_like(t), where=on).sum(axis=1))
    collapse = kap >= limit

    out = np.where(on, m_inf[:, None], t)
    solve = ~collapse
    if solve.any():
        ts, ws, ps, ks = t[solve], w[solve], p[solve], kap[solve]
        _, std0 = _rows_at(np.full(ks.shape, 1e-300), ts, ws, ps)
        lo = 0.5 * ks / np.maximum(std0, 1e-300)
        hi = lo.copy()
        for _ in range(400):
            _, std_hi = _rows_at(hi, ts, ws, ps)
            short = hi * std_hi < ks
            if not short.any():
                break
            hi = np.where(short, hi * 4.0, hi)
        # Illinois regula falsi on g(u) = log(theta std(theta) / kappa), u = log theta
        u_lo, u_hi = np.log(lo), np.log(hi)
        _, s_lo = _rows_at(lo, ts, ws, ps)
        _, s_hi = _rows_at(hi, ts, ws, ps)
        g_lo = np.log(np.maximum(lo * s_lo, 1e-300) / ks)
        g_hi = np.log(np.maximum(hi * s_hi, 1e-300) / ks)
        side = np.zeros(ks.shape, dtype=int)
        for _ in range(max_iters):
            dg = g_hi - g_lo
            u = np.divide(u_lo * g_hi - u_hi * g_lo, dg, out=0.5 * (u_lo + u_hi), where=dg > 0)
            u = np.clip(u, u_lo, u_hi)
            th = np.exp(u)
            _, s_mid = _rows_at(th, ts, ws, ps)
            g = np.log(np.maximum(th * s_mid, 1e-300) / ks)
            neg = g < 0
            u_lo, g_lo = np.where(neg, u, u_lo), np.where(neg, g, g_lo)
            u_hi, g_hi = np.where(neg, u_hi, u), np.where(neg, g_hi, g)
            # halve the stale endpoint when the same side moves twice in a row
            g_hi = np.where(neg & (side == -1), 0.5 * g_hi, g_hi)
            g_lo = np.where(~neg & (side == 1), 0.5 * g_lo, g_lo)
            side = np.where(neg, -1, 1)
            if np.all((u_hi - u_lo <= rtol) | (np.abs(g) <= rtol)):
                break
        lo, hi = np.exp(u_lo), np.exp(u_hi)
        lo = hi = np.where(np.abs(g_lo) < np.abs(g_hi), lo, hi)
        xs, _ = _rows_at(0.5 * (lo + hi), ts, ws, ps)
        out[solve] = xs
    x[rows] = out
    return x


def solve_critic(world: InterpolatedWorld, cfg: CriticConfig, backup: np.ndarray) -> np.ndarray:
    """Exact minimizer of ``critic_objective`` for a fixed backup.

    Pairs with d_f = 0 whose row carries no variance weight keep the target.
    """
    t = penalized_target(world, cfg.beta, backup)
    if cfg.alpha == 0:
        return t
    kappa = variance_weights(world, cfg.alpha)
    return prox_rows(t, world.d_f, world.pi_f, kappa, cfg.inner_iters, cfg.inner_tol)


def critic_update(q_prev: np.ndarray, world: InterpolatedWorld, cfg: CriticConfig,
                  model: LearnedModel | TabularMDP, empirical: TabularMDP, policy: np.ndarray | None = None) -> np.ndarray:
    policy = world.policy if policy is None else policy
    backup = mixed_backup(q_prev, model, empirical, policy, world.f)
    return solve_critic(world, cfg, backup)


def shrink_closed_form(world: InterpolatedWorld, cfg: CriticConfig, backup: np.ndarray,
                       iters: int = 50, tol: float = 1e-10) -> np.ndarray:
    """The per-pair shrink-to-zero update with lambda = alpha (1 - pi_f(a|s)).

    Kept for comparison with ``solve_critic``: it drops the coupling of each
    row's mean to the variance derivative, so it is generally not a
    stationary point of ``critic_objective``. The variance of the new row is
    resolved by lagged fixed-point iteration from the backup.
    """
    t = penalized_target(world, cfg.beta, backup)
    lam = cfg.alpha * (1.0 - world.pi_f)
    q = t.copy()
    for _ in range(iters):
        scale = np.maximum(np.sqrt(row_variance(q, world.pi_f) * world.clamped_state_counts), VAR_FLOOR)
        new = (1.0 - lam / (lam + scale[:, None])) * t
        done = np.max(np.abs(new - q)) < tol
        q = new
        if done:
            break
    return q


@dataclass
class CriticRun:
    q: np.ndarray
    converged: bool
    iterations: int
    residual: float
    history: list = field(default_factory=list)


def run_critic(world: InterpolatedWorld, cfg: CriticConfig, model, empirical: TabularMDP,
               policy: np.ndarray | None = None, k_max: int = 2000, tol: float = 1e-10,
               q0: np.ndarray | None = None, record: bool = False) -> CriticRun:
    """Iterate ``critic_update`` until the sup-norm change drops below ``tol``.

    With ``record`` the history holds (backup, q_new) per iteration so callers
    can compare each penalized iterate with the unpenalized one.
    """
    policy = world.policy if policy is None else policy
    q = np.zeros(world.shape) if q0 is None else np.array(q0, dtype=float)
    hist = []
    resid = np.inf
    for k in range(1, k_max + 1):
        backup = mixed_backup(q, model, empirical, policy, world.f)
        new = solve_critic(world, cfg, backup)
        if record:
            hist.append((backup, new))
        resid = float(np.max(np.abs(new - q)))
        q = new
        if resid < tol:
            return CriticRun(q, True, k, resid, hist)
    log.info("critic did not converge in %d iterations (residual %.3g)", k_max, resid)
    return CriticRun(q, False, k_max, resid, hist)


# --- threshold checkers --------------------------------------------------------

def d_cql(world: InterpolatedWorld) -> float:
    """sum_s rho(s)^2 / d_beta(s) - 1 with clamped dataset state frequencies."""
    rho_s = world.rho.sum(axis=1)
    return float((rho_s**2 / world.d_beta_state).sum() - 1.0)


def policy_sq_norm(policy: np.ndarray) -> float:
    """min_s ||pi(.|s)||^2, the scalar reading of ||pi||_2^2 that keeps the bounds valid."""
    return float((policy**2).sum(axis=1).min())


def policy_tv(policy: np.ndarray, behavior: np.ndarray) -> float:
    """max_s TV(pi(.|s), pi_beta(.|s))."""
    return float(0.5 * np.abs(policy - behavior).sum(axis=1).max())


@dataclass(frozen=True)
class ThresholdTerms:
    nu: float
    reward_gap: float
    model_tv: float
    sampling: float
    alpha_term: float

    @property
    def deviation(self) -> float:
        return self.reward_gap + self.model_tv + self.sampling

    @property
    def value(self) -> float:
        return (self.deviation + self.alpha_term) / self.nu


def beta_threshold_terms(world: InterpolatedWorld, cfg: CriticConfig, model: LearnedModel | TabularMDP,
                         truth: TabularMDP, constants: BoundConstants) -> ThresholdTerms:
    mdp_hat = model.mdp_hat if isinstance(model, LearnedModel) else model
    g = truth.gamma
    rmax = constants.r_max
    nu = world.nu()
    if nu <= 0:
        raise OnSupportRegime("on-support regime (nu <= 0); any beta suffices")
    reward_gap = float(np.abs(truth.reward - mdp_hat.reward).max())
    model_tv = 2 * g * rmax / (1 - g) * float(tv_distance(mdp_hat, truth).max())
    sampling = constants.c_rt_delta * rmax / ((1 - g) * np.sqrt(world.n_total))
    S = world.shape[0]
    spread = 1.0 - policy_sq_norm(world.policy) + policy_tv(world.policy, world.behavior)
    alpha_term = (cfg.alpha * spread * rmax * np.sqrt(constants.kappa_var * S * (d_cql(world) + 1.0))
                  / ((1 - g) * np.sqrt(world.n_total)))
    return ThresholdTerms(nu, reward_gap, model_tv, float(sampling), float(alpha_term))


def beta_threshold(world, cfg, model, truth, policy=None, constants: BoundConstants | None = None) -> float:
    """c_{rho,f}: the conservatism weight above which E_{mu,pi}[Q_hat] <= E_{mu,pi}[Q^pi]."""
    if constants is None:
        raise ValueError("constants are required")
    return beta_threshold_terms(world, cfg, model, truth, constants).value


def alpha_restriction(world: InterpolatedWorld, q: np.ndarray, r_max: float, gamma: float) -> float:
    """(1 - gamma) sqrt(Var |D(s)|) / ((|A| - 1) R_max), minimized over states."""
    A = world.shape[1]
    if A < 2:
        return np.inf
    scale = np.sqrt(row_variance(q, world.pi_f) * world.clamped_state_counts)
    return float((1 - gamma) * scale.min() / ((A - 1) * r_max))


@dataclass(frozen=True)
class GapReport:
    gap_hat: float
    gap_true: float
    degenerate: bool

    @property
    def passed(self) -> bool:
        if self.degenerate:
            return abs(self.gap_hat - self.gap_true) <= 1e-10
        return self.gap_hat > self.gap_true


def gap(q: np.ndarray, world: InterpolatedWorld) -> float:
    """E_d[Q] - E_rho[Q]."""
    return float(((world.d - world.rho) * q).sum())


def check_gap_expanding(q_hat: np.ndarray, q_true_iterate: np.ndarray, world: InterpolatedWorld,
                        atol: float = 1e-14) -> GapReport:
    degenerate = bool(np.allclose(world.rho, world.d, rtol=0, atol=atol))
    return GapReport(gap(q_hat, world), gap(q_true_iterate, world), degenerate)


def gap_expansion_threshold(world: InterpolatedWorld, cfg: CriticConfig) -> float:
    """A beta above which the gap strictly expands for any backup.

    The beta term widens the gap by beta * sum (rho - d)^2 / d_f, while the
    variance shrinkage moves each entry by at most kappa_s sqrt(pi_f) / d_f,
    independently of beta.
    """
    spread = float(((world.rho - world.d) ** 2 * np.divide(1.0, world.d_f, out=np.zeros(world.shape),
                                                             where=world.d_f > 0)).sum())
    if spread <= 0:
        raise OnSupportRegime("rho == d on the support of d_f")
    kappa = variance_weights(world, cfg.alpha)[:, None]
    move = np.divide(kappa * np.sqrt(world.pi_f), world.d_f, out=np.zeros(world.shape), where=world.d_f > 0)
    return float((np.abs(world.d - world.rho) * move).sum() / spread)


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-15


def lambda_expectation_bound(world: InterpolatedWorld, cfg: CriticConfig, constants: BoundConstants,
                             q: np.ndarray, policy: np.ndarray | None = None,
                             behavior: np.ndarray | None = None) -> BoundCheck:
    """E_rho[lambda / sqrt(Var |D(s)|)] against its kappa_Var / D_CQL bound.

    Raises ``AssumptionViolation`` when some row variance is below 1 / kappa_Var.
    """
    policy = world.policy if policy is None else policy
    behavior = world.behavior if behavior is None else behavior
    var = row_variance(q, world.pi_f)
    if var.min() < 1.0 / constants.kappa_var:
        raise AssumptionViolation(f"min variance {var.min():.3g} below 1/kappa_var = {1 / constants.kappa_var:.3g}")
    lam = cfg.alpha * (1.0 - world.pi_f)
    lhs = float((world.rho * lam / np.sqrt(var * world.clamped_state_counts)[:, None]).sum())
    S = world.shape[0]
    spread = 1.0 - policy_sq_norm(policy) + world.f * policy_tv(policy, behavior)
    rhs = cfg.alpha * spread * np.sqrt(constants.kappa_var * S * (d_cql(world) + 1.0) / world.n_total)
    return BoundCheck(lhs, float(rhs))
