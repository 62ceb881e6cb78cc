"""Linear-feature DROMO: the strict critic objective, its gradient, LSTD-Q
projection, the linear lower-bound threshold and an exact one-step NTK check.

Q-tables are flattened row-major to vectors of length |S||A| so that a
feature matrix row F[s * A + a] is the feature of pair (s, a).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .critic import CriticConfig, InterpolatedWorld, OnSupportRegime
from .dynamics import LearnedModel, tv_distance
from .mdp import BoundConstants, TabularMDP

VAR_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMap:
    features: np.ndarray

    def __post_init__(self):
        F = np.array(self.features, dtype=float)
        if F.ndim != 2 or F.shape[1] > F.shape[0] or F.shape[1] == 0:
            raise ValueError(f"features must be (|S||A|, dim) with 1 <= dim <= |S||A|, got {F.shape}")
        if not np.all(np.isfinite(F)):
            raise ValueError("features have non-finite entries")
        F.flags.writeable = False
        object.__setattr__(self, "features", F)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def identity(cls, n: int) -> "FeatureMap":
        return cls(np.eye(n))

    @classmethod
    def random(cls, rng: np.random.Generator, n: int, dim: int) -> "FeatureMap":
        return cls(rng.normal(size=(n, dim)))

    def q(self, omega: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
        return (self.features @ omega).reshape(shape)

    def gram(self, d_f: np.ndarray) -> np.ndarray:
        F = self.features
        return F.T @ (d_f.reshape(-1)[:, None] * F)

    def condition(self, d_f: np.ndarray) -> float:
        return float(np.linalg.cond(self.gram(d_f)))


def save_features(fm: FeatureMap, path: str | Path) -> None:
    rows, dim = fm.features.shape
    lines = [f"features {rows} {dim}"] + [" ".join(repr(float(v)) for v in row) for row in fm.features]
    Path(path).write_text("\n".join(lines) + "\n")


def load_features(path: str | Path) -> FeatureMap:
    body = [ln.split("#", 1)[0].split() for ln in Path(path).read_text().splitlines()]
    body = [tok for tok in body if tok]
    if not body or body[0][0] != "features" or len(body[0]) != 3:
        raise ValueError(f"{path}: expected header 'features <rows> <dim>'")
    rows, dim = int(body[0][1]), int(body[0][2])
    data = body[1:]
    if len(data) != rows or any(len(r) != dim for r in data):
        raise ValueError(f"{path}: expected {rows} rows of {dim} values")
    return FeatureMap(np.array(data, dtype=float))


@dataclass(frozen=True, eq=False)
class LinearCritic:
    weights: np.ndarray
    step_size: float = 0.1

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a finite vector")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        object.__setattr__(self, "weights", w)


def _flat(world: InterpolatedWorld):
    return world.d_f.reshape(-1), (world.rho - world.d).reshape(-1)


def _var_parts(q: np.ndarray, d_f: np.ndarray):
    m = d_f @ q
    var = float(d_f @ (q - m) ** 2)
    return m, var


def strict_objective(omega: np.ndarray, fm: FeatureMap, world: InterpolatedWorld, cfg: CriticConfig,
                     backup: np.ndarray) -> float:
    """1/2 E_{d_f}[(F w - B)^2] + alpha sqrt(Var_{d_f}(F w) / |D|) + beta (E_rho - E_D)[F w]."""
    d_f, shift = _flat(world)
    q = fm.features @ omega
    _, var = _var_parts(q, d_f)
    fit = 0.5 * float(d_f @ (q - backup.reshape(-1)) ** 2)
    return fit + cfg.alpha * np.sqrt(var / world.n_total) + cfg.beta * float(shift @ q)


def variance_direction(q: np.ndarray, world: InterpolatedWorld) -> np.ndarray:
    """d sqrt(Var_{d_f}(Q) / |D|) / dQ, set to 0 at the kink Var = 0."""
    d_f, _ = _flat(world)
    m, var = _var_parts(q, d_f)
    if var <= VAR_FLOOR:
        return np.zeros_like(q)
    return d_f * (q - m) / np.sqrt(world.n_total * var)


def q_gradient(q: np.ndarray, world: InterpolatedWorld, cfg: CriticConfig, backup: np.ndarray) -> np.ndarray:
    """Gradient of the strict objective with respect to the flattened Q vector."""
    d_f, shift = _flat(world)
    return d_f * (q - backup.reshape(-1)) + cfg.alpha * variance_direction(q, world) + cfg.beta * shift


def strict_gradient(omega, fm: FeatureMap, world, cfg, backup) -> np.ndarray:
    return fm.features.T @ q_gradient(fm.features @ omega, world, cfg, backup)


def gradient_step(critic: LinearCritic, fm: FeatureMap, world, cfg, backup) -> LinearCritic:
    g = strict_gradient(critic.weights, fm, world, cfg, backup)
    return replace(critic, weights=critic.weights - critic.step_size * g)


def fit_by_gradient(critic: LinearCritic, fm: FeatureMap, world, cfg, backup,
                    max_steps: int = 200_000, tol: float = 1e-12) -> tuple[LinearCritic, bool]:
    """Repeated gradient steps until the weight change falls below ``tol``."""
    for _ in range(max_steps):
        new = gradient_step(critic, fm, world, cfg, backup)
        done = np.max(np.abs(new.weights - critic.weights)) < tol
        critic = new
        if done:
            return critic, True
    return critic, False


def lstd_q(world: InterpolatedWorld, fm: FeatureMap, backup: np.ndarray) -> np.ndarray:
    """D_f-weighted least-squares projection of ``backup`` onto span(F)."""
    d_f, _ = _flat(world)
    F = fm.features
    G = fm.gram(world.d_f)
    try:
        omega = np.linalg.solve(G, F.T @ (d_f * backup.reshape(-1)))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular normal matrix F^T D_f F") from exc
    return (F @ omega).reshape(world.shape)


def linear_update(omega_k: np.ndarray, fm: FeatureMap, world: InterpolatedWorld, cfg: CriticConfig,
                  backup: np.ndarray) -> np.ndarray:
    """Stationary point of the strict objective with the variance gradient frozen at ``omega_k``.

    omega = (F^T D_f F)^{-1} [F^T D_f B - beta F^T (rho - d) - alpha g(omega_k)]
    """
    d_f, shift = _flat(world)
    F = fm.features
    g = F.T @ variance_direction(F @ omega_k, world)
    rhs = F.T @ (d_f * backup.reshape(-1)) - cfg.beta * (F.T @ shift) - cfg.alpha * g
    return np.linalg.solve(fm.gram(world.d_f), rhs)


def start_weights(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """(mu . pi) flattened: the weights of E_{s~mu, a~pi}."""
    return (mdp.initial_dist[:, None] * policy).reshape(-1)


def xi_slack(world: InterpolatedWorld, model: LearnedModel | TabularMDP, truth: TabularMDP,
             constants: BoundConstants) -> float:
    """(1 - f)[|r - r_hat| + 2 g R_max/(1 - g) TV] + f C R_max / ((1 - g) sqrt|D|), sup over pairs."""
    mdp_hat = model.mdp_hat if isinstance(model, LearnedModel) else model
    g, rmax, f = truth.gamma, constants.r_max, world.f
    dev = np.abs(truth.reward - mdp_hat.reward) + 2 * g * rmax / (1 - g) * tv_distance(mdp_hat, truth)
    return float((1 - f) * dev.max() + f * constants.c_rt_delta * rmax / ((1 - g) * np.sqrt(world.n_total)))


@dataclass(frozen=True)
class LinearThreshold:
    projection: float
    xi: float
    star: float
    cov_correction: float
    alpha: float

    @property
    def value(self) -> float:
        return (self.projection + self.xi - self.alpha * self.cov_correction) / self.star


def linear_threshold_terms(world: InterpolatedWorld, cfg: CriticConfig, fm: FeatureMap, omega_k: np.ndarray,
                   backup: np.ndarray, start: np.ndarray, xi: float) -> LinearThreshold:
    """Pieces of the linear threshold at one iteration.

    projection = (mu pi)^T (Pi - I) B, star = (mu pi)^T F G^{-1} F^T (rho - d),
    cov_correction = (mu pi)^T F G^{-1} g(omega_k), with G = F^T D_f F.
    """
    d_f, shift = _flat(world)
    F = fm.features
    G = fm.gram(world.d_f)
    u = np.linalg.solve(G, F.T @ start)
    B = backup.reshape(-1)
    projection = float(u @ (F.T @ (d_f * B)) - start @ B)
    star = float(u @ (F.T @ shift))
    if star <= 0:
        raise OnSupportRegime(f"nonpositive denominator (mu pi)^T F G^-1 F^T (rho - d) = {star:.3g}")
    cov = float(u @ (F.T @ variance_direction(F @ omega_k, world)))
    return LinearThreshold(projection, xi, star, cov, cfg.alpha)


def linear_beta_threshold(world, cfg, fm, omega_k, backup, start, xi) -> float:
    return linear_threshold_terms(world, cfg, fm, omega_k, backup, start, xi).value


@dataclass(frozen=True)
class NTKReport:
    direct: np.ndarray
    decomposed: np.ndarray
    unpenalized: np.ndarray
    penalty: np.ndarray
    variance: np.ndarray
    printed_variance: np.ndarray
    beta_condition: float | None
    bound_lhs: float | None
    bound_rhs: float | None

    @property
    def max_error(self) -> float:
        return float(np.max(np.abs(self.direct - self.decomposed)))

    @property
    def printed_discrepancy(self) -> float:
        return float(np.max(np.abs(self.variance - self.printed_variance)))

    @property
    def passed(self) -> bool:
        ok = self.max_error <= 1e-8
        if self.bound_lhs is not None:
            ok = ok and self.bound_lhs <= self.bound_rhs + 1e-12
        return ok


def ntk_one_step_check(critic: LinearCritic, fm: FeatureMap, world: InterpolatedWorld, cfg: CriticConfig,
                       backup: np.ndarray, eta: float | None = None, true_backup: np.ndarray | None = None,
                       start: np.ndarray | None = None, xi: float | None = None) -> NTKReport:
    """One gradient step in parameter space against its kernel decomposition.

    Q' = Q + eta K D_f (B - Q)              (unpenalized)
           - eta beta K (rho - d)           (penalty)
           - eta alpha K (D_f - d_f d_f^T) Q / sqrt(|D| Var)   (variance)

    with K = F F^T. When ``true_backup``, ``start`` and ``xi`` are given the
    beta condition is evaluated and, if ``cfg.beta`` meets it, the step is
    compared with the unpenalized step under the true operator.
    """
    eta = critic.step_size if eta is None else eta
    F = fm.features
    d_f, shift = _flat(world)
    B = backup.reshape(-1)
    omega = critic.weights
    q = F @ omega
    direct = F @ (omega - eta * strict_gradient(omega, fm, world, cfg, backup))

    K = F @ F.T
    unpen = eta * K @ (d_f * (B - q))
    pen = -eta * cfg.beta * K @ shift
    _, var = _var_parts(q, d_f)
    if var > VAR_FLOOR:
        cov = (np.diag(d_f) - np.outer(d_f, d_f)) @ q
        scale = np.sqrt(world.n_total * var)
        vterm = -eta * cfg.alpha * K @ cov / scale
        printed = -eta * cfg.alpha * K @ ((d_f - d_f**2) * q) / scale
    else:
        vterm = np.zeros_like(q)
        printed = np.zeros_like(q)
    decomposed = q + unpen + pen + vterm

    cond = lhs = rhs = None
    if true_backup is not None and start is not None and xi is not None:
        Kmu = K @ start
        denom = float(Kmu @ shift)
        var_dir = variance_direction(q, world)
        if denom > 0:
            cond = (xi * float(np.abs(d_f * Kmu).sum()) - cfg.alpha * float(Kmu @ var_dir)) / denom
            if cfg.beta >= cond:
                lhs = float(start @ direct)
                rhs = float(start @ (q + eta * K @ (d_f * (true_backup.reshape(-1) - q))))
    return NTKReport(direct.reshape(world.shape), decomposed.reshape(world.shape), unpen, pen, vterm, printed,
                     cond, lhs, rhs)
