"""Chi-square ambiguity sets over finite-support distributions.

``robust_sup`` solves

    max_p  E_p[Z]   s.t.  chi2(p || q) <= radius,  p in the simplex,

exactly. The KKT conditions give a maximizer of the form
p_i ∝ q_i * max(0, Z_i - eta); chi2 of that family is monotone in eta, so a
single bisection on eta finds the point where the ball constraint is tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_TOL = 1e-12
BISECT_TOL = 1e-12
BISECT_MAX_ITERS = 200


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    support_values: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.support_values, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if z.ndim != 1 or z.shape != p.shape or z.size == 0:
            raise ValueError("support_values and probabilities must be equal-length 1-D arrays")
        if np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL * max(1, p.size):
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "support_values", z)
        object.__setattr__(self, "probabilities", p)

    def mean(self) -> float:
        return float(self.probabilities @ self.support_values)

    def variance(self) -> float:
        """Population variance sum_i p_i (Z_i - mean)^2."""
        dev = self.support_values - self.mean()
        return float(self.probabilities @ dev**2)


@dataclass(frozen=True)
class ChiSquareBall:
    center: FiniteDistribution
    radius: float

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")


def chi2_divergence(p: FiniteDistribution | np.ndarray, q: FiniteDistribution | np.ndarray) -> float:
    """sum_i q_i (p_i / q_i - 1)^2, requiring p << q."""
    p = getattr(p, "probabilities", p)
    q = getattr(q, "probabilities", q)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) & (p > 0)):
        raise ValueError("p is not absolutely continuous with respect to q")
    on = q > 0
    return float(np.sum((p[on] - q[on]) ** 2 / q[on]))


def _tilted(q: np.ndarray, z: np.ndarray, eta: float) -> np.ndarray:
    w = q * np.maximum(z - eta, 0.0)
    return w / w.sum()


def robust_sup(ball: ChiSquareBall) -> tuple[float, FiniteDistribution]:
    """Exact worst-case (largest) mean over the chi-square ball."""
    q = ball.center.probabilities
    z = ball.center.support_values
    r = float(ball.radius)
    on = q > 0
    mean = float(q @ z)
    var = float(q @ (z - mean) ** 2)
    if r == 0.0 or var <= 0.0:
        return mean, ball.center

    zmax = z[on].max()
    top = on & (z == zmax)
    # if the ball reaches the renormalized top set, the sup is attained there
    q_top = q[top].sum()
    if 1.0 / q_top - 1.0 <= r:
        p = np.where(top, q, 0.0) / q_top
        return float(zmax), FiniteDistribution(z, p)

    # untruncated regime: p = q (1 + t (Z - mean)) stays nonnegative
    eta0 = mean - np.sqrt(var / r)
    if eta0 <= z[on].min():
        p = _tilted(q, z, eta0)
        return mean + float(np.sqrt(r * var)), FiniteDistribution(z, p)

    lo, hi = z[on].min(), zmax
    for _ in range(BISECT_MAX_ITERS):
        mid = 0.5 * (lo + hi)
        if chi2_divergence(_tilted(q, z, mid), q) > r:
            hi = mid
        else:
            lo = mid
        if hi - lo <= BISECT_TOL * max(1.0, abs(lo)):
            break
    p = _tilted(q, z, lo)
    return float(p @ z), FiniteDistribution(z, p)


def variance_surrogate(dist: FiniteDistribution, radius: float) -> float:
    """mean + sqrt(radius * variance): the upper bound on ``robust_sup``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    return dist.mean() + float(np.sqrt(radius * dist.variance()))
