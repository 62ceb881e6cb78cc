"""Learned tabular dynamics and model-quality diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp import BoundConstants, TabularMDP, check_policy, occupancy, policy_return
from .offline_data import CountTable, Dataset, empirical_mdp

DEFAULT_BINS = 20


@dataclass(frozen=True, eq=False)
class LearnedModel:
    mdp_hat: TabularMDP
    source_counts: CountTable

    @property
    def shape(self) -> tuple[int, int]:
        return self.mdp_hat.shape


def fit_model(data: Dataset, shape: tuple[int, int], smoothing: float = 0.0,
              gamma: float = 0.99, initial_dist: np.ndarray | None = None) -> LearnedModel:
    mdp_hat = empirical_mdp(data, shape, smoothing, gamma=gamma, initial_dist=initial_dist)
    return LearnedModel(mdp_hat, CountTable.from_dataset(data, shape))


def _transition(x) -> np.ndarray:
    if isinstance(x, LearnedModel):
        return x.mdp_hat.transition
    if isinstance(x, TabularMDP):
        return x.transition
    return np.asarray(x, dtype=float)


def tv_distance(model, truth) -> np.ndarray:
    """Per-(s, a) total variation 0.5 * sum_s' |T_hat - T|."""
    a, b = _transition(model), _transition(truth)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return 0.5 * np.abs(a - b).sum(axis=-1)


def row_entropy(rows: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) along the last axis, with 0 log 0 = 0."""
    rows = np.asarray(rows, dtype=float)
    logs = np.log(rows, out=np.zeros_like(rows), where=rows > 0)
    return -(rows * logs).sum(axis=-1)


def uncertainty(model: LearnedModel) -> np.ndarray:
    """u(s, a): entropy of the predicted next-state distribution."""
    return row_entropy(model.mdp_hat.transition)


def l1_calibration_error(model, truth, visit_dist: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Binned l1 calibration error of T_hat as a predictor of s'.

    For every next state y, pairs (s, a) are grouped by the predicted
    probability T_hat(y|s,a) into ``bins`` uniform bins on [0, 1]; each bin
    contributes |sum_{x in bin} w(x) (T(y|x) - T_hat(y|x))|, i.e. its visit
    mass times the gap between observed frequency and mean prediction.
    """
    pred = _transition(model)
    true = _transition(truth)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {true.shape}")
    w = np.asarray(visit_dist, dtype=float).reshape(-1)
    S2 = pred.shape[-1]
    pred = pred.reshape(-1, S2)
    true = true.reshape(-1, S2)
    if w.shape[0] != pred.shape[0]:
        raise ValueError("visit_dist must cover every (s, a) pair")
    idx = np.minimum((pred * bins).astype(np.int64), bins - 1)
    gap = w[:, None] * (true - pred)
    per_bin = np.zeros((bins, S2))
    np.add.at(per_bin, (idx, np.broadcast_to(np.arange(S2), idx.shape)), gap)
    return float(np.abs(per_bin).sum())


@dataclass(frozen=True)
class CalibrationReport:
    gap: float
    bound: float
    calibration_error: float
    slack: float

    @property
    def passed(self) -> bool:
        return self.gap <= self.bound


def calibration_value_gap_check(model, truth: TabularMDP, policy: np.ndarray, constants: BoundConstants,
                                bins: int = DEFAULT_BINS, visit_dist: np.ndarray | None = None) -> CalibrationReport:
    """Compare |J_hat - J| against gamma R_max / (1 - gamma) * CE + binning slack.

    Only the dynamics differ between the two evaluations: the model MDP reuses
    the true rewards and start distribution. The calibration error is taken
    under the model's own occupancy of ``policy`` unless ``visit_dist`` is given.
    """
    pi = check_policy(policy, *truth.shape)
    virtual = truth.replace(transition=_transition(model))
    if visit_dist is None:
        visit_dist = occupancy(virtual, pi)
    ce = l1_calibration_error(virtual, truth, visit_dist, bins)
    g = truth.gamma
    scale = g * constants.r_max / (1.0 - g)
    slack = scale / (2 * bins)
    gap = abs(policy_return(virtual, pi) - policy_return(truth, pi))
    return CalibrationReport(gap, scale * ce + slack, ce, slack)


def write_diagnostics(path: str | Path, model: LearnedModel, truth: TabularMDP | None = None) -> None:
    """CSV with columns s, a, tv, entropy, count (tv empty without a truth MDP)."""
    S, A = model.shape
    tv = tv_distance(model, truth) if truth is not None else None
    ent = uncertainty(model)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "a", "tv", "entropy", "count"])
        for s in range(S):
            for a in range(A):
                w.writerow([s, a, "" if tv is None else repr(float(tv[s, a])),
                            repr(float(ent[s, a])), int(model.source_counts.n_sa[s, a])])
