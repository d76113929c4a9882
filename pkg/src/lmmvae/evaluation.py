"""Metrics: masked MSE, Gaussian NLL, optimal assignment and MCC."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class MetricReport:
    name: str
    values: list[float] = field(default_factory=list)
    n_items: int = 0

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")

    @property
    def std(self) -> float | None:
        # sample std, only defined across >= 2 seeds
        return float(np.std(self.values, ddof=1)) if len(self.values) >= 2 else None

    def to_dict(self) -> dict:
        return {"name": self.name, "values": list(self.values), "n_items": self.n_items,
                "mean": self.mean, "std": self.std}


def masked_mse(pred, truth, mask, target: str = "masked_entries") -> float:
    """MSE over hidden entries (``mask`` False) or over all entries."""
    pred, truth, mask = np.asarray(pred, float), np.asarray(truth, float), np.asarray(mask, bool)
    if pred.shape != truth.shape or mask.shape != truth.shape:
        raise ValueError(f"masked_mse: shapes {pred.shape}, {truth.shape}, {mask.shape} differ")
    if target == "masked_entries":
        sel = ~mask
    elif target == "observed_entries":
        sel = mask
    elif target == "all":
        sel = np.ones_like(mask)
    else:
        raise ValueError(f"unknown target {target!r}")
    if not sel.any():
        raise ValueError("masked_mse: empty target set")
    return float(np.mean((pred[sel] - truth[sel]) ** 2))


def nll(pred, sigma_y, truth, mask=None) -> float:
    """Gaussian negative log-likelihood of observed entries, averaged per observation (column)."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if np.any(np.asarray(sigma_y) <= 0):
        raise ValueError("sigma_y must be positive")
    mask = np.ones_like(truth, bool) if mask is None else np.asarray(mask, bool)
    per = 0.5 * math.log(2 * math.pi) + np.log(sigma_y) + (truth - pred) ** 2 / (2 * np.asarray(sigma_y) ** 2)
    per = np.where(mask, per, 0.0)
    n_obs = truth.shape[1] if truth.ndim == 2 else 1
    return float(per.sum() / n_obs)


def optimal_assignment(cost) -> np.ndarray:
    """Permutation ``p`` minimising ``sum_i cost[i, p[i]]`` (exact)."""
    cost = np.asarray(cost, float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"optimal_assignment needs a square matrix, got {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("optimal_assignment: costs must be finite")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(cost.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def abs_correlation(z_true, z_est) -> np.ndarray:
    """``|corr(z_true_i, z_est_j)|`` for latent rows i, j; constant rows give 0."""
    a = np.asarray(z_true, float)
    b = np.asarray(z_est, float)
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    c = (a @ b.T)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = c / np.outer(na, nb)
    c[~np.isfinite(c)] = 0.0
    return np.abs(c)


def mcc(z_true, z_est) -> float:
    """Mean absolute Pearson correlation after optimally matching latent dimensions.

    Both inputs are ``L x N``.
    """
    z_true, z_est = np.asarray(z_true, float), np.asarray(z_est, float)
    if z_true.shape != z_est.shape:
        raise ValueError(f"mcc: shapes {z_true.shape} and {z_est.shape} differ")
    if z_true.shape[1] < 3:
        raise ValueError("mcc needs at least 3 observations")
    C = abs_correlation(z_true, z_est)
    perm = optimal_assignment(-C)
    return float(np.clip(C[np.arange(len(perm)), perm].mean(), 0.0, 1.0))
