"""Fourier-feature approximations of stationary GPs and the additive latent composition.

An LMM prior ``z = A phi(x)`` with Gaussian rows of A and ``sigma_z -> 0`` is a
reduced-rank GP; this module provides the exact GP and the weight-space
regression needed to check that numerically.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .covariates import fourier_feature_map

JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KernelSpec:
    variance: float = 1.0
    lengthscale: float = 1.0
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError("only the RBF kernel is supported")
        if self.variance <= 0 or self.lengthscale <= 0:
            raise ValueError("kernel variance and lengthscale must be positive")

    def __call__(self, a, b) -> np.ndarray:
        r = np.asarray(a, float)[:, None] - np.asarray(b, float)[None, :]
        return self.variance * np.exp(-0.5 * (r / self.lengthscale) ** 2)


def approx_kernel(r, frequencies, variance: float = 1.0) -> np.ndarray:
    """``variance / M * sum_m cos(w_m r)``."""
    w = np.asarray(frequencies, float)
    if w.size < 1:
        raise ValueError("need at least one frequency")
    r = np.asarray(r, float)
    return variance / w.size * np.cos(r[..., None] * w).sum(-1)


def _chol(K: np.ndarray):
    for jitter in (0.0, *JITTER_LADDER):
        try:
            return cho_factor(K + jitter * np.eye(len(K)), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("matrix is not positive definite even with 1e-6 jitter")


def exact_gp_posterior(x, y, kernel: KernelSpec, noise_var: float) -> tuple[Callable, Callable]:
    """Posterior mean and covariance functions of GP regression (Cholesky solve)."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) > 2000:
        raise ValueError("dense GP limited to 2000 training points")
    if len(x) == 0:
        return (lambda t: np.zeros(len(np.asarray(t))),
                lambda t, s=None: kernel(t, t if s is None else s))
    fac = _chol(kernel(x, x) + noise_var * np.eye(len(x)))
    alpha = cho_solve(fac, y)

    def mean(t):
        return kernel(t, x) @ alpha

    def cov(t, s=None):
        s = t if s is None else s
        return kernel(t, s) - kernel(t, x) @ cho_solve(fac, kernel(x, s))

    return mean, cov


def rff_regression_posterior(x, y, frequencies, weights, noise_var: float) -> tuple[Callable, Callable]:
    """Bayesian linear regression on ``phi(x)`` with prior ``N(0, diag(weights))``.

    ``weights`` has one entry per feature (2M); use ``s(w)`` for a regular grid
    and ``variance / M`` for random frequencies.
    """
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    x, y = np.asarray(x, float), np.asarray(y, float)
    w = np.asarray(weights, float)
    Phi = fourier_feature_map(x, frequencies)  # N x 2M
    if w.shape != (Phi.shape[1],) or np.any(w <= 0):
        raise ValueError("need one positive prior variance per feature")
    precision = np.diag(1.0 / w) + Phi.T @ Phi / noise_var
    try:
        fac = cho_factor(precision, lower=True)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("posterior precision is singular") from None
    w_mean = cho_solve(fac, Phi.T @ y / noise_var)
    w_cov = cho_solve(fac, np.eye(len(w)))

    def mean(t):
        return fourier_feature_map(t, frequencies) @ w_mean

    def cov(t, s=None):
        Pt = fourier_feature_map(t, frequencies)
        Ps = Pt if s is None else fourier_feature_map(s, frequencies)
        return Pt @ w_cov @ Ps.T

    mean.weight_cov = w_cov
    mean.weight_mean = w_mean
    return mean, cov


@dataclass
class AdditiveComponent:
    """``A^(j) phi_j(x^(j))`` where ``select`` picks the component's covariates."""

    select: Sequence[str]
    feature_map: Callable[..., np.ndarray]
    A: np.ndarray

    def __call__(self, raw: dict) -> np.ndarray:
        phi = np.asarray(self.feature_map(*[np.asarray(raw[k], float) for k in self.select]), float)
        if phi.ndim == 1:
            phi = phi[None, :]
        if phi.shape[-1] != self.A.shape[1]:
            raise ValueError(f"feature width {phi.shape[-1]} does not match A with {self.A.shape[1]} columns")
        return phi @ self.A.T


def compose_additive(components: Sequence[AdditiveComponent], raw: dict) -> np.ndarray:
    """``z = sum_j A^(j) phi_j(x^(j))``, one row per observation."""
    if not components:
        raise ValueError("need at least one component")
    return sum(c(raw) for c in components)
