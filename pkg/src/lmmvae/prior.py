"""The LMM latent prior p(z | A, x) and the closed-form KL/expectation terms.

Shapes are batch-first: ``x`` is ``(..., Q)``, ``mu``/``var`` are ``(..., L)`` and
the effect matrix ``A`` is ``(L, Q)``. All functions are differentiable in
every tensor argument.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .ndcore import DTYPE, Rng, ShapeError, Tensor, tensor


@dataclass
class PriorOnA:
    """Gaussian prior on the entries of A.

    ``isotropic`` uses variance ``1/beta`` everywhere. ``spectral`` supplies a
    variance per column (e.g. from Fourier-feature weights); columns given as
    nan fall back to ``1/beta``.
    """

    kind: str = "isotropic"
    beta: float = 1.0
    column_var: np.ndarray | None = None

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("prior precision beta must be positive")
        if self.kind not in ("isotropic", "spectral"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "spectral" and self.column_var is None:
            raise ValueError("spectral prior needs per-column variances")

    def variances(self, L: int, Q: int) -> Tensor:
        v = np.full(Q, 1.0 / self.beta)
        if self.kind == "spectral":
            cv = np.asarray(self.column_var, dtype=np.float64)
            if cv.shape != (Q,):
                raise ShapeError("PriorOnA.variances", cv.shape, (Q,))
            v = np.where(np.isnan(cv), v, cv)
        if np.any(v <= 0):
            raise ValueError("prior variances on A must be positive")
        return tensor(np.broadcast_to(v, (L, Q)))


@dataclass
class GaussianPosterior:
    mu: Tensor
    var: Tensor


@dataclass
class LmmPrior:
    """``z | A, x ~ N(Ax, sigma_z^2 I)`` with A a point estimate or mean-field Gaussian.

    ``a_var`` is ``None`` for a deterministic A.
    """

    a_mean: Tensor
    a_var: Tensor | None = None
    sigma_z: float | Tensor = 1.0
    prior_on_a: PriorOnA | None = None

    @property
    def bayes(self) -> bool:
        return self.a_var is not None

    @property
    def L(self) -> int:
        return self.a_mean.shape[0]

    @property
    def Q(self) -> int:
        return self.a_mean.shape[1]


def _rowdot(a: Tensor, x: Tensor) -> Tensor:
    # a: (L, Q) or (Q,), x: (..., Q)
    if a.shape[-1] != x.shape[-1]:
        raise ShapeError("A x", a.shape, x.shape)
    if a.dim() == 1:
        return (a * x).sum(-1)
    return (x[..., None, :] * a).sum(-1)


def prior_mean(prior: LmmPrior, x: Tensor) -> Tensor:
    """``E[A] x`` for each row of ``x``."""
    return _rowdot(prior.a_mean, x)


def expected_sq_residual(mu: Tensor, a_mean: Tensor, a_var: Tensor | None, x: Tensor) -> Tensor:
    """``E_q(a)[(mu - a x)^2] = (mu - E[a] x)^2 + var(a)' (x * x)``."""
    out = (mu - _rowdot(a_mean, x)) ** 2
    if a_var is not None:
        if (a_var < 0).any():
            raise ValueError("expected_sq_residual: negative variance")
        out = out + _rowdot(a_var, x * x)
    return out


def gaussian_kl(mu_q: Tensor, var_q: Tensor, mu_p, var_p) -> Tensor:
    """Elementwise KL(N(mu_q, var_q) || N(mu_p, var_p))."""
    ratio = var_q / var_p
    return 0.5 * (ratio - 1.0 - torch.log(ratio) + (mu_q - mu_p) ** 2 / var_p)


def kl_z_given_A(mu: Tensor, var: Tensor, prior: LmmPrior, x: Tensor) -> Tensor:
    """``E_q(A) KL(N(mu, diag var) || N(Ax, sigma_z^2 I))``, summed over latent dims.

    Returns one value per row of ``x``.
    """
    if (var <= 0).any():
        raise ValueError("kl_z_given_A: posterior variances must be positive")
    sz2 = torch.as_tensor(prior.sigma_z, dtype=DTYPE) ** 2
    esr = expected_sq_residual(mu, prior.a_mean, prior.a_var, x)
    r = var / sz2
    return (esr / (2 * sz2) + 0.5 * (r - 1.0 - torch.log(r))).sum(-1)


def kl_A(q_mean: Tensor, q_var: Tensor, prior_var: Tensor) -> Tensor:
    """Sum over entries of KL(N(q_mean, q_var) || N(0, prior_var))."""
    if (q_var <= 0).any() or (torch.as_tensor(prior_var) <= 0).any():
        raise ValueError("kl_A: variances must be positive")
    return gaussian_kl(q_mean, q_var, 0.0, prior_var).sum()


def sample_z(prior: LmmPrior, x: Tensor, rng: Rng, n: int) -> Tensor:
    """``n`` draws of z for a single covariate vector ``x``; bayes mode redraws A each time."""
    if n < 1:
        raise ValueError("sample_z: n must be >= 1")
    x = tensor(x)
    L, Q = prior.L, prior.Q
    with torch.no_grad():
        if prior.bayes:
            A = prior.a_mean + prior.a_var.sqrt() * tensor(rng.normal(n, L, Q))
            mean = (A * x).sum(-1)
        else:
            mean = prior_mean(prior, x).expand(n, L)
        return mean + torch.as_tensor(prior.sigma_z, dtype=DTYPE) * tensor(rng.normal(n, L))


def marginal_prior_variance(x, beta: float, sigma_z: float) -> float:
    """Per-dimension variance of ``p(z_i | x)`` with A ~ N(0, 1/beta) integrated out."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=np.float64)
    return float(sigma_z ** 2 + x @ x / beta)
