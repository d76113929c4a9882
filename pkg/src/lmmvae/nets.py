"""MLP encoder/decoder, reparameterised sampling and the Gaussian likelihood."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .ndcore import DTYPE, LOG_2PI, Rng, ShapeError, Tensor, tensor

ACTIVATIONS = {"relu": torch.relu, "elu": nn.functional.elu, "tanh": torch.tanh}


@dataclass(frozen=True)
class MlpSpec:
    hidden: tuple[int, ...] = (64, 32)
    activation: str = "elu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if any(w < 1 for w in self.hidden):
            raise ValueError("layer widths must be positive")


@dataclass(frozen=True)
class LikelihoodSpec:
    """``gaussian`` or ``gaussian-sigmoid-mean`` (sigmoid applied to the decoded mean)."""

    kind: str = "gaussian"
    sigma_y: float = 1.0
    learnable: bool = True

    def __post_init__(self):
        if self.kind not in ("gaussian", "gaussian-sigmoid-mean"):
            raise ValueError(f"unknown likelihood {self.kind!r}")
        if self.sigma_y <= 0:
            raise ValueError("sigma_y must be positive")


class Mlp(nn.Module):
    """Fully connected net; activation after every layer except the last."""

    def __init__(self, n_in: int, n_out: int, spec: MlpSpec, rng: Rng):
        super().__init__()
        widths = [n_in, *spec.hidden, n_out]
        self.layers = nn.ModuleList()
        for a, b in zip(widths[:-1], widths[1:]):
            layer = nn.Linear(a, b, dtype=DTYPE)
            bound = 1.0 / math.sqrt(a)
            with torch.no_grad():
                layer.weight.copy_(tensor(rng.uniform(b, a) * 2 - 1) * bound)
                layer.bias.copy_(tensor(rng.uniform(b) * 2 - 1) * bound)
            self.layers.append(layer)
        self.act = ACTIVATIONS[spec.activation]
        self.n_in = n_in

    def forward(self, h: Tensor) -> Tensor:
        if h.shape[-1] != self.n_in:
            raise ShapeError("Mlp.forward", h.shape, (self.n_in,))
        for layer in self.layers[:-1]:
            h = self.act(layer(h))
        return self.layers[-1](h)


class Encoder(nn.Module):
    """Maps an encoder input to ``(mu, log_var)`` of a diagonal Gaussian."""

    def __init__(self, n_in: int, latent_dim: int, spec: MlpSpec, rng: Rng):
        super().__init__()
        self.net = Mlp(n_in, 2 * latent_dim, spec, rng)
        self.latent_dim = latent_dim

    def forward(self, inp: Tensor) -> tuple[Tensor, Tensor]:
        out = self.net(inp)
        return out[..., :self.latent_dim], out[..., self.latent_dim:]


class Decoder(nn.Module):
    def __init__(self, n_in: int, n_out: int, spec: MlpSpec, likelihood: LikelihoodSpec, rng: Rng):
        super().__init__()
        self.net = Mlp(n_in, n_out, spec, rng)
        self.likelihood = likelihood
        log_s = torch.tensor(math.log(likelihood.sigma_y), dtype=DTYPE)
        if likelihood.learnable:
            self.log_sigma_y = nn.Parameter(log_s)
        else:
            self.register_buffer("log_sigma_y", log_s)

    @property
    def sigma_y(self) -> Tensor:
        return self.log_sigma_y.exp()

    def forward(self, z: Tensor) -> Tensor:
        out = self.net(z)
        if self.likelihood.kind == "gaussian-sigmoid-mean":
            out = torch.sigmoid(out)
        return out


def encode(net: Encoder, y: Tensor) -> tuple[Tensor, Tensor]:
    return net(y)


def reparameterize(mu: Tensor, log_var: Tensor, noise: Tensor) -> Tensor:
    """``mu + exp(log_var / 2) * noise``; noise is drawn by the caller."""
    return mu + torch.exp(0.5 * log_var) * noise


def gaussian_log_lik(y: Tensor, y_hat: Tensor, sigma_y, mask: Tensor | None = None) -> Tensor:
    """Sum over the last axis of ``log N(y_d | y_hat_d, sigma_y^2)``, observed entries only."""
    if y.shape[-1] != y_hat.shape[-1]:
        raise ShapeError("gaussian_log_lik", y.shape, y_hat.shape)
    sigma_y = torch.as_tensor(sigma_y, dtype=DTYPE)
    if (sigma_y <= 0).any():
        raise ValueError("sigma_y must be positive")
    ll = -0.5 * LOG_2PI - torch.log(sigma_y) - (y - y_hat) ** 2 / (2 * sigma_y ** 2)
    if mask is not None:
        ll = ll * mask
    return ll.sum(-1)
