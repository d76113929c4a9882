"""Training objectives, training loop and conditional generation for the LMM-VAE family.

Variants:

* ``olmm`` -- per-observation latent noise, prior ``N(Ax, sigma_z^2 I)``
* ``slmm`` -- one latent offset per group (instance) shared by its observations
* ``vae``  -- standard-normal prior, no covariates
* ``cvae`` -- standard-normal prior, covariates concatenated to encoder and decoder inputs

Every loss is a per-observation average of the negative ELBO (or GSNN loss),
with the global ``KL(q(A) || p(A))`` term spread as ``kl_A / N``.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterator

import numpy as np
import torch
from torch import nn

from . import prior as lp
from .ndcore import DTYPE, Adam, Rng, Tensor, backward, exp_lr, tensor
from .nets import Decoder, Encoder, LikelihoodSpec, MlpSpec, gaussian_log_lik, reparameterize

VARIANTS = ("olmm", "slmm", "vae", "cvae")
OBJECTIVES = ("vi", "gsnn")
SNAPSHOT_FORMAT = "lmmvae-snapshot"
SNAPSHOT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelConfig:
    variant: str = "olmm"
    objective: str = "vi"
    a_mode: str = "deterministic"
    latent_dim: int = 8
    mc_samples: int = 1
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    lr_gamma: float = 0.9
    lr_step: int = 500
    seed: int = 0
    encoder_hidden: tuple = (64, 32)
    decoder_hidden: tuple = (32, 64)
    activation: str = "elu"
    likelihood: str = "gaussian"
    sigma_y: float = 1.0
    sigma_y_learnable: bool = True
    sigma_z: float = 1.0
    beta: float = 1.0
    prior_kind: str = "isotropic"
    aggregation_sign: str = "paper"
    mask_input: bool = True

    def __post_init__(self):
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.decoder_hidden = tuple(self.decoder_hidden)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.objective == "gsnn" and self.variant not in ("olmm", "slmm"):
            raise ValueError("gsnn training needs an LMM prior (olmm or slmm)")
        if self.a_mode not in ("deterministic", "bayes"):
            raise ValueError(f"unknown a_mode {self.a_mode!r}")
        if self.aggregation_sign not in ("paper", "residual"):
            raise ValueError(f"unknown aggregation_sign {self.aggregation_sign!r}")
        if self.mc_samples < 1 or self.latent_dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("mc_samples, latent_dim, batch_size must be >= 1 and epochs >= 0")
        if self.sigma_z < 0:
            raise ValueError("sigma_z must be non-negative")

    @property
    def uses_lmm(self) -> bool:
        return self.variant in ("olmm", "slmm")

    @property
    def grouped(self) -> bool:
        return self.variant == "slmm"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelData:
    """Batch-first tensors: ``y``/``mask`` are ``(N, D)``, ``x`` is ``(N, Q)``, ``groups`` ``(N,)``."""

    y: Tensor
    mask: Tensor
    x: Tensor
    groups: np.ndarray

    def __post_init__(self):
        self.groups = np.asarray(self.groups)
        n = self.y.shape[0]
        if self.mask.shape != self.y.shape or self.x.shape[0] != n or len(self.groups) != n:
            raise ValueError("ModelData fields are not aligned")

    def __len__(self) -> int:
        return self.y.shape[0]

    def take(self, idx) -> "ModelData":
        idx = np.asarray(idx, dtype=np.int64)
        t = torch.as_tensor(idx)
        return ModelData(self.y[t], self.mask[t], self.x[t], self.groups[idx])

    def local_groups(self) -> tuple[Tensor, int]:
        """Group ids renumbered 0..K-1 in order of first appearance."""
        _, first, inv = np.unique(self.groups, return_index=True, return_inverse=True)
        order = np.argsort(first)
        remap = np.empty_like(order)
        remap[order] = np.arange(len(order))
        return torch.as_tensor(remap[inv.reshape(-1)]), len(order)


@dataclass
class GroupPosterior:
    mu: Tensor
    var: Tensor


class LmmVae(nn.Module):
    def __init__(self, config: ModelConfig, obs_dim: int, cov_dim: int,
                 column_prior_var: np.ndarray | None = None):
        super().__init__()
        self.config = config
        self.obs_dim = obs_dim
        self.cov_dim = cov_dim
        c = config
        rng = Rng(c.seed).spawn("init")
        L = c.latent_dim
        enc_in = obs_dim * (2 if c.mask_input else 1) + (cov_dim if c.variant == "cvae" else 0)
        dec_in = L + (cov_dim if c.variant == "cvae" else 0)
        self.encoder = Encoder(enc_in, L, MlpSpec(c.encoder_hidden, c.activation), rng.spawn("encoder"))
        lik = LikelihoodSpec(c.likelihood, c.sigma_y, c.sigma_y_learnable)
        self.decoder = Decoder(dec_in, obs_dim, MlpSpec(c.decoder_hidden, c.activation), lik,
                               rng.spawn("decoder"))
        if c.uses_lmm:
            a0 = 0.01 * tensor(rng.spawn("A").normal(L, cov_dim))
            self.a_mean = nn.Parameter(a0)
            if c.a_mode == "bayes":
                self.a_logvar = nn.Parameter(torch.full((L, cov_dim), math.log(1e-2), dtype=DTYPE))
            else:
                self.a_logvar = None
        else:
            self.register_buffer("a_mean", torch.zeros(L, cov_dim, dtype=DTYPE))
            self.a_logvar = None
        if c.prior_kind == "spectral":
            if column_prior_var is None:
                raise ValueError("spectral prior needs column prior variances")
            self.prior_on_a = lp.PriorOnA("spectral", c.beta, np.asarray(column_prior_var, dtype=float))
        else:
            self.prior_on_a = lp.PriorOnA("isotropic", c.beta)
        self.register_buffer("a_prior_var", self.prior_on_a.variances(L, cov_dim))

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    @property
    def sigma_z(self) -> float:
        return self.config.sigma_z

    @property
    def a_var(self) -> Tensor | None:
        return None if self.a_logvar is None else self.a_logvar.exp()

    def lmm_prior(self) -> lp.LmmPrior:
        return lp.LmmPrior(self.a_mean, self.a_var, self.sigma_z, self.prior_on_a)

    def encoder_input(self, batch: ModelData) -> Tensor:
        parts = [batch.y * batch.mask]
        if self.config.mask_input:
            parts.append(batch.mask)
        if self.config.variant == "cvae":
            parts.append(batch.x)
        return torch.cat(parts, -1)

    def encode(self, batch: ModelData) -> tuple[Tensor, Tensor]:
        return self.encoder(self.encoder_input(batch))

    def decode(self, z: Tensor, x: Tensor | None = None) -> Tensor:
        if self.config.variant == "cvae":
            z = torch.cat([z, x.expand(z.shape[:-1] + x.shape[-1:])], -1)
        return self.decoder(z)

    def kl_a(self) -> Tensor:
        if self.a_logvar is None:
            return torch.zeros((), dtype=DTYPE)
        return lp.kl_A(self.a_mean, self.a_var, self.a_prior_var)

    def sample_a(self, a_noise: Tensor | None) -> Tensor:
        """A for each MC sample: ``(S, L, Q)`` in bayes mode, else ``(L, Q)``."""
        if self.a_logvar is None or a_noise is None:
            return self.a_mean
        return self.a_mean + (0.5 * self.a_logvar).exp() * a_noise


@dataclass
class LossTerms:
    loss: Tensor
    recon: Tensor  # mean per observation of E_q log p(y|z)
    kl: Tensor  # mean per observation of the latent KL
    kl_a: Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).detach()) for k in ("loss", "recon", "kl", "kl_a")}


def _recon(model: LmmVae, batch: ModelData, z: Tensor) -> Tensor:
    """Per-observation MC average of log p(y|z); ``z`` is ``(S, B, L)``."""
    y_hat = model.decode(z, batch.x)
    ll = gaussian_log_lik(batch.y, y_hat, model.decoder.sigma_y, batch.mask)
    return ll.mean(0)


def _ax(A: Tensor, x: Tensor) -> Tensor:
    # A: (L, Q) or (S, L, Q); x: (B, Q) -> (B, L) or (S, B, L)
    return x @ A.transpose(-1, -2)


def _finish(model: LmmVae, n_total: int, recon: Tensor, kl: Tensor, n_obs: int) -> LossTerms:
    kla = model.kl_a()
    loss = (-recon.sum() + kl.sum()) / n_obs + kla / n_total
    return LossTerms(loss, recon.sum() / n_obs, kl.sum() / n_obs, kla)


def elbo_olmm(model: LmmVae, batch: ModelData, noise: Tensor, n_total: int,
              posterior: tuple[Tensor, Tensor] | None = None) -> LossTerms:
    """Negative oLMM-VAE ELBO per observation.

    ``noise`` is ``(S, B, L)`` standard normal. ``posterior`` overrides the
    encoder output with ``(mu, var)``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if posterior is None:
        mu, log_var = model.encode(batch)
        var = log_var.exp()
    else:
        mu, var = posterior
        log_var = var.log()
    z = reparameterize(mu, log_var, noise)
    recon = _recon(model, batch, z)
    kl = lp.kl_z_given_A(mu, var, model.lmm_prior(), batch.x)
    return _finish(model, n_total, recon, kl, len(batch))


def elbo_vae(model: LmmVae, batch: ModelData, noise: Tensor, n_total: int) -> LossTerms:
    """Negative ELBO with a standard-normal prior (vanilla VAE and CVAE)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    mu, log_var = model.encode(batch)
    z = mu + torch.exp(0.5 * log_var) * noise
    recon = _recon(model, batch, z)
    kl = 0.5 * (mu ** 2 + log_var.exp() - 1.0 - log_var).sum(-1)
    return _finish(model, n_total, recon, kl, len(batch))


def aggregate_group_posterior(A: Tensor, x: Tensor, mu: Tensor, groups: Tensor | None = None,
                              n_groups: int | None = None, sign: str = "paper") -> GroupPosterior:
    """Group mean and unbiased variance of the residuals ``A x_n - mu_n``.

    ``x`` is ``(n, Q)`` and ``mu`` is ``(n, L)``; with ``groups`` (local ids
    0..K-1) the statistics are computed per group and returned as ``(K, L)``.
    ``sign="residual"`` uses ``mu_n - A x_n`` instead.
    """
    r = _ax(A, x) - mu
    if sign == "residual":
        r = -r
    if groups is None:
        groups = torch.zeros(r.shape[0], dtype=torch.long)
        n_groups = 1
    counts = torch.bincount(groups, minlength=n_groups).to(DTYPE)
    if (counts < 2).any():
        raise ValueError("group too small for variance estimate (need >= 2 observations)")
    total = torch.zeros(n_groups, r.shape[-1], dtype=DTYPE).index_add(0, groups, r)
    mean = total / counts[:, None]
    sq = torch.zeros_like(mean).index_add(0, groups, (mean[groups] - r) ** 2)
    var = sq / (counts[:, None] - 1)
    return GroupPosterior(mean, var)


VAR_FLOOR = 1e-10


def elbo_slmm(model: LmmVae, batch: ModelData, noise: Tensor, n_total: int,
              a_noise: Tensor | None = None) -> LossTerms:
    """Negative sLMM-VAE ELBO per observation.

    ``batch`` must hold whole groups; ``noise`` is ``(S, K, L)`` with one row
    per group in order of first appearance.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    g, K = batch.local_groups()
    mu_n, _ = model.encode(batch)
    post = aggregate_group_posterior(model.a_mean, batch.x, mu_n, g, K, model.config.aggregation_sign)
    var_k = post.var.clamp_min(VAR_FLOOR)
    eps = post.mu + var_k.sqrt() * noise  # (S, K, L)
    A = model.sample_a(a_noise)
    z = _ax(A, batch.x) + eps[:, g]
    recon = _recon(model, batch, z)
    sz2 = model.sigma_z ** 2
    kl_groups = lp.gaussian_kl(post.mu, var_k, 0.0, sz2).sum(-1)
    return _finish(model, n_total, recon, kl_groups, len(batch))


def gsnn_loss(model: LmmVae, batch: ModelData, noise: Tensor, n_total: int,
              a_noise: Tensor | None = None) -> LossTerms:
    """``-(1/S) sum_s log p(y_n | A x_n + eps_ns)`` averaged over the batch.

    ``noise`` is ``(S, B, L)`` for olmm and ``(S, K, L)`` (one draw per group) for slmm.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    A = model.sample_a(a_noise)
    eps = model.sigma_z * noise
    if model.config.grouped:
        g, _ = batch.local_groups()
        eps = eps[:, g]
    z = _ax(A, batch.x) + eps
    recon = _recon(model, batch, z)
    return _finish(model, n_total, recon, torch.zeros_like(recon), len(batch))


def draw_noise(model: LmmVae, batch: ModelData, rng: Rng) -> dict:
    c = model.config
    S, L = c.mc_samples, c.latent_dim
    rows = batch.local_groups()[1] if c.grouped else len(batch)
    out = {"noise": tensor(rng.normal(S, rows, L))}
    if c.uses_lmm and c.a_mode == "bayes" and (c.grouped or c.objective == "gsnn"):
        out["a_noise"] = tensor(rng.normal(S, L, model.cov_dim))
    return out


def objective(model: LmmVae, batch: ModelData, noise: dict, n_total: int) -> LossTerms:
    c = model.config
    if c.objective == "gsnn":
        return gsnn_loss(model, batch, noise["noise"], n_total, noise.get("a_noise"))
    if c.variant == "olmm":
        return elbo_olmm(model, batch, noise["noise"], n_total)
    if c.variant == "slmm":
        return elbo_slmm(model, batch, noise["noise"], n_total, noise.get("a_noise"))
    return elbo_vae(model, batch, noise["noise"], n_total)


# -- training ----------------------------------------------------------------------

@dataclass
class FittedModel:
    model: LmmVae
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    group_eps: dict = field(default_factory=dict)  # label -> GroupPosterior (slmm)

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def iter_batches(data: ModelData, batch_size: int, rng: Rng | None, by_group: bool) -> Iterator[np.ndarray]:
    """Index batches; grouped batching keeps every group whole and drops singleton groups."""
    if not by_group:
        order = rng.permutation(len(data)) if rng is not None else np.arange(len(data))
        for i in range(0, len(order), batch_size):
            yield order[i:i + batch_size]
        return
    labels = np.unique(data.groups)
    members = [np.flatnonzero(data.groups == k) for k in labels]
    members = [m for m in members if len(m) >= 2]
    order = rng.permutation(len(members)) if rng is not None else np.arange(len(members))
    batch: list[np.ndarray] = []
    size = 0
    for k in order:
        batch.append(members[k])
        size += len(members[k])
        if size >= batch_size:
            yield np.concatenate(batch)
            batch, size = [], 0
    if batch:
        yield np.concatenate(batch)


def evaluate_loss(model: LmmVae, data: ModelData, rng: Rng, n_total: int, batch_size: int = 1024) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for idx in iter_batches(data, batch_size, None, model.config.grouped):
            b = data.take(idx)
            terms = objective(model, b, draw_noise(model, b, rng), n_total)
            total += float(terms.loss) * len(b)
            count += len(b)
    if count == 0:
        raise ValueError("validation split has no usable observations")
    return total / count


def train(config: ModelConfig, train_data: ModelData, val_data: ModelData,
          column_prior_var: np.ndarray | None = None, log=None) -> FittedModel:
    """Adam + step-exponential LR; keeps the weights with the lowest validation loss."""
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("train and validation splits must be non-empty")
    model = LmmVae(config, train_data.y.shape[1], train_data.x.shape[1], column_prior_var)
    params = [p for p in model.parameters() if p.requires_grad]
    if config.objective == "gsnn":
        params = [p for n, p in model.named_parameters() if not n.startswith("encoder.")]
    opt = Adam(params, lr=config.lr)
    root = Rng(config.seed)
    shuffle_rng, noise_rng = root.spawn("shuffle"), root.spawn("noise")
    n_total = len(train_data)

    def val_loss() -> float:
        return evaluate_loss(model, val_data, root.spawn("val"), n_total)

    best = val_loss()
    best_state = copy.deepcopy(model.state_dict())
    fitted = FittedModel(model, [{"epoch": 0, "train_loss": None, "val_loss": best}], 0)
    for epoch in range(1, config.epochs + 1):
        opt.lr = exp_lr(config.lr, config.lr_gamma, config.lr_step, epoch - 1)
        total, count = 0.0, 0
        for bi, idx in enumerate(iter_batches(train_data, config.batch_size, shuffle_rng, config.grouped)):
            b = train_data.take(idx)
            terms = objective(model, b, draw_noise(model, b, noise_rng), n_total)
            if not torch.isfinite(terms.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}: {terms.as_floats()}")
            opt.step(backward(terms.loss, params))
            total += float(terms.loss.detach()) * len(b)
            count += len(b)
        vl = val_loss()
        if not math.isfinite(vl):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        fitted.history.append({"epoch": epoch, "train_loss": total / count, "val_loss": vl})
        if vl < best:
            best, fitted.best_epoch = vl, epoch
            best_state = copy.deepcopy(model.state_dict())
        if log is not None:
            log(epoch, total / count, vl)
    model.load_state_dict(best_state)
    if config.grouped:
        fitted.group_eps = estimate_all_group_eps(model, train_data)
    return fitted


# -- inference and generation ------------------------------------------------------

def posterior_means(model: LmmVae, data: ModelData) -> Tensor:
    with torch.no_grad():
        return model.encode(data)[0]


def estimate_group_epsilon(model: LmmVae, data: ModelData) -> GroupPosterior:
    """Aggregate encoder means of one instance's observations into q(eps^(k))."""
    if len(data) < 2:
        raise ValueError("need >= 2 observations of the instance to estimate its latent offset")
    with torch.no_grad():
        mu, _ = model.encode(data)
        post = aggregate_group_posterior(model.a_mean, data.x, mu, sign=model.config.aggregation_sign)
    return GroupPosterior(post.mu[0], post.var[0])


def estimate_all_group_eps(model: LmmVae, data: ModelData) -> dict:
    out = {}
    for k in np.unique(data.groups):
        idx = np.flatnonzero(data.groups == k)
        if len(idx) >= 2:
            out[k.item() if hasattr(k, "item") else k] = estimate_group_epsilon(model, data.take(idx))
    return out


def conditional_generate(fitted: FittedModel, x_new: Tensor, mode: str = "mean", S: int = 1,
                         rng: Rng | None = None, group_epsilon: Tensor | None = None,
                         groups=None) -> tuple[Tensor, Tensor]:
    """Generate y for covariates ``x_new`` (``(B, Q)``) from the conditional prior.

    Mean mode decodes ``E[A] x + eps_hat``. Sample mode averages ``S`` decoded
    prior draws. For slmm, ``eps_hat`` is ``group_epsilon`` or looked up from the
    training-time group estimates via ``groups``.
    """
    model = fitted.model
    c = model.config
    x_new = tensor(x_new)
    B, L = x_new.shape[0], c.latent_dim
    with torch.no_grad():
        eps = torch.zeros(B, L, dtype=DTYPE)
        if c.grouped:
            if group_epsilon is None:
                if groups is None:
                    raise ValueError("slmm generation needs group_epsilon or group labels")
                rows = []
                for k in np.asarray(groups):
                    key = k.item() if hasattr(k, "item") else k
                    if key not in fitted.group_eps:
                        raise ValueError(f"no observations to estimate the latent offset of instance {key!r}")
                    rows.append(fitted.group_eps[key].mu)
                group_epsilon = torch.stack(rows)
            eps = tensor(group_epsilon).expand(B, L)
        mean_z = _ax(model.a_mean, x_new) + eps
        if mode == "mean":
            return model.decode(mean_z, x_new), mean_z
        if mode != "sample":
            raise ValueError(f"unknown generation mode {mode!r}")
        rng = rng or Rng(c.seed).spawn("generate")
        A = model.a_mean
        if model.a_logvar is not None:
            A = model.sample_a(tensor(rng.normal(S, L, model.cov_dim)))
        z = _ax(A, x_new) + eps + model.sigma_z * tensor(rng.normal(S, B, L))
        return model.decode(z, x_new).mean(0), z.mean(0)


def reconstruct(fitted: FittedModel, data: ModelData) -> Tensor:
    """Decode the encoder posterior means (posterior-mean reconstruction)."""
    model = fitted.model
    with torch.no_grad():
        return model.decode(model.encode(data)[0], data.x)


# -- snapshots ----------------------------------------------------------------------

def save_snapshot(fitted: FittedModel, path) -> None:
    """Write a snapshot as ``.npz``.

    Layout (version 1): ``__meta__`` holds UTF-8 JSON with format, version,
    model config, dimensions, history, best epoch and group labels; each
    state-dict tensor is stored under ``param/<name>`` and each group offset
    under ``eps_mu/<i>`` and ``eps_var/<i>``. Arrays are stored as float64, so
    loading reproduces them bit for bit.
    """
    model = fitted.model
    labels = list(fitted.group_eps.keys())
    meta = {
        "format": SNAPSHOT_FORMAT, "version": SNAPSHOT_VERSION,
        "config": model.config.to_dict(), "obs_dim": model.obs_dim, "cov_dim": model.cov_dim,
        "column_prior_var": None if model.prior_on_a.column_var is None
        else [None if math.isnan(v) else v for v in model.prior_on_a.column_var.tolist()],
        "history": fitted.history, "best_epoch": fitted.best_epoch,
        "group_labels": [_jsonable(k) for k in labels],
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, t in model.state_dict().items():
        arrays[f"param/{name}"] = t.detach().numpy()
    for i, k in enumerate(labels):
        arrays[f"eps_mu/{i}"] = fitted.group_eps[k].mu.numpy()
        arrays[f"eps_var/{i}"] = fitted.group_eps[k].var.numpy()
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_snapshot(path) -> FittedModel:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != SNAPSHOT_FORMAT or meta.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"{path}: not a version-{SNAPSHOT_VERSION} model snapshot")
        cpv = meta["column_prior_var"]
        cpv = None if cpv is None else np.array([np.nan if v is None else v for v in cpv])
        model = LmmVae(ModelConfig.from_dict(meta["config"]), meta["obs_dim"], meta["cov_dim"], cpv)
        state = {k[len("param/"):]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
        model.load_state_dict(state)
        eps = {}
        for i, k in enumerate(meta["group_labels"]):
            eps[k] = GroupPosterior(torch.from_numpy(z[f"eps_mu/{i}"].copy()),
                                    torch.from_numpy(z[f"eps_var/{i}"].copy()))
    return FittedModel(model, meta["history"], meta["best_epoch"], eps)


def _jsonable(k):
    return k.item() if hasattr(k, "item") else k
