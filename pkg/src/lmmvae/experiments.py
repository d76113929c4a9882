"""Experiment pipeline: dataset -> split -> design matrix -> training -> metrics.

A run is described by a plain dict (the JSON experiment config, see
``config.py``). Everything random is derived from the run seed through named
sub-streams, so a (config, seed) pair always gives the same numbers.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import data as dmod
from .covariates import CovariateSchema, DesignMatrix, build_design_matrix
from .evaluation import MetricReport, masked_mse, mcc, nll
from .models import (FittedModel, ModelConfig, ModelData, conditional_generate, posterior_means,
                     reconstruct, train)
from .ndcore import tensor


@dataclass
class Prepared:
    dataset: dmod.LongitudinalDataset
    design: DesignMatrix
    splits: dict[str, np.ndarray]
    data: ModelData  # full dataset as model tensors

    def part(self, name: str) -> ModelData:
        return self.data.take(self.splits[name])


def to_model_data(ds: dmod.LongitudinalDataset, X: np.ndarray) -> ModelData:
    y = np.where(ds.mask, ds.Y, 0.0)
    return ModelData(tensor(y.T), tensor(ds.mask.T.astype(float)), tensor(X.T), ds.instance)


def make_dataset(cfg: dict, seed: int) -> dmod.LongitudinalDataset:
    d = cfg["data"]
    data_seed = d.get("seed", seed)
    if "csv" in d:
        manifest = d["manifest"]
        if isinstance(manifest, (str, Path)):
            manifest = json.loads(Path(manifest).read_text(encoding="utf-8"))
        ds = dmod.load_csv(d["csv"], manifest)
        if "truth" in d:
            with np.load(d["truth"]) as t:
                for key in ("Z_true", "A_true", "X_true", "Y_full"):
                    if key in t.files:
                        if key in ("Z_true", "X_true", "Y_full") and t[key].shape[1] != ds.N:
                            raise ValueError(f"{d['truth']}: {key} has {t[key].shape[1]} columns, data has {ds.N}")
                        setattr(ds, key, t[key])
    elif d["generator"] == "lmm":
        ds = dmod.gen_synthetic_lmm(d.get("params", {}), data_seed)
    elif d["generator"] == "rotating":
        ds = dmod.gen_rotating_toy(seed=data_seed, **d.get("params", {}))
    else:
        raise ValueError(f"unknown generator {d['generator']!r}")
    frac = cfg.get("missingness", 0.0)
    if frac > 0:
        ds = dmod.apply_missingness(ds, frac, data_seed)
    return ds


def default_schema(ds: dmod.LongitudinalDataset) -> CovariateSchema:
    entries = [{"name": k, "kind": "continuous", "role": "shared"} for k in ds.covariates]
    entries.append({"name": "instance_id", "kind": "categorical", "role": "random",
                    "levels": sorted(np.unique(ds.instance).tolist())})
    return CovariateSchema.from_dict(entries)


def resolve_schema(cfg: dict, ds: dmod.LongitudinalDataset) -> CovariateSchema:
    entries = cfg.get("schema")
    if not entries:
        return default_schema(ds)
    entries = copy.deepcopy(entries)
    for e in entries:
        # "levels": "auto" takes the levels present in the data
        if e.get("kind") == "categorical" and e.get("levels", "auto") == "auto":
            src = e.get("source", e["name"])
            col = ds.instance if src == "instance_id" else ds.covariates[src]
            e["levels"] = sorted(np.unique(col).tolist())
    return CovariateSchema.from_dict(entries)


def prepare(cfg: dict, seed: int) -> Prepared:
    ds = make_dataset(cfg, seed)
    schema = resolve_schema(cfg, ds)
    design = build_design_matrix(schema, ds.raw_table(), seed=cfg.get("basis_seed", seed))
    sp = dict(cfg.get("split", {"kind": "random"}))
    protocol = dmod.SplitProtocol(**sp)
    splits = dmod.split(ds, protocol, seed)
    return Prepared(ds, design, splits, to_model_data(ds, design.X))


def model_config(cfg: dict, entry: dict, seed: int) -> ModelConfig:
    params = {**cfg.get("training", {}), **{k: v for k, v in entry.items() if k != "name"}}
    params["seed"] = seed
    return ModelConfig.from_dict(params)


def fit(cfg: dict, entry: dict, prep: Prepared, seed: int, log=None) -> FittedModel:
    mc = model_config(cfg, entry, seed)
    return train(mc, prep.part("train"), prep.part("val"), prep.design.prior_var, log=log)


# -- predictions used by the metrics -------------------------------------------------

def generate_for(fitted: FittedModel, prep: Prepared, idx: np.ndarray) -> np.ndarray:
    """Point prediction for observations ``idx`` without looking at their y.

    LMM variants decode the conditional prior mean; CVAE decodes z = 0 with
    the covariates; a vanilla VAE decodes the average posterior mean of the
    instance's training observations (or z = 0 for unseen instances).
    """
    c = fitted.config
    target = prep.data.take(idx)
    if c.uses_lmm:
        y_hat, _ = conditional_generate(fitted, target.x, "mean", groups=target.groups if c.grouped else None)
        return y_hat.numpy()
    model = fitted.model
    with torch.no_grad():
        if c.variant == "cvae":
            z = torch.zeros(len(target), c.latent_dim, dtype=torch.float64)
            return model.decode(z, target.x).numpy()
        train = prep.part("train")
        mu = posterior_means(model, train)
        z = torch.zeros(len(target), c.latent_dim, dtype=torch.float64)
        for i, k in enumerate(target.groups):
            rows = np.flatnonzero(train.groups == k)
            if len(rows):
                z[i] = mu[torch.as_tensor(rows)].mean(0)
        return model.decode(z, target.x).numpy()


def impute_for(fitted: FittedModel, prep: Prepared, idx: np.ndarray, rule: str = "posterior") -> np.ndarray:
    """Fill-in predictions for observations ``idx`` (rows of the result)."""
    if fitted.config.uses_lmm and rule == "prior":
        return generate_for(fitted, prep, idx)
    if fitted.config.objective == "gsnn":
        return generate_for(fitted, prep, idx)
    return reconstruct(fitted, prep.data.take(idx)).numpy()


def evaluate_run(fitted: FittedModel, prep: Prepared, metrics, rule: str = "posterior",
                 notices: list | None = None) -> dict[str, float]:
    """Compute the requested metrics; skipped metrics are explained in ``notices``."""
    notices = [] if notices is None else notices
    ds = prep.dataset
    out: dict[str, float] = {}
    tr, te = prep.splits["train"], prep.splits["test"]
    hidden = ~ds.mask[:, tr]
    if "imputation_mse" in metrics and hidden.any() and np.isfinite(ds.Y_full[:, tr][hidden]).all():
        pred = impute_for(fitted, prep, tr, rule)
        out["imputation_mse"] = masked_mse(pred.T, ds.Y_full[:, tr], ds.mask[:, tr], "masked_entries")
    if len(te) and ("test_mse" in metrics or "nll" in metrics):
        pred = generate_for(fitted, prep, te)
        # entries with unknown values (e.g. empty CSV cells without a truth file) are skipped
        known = np.isfinite(ds.Y_full[:, te])
        truth = np.where(known, ds.Y_full[:, te], 0.0)
        if not known.all():
            notices.append("test metrics use only test entries with known values")
        if "test_mse" in metrics:
            out["test_mse"] = masked_mse(pred.T, truth, known, "observed_entries")
        if "nll" in metrics:
            sigma = float(fitted.model.decoder.sigma_y.detach())
            out["nll"] = nll(pred.T, sigma, truth, known)
    if "imputation_mse" in metrics and "imputation_mse" not in out:
        notices.append("imputation_mse omitted: no masked entries with known values in the training split")
    if "mcc" in metrics:
        z_est = None if ds.Z_true is None else posterior_means(fitted.model, prep.data).numpy().T
        if ds.Z_true is None:
            notices.append("mcc omitted: dataset has no ground-truth latents")
        elif fitted.config.objective == "gsnn":
            notices.append(f"mcc omitted for {fitted.config.variant}/gsnn: encoder is not trained")
        elif z_est.shape != ds.Z_true.shape:
            notices.append(f"mcc omitted: latent shapes {z_est.shape} and {ds.Z_true.shape} differ")
        else:
            out["mcc"] = mcc(ds.Z_true, z_est)
    out["best_val_loss"] = min(h["val_loss"] for h in fitted.history)
    return out


def run(cfg: dict, seeds=None, log=None, keep_models: bool = False) -> dict:
    """Train and evaluate every configured model for every seed.

    Returns ``{"runs": [...], "summary": {model: {metric: MetricReport}}, "models": ...}``.
    """
    seeds = list(seeds if seeds is not None else cfg.get("seeds", [0]))
    metrics = cfg.get("eval", {}).get("metrics", ["imputation_mse", "test_mse", "nll", "mcc"])
    rule = cfg.get("eval", {}).get("lmm_imputation", "posterior")
    runs, fitted_models, notices = [], {}, []
    summary: dict[str, dict[str, MetricReport]] = {}
    for seed in seeds:
        prep = prepare(cfg, seed)
        for entry in cfg["models"]:
            name = entry["name"]
            fitted = fit(cfg, entry, prep, seed, log=log)
            vals = evaluate_run(fitted, prep, metrics, rule, notices)
            runs.append({"model": name, "seed": seed, "metrics": vals, "best_epoch": fitted.best_epoch,
                         "history": fitted.history})
            rep = summary.setdefault(name, {})
            for k, v in vals.items():
                r = rep.setdefault(k, MetricReport(k))
                r.values.append(v)
                r.n_items += 1
            if keep_models:
                fitted_models[(name, seed)] = (fitted, prep)
    return {"runs": runs, "summary": summary, "models": fitted_models,
            "notices": list(dict.fromkeys(notices))}


def with_basis_size(cfg: dict, M: int, covariate: str | None = None) -> dict:
    """Copy of ``cfg`` with every trig/Fourier basis on ``covariate`` set to M frequencies.

    This includes instance-level bases that expand ``covariate`` as a multiplier.
    Trig bases get frequencies 1..M; random and regular Fourier bases get ``n_freq = M``.
    """
    covariate = covariate or cfg.get("sweep", {}).get("covariate")
    c = copy.deepcopy(cfg)
    hit = False
    for e in c.get("schema") or []:
        b = e.get("basis")
        if b is None or (covariate is not None and covariate not in (e["name"], e.get("multiplier"))):
            continue
        if b["kind"] == "trig":
            b["frequencies"] = [float(m) for m in range(1, M + 1)]
        elif b["kind"] in ("random_fourier", "regular_fourier"):
            b["n_freq"] = M
        else:
            continue
        hit = True
    if not hit:
        raise ValueError(f"no trig/Fourier basis configured on covariate {covariate!r}")
    return c


def sweep_basis(cfg: dict, n_freqs, covariate: str | None = None, seeds=None, log=None) -> list[dict]:
    """Rerun ``cfg`` for each M in ``n_freqs``; rows ``{"model", "M", "mean", "std", "values"}`` sorted by M."""
    metric = cfg.get("sweep", {}).get("metric", "test_mse")
    rows = []
    for M in sorted(set(int(m) for m in n_freqs)):
        res = run(with_basis_size(cfg, M, covariate), seeds, log=log)
        for name, rep in res["summary"].items():
            r = rep[metric]
            rows.append({"model": name, "M": M, "mean": r.mean, "std": r.std, "values": r.values})
    return rows


def monotone_violations(values) -> int:
    """Number of adjacent pairs where the value increases."""
    return int(sum(b > a for a, b in zip(values[:-1], values[1:])))
