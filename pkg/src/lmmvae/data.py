"""Synthetic longitudinal datasets, missingness masks, split protocols and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .ndcore import Rng


@dataclass
class LongitudinalDataset:
    """Observations in columns: ``Y`` and ``mask`` are ``D x N``.

    ``Y_full`` keeps the pre-masking values (imputation ground truth); ``Y``
    itself is nan wherever ``mask`` is False.
    """

    Y: np.ndarray
    covariates: dict[str, np.ndarray]
    instance: np.ndarray
    timepoint: np.ndarray
    mask: np.ndarray | None = None
    Y_full: np.ndarray | None = None
    Z_true: np.ndarray | None = None
    A_true: np.ndarray | None = None
    X_true: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.mask is None:
            self.mask = np.isfinite(self.Y)
        if self.Y_full is None:
            self.Y_full = self.Y.copy()
        n = self.Y.shape[1]
        self.instance = np.asarray(self.instance)
        self.timepoint = np.asarray(self.timepoint, dtype=np.float64)
        self.covariates = {k: np.asarray(v) for k, v in self.covariates.items()}
        if len(self.instance) != n or len(self.timepoint) != n or self.mask.shape != self.Y.shape:
            raise ValueError("dataset fields are not aligned")
        for k, v in self.covariates.items():
            if len(v) != n:
                raise ValueError(f"covariate {k!r} is not aligned with Y")

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    @property
    def D(self) -> int:
        return self.Y.shape[0]

    def subset(self, idx) -> "LongitudinalDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LongitudinalDataset(
            Y=self.Y[:, idx], covariates={k: v[idx] for k, v in self.covariates.items()},
            instance=self.instance[idx], timepoint=self.timepoint[idx], mask=self.mask[:, idx],
            Y_full=self.Y_full[:, idx],
            Z_true=None if self.Z_true is None else self.Z_true[:, idx],
            A_true=self.A_true,
            X_true=None if self.X_true is None else self.X_true[:, idx], meta=dict(self.meta))

    def raw_table(self) -> dict[str, np.ndarray]:
        return {"instance_id": self.instance, "timepoint": self.timepoint, **self.covariates}


# -- generators -------------------------------------------------------------------

@dataclass
class LmmSpec:
    n_instances: int = 200
    n_timepoints: int = 20
    latent_dim: int = 8
    obs_dim: int = 50
    latent_noise: float = 0.1
    obs_noise: float = 0.1
    shared_scale: float = 1.0
    random_scale: float = 1.0
    decoder: str = "mlp"  # "mlp" or "identity"

    def __post_init__(self):
        if self.n_instances < 1 or self.n_timepoints < 1:
            raise ValueError("need at least one instance and one timepoint")
        if self.decoder not in ("mlp", "identity"):
            raise ValueError(f"unknown generator decoder {self.decoder!r}")
        if self.decoder == "identity" and self.obs_dim != self.latent_dim:
            raise ValueError("identity decoder needs obs_dim == latent_dim")
        if self.decoder == "mlp" and self.obs_dim <= self.latent_dim:
            raise ValueError("obs_dim must exceed latent_dim for an injective decoder")
        if self.latent_noise < 0 or self.obs_noise < 0:
            raise ValueError("noise scales must be non-negative")


LMM_SHARED = ("age", "sex", "sex_age", "disease", "disease_age")


def lmm_covariates(spec: LmmSpec, rng: Rng) -> tuple[dict, np.ndarray, np.ndarray]:
    K, T = spec.n_instances, spec.n_timepoints
    sex = rng.bernoulli(0.5, K)
    disease = rng.bernoulli(0.5, K)
    onset = rng.uniform(K) * 0.6 + 0.2  # diagnosis time as a fraction of follow-up
    inst = np.repeat(np.arange(K), T)
    t = np.tile(np.arange(T, dtype=np.float64), K)
    age = t / max(T - 1, 1)
    cov = {
        "age": age,
        "sex": sex[inst],
        "sex_age": sex[inst] * age,
        "disease": disease[inst],
        # signed time since diagnosis, zero for healthy instances
        "disease_age": disease[inst] * (age - onset[inst]),
    }
    return cov, inst, t


def lmm_design(cov: Mapping[str, np.ndarray], inst: np.ndarray, K: int) -> np.ndarray:
    """Ground-truth X: shared covariates then instance one-hot, Q x N."""
    shared = np.stack([np.asarray(cov[k], dtype=np.float64) for k in LMM_SHARED])
    onehot = np.zeros((K, len(inst)))
    onehot[inst, np.arange(len(inst))] = 1.0
    return np.concatenate([shared, onehot])


class LeakyMlpDecoder:
    """Fixed injective map: leaky layer on an invertible square matrix, then a
    full-column-rank expansion to D dimensions."""

    def __init__(self, L: int, D: int, rng: Rng, slope: float = 0.2):
        # orthogonal times a well-conditioned diagonal: invertible by construction
        self.W1 = np.linalg.qr(rng.normal(L, L))[0] @ np.diag(np.exp(0.3 * rng.normal(L)))
        self.b1 = 0.5 * rng.normal(L)
        self.W2 = rng.normal(D, L) / math.sqrt(L)
        self.slope = slope

    def __call__(self, Z: np.ndarray) -> np.ndarray:
        h = self.W1 @ Z + self.b1[:, None]
        h = np.where(h > 0, h, self.slope * h)
        return self.W2 @ h


def gen_synthetic_lmm(spec: LmmSpec | Mapping, seed: int) -> LongitudinalDataset:
    """z = A* x + latent noise, y = g(z) + obs noise, with a known A* and g."""
    if not isinstance(spec, LmmSpec):
        spec = LmmSpec(**spec)
    rng = Rng(seed).spawn("data")
    cov, inst, t = lmm_covariates(spec, rng.spawn("covariates"))
    K, L = spec.n_instances, spec.latent_dim
    X = lmm_design(cov, inst, K)
    a_rng = rng.spawn("A")
    A_shared = spec.shared_scale * a_rng.normal(L, len(LMM_SHARED))
    A_random = spec.random_scale * a_rng.normal(L, K)
    A = np.concatenate([A_shared, A_random], axis=1)
    Z = A @ X + spec.latent_noise * rng.spawn("latent").normal(L, X.shape[1])
    if spec.decoder == "identity":
        F = Z.copy()
    else:
        g = LeakyMlpDecoder(L, spec.obs_dim, rng.spawn("decoder"))
        F = g(Z)
        # unit average feature variance
        F = (F - F.mean(axis=1, keepdims=True)) / F.std()
    Y = F + spec.obs_noise * rng.spawn("obs").normal(*F.shape)
    return LongitudinalDataset(
        Y=Y, covariates=cov, instance=inst, timepoint=t, Z_true=Z, A_true=A, X_true=X,
        meta={"generator": "lmm", "seed": seed, "spec": spec.__dict__.copy(),
              "noise_free": F})


def gen_rotating_toy(n_instances: int, n_angles: int = 16, D: int = 50, seed: int = 0,
                     noise: float = 0.05, template_rank: int = 4, harmonics: int = 1) -> LongitudinalDataset:
    """Each instance rotates an orthogonal, equal-norm template pair (u, v).

    ``y(theta) = u cos(theta) + v sin(theta) + noise``; templates lie in a shared
    ``template_rank``-dimensional subspace and ``|u| = |v| = sqrt(D)``.

    With ``harmonics = H > 1`` the signal is ``sum_h c_h (u_h cos(h theta) + v_h sin(h theta))``
    with mutually orthogonal pairs and ``c_h`` proportional to ``1 / h``, scaled so the
    total power still equals ``D``. This mimics rotated images, whose pixel
    intensities carry higher angular harmonics.
    """
    if n_angles < 4:
        raise ValueError("n_angles must be >= 4")
    if harmonics < 1:
        raise ValueError("harmonics must be >= 1")
    rank = max(template_rank, 2 * harmonics)
    if not 2 <= rank <= D:
        raise ValueError("template_rank must be in [2, D] and hold 2 * harmonics directions")
    rng = Rng(seed).spawn("rotating")
    basis = np.linalg.qr(rng.normal(D, rank))[0]
    coef_rng = rng.spawn("templates")
    amp = 1.0 / np.arange(1, harmonics + 1)
    amp /= np.linalg.norm(amp)
    theta = 2 * math.pi * np.arange(n_angles) / n_angles
    inst = np.repeat(np.arange(n_instances), n_angles)
    ang = np.tile(theta, n_instances)
    U = np.empty((harmonics, D, n_instances))
    V = np.empty((harmonics, D, n_instances))
    for k in range(n_instances):
        # Gram-Schmidt on 2H random directions inside the template subspace
        C = np.linalg.qr(coef_rng.normal(rank, 2 * harmonics))[0]
        for h in range(harmonics):
            U[h, :, k] = math.sqrt(D) * basis @ C[:, 2 * h]
            V[h, :, k] = math.sqrt(D) * basis @ C[:, 2 * h + 1]
    F = sum(amp[h] * (U[h][:, inst] * np.cos((h + 1) * ang) + V[h][:, inst] * np.sin((h + 1) * ang))
            for h in range(harmonics))
    Y = F + noise * rng.spawn("noise").normal(*F.shape)
    cov = {"angle": ang, "cos_angle": np.cos(ang), "sin_angle": np.sin(ang)}
    return LongitudinalDataset(
        Y=Y, covariates=cov, instance=inst, timepoint=np.tile(np.arange(n_angles, dtype=float), n_instances),
        meta={"generator": "rotating", "seed": seed, "harmonics": harmonics, "noise_free": F,
              "U": U[0], "V": V[0]})


# -- missingness ----------------------------------------------------------------------

def apply_missingness(ds: LongitudinalDataset, fraction: float = 0.25, seed: int = 0) -> LongitudinalDataset:
    """Hide exactly ``round(fraction * D)`` entries of every observation."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    rng = Rng(seed).spawn("mask")
    n_hide = int(round(fraction * ds.D))
    mask = np.ones((ds.D, ds.N), dtype=bool)
    for n in range(ds.N):
        hide = rng.permutation(ds.D)[:n_hide]
        mask[hide, n] = False
    mask &= ds.mask
    Y = np.where(mask, ds.Y_full, np.nan)
    return replace(ds, Y=Y, mask=mask, Y_full=ds.Y_full.copy())


# -- splits -----------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitProtocol:
    """``future`` (h, m, f), ``interpolation`` (c, m) or ``random``.

    ``m`` may be an instance count (int) or a fraction of instances (float < 1).
    """

    kind: str = "random"
    holdout_timepoints: int = 15
    holdout_instances: float = 0.1
    keep_first: int = 5
    consecutive: int = 4
    val_fraction: float = 0.15
    test_fraction: float = 0.1  # random kind only

    def __post_init__(self):
        if self.kind not in ("future", "interpolation", "random"):
            raise ValueError(f"unknown split kind {self.kind!r}")
        if not 0.0 <= self.val_fraction < 1.0 or not 0.0 <= self.test_fraction < 1.0:
            raise ValueError("val_fraction and test_fraction must lie in [0, 1)")
        if self.kind == "random" and self.val_fraction + self.test_fraction >= 1.0:
            raise ValueError("random split leaves no training observations")


def _n_holdout(m: float, K: int) -> int:
    return int(round(m * K)) if isinstance(m, float) and m < 1 else int(m)


def split(ds: LongitudinalDataset, protocol: SplitProtocol, seed: int = 0) -> dict[str, np.ndarray]:
    """Partition observation indices into ``train``/``val``/``test``."""
    rng = Rng(seed).spawn("split")
    labels = np.unique(ds.instance)
    test, train_fixed, val_fixed = [], [], []
    pool = np.arange(ds.N)
    if protocol.kind != "random":
        m = _n_holdout(protocol.holdout_instances, len(labels))
        if m > len(labels):
            raise ValueError("more holdout instances than instances")
        held = labels[np.sort(rng.permutation(len(labels))[:m])]
        reserved = np.zeros(ds.N, dtype=bool)
        for k in held:
            idx = np.flatnonzero(ds.instance == k)
            idx = idx[np.argsort(ds.timepoint[idx], kind="stable")]
            if protocol.kind == "future":
                h, f = protocol.holdout_timepoints, protocol.keep_first
                if h + f > len(idx):
                    raise ValueError(f"instance {k!r}: holdout ({h}) + kept prefix ({f}) exceeds "
                                     f"sequence length {len(idx)}")
                train_fixed.append(idx[:f])
                test.append(idx[len(idx) - h:])
                val_fixed.append(idx[f:len(idx) - h])
            else:
                c = protocol.consecutive
                if c >= len(idx):
                    raise ValueError(f"instance {k!r}: cannot hold out {c} of {len(idx)} observations")
                start = int(rng.integers(0, len(idx) - c + 1))
                test.append(idx[start:start + c])
                train_fixed.append(np.concatenate([idx[:start], idx[start + c:]]))
            reserved[idx] = True
        pool = np.flatnonzero(~reserved)
    perm = pool[rng.permutation(len(pool))]
    if protocol.kind == "random":
        n_test = int(round(protocol.test_fraction * len(pool)))
        test.append(perm[:n_test])
        perm = perm[n_test:]
    n_val = int(round(protocol.val_fraction * len(pool)))
    cat = lambda parts: np.sort(np.concatenate(parts)).astype(np.int64) if parts else np.zeros(0, np.int64)
    return {
        "train": cat(train_fixed + [perm[n_val:]]),
        "val": cat(val_fixed + [perm[:n_val]]),
        "test": cat(test),
    }


# -- CSV ----------------------------------------------------------------------------------

@dataclass
class CsvManifest:
    id_column: str = "instance_id"
    time_column: str = "timepoint"
    covariates: tuple[str, ...] = ()
    features: tuple[str, ...] = ()

    @classmethod
    def for_dataset(cls, ds: LongitudinalDataset) -> "CsvManifest":
        return cls(covariates=tuple(ds.covariates), features=tuple(f"feature_{d}" for d in range(ds.D)))

    def to_dict(self) -> dict:
        return {"id_column": self.id_column, "time_column": self.time_column,
                "covariates": list(self.covariates), "features": list(self.features)}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        if not np.isfinite(v):
            return ""
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def save_csv(ds: LongitudinalDataset, path, manifest: CsvManifest | None = None) -> CsvManifest:
    manifest = manifest or CsvManifest.for_dataset(ds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([manifest.id_column, manifest.time_column, *manifest.covariates, *manifest.features])
        for n in range(ds.N):
            row = [_fmt(ds.instance[n]), _fmt(ds.timepoint[n])]
            row += [_fmt(ds.covariates[c][n]) for c in manifest.covariates]
            row += [_fmt(ds.Y[d, n]) if ds.mask[d, n] else "" for d in range(ds.D)]
            w.writerow(row)
    return manifest


def _parse_id(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def load_csv(path, manifest: CsvManifest | Mapping) -> LongitudinalDataset:
    if not isinstance(manifest, CsvManifest):
        manifest = CsvManifest(**{k: tuple(v) if isinstance(v, list) else v for k, v in manifest.items()})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        needed = [manifest.id_column, manifest.time_column, *manifest.covariates, *manifest.features]
        missing = [c for c in needed if c not in header]
        if missing:
            raise ValueError(f"{path}: columns {missing} not found in header")
        unknown = [c for c in header if c not in needed]
        if unknown:
            raise ValueError(f"{path}: unknown columns {unknown}")
        col = {c: header.index(c) for c in needed}
        ids, times, covs, feats = [], [], {c: [] for c in manifest.covariates}, []
        for line, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{line}: expected {len(header)} cells, got {len(row)}")
            try:
                ids.append(_parse_id(row[col[manifest.id_column]]))
                times.append(float(row[col[manifest.time_column]]))
                for c in manifest.covariates:
                    covs[c].append(_parse_id(row[col[c]]) if not _is_float(row[col[c]]) else float(row[col[c]]))
            except ValueError:
                raise ValueError(f"{path}:{line}: malformed id/time/covariate cell") from None
            vals = []
            for c in manifest.features:
                cell = row[col[c]].strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}:{line}: column {c!r}: non-numeric value {cell!r}") from None
            feats.append(vals)
    Y = np.asarray(feats, dtype=np.float64).T.reshape(len(manifest.features), len(feats))
    covariates = {}
    for c, v in covs.items():
        covariates[c] = np.asarray(v, dtype=np.float64) if all(isinstance(e, float) for e in v) else np.asarray(v)
    return LongitudinalDataset(Y=Y, covariates=covariates, instance=np.asarray(ids),
                               timepoint=np.asarray(times), mask=np.isfinite(Y))


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
