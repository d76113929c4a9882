"""Covariate schemas, basis expansions and the design matrix X.

Encoded columns are laid out shared-first: the ``S`` shared-effect columns
precede the ``R`` random-effect columns, so ``A = (A_S, A_R)`` splits at ``S``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .ndcore import Rng

KINDS = ("continuous", "categorical")
ROLES = ("shared", "random")
BASIS_KINDS = ("identity", "polynomial", "trig", "random_fourier", "regular_fourier", "table")


@dataclass(frozen=True)
class BasisSpec:
    """How a continuous covariate is expanded into columns.

    ``trig`` takes explicit ``frequencies`` and lays out cosines then sines.
    ``random_fourier`` and ``regular_fourier`` pick their frequencies from an
    RBF kernel (``lengthscale``, ``variance``) when the schema is resolved.
    """

    kind: str = "identity"
    degree: int = 1
    frequencies: tuple[float, ...] = ()
    n_freq: int = 0
    lengthscale: float = 1.0
    variance: float = 1.0
    half_width: float = math.pi
    table: Mapping[str, Sequence[float]] | None = None
    weight_mode: str | None = None  # "regular-spectral" | "random-isotropic" | None
    weights: tuple[float, ...] = ()  # prior variance per trig column, filled on resolve

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 1:
            raise ValueError("polynomial basis needs degree >= 1")
        if self.kind == "trig":
            f = np.asarray(self.frequencies, dtype=float)
            if f.size == 0 or not np.all(np.isfinite(f)) or np.any(f == 0):
                raise ValueError("trig basis needs nonzero finite frequencies")
        if self.kind in ("random_fourier", "regular_fourier"):
            if self.n_freq < 1 or self.lengthscale <= 0 or self.variance <= 0:
                raise ValueError(f"{self.kind} basis needs n_freq >= 1 and positive kernel parameters")

    @property
    def width(self) -> int:
        if self.kind == "identity":
            return 1
        if self.kind == "polynomial":
            return self.degree
        if self.kind == "trig":
            return 2 * len(self.frequencies)
        if self.kind in ("random_fourier", "regular_fourier"):
            return 2 * self.n_freq
        return len(next(iter(self.table.values())))

    def resolve(self, rng: Rng) -> "BasisSpec":
        """Turn a kernel-driven Fourier basis into a concrete ``trig`` basis."""
        if self.kind == "random_fourier":
            freqs = sample_random_frequencies(self.lengthscale, self.n_freq, rng)
            w = np.full(2 * self.n_freq, self.variance / self.n_freq)
            return replace(self, kind="trig", frequencies=tuple(freqs), weights=tuple(w),
                           weight_mode=self.weight_mode or "random-isotropic")
        if self.kind == "regular_fourier":
            freqs, S = regular_frequency_grid(self.lengthscale, self.n_freq, self.half_width,
                                              self.variance)
            # grid spacing / pi, so that phi' diag(w) phi approximates k
            w = np.diag(S) / self.half_width
            return replace(self, kind="trig", frequencies=tuple(freqs), weights=tuple(w),
                           weight_mode=self.weight_mode or "regular-spectral")
        return self


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str = "continuous"
    role: str = "shared"
    levels: tuple = ()
    basis: BasisSpec | None = None
    multiplier: str | None = None  # categorical only: one-hot scaled by this column (random slope)
    source: str | None = None  # raw column to read; defaults to ``name``

    @property
    def column(self) -> str:
        return self.source or self.name

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise ValueError(f"covariate {self.name!r}: unknown role {self.role!r}")
        if self.kind == "categorical":
            if len(self.levels) < 1 or len(set(self.levels)) != len(self.levels):
                raise ValueError(f"covariate {self.name!r}: levels must be non-empty and unique")
            if self.basis is not None and self.multiplier is None:
                # a basis on a categorical expands its multiplier column (instance-level functions)
                raise ValueError(f"covariate {self.name!r}: a categorical basis needs a multiplier")
        elif self.multiplier is not None:
            raise ValueError(f"covariate {self.name!r}: multiplier is only valid for categoricals")

    @property
    def width(self) -> int:
        if self.kind == "categorical":
            return len(self.levels) * (self.basis.width if self.basis is not None else 1)
        return (self.basis or BasisSpec()).width


@dataclass(frozen=True)
class CovariateSchema:
    entries: tuple[Covariate, ...]

    def __post_init__(self):
        names = [c.name for c in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")

    @property
    def ordered(self) -> list[Covariate]:
        return [c for c in self.entries if c.role == "shared"] + \
               [c for c in self.entries if c.role == "random"]

    @property
    def S(self) -> int:
        return sum(c.width for c in self.entries if c.role == "shared")

    @property
    def R(self) -> int:
        return sum(c.width for c in self.entries if c.role == "random")

    @property
    def Q(self) -> int:
        return self.S + self.R

    def resolve(self, seed: int = 0) -> "CovariateSchema":
        rng = Rng(seed).spawn("basis")
        out = []
        for c in self.entries:
            if c.basis is not None:
                c = replace(c, basis=c.basis.resolve(rng.spawn(c.name)))
            out.append(c)
        return CovariateSchema(tuple(out))

    def to_dict(self) -> list[dict]:
        out = []
        for c in self.entries:
            d = {"name": c.name, "kind": c.kind, "role": c.role}
            if c.levels:
                d["levels"] = list(c.levels)
            if c.multiplier:
                d["multiplier"] = c.multiplier
            if c.source:
                d["source"] = c.source
            if c.basis is not None:
                b = c.basis
                bd = {"kind": b.kind}
                for key in ("degree", "n_freq", "lengthscale", "variance", "half_width"):
                    if getattr(b, key) != getattr(BasisSpec(), key):
                        bd[key] = getattr(b, key)
                if b.frequencies:
                    bd["frequencies"] = list(b.frequencies)
                if b.weights:
                    bd["weights"] = list(b.weights)
                if b.weight_mode:
                    bd["weight_mode"] = b.weight_mode
                if b.table:
                    bd["table"] = {k: list(v) for k, v in b.table.items()}
                d["basis"] = bd
            out.append(d)
        return out

    @classmethod
    def from_dict(cls, entries: Sequence[Mapping]) -> "CovariateSchema":
        out = []
        for e in entries:
            basis = None
            if "basis" in e:
                b = dict(e["basis"])
                for key in ("frequencies", "weights"):
                    if key in b:
                        b[key] = tuple(b[key])
                basis = BasisSpec(**b)
            out.append(Covariate(name=e["name"], kind=e.get("kind", "continuous"),
                                 role=e.get("role", "shared"), levels=tuple(e.get("levels", ())),
                                 basis=basis, multiplier=e.get("multiplier"),
                                 source=e.get("source")))
        return cls(tuple(out))


@dataclass
class GroupIndex:
    """Observation-to-group map (one group per instance)."""

    group_of: np.ndarray
    labels: np.ndarray
    members: list[np.ndarray] = field(repr=False)

    @classmethod
    def from_ids(cls, ids) -> "GroupIndex":
        ids = np.asarray(ids)
        labels, group_of = np.unique(ids, return_inverse=True)
        members = [np.flatnonzero(group_of == k) for k in range(len(labels))]
        return cls(group_of=group_of, labels=labels, members=members)

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(m) for m in self.members])


@dataclass
class DesignMatrix:
    X: np.ndarray  # Q x N
    schema: CovariateSchema  # resolved
    columns: list[str]
    blocks: dict[str, slice]
    prior_var: np.ndarray  # per-column prior variance (nan where the isotropic default applies)

    @property
    def S(self) -> int:
        return self.schema.S

    @property
    def R(self) -> int:
        return self.schema.R

    @property
    def Q(self) -> int:
        return self.X.shape[0]

    def decode_categorical(self, name: str) -> list:
        cov = next(c for c in self.schema.entries if c.name == name)
        block = self.X[self.blocks[name]]
        return [cov.levels[i] for i in np.argmax(np.abs(block), axis=0)]


def expand_basis(x: float, spec: BasisSpec | None) -> np.ndarray:
    """Feature vector of ``x`` under ``spec`` (scalar or 1-D array input)."""
    x = np.asarray(x, dtype=np.float64)
    spec = spec or BasisSpec()
    if spec.kind == "identity":
        out = x[..., None]
    elif spec.kind == "polynomial":
        out = np.stack([x ** (p + 1) for p in range(spec.degree)], axis=-1)
    elif spec.kind == "trig":
        out = fourier_feature_map(x, spec.frequencies)
    elif spec.kind == "table":
        keys = np.atleast_1d(x)
        rows = []
        for v in keys:
            key = _table_key(v)
            if key not in spec.table:
                raise ValueError(f"table basis has no entry for value {v!r}")
            rows.append(spec.table[key])
        out = np.asarray(rows, dtype=np.float64).reshape(x.shape + (-1,))
    else:
        raise ValueError(f"basis {spec.kind!r} must be resolved before expansion")
    return out


def _table_key(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def fourier_feature_map(x, frequencies) -> np.ndarray:
    """``(cos(w_1 x) .. cos(w_M x), sin(w_1 x) .. sin(w_M x))`` along the last axis."""
    w = np.asarray(frequencies, dtype=np.float64)
    if w.size < 1:
        raise ValueError("fourier_feature_map needs at least one frequency")
    wx = np.asarray(x, dtype=np.float64)[..., None] * w
    return np.concatenate([np.cos(wx), np.sin(wx)], axis=-1)


def rbf_spectral_density(omega, variance: float = 1.0, lengthscale: float = 1.0):
    """Spectral density of ``variance * exp(-r^2 / (2 l^2))`` with the 1/(2 pi) inverse convention."""
    omega = np.asarray(omega, dtype=np.float64)
    return variance * lengthscale * math.sqrt(2 * math.pi) * np.exp(-0.5 * (omega * lengthscale) ** 2)


def sample_random_frequencies(lengthscale: float, M: int, rng: Rng) -> np.ndarray:
    """M signed frequencies from N(0, 1/l^2), the normalised RBF spectral density."""
    if lengthscale <= 0 or M < 1:
        raise ValueError("need lengthscale > 0 and M >= 1")
    return rng.normal(M) / lengthscale


def regular_frequency_grid(lengthscale: float, M: int, half_width: float,
                           variance: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Frequencies ``m * pi / half_width`` (m = 1..M) and ``S = diag(s(w), s(w))``."""
    if M < 1 or half_width <= 0:
        raise ValueError("need M >= 1 and half_width > 0")
    freqs = np.arange(1, M + 1) * math.pi / half_width
    s = rbf_spectral_density(freqs, variance, lengthscale)
    return freqs, np.diag(np.concatenate([s, s]))


def build_design_matrix(schema: CovariateSchema, raw: Mapping[str, Sequence], seed: int = 0) -> DesignMatrix:
    """Encode ``raw`` (column name -> per-observation values) into X (Q x N)."""
    schema = schema.resolve(seed)
    n = None
    for c in schema.entries:
        if c.column not in raw:
            raise KeyError(f"covariate column {c.column!r} missing from data")
        if c.multiplier is not None and c.multiplier not in raw:
            raise KeyError(f"multiplier column {c.multiplier!r} missing from data")
        m = len(raw[c.column])
        if n is not None and m != n:
            raise ValueError("covariate columns differ in length")
        n = m
    n = n or 0

    parts, columns, blocks, prior_var = [], [], {}, []
    start = 0
    for c in schema.ordered:
        values = raw[c.column]
        if c.kind == "categorical":
            index = {lvl: i for i, lvl in enumerate(c.levels)}
            # accept numerically-equal spellings (e.g. 3 vs 3.0 vs "3")
            loose = {_norm_level(lvl): i for i, lvl in enumerate(c.levels)}
            block = np.zeros((len(c.levels), n))
            for j, v in enumerate(values):
                i = index.get(v)
                if i is None:
                    i = loose.get(_norm_level(v))
                if i is None:
                    raise ValueError(f"covariate {c.name!r}: unknown level {v!r}")
                block[i, j] = 1.0
            cols = [f"{c.column}={lvl}" + (f"*{c.multiplier}" if c.multiplier else "") for lvl in c.levels]
            pv = np.full(len(c.levels), np.nan)
            if c.multiplier is not None:
                m = np.asarray(raw[c.multiplier], dtype=np.float64)
                if c.basis is None:
                    block = block * m[None, :]
                else:
                    # level-major Kronecker product: rows (level k, feature w)
                    F = expand_basis(m, c.basis).reshape(n, -1).T  # W x n
                    W = F.shape[0]
                    block = (block[:, None, :] * F[None, :, :]).reshape(len(c.levels) * W, n)
                    cols = [f"{col}[{w}]" for col in cols for w in range(W)]
                    pv = np.tile(np.asarray(c.basis.weights) if c.basis.weights else np.full(W, np.nan),
                                 len(c.levels))
        else:
            x = np.asarray(values, dtype=np.float64)
            if not np.all(np.isfinite(x)):
                raise ValueError(f"covariate {c.name!r}: non-finite values")
            block = expand_basis(x, c.basis).T.reshape(c.width, n)
            cols = [f"{c.name}[{i}]" for i in range(c.width)] if c.width > 1 else [c.name]
            pv = np.asarray(c.basis.weights) if c.basis is not None and c.basis.weights \
                else np.full(c.width, np.nan)
        parts.append(block)
        columns += cols
        prior_var.append(pv)
        blocks[c.name] = slice(start, start + block.shape[0])
        start += block.shape[0]
    X = np.concatenate(parts, axis=0) if parts else np.zeros((0, n))
    return DesignMatrix(X=X, schema=schema, columns=columns, blocks=blocks,
                        prior_var=np.concatenate(prior_var) if prior_var else np.zeros(0))


def _norm_level(v):
    try:
        f = float(v)
        return int(f) if f.is_integer() else f
    except (TypeError, ValueError):
        return str(v)
