"""Numeric substrate: float64 tensors, reverse-mode gradients, Adam, LR schedule, RNG.

Tensors and the dynamic autodiff graph are torch's (CPU, float64). Everything
stochastic goes through :class:`Rng`, which wraps numpy's PCG64 bit generator,
so results never depend on torch's global generator state.
"""
from __future__ import annotations

import math
import zlib
from typing import Iterable, Sequence

import numpy as np
import torch

DTYPE = torch.float64

Tensor = torch.Tensor


class ShapeError(ValueError):
    """Operand shapes do not conform for the named op."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}")


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a float64 tensor from anything array-like."""
    if isinstance(data, torch.Tensor):
        out = data.detach().to(DTYPE).clone()
    else:
        out = torch.from_numpy(np.array(data, dtype=np.float64))
    return out.requires_grad_(requires_grad)


def zeros(*shape, requires_grad: bool = False) -> Tensor:
    return torch.zeros(*shape, dtype=DTYPE, requires_grad=requires_grad)


# -- shape-checked elementary ops -------------------------------------------

def _broadcast(op: str, a: Tensor, b: Tensor):
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(op, a.shape, b.shape) from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.dim() == 0 or b.dim() == 0 or a.shape[-1] != b.shape[0 if b.dim() == 1 else -2]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("add", a, b)
    return a + b


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("sub", a, b)
    return a - b


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("hadamard", a, b)
    return a * b


# -- gradients -----------------------------------------------------------------

def backward(loss: Tensor, leaves: Sequence[Tensor]) -> list[Tensor]:
    """Gradients of a scalar ``loss`` w.r.t. each leaf; unused leaves get zeros."""
    if loss.numel() != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    leaves = list(leaves)
    grads = torch.autograd.grad(loss.reshape(()), leaves, allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(leaves, grads)]


# -- optimisation --------------------------------------------------------------

class Adam:
    """Bias-corrected Adam applied in place to a list of leaf tensors."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [torch.zeros_like(p) for p in self.params]
        self.v = [torch.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[Tensor]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("adam_step: gradient count does not match parameter count")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ShapeError("adam_step", p.shape, g.shape)
            if not torch.isfinite(g).all():
                raise FloatingPointError("adam_step: non-finite gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        with torch.no_grad():
            for p, g, m, v in zip(self.params, grads, self.m, self.v):
                m.mul_(self.beta1).add_(g, alpha=1.0 - self.beta1)
                v.mul_(self.beta2).addcmul_(g, g, value=1.0 - self.beta2)
                p.sub_(self.lr * (m / c1) / ((v / c2).sqrt() + self.eps))

    def state_dict(self) -> dict:
        return {"step_count": self.step_count, "m": [m.clone() for m in self.m],
                "v": [v.clone() for v in self.v]}


def adam_step(state: Adam, grads: Sequence[Tensor]) -> None:
    state.step(grads)


def exp_lr(lr0: float, gamma: float, step_size: int, t: int) -> float:
    """Step-wise exponential decay: ``lr0 * gamma ** floor(t / step_size)``."""
    return lr0 * gamma ** (t // step_size)


# -- randomness ----------------------------------------------------------------

class Rng:
    """Seeded stream on numpy's PCG64 generator.

    Named sub-streams (``rng.spawn("init")``) are derived from the seed and a
    CRC32 of the name, so they are stable across runs and platforms and do not
    depend on how much the parent stream has been consumed.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = _key
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *_key]
        self.generator = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def spawn(self, name: str) -> "Rng":
        return Rng(self.seed, self._key + (zlib.crc32(name.encode()),))

    def normal(self, *shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, *shape) -> np.ndarray:
        return self.generator.random(shape)

    def bernoulli(self, p: float, *shape) -> np.ndarray:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli: p={p} outside [0, 1]")
        return (self.generator.random(shape) < p).astype(np.float64)

    def integers(self, low: int, high: int, size=None):
        return self.generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)


def draw(rng: Rng, dist: str, shape: Sequence[int], p: float = 0.5) -> Tensor:
    """Draw a tensor of i.i.d. values from ``standard-normal``, ``uniform`` or ``bernoulli``."""
    shape = tuple(shape)
    if dist in ("standard-normal", "normal"):
        return tensor(rng.normal(*shape))
    if dist == "uniform":
        return tensor(rng.uniform(*shape))
    if dist == "bernoulli":
        return tensor(rng.bernoulli(p, *shape))
    raise ValueError(f"unknown distribution {dist!r}")


LOG_2PI = math.log(2.0 * math.pi)
