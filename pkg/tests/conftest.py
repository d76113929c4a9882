import numpy as np
import pytest
import torch

from lmmvae.models import ModelData
from lmmvae.ndcore import Rng, tensor


def toy_data(n=3, D=4, Q=3, groups=None, seed=0, masked=True) -> ModelData:
    rng = Rng(seed).spawn("toy")
    y = rng.normal(n, D)
    mask = np.ones((n, D))
    if masked:
        mask[0, 1] = 0.0
        y[0, 1] = 0.0
    x = rng.normal(n, Q)
    groups = np.zeros(n, dtype=int) if groups is None else np.asarray(groups)
    return ModelData(tensor(y), tensor(mask), tensor(x), groups)


def fd_check(f, params, h=1e-5):
    """Max relative error between autograd and central differences over all parameter entries."""
    params = list(params)
    loss = f()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    worst = 0.0
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        flat = p.data.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            up = f().item()
            flat[i] = old - h
            dn = f().item()
            flat[i] = old
            num = (up - dn) / (2 * h)
            ana = g.reshape(-1)[i].item()
            err = abs(num - ana) / max(1.0, abs(num), abs(ana))
            worst = max(worst, err)
    return worst


@pytest.fixture
def toy():
    return toy_data
