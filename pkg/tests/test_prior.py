import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from lmmvae import prior as lp
from lmmvae.ndcore import Rng, tensor


def _rand_case(rng, L=3, Q=4, bayes=True):
    mu = tensor(rng.normal(L))
    var = tensor(np.exp(rng.normal(L) * 0.5))
    am = tensor(rng.normal(L, Q))
    av = tensor(np.exp(rng.normal(L, Q) - 1.0)) if bayes else None
    x = tensor(rng.normal(Q))
    sz = float(np.exp(rng.normal() * 0.3))
    return mu, var, am, av, x, sz


def test_expected_sq_residual_deterministic_A():
    mu, _, am, _, x, _ = _rand_case(Rng(0), bayes=False)
    expect = (mu - am @ x) ** 2
    assert torch.allclose(lp.expected_sq_residual(mu, am, None, x), expect, atol=1e-14)


def test_expected_sq_residual_mc():
    rng = Rng(1)
    mu, _, am, av, x, _ = _rand_case(rng)
    A = am + av.sqrt() * tensor(rng.normal(200000, *am.shape))
    mc = ((mu - (A * x).sum(-1)) ** 2)
    exact = lp.expected_sq_residual(mu, am, av, x)
    se = mc.std(0) / np.sqrt(mc.shape[0])
    assert torch.all((mc.mean(0) - exact).abs() < 4 * se)


def test_gaussian_kl_against_torch_distributions():
    rng = Rng(2)
    mq, mp = tensor(rng.normal(6)), tensor(rng.normal(6))
    vq, vp = tensor(np.exp(rng.normal(6))), tensor(np.exp(rng.normal(6)))
    ref = torch.distributions.kl_divergence(torch.distributions.Normal(mq, vq.sqrt()),
                                            torch.distributions.Normal(mp, vp.sqrt()))
    assert torch.allclose(lp.gaussian_kl(mq, vq, mp, vp), ref, atol=1e-13)


def test_kl_z_given_A_deterministic_matches_gaussian_kl():
    mu, var, am, _, x, sz = _rand_case(Rng(3), bayes=False)
    prior = lp.LmmPrior(am, None, sz)
    expect = lp.gaussian_kl(mu, var, am @ x, torch.tensor(sz ** 2, dtype=torch.float64)).sum()
    assert torch.allclose(lp.kl_z_given_A(mu, var, prior, x), expect, atol=1e-13)


def test_kl_z_given_A_batched_rows():
    rng = Rng(4)
    mu, var = tensor(rng.normal(5, 2)), tensor(np.exp(rng.normal(5, 2)))
    am, av, x = tensor(rng.normal(2, 3)), tensor(np.exp(rng.normal(2, 3))), tensor(rng.normal(5, 3))
    prior = lp.LmmPrior(am, av, 0.7)
    out = lp.kl_z_given_A(mu, var, prior, x)
    assert out.shape == (5,)
    for i in range(5):
        assert torch.allclose(out[i], lp.kl_z_given_A(mu[i], var[i], prior, x[i]), atol=1e-14)


def test_kl_is_zero_at_the_prior():
    am = tensor(Rng(5).normal(2, 3))
    x = tensor([0.1, -0.2, 0.3])
    prior = lp.LmmPrior(am, None, 0.5)
    kl = lp.kl_z_given_A(am @ x, torch.full((2,), 0.25, dtype=torch.float64), prior, x)
    assert abs(kl.item()) < 1e-15


def test_kl_rejects_bad_variance():
    prior = lp.LmmPrior(tensor(np.zeros((1, 1))), None, 1.0)
    with pytest.raises(ValueError):
        lp.kl_z_given_A(tensor([0.0]), tensor([0.0]), prior, tensor([1.0]))
    with pytest.raises(ValueError):
        lp.kl_A(tensor([0.0]), tensor([-1.0]), tensor([1.0]))


def test_kl_A_closed_form():
    m, v, p = tensor([0.5, -1.0]), tensor([0.2, 2.0]), tensor([1.0, 0.5])
    expect = 0.5 * (v / p - 1 - torch.log(v / p) + m ** 2 / p)
    assert torch.allclose(lp.kl_A(m, v, p), expect.sum())


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.05, 5), st.floats(-3, 3), st.floats(0.05, 5))
def test_gaussian_kl_non_negative(mq, vq, mp, vp):
    kl = lp.gaussian_kl(tensor(mq), tensor(vq), tensor(mp), tensor(vp))
    assert kl.item() >= -1e-12


def test_prior_on_A_variances():
    assert torch.equal(lp.PriorOnA("isotropic", 4.0).variances(2, 3), torch.full((2, 3), 0.25, dtype=torch.float64))
    v = lp.PriorOnA("spectral", 2.0, np.array([0.1, np.nan])).variances(3, 2)
    assert torch.allclose(v, tensor([[0.1, 0.5]] * 3))
    with pytest.raises(ValueError):
        lp.PriorOnA("spectral")
    with pytest.raises(ValueError):
        lp.PriorOnA("isotropic", beta=0.0)


def test_sample_z_moments():
    am = tensor([[1.0, -2.0]])
    x = tensor([0.5, 0.25])
    z = lp.sample_z(lp.LmmPrior(am, tensor([[0.3, 0.2]]), 0.4), x, Rng(6), 200000)
    assert z.mean().item() == pytest.approx(0.0, abs=0.01)
    assert z.var().item() == pytest.approx(0.16 + 0.3 * 0.25 + 0.2 * 0.0625, rel=0.02)


def test_marginal_prior_variance_formula():
    assert lp.marginal_prior_variance([1.0, 2.0], 2.0, 0.5) == pytest.approx(0.25 + 2.5)
    with pytest.raises(ValueError):
        lp.marginal_prior_variance([1.0], 0.0, 1.0)
