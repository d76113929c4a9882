import numpy as np
import pytest

from lmmvae import gpbridge as gp
from lmmvae.covariates import fourier_feature_map, sample_random_frequencies
from lmmvae.ndcore import Rng


def test_kernel_spec():
    k = gp.KernelSpec(2.0, 0.5)
    np.testing.assert_allclose(k([0.0], [0.5]), [[2.0 * np.exp(-0.5)]])
    with pytest.raises(ValueError):
        gp.KernelSpec(-1.0)
    with pytest.raises(ValueError):
        gp.KernelSpec(kind="matern")


def test_approx_kernel_is_feature_inner_product():
    w = sample_random_frequencies(1.0, 16, Rng(0))
    r = np.array([0.0, 0.7, -1.3])
    phi_r, phi_0 = fourier_feature_map(r, w), fourier_feature_map(0.0, w)
    np.testing.assert_allclose(gp.approx_kernel(r, w, 1.5), 1.5 / 16 * phi_r @ phi_0, atol=1e-14)
    with pytest.raises(ValueError):
        gp.approx_kernel(r, [])


def test_exact_gp_interpolates_with_small_noise():
    x = np.linspace(-2, 2, 7)
    y = np.sin(x)
    mean, cov = gp.exact_gp_posterior(x, y, gp.KernelSpec(1.0, 1.0), 1e-8)
    np.testing.assert_allclose(mean(x), y, atol=1e-5)
    assert np.all(np.diag(cov(x)) < 1e-5)
    with pytest.raises(ValueError):
        gp.exact_gp_posterior(x, y, gp.KernelSpec(), 0.0)


def test_exact_gp_empty_training_set_is_the_prior():
    k = gp.KernelSpec(1.3, 0.4)
    mean, cov = gp.exact_gp_posterior([], [], k, 0.1)
    t = np.array([0.0, 0.3])
    np.testing.assert_array_equal(mean(t), 0.0)
    np.testing.assert_allclose(cov(t), k(t, t))


def test_chol_jitter_rescues_singular_matrices():
    K = np.ones((3, 3))
    c, _ = gp._chol(K)
    assert np.all(np.isfinite(c))
    with pytest.raises(np.linalg.LinAlgError):
        gp._chol(-np.eye(2))


def test_rff_regression_is_exact_gp_with_the_approximate_kernel():
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-2, 2, 12), rng.normal(size=12)
    w = sample_random_frequencies(0.8, 6, Rng(1))
    weights = np.full(12, 1.0 / 6)
    mean, cov = gp.rff_regression_posterior(x, y, w, weights, 0.05)
    t = np.linspace(-2, 2, 5)
    K = lambda a, b: gp.approx_kernel(np.subtract.outer(a, b), w)
    Kxx = K(x, x) + 0.05 * np.eye(12)
    np.testing.assert_allclose(mean(t), K(t, x) @ np.linalg.solve(Kxx, y), atol=1e-9)
    np.testing.assert_allclose(cov(t), K(t, t) - K(t, x) @ np.linalg.solve(Kxx, K(x, t)), atol=1e-9)
    assert mean.weight_cov.shape == (12, 12)
    with pytest.raises(ValueError):
        gp.rff_regression_posterior(x, y, w, weights[:3], 0.05)


def test_additive_composition():
    A1, A2 = np.array([[1.0], [2.0]]), np.array([[0.5, -1.0], [0.0, 1.0]])
    c1 = gp.AdditiveComponent(["a"], lambda a: a[:, None], A1)
    c2 = gp.AdditiveComponent(["b"], lambda b: fourier_feature_map(b, [1.0]), A2)
    raw = {"a": np.array([1.0, 2.0]), "b": np.array([0.0, np.pi / 2])}
    z = gp.compose_additive([c1, c2], raw)
    expect = raw["a"][:, None] @ A1.T + fourier_feature_map(raw["b"], [1.0]) @ A2.T
    np.testing.assert_allclose(z, expect)
    with pytest.raises(ValueError):
        gp.compose_additive([], raw)
    with pytest.raises(ValueError):
        gp.AdditiveComponent(["a"], lambda a: a[:, None], A2)(raw)
