import math

import numpy as np
import pytest

from condot.grf import (
    GaussianPrior,
    Grid2D,
    KlBasis,
    MaternKernel,
    cholesky_factor,
    cov_matrix,
    matern32,
    pca_fit,
    pca_project,
    pca_reconstruct,
    sample_grf,
)


def test_matern_values():
    assert matern32([0.3, 0.4], [0.3, 0.4], 0.5) == 1.0
    s3 = math.sqrt(3.0)
    assert matern32([0.0], [0.5], 0.5) == pytest.approx((1 + s3) * math.exp(-s3), rel=1e-15)
    r = np.linspace(0, 20, 200)
    k = MaternKernel(0.5)(r)
    assert np.all(np.diff(k) < 0) and k[-1] < 1e-20
    with pytest.raises(ValueError):
        matern32([0.0], [1.0], 0.0)


def test_grid_layout():
    g = Grid2D(3, 2)
    np.testing.assert_array_equal(g.nodes[:4], [[0, 0], [0.5, 0], [1, 0], [0, 1]])
    with pytest.raises(ValueError):
        Grid2D(1, 4)


def test_cov_matrix_properties():
    C = cov_matrix(Grid2D(4, 4), MaternKernel(0.5))
    assert np.all(np.diag(C) == 1.0)
    assert np.array_equal(C, C.T)
    assert np.linalg.eigvalsh(C).min() >= -1e-8


def test_sampling_moments_and_determinism():
    g = Grid2D(4, 4)
    C = cov_matrix(g, MaternKernel(0.5))
    L = cholesky_factor(C)
    n = 20000
    S = sample_grf(L, n, seed=1)
    assert np.array_equal(S, sample_grf(L, n, seed=1))
    assert np.all(np.abs(S.var(0) - 1.0) <= 4 / math.sqrt(n) * math.sqrt(2))
    i, j = 0, 5
    cov = np.mean(S[:, i] * S[:, j])
    assert abs(cov - C[i, j]) <= 4 * math.sqrt((1 + C[i, j] ** 2) / n)


def test_pca_full_basis_exact():
    rng = np.random.default_rng(0)
    S = rng.normal(size=(30, 6))
    b = pca_fit(S, 6)
    np.testing.assert_allclose(pca_reconstruct(b, pca_project(b, S)), S, atol=1e-8)
    np.testing.assert_allclose(b.modes @ b.modes.T, np.eye(6), atol=1e-8)
    assert np.all(np.diff(b.singular_values) <= 0)
    with pytest.raises(ValueError):
        pca_fit(S, 0)
    with pytest.raises(ValueError):
        pca_fit(S, 7)


def test_pca_residual_is_discarded_energy():
    rng = np.random.default_rng(1)
    S = rng.normal(size=(40, 10)) @ rng.normal(size=(10, 10))
    full = pca_fit(S, 10)
    b = full.truncate(4)
    resid = ((S - b.reconstruct(b.project(S))) ** 2).sum()
    assert resid == pytest.approx((full.singular_values[4:] ** 2).sum(), rel=1e-10)
    c = rng.normal(size=(3, 4))
    np.testing.assert_allclose(b.project(b.reconstruct(c)), c, atol=1e-10)


def test_truncation_error_decreases():
    prior = GaussianPrior(Grid2D(6, 6))
    train = prior.sample(np.random.default_rng(2), 500)
    held = prior.sample(np.random.default_rng(3), 200)
    basis = pca_fit(train, 30)
    errs = []
    for n in (2, 5, 10, 20, 30):
        b = basis.truncate(n)
        errs.append(((held - b.reconstruct(b.project(held))) ** 2).sum(1).mean())
    assert all(e2 <= e1 for e1, e2 in zip(errs, errs[1:]))


def test_basis_json_roundtrip():
    b = pca_fit(np.random.default_rng(4).normal(size=(10, 5)), 3)
    b2 = KlBasis.from_json(b.to_json())
    np.testing.assert_array_equal(b.modes, b2.modes)
