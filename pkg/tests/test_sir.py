import numpy as np
import pytest
from scipy.linalg import eigh

from qsdr.errors import ConfigError, DegenerateCovariance, TooFewSlices
from qsdr.linalg import subspace_error
from qsdr.sir import SirConfig, sir_fit


def reference_sir(X, Y, H, q):
    """Generalised eigenproblem M v = lambda S v on unwhitened slice means."""
    n = len(Y)
    mu = X.mean(axis=0)
    S = np.cov(X.T, bias=True)
    M = np.zeros((X.shape[1],) * 2)
    for block in np.array_split(np.argsort(Y, kind="stable"), H):
        d = X[block].mean(axis=0) - mu
        M += len(block) / n * np.outer(d, d)
    vals, vecs = eigh(M, S)
    return vecs[:, ::-1][:, :q], vals[::-1]


@pytest.mark.parametrize("seed", range(4))
def test_matches_generalised_eigenproblem(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(150, 5)) @ rng.normal(size=(5, 5))
    Y = X[:, 0] + np.tanh(X[:, 1]) + 0.2 * rng.normal(size=150)
    est = sir_fit(X, Y, SirConfig(q=2, n_slices=6))
    ref, vals = reference_sir(X, Y, 6, 2)
    assert subspace_error(est.basis, ref) < 1e-8
    np.testing.assert_allclose(est.eigenvalues[:2], vals[:2], rtol=1e-8)


def test_linear_model_direction():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(2000, 4))
    beta = np.array([1.0, 2.0, 0.0, 0.0])
    est = sir_fit(X, X @ beta + 0.5 * rng.normal(size=2000), SirConfig(q=1))
    assert subspace_error(est.basis, beta) < 0.05


def test_default_slices():
    cfg = SirConfig()
    assert cfg.slices_for(200) == 8
    assert cfg.slices_for(400) == 10
    X = np.random.default_rng(0).normal(size=(100, 3))
    assert sir_fit(X, X[:, 0]).extra["n_slices"] == 8


def test_errors():
    X = np.random.default_rng(0).normal(size=(10, 3))
    with pytest.raises(TooFewSlices):
        SirConfig(n_slices=1)
    with pytest.raises(TooFewSlices):
        sir_fit(X, X[:, 0], SirConfig(q=1, n_slices=8))
    with pytest.raises(ConfigError):
        sir_fit(X, X[:, 0], SirConfig(q=4, n_slices=2))
    with pytest.raises(ConfigError):
        SirConfig(q=0)
    Xd = np.c_[X, X[:, 0]]
    with pytest.raises(DegenerateCovariance):
        sir_fit(Xd, X[:, 1], SirConfig(q=1, n_slices=2))
