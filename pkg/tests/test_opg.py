import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsdr.bandwidth import normal_inv_cdf
from qsdr.errors import AllWeightsZero, ConfigError, InsufficientData, NoValidGradients
from qsdr.linalg import subspace_error
from qsdr.opg import (
    CompositeOpg,
    GradientField,
    QopgConfig,
    composite_opg,
    gradient_field,
    level_opg,
    qopg_fit,
)
from qsdr.smoother import build_multi_index_set

TAUS = (0.25, 0.5, 0.75)


def analytic_fields(X, taus):
    """Exact quantile gradients of Y = x1 + exp(x2) eps with normal eps."""
    out = []
    for tau in taus:
        G = np.zeros_like(X)
        G[:, 0] = 1.0
        G[:, 1] = np.exp(X[:, 1]) * normal_inv_cdf(tau)
        out.append(GradientField(tau=tau, gradients=G, valid_mask=np.ones(len(X), bool)))
    return out


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 8))
def test_composite_recovers_span_from_exact_gradients(seed, p):
    X = np.random.default_rng(seed).normal(size=(100, p))
    fields = analytic_fields(X, (0.1, 0.3, 0.5, 0.7, 0.9))
    levels = [level_opg(f, 2) for f in fields]
    comp = composite_opg(levels)
    assert subspace_error(comp.eigenvectors[:, :2], np.eye(p)[:, :2]) < 1e-8
    median = levels[2]
    assert median.eigenvalues[1] < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_composite_is_psd(seed):
    rng = np.random.default_rng(seed)
    levels = []
    for tau in TAUS:
        G = rng.normal(size=(30, 5)) * rng.uniform(0, 2, size=5)
        levels.append(level_opg(GradientField(tau, G, rng.uniform(size=30) > 0.2), 2))
    comp = composite_opg(levels)
    assert isinstance(comp, CompositeOpg)
    np.testing.assert_allclose(comp.matrix, comp.matrix.T, atol=0)
    assert comp.eigenvalues.min() >= -1e-12 * max(1.0, comp.eigenvalues.max())
    for lv in levels:
        assert 0.0 <= lv.weight <= 1.0
        assert np.all(lv.eigenvalues >= 0)


def test_level_weight_is_leading_share():
    G = np.zeros((4, 3))
    G[:, 0] = [1, -1, 1, -1]
    G[:, 1] = [1, 1, -1, -1]
    G[:, 2] = [0.5, 0.5, 0.5, 0.5]
    lv = level_opg(GradientField(0.5, G, np.ones(4, bool)), 1)
    vals = np.sort(np.linalg.eigvalsh(G.T @ G / 4))[::-1]
    assert lv.weight == pytest.approx(vals[0] / vals.sum())
    assert level_opg(GradientField(0.5, G, np.ones(4, bool)), 1, weight_threshold=10.0).weight == 0.0


def test_composite_weighting_and_errors():
    a = level_opg(GradientField(0.3, np.c_[np.ones(5), np.zeros(5)], np.ones(5, bool)), 1)
    b = level_opg(GradientField(0.7, np.c_[np.zeros(5), 2 * np.ones(5)], np.ones(5, bool)), 1)
    a.weight, b.weight = 1.0, 0.0
    comp = composite_opg([a, b])
    np.testing.assert_allclose(comp.matrix, a.matrix)
    unweighted = composite_opg([a, b], use_adaptive_weights=False)
    np.testing.assert_allclose(unweighted.matrix, 0.5 * (a.matrix + b.matrix))
    b.weight = 0.0
    a.weight = 0.0
    with pytest.raises(AllWeightsZero):
        composite_opg([a, b])
    with pytest.raises(ConfigError):
        composite_opg([])
    with pytest.raises(ConfigError):
        composite_opg([a], delta_star=0.4)
    with pytest.raises(NoValidGradients):
        level_opg(GradientField(0.5, np.ones((3, 2)), np.zeros(3, bool)), 1)


def test_gradient_field_on_linear_model():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(120, 3))
    Y = X @ np.array([1.0, -1.0, 0.5]) + 0.1 * rng.normal(size=120)
    A = build_multi_index_set(3, 1)
    f = gradient_field(X, Y, 0.5, 2.0, A)
    g = np.median(f.gradients[f.valid_mask], axis=0)
    np.testing.assert_allclose(g, [1.0, -1.0, 0.5], atol=0.15)


def single_index_data(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[:2] = [1.0, 1.0]
    Y = np.sin(X @ beta) + (0.3 + 0.2 * np.abs(X[:, 0])) * rng.normal(size=n)
    return X, Y, beta[:, None]


def test_qopg_single_index():
    X, Y, B0 = single_index_data(200, 4, 1)
    est = qopg_fit(X, Y, 1, QopgConfig(tau_grid=TAUS))
    assert est.basis.shape == (4, 1)
    np.testing.assert_allclose(est.basis.T @ est.basis, np.eye(1), atol=1e-10)
    assert subspace_error(est.basis, B0) < 0.25
    assert set(est.weights) == set(TAUS)
    assert est.iterations >= 1
    report = est.to_dict()
    assert report["method"] == "qopg" and "bandwidth_plan" in report


def test_qopg_deterministic():
    X, Y, _ = single_index_data(120, 3, 2)
    cfg = QopgConfig(tau_grid=TAUS, max_rounds=3)
    a = qopg_fit(X, Y, 1, cfg).basis
    b = qopg_fit(X, Y, 1, cfg).basis
    np.testing.assert_array_equal(a, b)


def test_qopg_full_dimension_and_fixed_bandwidth():
    X, Y, _ = single_index_data(80, 2, 3)
    est = qopg_fit(X, Y, 2, QopgConfig(tau_grid=TAUS, bandwidth="fixed", h=2.0))
    assert subspace_error(est.basis, np.eye(2)) < 1e-10
    assert all(h == 2.0 for h in est.bandwidths.values())


def test_qopg_errors():
    X, Y, _ = single_index_data(50, 3, 4)
    with pytest.raises(ConfigError):
        qopg_fit(X, Y, 4)
    with pytest.raises(ConfigError):
        qopg_fit(X, Y[:-1], 1)
    with pytest.raises(InsufficientData):
        qopg_fit(X[:3], Y[:3], 1)
    with pytest.raises(ConfigError):
        QopgConfig(tau_grid=(0.05, 0.5))
    with pytest.raises(ConfigError):
        QopgConfig(order=0)
    with pytest.raises(ConfigError):
        QopgConfig(tau_grid=())
