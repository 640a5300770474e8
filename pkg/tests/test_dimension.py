import numpy as np
import pytest

from qsdr.bandwidth import loo_local_quantile
from qsdr.dimension import DimensionConfig, composite_loo_loss, dimension_cv, select_dimension_cv
from qsdr.errors import ConfigError
from qsdr.opg import QopgConfig
from qsdr.smoother import build_multi_index_set, check_loss, fit_local_quantile

TAUS = (0.25, 0.5, 0.75)


def test_loo_quantile_matches_direct_fits():
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(25, 1))
    Y = Z[:, 0] + rng.normal(size=25)
    A0 = build_multi_index_set(1, 0)
    pred, feasible = loo_local_quantile(Z, Y, 0.5, 1.0, A0)
    checked = 0
    for j in np.nonzero(feasible)[0][:5]:
        keep = np.arange(25) != j
        fit = fit_local_quantile(Z[keep], Y[keep], Z[j], 0.5, 1.0, A=A0)
        # medians may be non-unique, so compare objectives
        w = np.maximum(0.75 * (1 - (np.abs(Z[keep, 0] - Z[j, 0])) ** 2), 0)
        assert (w * check_loss(Y[keep] - pred[j], 0.5)).sum() == pytest.approx(
            (w * check_loss(Y[keep] - fit.coeffs[0], 0.5)).sum(), abs=1e-9)
        checked += 1
    assert checked == 5
    assert np.all(pred[~feasible] == np.quantile(Y, 0.5))


def test_composite_loss_sums_levels():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(30, 1))
    Y = rng.normal(size=30)
    total = composite_loo_loss(Z, Y, TAUS, 1.0, order=1)
    parts = 0.0
    for tau in TAUS:
        pred, _ = loo_local_quantile(Z, Y, tau, 1.0)
        parts += check_loss(Y - pred, tau).sum()
    assert total == pytest.approx(parts)


def test_selects_single_index_model():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(150, 3))
    Y = 2 * X[:, 0] + 0.3 * rng.normal(size=150)
    cfg = DimensionConfig(opg=QopgConfig(tau_grid=TAUS, max_rounds=3), grid_size=4)
    res = select_dimension_cv(X, Y, (1, 2), cfg, return_result=True)
    assert res.q_hat == 1
    assert set(res.cv) == {1, 2} and all(np.isfinite(v) for v in res.cv.values())
    assert res.to_dict()["q_hat"] == 1


def test_callable_estimator_and_rot_bandwidth():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(60, 3))
    Y = X[:, 0] + 0.2 * rng.normal(size=60)
    cfg = DimensionConfig(opg=QopgConfig(tau_grid=TAUS), estimator=lambda X, Y, q: np.eye(3)[:, :q],
                          bandwidth="rot")
    q_hat, cv = select_dimension_cv(X, Y, (1, 3), cfg)
    assert q_hat in (1, 3)
    value, h = dimension_cv(X, Y, np.eye(3)[:, :1], TAUS, cfg)
    assert value == pytest.approx(cv[1]) and h > 0


def test_single_candidate_and_errors():
    X = np.random.default_rng(4).normal(size=(30, 3))
    Y = X[:, 0]
    q, cv = select_dimension_cv(X, Y, (2,))
    assert q == 2 and np.isnan(cv[2])
    with pytest.raises(ConfigError):
        select_dimension_cv(X, Y, ())
    with pytest.raises(ConfigError):
        select_dimension_cv(X, Y, (1, 4))
    with pytest.raises(ConfigError):
        DimensionConfig(bandwidth="magic")
    with pytest.raises(ConfigError):
        DimensionConfig(order=2)


def test_ties_go_to_smallest():
    X = np.random.default_rng(5).normal(size=(40, 2))
    Y = np.zeros(40)
    cfg = DimensionConfig(opg=QopgConfig(tau_grid=TAUS), estimator=lambda X, Y, q: np.eye(2)[:, :q],
                          grid_size=2)
    q, cv = select_dimension_cv(X, Y, (1, 2), cfg)
    assert cv[1] == cv[2] == 0.0
    assert q == 1
