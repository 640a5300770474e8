import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from qsdr.errors import ConfigError, InsufficientLocalData, OrderTooLow
from qsdr.smoother import (
    KernelSpec,
    SolverConfig,
    build_multi_index_set,
    check_loss,
    design_matrix,
    extract_gradient,
    fit_local_quantile,
    kernel_weight,
    local_gradients,
    solve_weighted_qr,
    sup_distance,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
levels = st.floats(0.01, 0.99)


def lp_objective(D, y, w, tau):
    """Weighted check-loss minimum by linear programming."""
    m, s = D.shape
    c = np.r_[np.zeros(2 * s), w * 2 * tau, w * (2 - 2 * tau)]
    A = np.c_[D, -D, np.eye(m), -np.eye(m)]
    res = linprog(c, A_eq=A, b_eq=y, bounds=(0, None), method="highs")
    assert res.status == 0
    return res.fun


# check loss

def test_check_loss_values():
    assert check_loss(2.0, 0.25) == pytest.approx(2.0 + (-0.5) * 2.0)
    assert check_loss(-2.0, 0.25) == pytest.approx(2.0 + 1.0)
    assert check_loss(0.0, 0.7) == 0.0


@given(finite, finite, st.floats(0, 1), levels)
def test_check_loss_convex(a, b, lam, tau):
    mid = check_loss(lam * a + (1 - lam) * b, tau)
    assert mid <= lam * check_loss(a, tau) + (1 - lam) * check_loss(b, tau) + 1e-9 * (1 + abs(a) + abs(b))


@given(finite, levels)
def test_check_loss_nonnegative_and_mirror(s, tau):
    assert check_loss(s, tau) >= 0
    assert check_loss(s, tau) == pytest.approx(check_loss(-s, 1 - tau), abs=1e-9)


def test_check_loss_minimised_by_sample_quantile():
    y = np.arange(1.0, 11.0)
    grid = np.linspace(0, 11, 1101)
    losses = [check_loss(y - c, 0.3).sum() for c in grid]
    best = grid[int(np.argmin(losses))]
    assert 3.0 <= best <= 4.0


# multi-index set and design

def test_multi_index_set_sizes():
    assert build_multi_index_set(3, 0).size == 1
    assert build_multi_index_set(3, 1).size == 4
    assert build_multi_index_set(3, 2).size == 10
    A = build_multi_index_set(2, 1)
    assert A.exponents[0].sum() == 0
    np.testing.assert_array_equal(A.exponents[A.first_order_positions()], np.eye(2, dtype=int))


def test_design_matrix_scaling():
    A = build_multi_index_set(2, 2)
    d = np.array([[0.4, -0.2]])
    h = 0.5
    D = design_matrix(d, h, A)
    for col, e in enumerate(A.exponents):
        expect = np.prod(d[0] ** e) / h ** e.sum()
        assert D[0, col] == pytest.approx(expect)


# kernel

def test_kernel_support_and_value():
    spec = KernelSpec()
    assert spec(0.0) == pytest.approx(0.75)
    assert spec(1.5) == 0.0
    assert kernel_weight(0.5, 2.0, spec) == pytest.approx(0.75 * (1 - 0.0625) / 2.0)
    with pytest.raises(ConfigError):
        KernelSpec("gaussian")


def test_sup_distance_with_directions():
    d = np.array([[1.0, -3.0, 2.0]])
    assert sup_distance(d)[0] == 3.0
    B = np.array([[1.0], [0.0], [0.0]])
    assert sup_distance(d, B)[0] == 1.0


# solver against oracles

@pytest.mark.parametrize("seed", range(6))
def test_solver_matches_linear_program(seed):
    rng = np.random.default_rng(seed)
    m, s = 40, 4
    D = np.c_[np.ones(m), rng.normal(size=(m, s - 1))]
    y = D @ rng.normal(size=s) + rng.standard_t(3, size=m)
    w = rng.uniform(0.1, 1.0, size=m)
    for tau in (0.1, 0.5, 0.85):
        _, obj, conv = solve_weighted_qr(D[None], y[None], w[None], tau)
        assert conv[0]
        assert obj[0] == pytest.approx(lp_objective(D, y, w, tau), rel=1e-9, abs=1e-9)


def test_solver_kkt_at_solution():
    rng = np.random.default_rng(11)
    m = 60
    D = np.c_[np.ones(m), rng.normal(size=(m, 2))]
    y = rng.normal(size=m)
    w = np.ones(m)
    coef, obj, _ = solve_weighted_qr(D[None], y[None], w[None], 0.3)
    # perturbing any coefficient cannot lower the objective
    for j in range(3):
        for step in (1e-4, -1e-4):
            c = coef[0].copy()
            c[j] += step
            assert (w * check_loss(y - D @ c, 0.3)).sum() >= obj[0] - 1e-12


def test_warm_start_matches_cold():
    rng = np.random.default_rng(5)
    m = 50
    D = np.c_[np.ones(m), rng.normal(size=(m, 2))]
    y = D @ np.array([1.0, 2.0, -1.0]) + rng.normal(size=m)
    w = rng.uniform(0.2, 1.0, size=m)
    cold, obj_c, _ = solve_weighted_qr(D[None], y[None], w[None], 0.4)
    warm, obj_w, conv = solve_weighted_qr(D[None], y[None], w[None], 0.4, start=(cold + 0.05))
    assert conv[0]
    assert obj_w[0] == pytest.approx(obj_c[0], rel=1e-12)


def test_solver_batch_independent():
    rng = np.random.default_rng(2)
    D = np.c_[np.ones((3, 20, 1)), rng.normal(size=(3, 20, 1))]
    y = rng.normal(size=(3, 20))
    w = np.ones((3, 20))
    coef, obj, _ = solve_weighted_qr(D, y, w, 0.5)
    for k in range(3):
        c1, o1, _ = solve_weighted_qr(D[k:k + 1], y[k:k + 1], w[k:k + 1], 0.5)
        assert o1[0] == pytest.approx(obj[k], rel=1e-12)


def test_local_constant_brute_force_small():
    rng = np.random.default_rng(3)
    for _ in range(50):
        m = int(rng.integers(1, 8))
        y = rng.normal(size=m)
        w = rng.uniform(0.05, 1.0, size=m)
        tau = float(rng.uniform(0.05, 0.95))
        _, obj, _ = solve_weighted_qr(np.ones((1, m, 1)), y[None], w[None], tau)
        brute = min((w * check_loss(y - c, tau)).sum() for c in y)
        assert abs(obj[0] - brute) <= 1e-9


# local fits

def test_exact_linear_recovery():
    rng = np.random.default_rng(9)
    X = rng.uniform(-1, 1, size=(30, 3))
    beta = np.array([0.5, -2.0, 1.0])
    Y = 1.5 + X @ beta
    A = build_multi_index_set(3, 1)
    fit = fit_local_quantile(X, Y, np.zeros(3), 0.3, 1.0, A=A)
    np.testing.assert_allclose(extract_gradient(fit, A), beta, atol=1e-8)
    assert fit.coeffs[0] == pytest.approx(1.5, abs=1e-8)


def test_local_quadratic_recovers_gradient():
    rng = np.random.default_rng(4)
    X = rng.uniform(-1, 1, size=(80, 2))
    Y = X[:, 0] ** 2 + 3 * X[:, 1]
    A = build_multi_index_set(2, 2)
    c = np.array([0.2, -0.1])
    fit = fit_local_quantile(X, Y, c, 0.5, 0.8, A=A)
    np.testing.assert_allclose(extract_gradient(fit, A), [0.4, 3.0], atol=1e-8)


def test_local_fit_errors():
    X = np.linspace(-1, 1, 10)[:, None]
    Y = X[:, 0]
    with pytest.raises(InsufficientLocalData):
        fit_local_quantile(X, Y, [5.0], 0.5, 0.1)
    with pytest.raises(ConfigError):
        fit_local_quantile(X, Y, [0.0], 1.2, 0.5)
    with pytest.raises(ConfigError):
        fit_local_quantile(X, Y, [0.0], 0.5, -1.0)
    A0 = build_multi_index_set(1, 0)
    fit = fit_local_quantile(X, Y, [0.0], 0.5, 0.5, A=A0)
    with pytest.raises(OrderTooLow):
        extract_gradient(fit, A0)


def test_local_gradients_masks_sparse_windows():
    rng = np.random.default_rng(0)
    X = np.r_[rng.normal(size=(40, 1)), [[25.0]]]
    Y = 2.0 * X[:, 0]
    A = build_multi_index_set(1, 1)
    grads, valid, conv = local_gradients(X, Y, 0.5, 1.0, A)
    assert not valid[-1]
    assert np.all(np.isnan(grads[-1])) or np.all(grads[-1] == 0)
    np.testing.assert_allclose(grads[valid][:, 0], 2.0, atol=1e-8)


def test_weights_scaling_invariance():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(25, 2))
    Y = rng.normal(size=25)
    w = rng.uniform(0.1, 1.0, size=25)
    a = fit_local_quantile(X, Y, np.zeros(2), 0.6, 1.0, weights=w)
    b = fit_local_quantile(X, Y, np.zeros(2), 0.6, 1.0, weights=7.0 * w)
    assert b.objective == pytest.approx(7.0 * a.objective, rel=1e-10)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(eps_start=0.0)


def test_no_warning_on_easy_problem():
    X = np.linspace(-1, 1, 40)[:, None]
    Y = X[:, 0] + 0.1 * np.sin(20 * X[:, 0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        fit_local_quantile(X, Y, [0.0], 0.5, 0.7)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), levels)
def test_objective_not_above_any_vertex(seed, tau):
    rng = np.random.default_rng(seed)
    m = 6
    D = np.c_[np.ones(m), rng.normal(size=m)]
    y = rng.normal(size=m)
    w = rng.uniform(0.1, 1, size=m)
    _, obj, _ = solve_weighted_qr(D[None], y[None], w[None], tau)
    best = np.inf
    for i, j in itertools.combinations(range(m), 2):
        M = D[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        c = np.linalg.solve(M, y[[i, j]])
        best = min(best, (w * check_loss(y - D @ c, tau)).sum())
    assert obj[0] <= best + 1e-9
    assert obj[0] >= best - 1e-9
