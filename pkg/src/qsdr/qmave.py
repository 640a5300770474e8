"""Composite quantile minimum average variance estimation (qMAVE).

The criterion is

    sum_t sum_j sum_i K_h(d_ij) rho_t(Y_i - a_tj - b_tj' B' (X_i - X_j))

over the level grid, local planes ``(a_tj, b_tj)`` and directions ``B``.  It is
minimised by alternating exact local quantile fits for the planes with a
reweighted least-squares update of ``B``; an update of ``B`` is kept only when
it lowers the criterion, so the recorded objective never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from . import _mavekernel
from .bandwidth import ROT_CONSTANT, level_factor, mean_sd, rule_of_thumb_bandwidth
from .errors import ConfigError, InsufficientData, InsufficientLocalData
from .opg import DEFAULT_TAU_GRID, CsEstimate, QopgConfig, _validate, make_plan, qopg_fit, stage_one
from .smoother import KernelSpec, SolverConfig, build_multi_index_set, solve_weighted_qr

log = logging.getLogger(__name__)


@dataclass
class QmaveConfig:
    """Settings for :func:`qmave_fit`.

    Bandwidth settings are shared with the first qOPG round, which also
    supplies the starting directions.  ``use_projected_kernel`` switches the
    kernel distance from ``|X_i - X_j|`` to ``|B'(X_i - X_j)|``, in which case
    the bandwidth follows ``refine_constant * n^(-1/(q+4)) * mean_sd(B'X)``.
    """

    tau_grid: Sequence[float] = DEFAULT_TAU_GRID
    delta_star: float = 0.1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    bandwidth: str = "modified_cv"
    h: Optional[float] = None
    h_grid: Optional[Sequence[float]] = None
    modified_cv_base: str = "mean_abs_dev"
    rot_constant: float = ROT_CONSTANT
    use_projected_kernel: bool = False
    refine_constant: float = 4.0
    refine_shrink: float = 1.0
    init: str = "qopg"
    max_rounds: int = 50
    tol: float = 1e-6
    direction_steps: int = 3
    eps_start: float = 1e-2
    eps_min: float = 1e-8
    ridge: float = 1e-8
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        self.tau_grid = tuple(float(t) for t in self.tau_grid)
        if not self.tau_grid:
            raise ConfigError("tau grid is empty")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be at least 1")
        if self.direction_steps < 1:
            raise ConfigError("direction_steps must be at least 1")
        if self.init not in ("stage_one", "qopg"):
            raise ConfigError(f"unknown init {self.init!r}")

    def opg_config(self) -> QopgConfig:
        return QopgConfig(
            tau_grid=self.tau_grid, delta_star=self.delta_star, kernel=self.kernel,
            bandwidth=self.bandwidth, h=self.h, h_grid=self.h_grid,
            modified_cv_base=self.modified_cv_base, rot_constant=self.rot_constant,
            adaptive_weights=False, max_rounds=1, solver=self.solver,
        )


@dataclass
class LocalPlanes:
    """Local intercepts ``a[t, j]`` and slopes ``b[t, j]`` with their kernel weights ``W[t, j, i]``."""

    a: np.ndarray
    b: np.ndarray
    weights: np.ndarray
    active: np.ndarray
    tau_grid: tuple


@dataclass
class QmaveState:
    B: np.ndarray
    planes: LocalPlanes
    objective: float


def _kernel_rows(X, B, centers, h, spec, use_projected_kernel):
    Z = X @ B if use_projected_kernel else X
    dist = np.max(np.abs(Z[centers][:, None, :] - Z[None, :, :]), axis=2)
    return np.asarray(spec(dist / h)) / h


def _fit_planes(X, Y, B, tau, W, solver_cfg, start=None):
    """Exact local fits for every row of ``W``; returns ``(a, b, active)``."""
    n_c = W.shape[0]
    q = B.shape[1]
    counts = (W > 0).sum(axis=1)
    active = counts >= q + 1
    a = np.zeros(n_c)
    b = np.zeros((n_c, q))
    if not active.any():
        return a, b, active
    vi = np.nonzero(active)[0]
    m = int(counts[vi].max())
    order = np.argsort(W[vi] <= 0, axis=1, kind="stable")[:, :m]
    Z = X @ B
    disp = Z[order] - Z[vi][:, None, :]
    D = np.concatenate([np.ones(disp.shape[:2] + (1,)), disp], axis=2)
    c, _, _ = solve_weighted_qr(D, Y[order], W[vi[:, None], order], np.full(len(vi), tau), solver_cfg,
                                start=None if start is None else start[vi])
    a[vi] = c[:, 0]
    b[vi] = c[:, 1:]
    return a, b, active


def qmave_local_step(X, Y, B, tau: float, h: float, center_index: int,
                     spec: KernelSpec = KernelSpec(), use_projected_kernel: bool = False,
                     solver_cfg: SolverConfig = SolverConfig()):
    """Local plane ``(a_j, b_j)`` at sample ``center_index`` for directions ``B``.

    Raises
    ------
    InsufficientLocalData
        When fewer than ``q + 1`` samples receive positive kernel weight.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    B = np.asarray(B, dtype=float).reshape(X.shape[1], -1)
    W = _kernel_rows(X, B, np.array([center_index]), h, spec, use_projected_kernel)
    a, b, active = _fit_planes(X, Y, B, tau, W, solver_cfg)
    if not active[0]:
        raise InsufficientLocalData(
            f"window at sample {center_index} holds {(W > 0).sum()} points, need {B.shape[1] + 1}"
        )
    return float(a[0]), b[0].copy()


def local_planes(X, Y, B, tau_grid, bandwidths, spec: KernelSpec = KernelSpec(),
                 use_projected_kernel: bool = False,
                 solver_cfg: SolverConfig = SolverConfig(),
                 start: Optional[LocalPlanes] = None) -> LocalPlanes:
    """Planes at every sample and level; ``bandwidths`` maps each level to its ``h``.

    ``start`` supplies previous planes used to warm-start the local fits.
    """
    n = X.shape[0]
    q = B.shape[1]
    T = len(tau_grid)
    a = np.zeros((T, n))
    b = np.zeros((T, n, q))
    W = np.zeros((T, n, n))
    active = np.zeros((T, n), dtype=bool)
    centers = np.arange(n)
    for t, tau in enumerate(tau_grid):
        W[t] = _kernel_rows(X, B, centers, bandwidths[tau], spec, use_projected_kernel)
        c0 = None
        if start is not None:
            c0 = np.concatenate([start.a[t][:, None], start.b[t]], axis=1)
            c0[~start.active[t]] = np.nan
        a[t], b[t], active[t] = _fit_planes(X, Y, B, tau, W[t], solver_cfg, c0)
        W[t][~active[t]] = 0.0
    return LocalPlanes(a=a, b=b, weights=W, active=active, tau_grid=tuple(tau_grid))


def qmave_objective(X, Y, B, planes: LocalPlanes) -> float:
    """Value of the composite criterion (a raw sum over levels, centers and samples)."""
    return float(_mavekernel.mave_objective(
        np.ascontiguousarray(X, dtype=float), np.asarray(Y, dtype=float), planes.weights,
        planes.a, planes.b, np.ascontiguousarray(B, dtype=float), np.asarray(planes.tau_grid),
    ))


def _normalise(B, planes: LocalPlanes):
    """QR-orthonormalise ``B`` and rotate the slopes so the fitted values are unchanged."""
    Q, R = np.linalg.qr(B)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    Q, R = Q * d, R * d[:, None]
    b = np.einsum("kl,tjl->tjk", R, planes.b)
    return Q, replace(planes, b=b)


def qmave_direction_step(X, Y, planes: LocalPlanes, B_start=None, eps: Optional[float] = None,
                         steps: int = 50, eps_min: float = 1e-10, ridge: float = 1e-8):
    """Update the directions with the planes held fixed.

    Runs reweighted least-squares steps on the smoothed criterion while
    halving the smoothing from ``eps`` down to ``eps_min``.  Returns the
    orthonormalised directions and the planes rotated to match them.
    """
    X = np.ascontiguousarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    q = planes.b.shape[2]
    p = X.shape[1]
    if B_start is None:
        B_start = np.eye(p)[:, :q]
    if eps is None:
        eps = 1e-2 * _spread(Y)
    B = np.ascontiguousarray(B_start, dtype=float)
    taus = np.asarray(planes.tau_grid)
    used = 0
    while used < steps:
        k = min(5, steps - used)
        B = _mavekernel.mave_direction_irls(X, Y, planes.weights, planes.a, planes.b, B, taus,
                                            eps, k, ridge)
        used += k
        if eps <= eps_min:
            break
        eps = max(0.5 * eps, eps_min)
    return _normalise(B, planes)


def _spread(Y) -> float:
    q75, q25 = np.percentile(Y, [75, 25])
    iqr = float(q75 - q25)
    return iqr if iqr > 0 else max(float(np.ptp(Y)), 1.0)


def _bandwidths(X, B, cfg: QmaveConfig, plan, round_index: int = 0):
    if not cfg.use_projected_kernel:
        return dict(plan.per_level)
    n, q = X.shape[0], B.shape[1]
    base = rule_of_thumb_bandwidth(n, q, cfg.refine_constant * mean_sd(X @ B))
    if cfg.refine_shrink < 1.0 and plan.h_base is not None:
        base = max(base, plan.h_base * cfg.refine_shrink ** round_index)
    taus = list(cfg.tau_grid)
    if plan.rule == "modified_cv":
        factors = np.atleast_1d(level_factor(np.array(taus)))
        return {t: float(base * f) for t, f in zip(taus, factors)}
    return {t: float(base) for t in taus}


def qmave_fit(X, Y, q: int, cfg: Optional[QmaveConfig] = None, B_init=None, plan=None) -> CsEstimate:
    """Estimate a ``q``-dimensional central subspace by composite quantile MAVE.

    Starts from the refined qOPG directions (the unweighted first-round
    directions with ``init="stage_one"``) unless ``B_init`` is given, then
    alternates plane and direction updates until the relative
    change of the criterion falls below ``cfg.tol`` or ``cfg.max_rounds``
    rounds have run.  ``trace`` holds the criterion after every round.
    """
    cfg = QmaveConfig() if cfg is None else cfg
    X, Y = _validate(X, Y, q)
    n, p = X.shape
    if n <= p + 1:
        raise InsufficientData(f"n={n} must exceed p+1={p + 1}")
    ocfg = cfg.opg_config()
    if plan is None:
        plan = make_plan(X, Y, ocfg, build_multi_index_set(p, 1))
    if B_init is None and cfg.init == "qopg":
        B = qopg_fit(X, Y, q, QopgConfig(
            tau_grid=cfg.tau_grid, delta_star=cfg.delta_star, kernel=cfg.kernel,
            bandwidth=cfg.bandwidth, h=cfg.h, h_grid=cfg.h_grid,
            modified_cv_base=cfg.modified_cv_base, rot_constant=cfg.rot_constant,
            solver=cfg.solver,
        ), plan=plan).basis
    elif B_init is None:
        _, (comp, _) = stage_one(X, Y, q, ocfg, plan, build_multi_index_set(p, 1))
        B = comp.eigenvectors[:, :q].copy()
    else:
        B = np.linalg.qr(np.asarray(B_init, dtype=float).reshape(p, q))[0]

    eps = cfg.eps_start * _spread(Y)
    hs = _bandwidths(X, B, cfg, plan)
    planes = local_planes(X, Y, B, cfg.tau_grid, hs, cfg.kernel, cfg.use_projected_kernel, cfg.solver)
    obj = qmave_objective(X, Y, B, planes)
    trace: List[float] = [obj]
    converged = False
    rounds = 0
    while rounds < cfg.max_rounds:
        rounds += 1
        B_try, planes_try = qmave_direction_step(X, Y, planes, B, eps=eps, steps=cfg.direction_steps,
                                                 eps_min=eps, ridge=cfg.ridge)
        obj_try = qmave_objective(X, Y, B_try, planes_try)
        accepted = bool(np.isfinite(obj_try) and obj_try <= obj)
        if accepted:
            B, planes, obj = B_try, planes_try, obj_try
        at_floor = eps <= cfg.eps_min
        eps = max(0.5 * eps, cfg.eps_min)
        if cfg.use_projected_kernel:
            # kernel weights move with B, so the criterion itself changes between rounds
            hs = _bandwidths(X, B, cfg, plan, rounds)
        new_planes = local_planes(X, Y, B, cfg.tau_grid, hs, cfg.kernel, cfg.use_projected_kernel,
                                  cfg.solver, start=planes)
        new_obj = qmave_objective(X, Y, B, new_planes)
        if new_obj <= obj or cfg.use_projected_kernel:
            planes, obj_new = new_planes, new_obj
        else:
            obj_new = obj
        change = abs(trace[-1] - obj_new) / max(abs(trace[-1]), 1e-300)
        obj = obj_new
        trace.append(obj)
        if change < cfg.tol and (accepted or at_floor):
            converged = True
            break
    return CsEstimate(
        basis=B.copy(),
        q=q,
        eigenvalues=np.array([]),
        iterations=rounds,
        converged=converged,
        trace=trace,
        bandwidths=dict(hs),
        method="qmave",
        extra={"objective": obj, "bandwidth_plan": plan.to_dict()},
    )
