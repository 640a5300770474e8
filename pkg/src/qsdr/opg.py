"""Adaptive composite quantile outer product of gradients (qOPG).

For every level on a quantile grid the gradient of the conditional quantile
is estimated at each sample point by a local polynomial quantile fit.  The
level matrices ``mean_j g_j g_j'`` are combined with data-driven weights (the
share of eigenvalue mass in the leading ``q`` eigenvalues) and the top ``q``
eigenvectors of the combination estimate the central subspace.  Later rounds
refit the gradients with a kernel on the current ``q``-dimensional projection.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .bandwidth import (
    ROT_CONSTANT,
    BandwidthPlan,
    default_h_grid,
    level_factor,
    mean_abs_dev_cv_bandwidth,
    mean_sd,
    plan_bandwidths,
    rule_of_thumb_bandwidth,
)
from .errors import AllWeightsZero, ConfigError, InsufficientData, NoValidGradients
from .linalg import subspace_error, symmetric_eigen
from .smoother import KernelSpec, MultiIndexSet, SolverConfig, build_multi_index_set, local_gradients

log = logging.getLogger(__name__)

DEFAULT_TAU_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class GradientField:
    tau: float
    gradients: np.ndarray
    valid_mask: np.ndarray
    bandwidth: float = float("nan")
    converged: Optional[np.ndarray] = None
    coefs: Optional[np.ndarray] = None

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(self.valid_mask))


@dataclass
class LevelOpg:
    tau: float
    matrix: np.ndarray
    eigenvalues: np.ndarray
    weight: float


@dataclass
class CompositeOpg:
    matrix: np.ndarray
    tau_grid: List[float]
    delta_star: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    weights_used: List[float]


@dataclass
class CsEstimate:
    """Estimated central subspace basis plus fitting diagnostics."""

    basis: np.ndarray
    q: int
    eigenvalues: np.ndarray
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)
    weights: Dict[float, float] = field(default_factory=dict)
    bandwidths: Dict[float, float] = field(default_factory=dict)
    method: str = "qopg"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "q": self.q,
            "basis": self.basis.tolist(),
            "eigenvalues": list(map(float, self.eigenvalues)),
            "iterations": self.iterations,
            "converged": self.converged,
            "trace": list(map(float, self.trace)),
            "weights": {f"{t:g}": float(w) for t, w in self.weights.items()},
            "bandwidths": {f"{t:g}": float(h) for t, h in self.bandwidths.items()},
            **self.extra,
        }


@dataclass
class QopgConfig:
    """Settings for :func:`qopg_fit`.

    ``bandwidth`` is one of ``fixed``, ``rule_of_thumb``, ``cv_per_level`` or
    ``modified_cv`` and governs the first (full-dimensional kernel) round.
    ``refine_bandwidth`` chooses the base bandwidth of later rounds: ``rot``
    uses ``refine_constant * n^(-1/(q+4)) * mean_sd(B'X)``, ``cv`` reruns the
    mean-absolute-deviation CV on the projected predictors, ``fixed`` keeps
    the first-round bandwidths.
    """

    tau_grid: Sequence[float] = DEFAULT_TAU_GRID
    delta_star: float = 0.1
    order: int = 1
    kernel: KernelSpec = field(default_factory=KernelSpec)
    bandwidth: str = "modified_cv"
    h: Optional[float] = None
    h_grid: Optional[Sequence[float]] = None
    modified_cv_base: str = "mean_abs_dev"
    rot_constant: float = ROT_CONSTANT
    refine_bandwidth: str = "rot"
    refine_constant: float = 4.0
    refine_shrink: float = 1.0
    max_rounds: int = 10
    tol: float = 1e-3
    adaptive_weights: bool = True
    threshold_factor: float = 0.01
    min_window_factor: float = 3.0
    max_masked_fraction: float = 0.2
    inflate_factor: float = 1.25
    max_inflations: int = 3
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        taus = [float(t) for t in self.tau_grid]
        if not taus:
            raise ConfigError("tau grid is empty")
        lo, hi = self.delta_star, 1.0 - self.delta_star
        if any(t < lo - 1e-12 or t > hi + 1e-12 for t in taus):
            raise ConfigError(f"tau grid must lie inside [{lo}, {hi}]")
        if self.order < 1:
            raise ConfigError("gradient estimation needs polynomial order >= 1")
        if self.refine_bandwidth not in ("rot", "cv", "fixed"):
            raise ConfigError(f"unknown refine_bandwidth {self.refine_bandwidth!r}")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be at least 1")
        self.tau_grid = tuple(taus)


def level_opg(field_: GradientField, q: int, weight_threshold: float = 0.0) -> LevelOpg:
    G = np.asarray(field_.gradients, dtype=float)
    mask = np.asarray(field_.valid_mask, dtype=bool)
    p = G.shape[1]
    if not 1 <= q <= p:
        raise ConfigError(f"q must lie in [1, {p}]")
    if not mask.any():
        raise NoValidGradients(f"no valid gradient estimates at tau={field_.tau}")
    Gv = G[mask]
    M = Gv.T @ Gv / Gv.shape[0]
    vals, _ = symmetric_eigen(M)
    vals = np.maximum(vals, 0.0)
    total = vals.sum()
    weight = float(vals[:q].sum() / total) if total > 0 else 0.0
    if vals[0] < weight_threshold:
        weight = 0.0
    return LevelOpg(tau=float(field_.tau), matrix=M, eigenvalues=vals, weight=min(max(weight, 0.0), 1.0))


def composite_opg(levels: Sequence[LevelOpg], use_adaptive_weights: bool = True,
                  delta_star: Optional[float] = None) -> CompositeOpg:
    """Weighted average of level matrices, normalised by the total weight."""
    if not levels:
        raise ConfigError("need at least one level")
    taus = [lv.tau for lv in levels]
    if delta_star is None:
        delta_star = min(min(taus), 1.0 - max(taus))
    elif any(t < delta_star - 1e-12 or t > 1 - delta_star + 1e-12 for t in taus):
        raise ConfigError("levels fall outside [delta_star, 1 - delta_star]")
    w = np.array([lv.weight if use_adaptive_weights else 1.0 for lv in levels], dtype=float)
    if not np.any(w > 0):
        raise AllWeightsZero("every level received weight zero")
    M = sum(wi * lv.matrix for wi, lv in zip(w, levels)) / w.sum()
    M = 0.5 * (M + M.T)
    vals, vecs = symmetric_eigen(M)
    return CompositeOpg(
        matrix=M,
        tau_grid=taus,
        delta_star=float(delta_star),
        eigenvalues=vals,
        eigenvectors=vecs,
        weights_used=list(map(float, w)),
    )


def gradient_field(X, Y, tau: float, h: float, A: MultiIndexSet, directions=None,
                   h_design: Optional[float] = None, cfg: QopgConfig = QopgConfig(),
                   start: Optional[np.ndarray] = None) -> GradientField:
    """Gradient estimates at every sample for one level, inflating ``h`` if too many windows fail."""
    h_design = h if h_design is None else h_design
    for attempt in range(cfg.max_inflations + 1):
        grads, valid, conv, coefs = local_gradients(
            X, Y, tau, h, A, directions=directions, h_design=h_design,
            spec=cfg.kernel, solver_cfg=cfg.solver,
            min_points=int(np.ceil(cfg.min_window_factor * A.size)),
            start=start,
            return_coefs=True,
        )
        masked = 1.0 - valid.mean()
        if masked <= cfg.max_masked_fraction or attempt == cfg.max_inflations:
            break
        log.debug("tau=%g: %.0f%% of windows too small at h=%.4g, inflating", tau, 100 * masked, h)
        h *= cfg.inflate_factor
        if directions is None:
            h_design = h
    if not valid.any():
        raise NoValidGradients(f"every local fit failed at tau={tau} (h={h:.4g})")
    return GradientField(tau=float(tau), gradients=grads, valid_mask=valid, bandwidth=float(h),
                         converged=conv, coefs=coefs)


def _weighted_composite(fields: Sequence[GradientField], q: int, cfg: QopgConfig):
    raw = [level_opg(f, q, 0.0) for f in fields]
    threshold = cfg.threshold_factor * float(np.median([lv.eigenvalues[0] for lv in raw]))
    levels = [level_opg(f, q, threshold) for f in fields]
    comp = composite_opg(levels, cfg.adaptive_weights, cfg.delta_star)
    return comp, levels


def refined_bandwidths(X, Y, B, cfg: QopgConfig, plan: BandwidthPlan,
                       round_index: int = 1):
    """Per-level kernel bandwidths for a round whose kernel lives on ``B'X``.

    With ``cfg.refine_shrink < 1`` the base bandwidth starts from the
    first-round base and shrinks geometrically per round until it reaches the
    target, which damps oscillation of early rounds.  Returns the per-level
    map and whether the target has been reached.
    """
    n = X.shape[0]
    q = B.shape[1]
    Z = X @ B
    if cfg.refine_bandwidth == "fixed":
        return dict(plan.per_level), True
    if cfg.refine_bandwidth == "rot":
        base = rule_of_thumb_bandwidth(n, q, cfg.refine_constant * mean_sd(Z))
    else:
        grid = default_h_grid(Z, constant=cfg.refine_constant)
        base = mean_abs_dev_cv_bandwidth(Z, Y, grid, cfg.kernel)
    at_target = True
    if cfg.refine_shrink < 1.0 and plan.h_base is not None:
        start = plan.h_base * cfg.refine_shrink ** round_index
        if start > base:
            base, at_target = start, False
    taus = list(cfg.tau_grid)
    if plan.rule == "modified_cv":
        factors = np.atleast_1d(level_factor(np.array(taus)))
        return {t: float(base * f) for t, f in zip(taus, factors)}, at_target
    return {t: float(base) for t in taus}, at_target


def _validate(X, Y, q):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim != 2:
        raise ConfigError("X must be a 2-d array")
    if X.shape[0] != Y.shape[0]:
        raise ConfigError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    p = X.shape[1]
    if not 1 <= q <= p:
        raise ConfigError(f"q must lie in [1, {p}], got {q}")
    return X, Y


def make_plan(X, Y, cfg: QopgConfig, A: Optional[MultiIndexSet] = None) -> BandwidthPlan:
    return plan_bandwidths(
        X, Y, cfg.tau_grid, rule=cfg.bandwidth, h=cfg.h, h_grid=cfg.h_grid, A=A,
        spec=cfg.kernel, solver_cfg=cfg.solver, rot_constant=cfg.rot_constant,
        base=cfg.modified_cv_base,
    )


def stage_one(X, Y, q: int, cfg: QopgConfig, plan: BandwidthPlan, A: MultiIndexSet):
    fields = [gradient_field(X, Y, t, plan[t], A, cfg=cfg) for t in cfg.tau_grid]
    return fields, _weighted_composite(fields, q, cfg)


def refine_step(X, Y, B, cfg: QopgConfig, plan: BandwidthPlan, A: Optional[MultiIndexSet] = None,
                round_index: int = 1, start_fields: Optional[Sequence[GradientField]] = None):
    """One refinement round from directions ``B``.

    ``start_fields`` are the previous round's fields, whose local coefficients
    warm-start the fits.  Returns ``(B_new, composite, levels, bandwidths,
    at_target, fields)``.
    """
    X, Y = _validate(X, Y, B.shape[1])
    q = B.shape[1]
    if A is None:
        A = build_multi_index_set(X.shape[1], cfg.order)
    hs, at_target = refined_bandwidths(X, Y, B, cfg, plan, round_index)
    starts = [None] * len(cfg.tau_grid) if start_fields is None else [f.coefs for f in start_fields]
    fields = [gradient_field(X, Y, t, hs[t], A, directions=B, h_design=plan[t], cfg=cfg, start=c0)
              for t, c0 in zip(cfg.tau_grid, starts)]
    comp, levels = _weighted_composite(fields, q, cfg)
    bandwidths = {f.tau: f.bandwidth for f in fields}
    return comp.eigenvectors[:, :q], comp, levels, bandwidths, at_target, fields


def qopg_fit(X, Y, q: int, cfg: Optional[QopgConfig] = None,
             plan: Optional[BandwidthPlan] = None) -> CsEstimate:
    """Estimate a ``q``-dimensional central subspace by iterated qOPG."""
    cfg = QopgConfig() if cfg is None else cfg
    X, Y = _validate(X, Y, q)
    n, p = X.shape
    A = build_multi_index_set(p, cfg.order)
    if n <= A.size:
        raise InsufficientData(f"n={n} must exceed the {A.size} local parameters")
    if plan is None:
        plan = make_plan(X, Y, cfg, A)

    fields, (comp, levels) = stage_one(X, Y, q, cfg, plan, A)
    B = comp.eigenvectors[:, :q]
    bandwidths = dict(plan.per_level)
    trace: List[float] = []
    converged = cfg.max_rounds == 1 or q == p
    rounds = 1
    while rounds < cfg.max_rounds and q < p:
        B_new, comp, levels, bandwidths, at_target, fields = refine_step(
            X, Y, B, cfg, plan, A, rounds, start_fields=fields)
        change = subspace_error(B_new, B)
        trace.append(change)
        B = B_new
        rounds += 1
        if change < cfg.tol and at_target:
            converged = True
            break
    return CsEstimate(
        basis=B.copy(),
        q=q,
        eigenvalues=comp.eigenvalues,
        iterations=rounds,
        converged=converged,
        trace=trace,
        weights={lv.tau: lv.weight for lv in levels},
        bandwidths=bandwidths,
        method="qopg",
        extra={"bandwidth_plan": plan.to_dict()},
    )
