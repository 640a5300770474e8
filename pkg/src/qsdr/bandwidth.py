"""Bandwidth selection for the local quantile fits.

Four rules are supported:

``fixed``
    one user-supplied bandwidth for every level.
``rule_of_thumb``
    ``c * mean_sd(X) * n^(-1/(d+4))``.
``cv_per_level``
    leave-one-out check-loss cross-validation at each level separately.
``modified_cv``
    a single base bandwidth rescaled per level by
    ``{tau (1 - tau) / phi(Phi^-1(tau))}^(1/5)``.  The base is, by default, the
    least-squares CV bandwidth of a local linear regression of ``|Y - mean(Y)|``
    on ``X``; it can also be the average of the per-level CV bandwidths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigError, EmptyGrid
from .smoother import (
    KernelSpec,
    MultiIndexSet,
    SolverConfig,
    build_multi_index_set,
    check_loss,
    design_matrix,
    solve_weighted_qr,
)

RULES = ("fixed", "rule_of_thumb", "cv_per_level", "modified_cv")
ROT_CONSTANT = 2.34
_ALIASES = {
    "rot": "rule_of_thumb",
    "rule-of-thumb": "rule_of_thumb",
    "cv": "cv_per_level",
    "cv-per-level": "cv_per_level",
    "modified-cv": "modified_cv",
}


def parse_bandwidth_rule(text: str):
    """Map ``rot``, ``cv``, ``modified-cv`` or ``fixed:<h>`` to ``(rule, h)``.

    >>> parse_bandwidth_rule("fixed:0.8")
    ('fixed', 0.8)
    """
    text = str(text).strip().lower()
    if text.startswith("fixed"):
        _, _, val = text.partition(":")
        if not val and text == "fixed":
            return "fixed", None
        try:
            h = float(val)
        except ValueError:
            raise ConfigError(f"fixed bandwidth needs a value, e.g. fixed:0.8 (got {text!r})") from None
        if not h > 0:
            raise ConfigError("fixed bandwidth must be positive")
        return "fixed", h
    rule = _ALIASES.get(text, text)
    if rule not in RULES:
        raise ConfigError(f"unknown bandwidth rule {text!r}")
    return rule, None

# Acklam's rational approximation to the standard normal quantile
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _lower_half_inv(p):
    """Quantile for 0 < p <= 0.5, refined by one Halley step."""
    x = np.empty_like(p)
    tail = p < _P_LOW
    if tail.any():
        q = np.sqrt(-2.0 * np.log(p[tail]))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        x[tail] = num / den
    mid = ~tail
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den
    e = ndtr(x) - p
    u = e * math.sqrt(2.0 * math.pi) * np.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


def normal_inv_cdf(tau):
    """Standard normal quantile function, vectorised.

    Exactly antisymmetric: values above 0.5 are reflected from ``1 - tau``.
    """
    t = np.asarray(tau, dtype=float)
    if np.any((t <= 0) | (t >= 1)):
        raise ConfigError("normal_inv_cdf needs 0 < tau < 1")
    flat = np.atleast_1d(t).ravel()
    out = np.empty_like(flat)
    upper = flat > 0.5
    half = flat == 0.5
    low = ~(upper | half)
    if low.any():
        out[low] = _lower_half_inv(flat[low])
    if upper.any():
        out[upper] = -_lower_half_inv(1.0 - flat[upper])
    out[half] = 0.0
    if t.ndim == 0:
        return float(out[0])
    return out.reshape(t.shape)


def normal_pdf(x):
    return np.exp(-0.5 * np.asarray(x, dtype=float) ** 2) / math.sqrt(2.0 * math.pi)


def level_factor(tau) -> np.ndarray:
    """``{tau (1 - tau) / phi(Phi^-1(tau))}^(1/5)``."""
    t = np.asarray(tau, dtype=float)
    return (t * (1.0 - t) / normal_pdf(normal_inv_cdf(t))) ** 0.2


def modified_cv_bandwidths(h_base: float, tau_grid: Sequence[float]) -> Dict[float, float]:
    if not h_base > 0:
        raise ConfigError("h_base must be positive")
    taus = [float(t) for t in tau_grid]
    factors = np.atleast_1d(level_factor(np.array(taus)))
    return {t: float(h_base * f) for t, f in zip(taus, factors)}


def rule_of_thumb_bandwidth(n: int, d: int, scale: float = 1.0) -> float:
    """``scale * n^(-1/(d+4))``; ``scale`` carries the constant and the data spread."""
    if n < 2 or d < 1:
        raise ConfigError("rule of thumb needs n >= 2 and d >= 1")
    return float(scale * n ** (-1.0 / (d + 4)))


def mean_sd(Z) -> float:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    return float(np.mean(np.std(Z, axis=0, ddof=1)))


def default_h_grid(Z, size: int = 10, lo: float = 0.3, hi: float = 3.0,
                   constant: float = ROT_CONSTANT) -> np.ndarray:
    """Log-spaced grid from ``lo`` to ``hi`` times the rule-of-thumb bandwidth."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, d = Z.shape
    h0 = rule_of_thumb_bandwidth(n, d, constant * mean_sd(Z))
    return np.geomspace(lo * h0, hi * h0, size)


def _window_weights(Z, h, spec):
    dist = np.max(np.abs(Z[:, None, :] - Z[None, :, :]), axis=2)
    W = np.asarray(spec(dist / h)) / h
    np.fill_diagonal(W, 0.0)
    return W


def loo_local_linear_mean(Z, V, h, spec: KernelSpec = KernelSpec()):
    """Leave-one-out local linear least-squares predictions of ``V`` at each ``Z_j``.

    Points whose window cannot support the fit get the leave-one-out sample mean.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    V = np.asarray(V, dtype=float)
    n, d = Z.shape
    W = _window_weights(Z, h, spec)
    fallback = (V.sum() - V) / (n - 1)
    pred = fallback.copy()
    feasible = (W > 0).sum(axis=1) >= d + 1
    idx = np.nonzero(feasible)[0]
    if idx.size:
        D = np.concatenate([np.ones((idx.size, n, 1)), Z[None, :, :] - Z[idx, None, :]], axis=2)
        Wd = W[idx][..., None] * D
        M = np.matmul(Wd.transpose(0, 2, 1), D)
        rhs = np.matmul(Wd.transpose(0, 2, 1), V[:, None])[..., 0]
        for row, j in enumerate(idx):
            try:
                # ill-conditioned windows fall back to the mean
                if np.linalg.cond(M[row]) > 1e12:
                    continue
                pred[j] = np.linalg.solve(M[row], rhs[row])[0]
            except np.linalg.LinAlgError:
                continue
    return pred


def mean_abs_dev_cv_bandwidth(X, Y, h_grid, spec: KernelSpec = KernelSpec(),
                              return_curve: bool = False):
    """CV bandwidth of the local linear mean regression of ``|Y - mean(Y)|`` on ``X``."""
    grid = np.atleast_1d(np.asarray(h_grid, dtype=float))
    if grid.size == 0:
        raise EmptyGrid("bandwidth grid is empty")
    Y = np.asarray(Y, dtype=float)
    V = np.abs(Y - Y.mean())
    curve = np.array([np.mean((V - loo_local_linear_mean(X, V, h, spec)) ** 2) for h in grid])
    best = float(grid[int(np.argmin(curve))])
    return (best, curve) if return_curve else best


def loo_local_quantile(Z, Y, tau, h, A: Optional[MultiIndexSet] = None,
                       spec: KernelSpec = KernelSpec(), solver_cfg: SolverConfig = SolverConfig()):
    """Leave-one-out local polynomial tau-quantile predictions at each ``Z_j``.

    Returns ``(pred, feasible)``; infeasible points get the global sample quantile.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    Y = np.asarray(Y, dtype=float)
    n, d = Z.shape
    if A is None:
        A = build_multi_index_set(d, 1)
    W = _window_weights(Z, h, spec)
    counts = (W > 0).sum(axis=1)
    feasible = counts >= A.size
    pred = np.full(n, float(np.quantile(Y, tau)))
    idx = np.nonzero(feasible)[0]
    if idx.size:
        m = int(counts[idx].max())
        order = np.argsort(W[idx] <= 0, axis=1, kind="stable")[:, :m]
        wblk = W[idx[:, None], order]
        D = design_matrix(Z[order] - Z[idx][:, None, :], h, A)
        c, _, _ = solve_weighted_qr(D, Y[order], wblk, tau, solver_cfg)
        pred[idx] = c[:, 0]
    return pred, feasible


def cv_bandwidth_quantile(X, Y, tau, h_grid, A: Optional[MultiIndexSet] = None,
                          spec: KernelSpec = KernelSpec(), solver_cfg: SolverConfig = SolverConfig(),
                          return_curve: bool = False):
    """Argmin over ``h_grid`` of the leave-one-out mean check loss at level ``tau``."""
    grid = np.atleast_1d(np.asarray(h_grid, dtype=float))
    if grid.size == 0:
        raise EmptyGrid("bandwidth grid is empty")
    if grid.size == 1 and not return_curve:
        return float(grid[0])
    Y = np.asarray(Y, dtype=float)
    curve = []
    for h in grid:
        pred, _ = loo_local_quantile(X, Y, tau, h, A, spec, solver_cfg)
        curve.append(float(np.mean(check_loss(Y - pred, tau))))
    curve = np.array(curve)
    best = float(grid[int(np.argmin(curve))])
    return (best, curve) if return_curve else best


@dataclass
class BandwidthPlan:
    rule: str
    per_level: Dict[float, float]
    h_base: Optional[float] = None
    grid: Optional[np.ndarray] = None
    cv_curve: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigError(f"unknown bandwidth rule {self.rule!r}")
        if any(not h > 0 for h in self.per_level.values()):
            raise ConfigError("all bandwidths must be positive")

    def __getitem__(self, tau: float) -> float:
        return self.per_level[float(tau)]

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "h_base": self.h_base,
            "per_level": {f"{t:g}": h for t, h in self.per_level.items()},
            "grid": None if self.grid is None else list(map(float, self.grid)),
            "cv_curve": None if self.cv_curve is None else list(map(float, self.cv_curve)),
        }


def plan_bandwidths(
    X,
    Y,
    tau_grid: Sequence[float],
    rule: str = "modified_cv",
    h: Optional[float] = None,
    h_grid=None,
    A: Optional[MultiIndexSet] = None,
    spec: KernelSpec = KernelSpec(),
    solver_cfg: SolverConfig = SolverConfig(),
    rot_constant: float = ROT_CONSTANT,
    base: str = "mean_abs_dev",
) -> BandwidthPlan:
    """Resolve a bandwidth rule into per-level bandwidths for predictors ``X``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    taus = [float(t) for t in tau_grid]
    if rule == "fixed":
        if h is None:
            raise ConfigError("fixed bandwidth rule needs h")
        return BandwidthPlan("fixed", {t: float(h) for t in taus}, h_base=float(h))
    if rule == "rule_of_thumb":
        h0 = rule_of_thumb_bandwidth(n, d, rot_constant * mean_sd(X))
        return BandwidthPlan("rule_of_thumb", {t: h0 for t in taus}, h_base=h0)
    grid = default_h_grid(X, constant=rot_constant) if h_grid is None else np.asarray(h_grid, float)
    if rule == "cv_per_level" or (rule == "modified_cv" and base == "quantile_cv"):
        per = {}
        curves = []
        for t in taus:
            best, curve = cv_bandwidth_quantile(X, Y, t, grid, A, spec, solver_cfg, return_curve=True)
            per[t] = best
            curves.append(curve)
        if rule == "cv_per_level":
            return BandwidthPlan("cv_per_level", per, grid=grid, cv_curve=np.array(curves))
        h_base = float(np.mean(list(per.values())))
        return BandwidthPlan("modified_cv", modified_cv_bandwidths(h_base, taus), h_base=h_base,
                             grid=grid, cv_curve=np.array(curves), extra={"base": base})
    if rule == "modified_cv":
        if base != "mean_abs_dev":
            raise ConfigError(f"unknown modified_cv base {base!r}")
        h_base, curve = mean_abs_dev_cv_bandwidth(X, Y, grid, spec, return_curve=True)
        return BandwidthPlan("modified_cv", modified_cv_bandwidths(h_base, taus), h_base=h_base,
                             grid=grid, cv_curve=curve, extra={"base": base})
    raise ConfigError(f"unknown bandwidth rule {rule!r}")
