"""Local polynomial quantile smoothing.

Builds Taylor designs over a multi-index family, evaluates sup-norm kernel
weights and minimises the kernel-weighted check loss

    sum_i rho_tau(Y_i - c' x_i(h, A)) K_h(|X_i - x|),    rho_tau(s) = |s| + (2 tau - 1) s

with a majorize-minimize (iteratively reweighted least squares) scheme on an
epsilon-smoothed absolute value, followed by an exact vertex polish.  The
batched entry point :func:`solve_weighted_qr` solves many independent problems
at once and is what the estimators use internally.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _qrkernel
from .errors import ConfigError, InsufficientLocalData, OrderTooLow, SolverDiverged

__all__ = [
    "MultiIndexSet",
    "KernelSpec",
    "SolverConfig",
    "LocalFit",
    "build_multi_index_set",
    "design_vector",
    "design_matrix",
    "kernel_weight",
    "check_loss",
    "solve_weighted_qr",
    "fit_local_quantile",
    "extract_gradient",
    "sup_distance",
]


@dataclass(frozen=True)
class MultiIndexSet:
    """The family {u : [u] <= k} of Taylor multi-indices in ``p`` variables."""

    p: int
    k: int
    indices: tuple

    @property
    def size(self) -> int:
        return len(self.indices)

    @property
    def exponents(self) -> np.ndarray:
        return np.array(self.indices, dtype=float).reshape(self.size, self.p)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([sum(u) for u in self.indices], dtype=int)

    def first_order_positions(self) -> np.ndarray:
        """Positions of e_1, ..., e_p in ``indices`` (always 1..p)."""
        if self.k < 1:
            raise OrderTooLow("multi-index set of order 0 has no first-order terms")
        return np.arange(1, self.p + 1)

    def __len__(self) -> int:
        return self.size


def build_multi_index_set(p: int, k: int) -> MultiIndexSet:
    if p < 1 or k < 0:
        raise ConfigError(f"need p >= 1 and k >= 0, got p={p}, k={k}")
    indices = [tuple([0] * p)]
    for degree in range(1, k + 1):
        # combinations_with_replacement over coordinates gives e_1..e_p first
        # for degree 1, then (2,0,..), (1,1,..), ... for higher degrees
        for combo in itertools.combinations_with_replacement(range(p), degree):
            u = [0] * p
            for coord in combo:
                u[coord] += 1
            indices.append(tuple(u))
    return MultiIndexSet(p=p, k=k, indices=tuple(indices))


def design_matrix(displacements: np.ndarray, h: float, A: MultiIndexSet) -> np.ndarray:
    """Rows ``(h^-[u] d^u)_{u in A}`` for each displacement row ``d``.

    Accepts any leading batch shape: ``(..., p) -> (..., s(A))``.
    """
    d = np.asarray(displacements, dtype=float) / h
    if A.k == 1:
        # fast path for local linear designs
        ones = np.ones(d.shape[:-1] + (1,))
        return np.concatenate([ones, d], axis=-1)
    if A.k == 0:
        return np.ones(d.shape[:-1] + (1,))
    return np.prod(d[..., None, :] ** A.exponents, axis=-1)


def design_vector(displacement, h: float, A: MultiIndexSet) -> np.ndarray:
    if h <= 0:
        raise ConfigError("bandwidth must be positive")
    d = np.asarray(displacement, dtype=float)
    if d.shape != (A.p,):
        raise ConfigError(f"displacement must have shape ({A.p},), got {d.shape}")
    return design_matrix(d, h, A)


@dataclass(frozen=True)
class KernelSpec:
    """Univariate kernel applied to a sup-norm distance."""

    kind: str = "epanechnikov"

    def __post_init__(self):
        if self.kind not in ("uniform", "epanechnikov"):
            raise ConfigError(f"unknown kernel kind {self.kind!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        inside = u <= 1.0
        if self.kind == "uniform":
            return np.where(inside, 0.5, 0.0)
        return np.where(inside, 0.75 * (1.0 - u * u), 0.0)


def kernel_weight(distance, h: float, spec: KernelSpec = KernelSpec()):
    """``K(distance / h) / h``; vectorised over ``distance``."""
    if h <= 0:
        raise ConfigError("bandwidth must be positive")
    out = spec(np.asarray(distance, dtype=float) / h) / h
    return float(out) if np.ndim(out) == 0 else out


def sup_distance(displacements: np.ndarray, directions: Optional[np.ndarray] = None) -> np.ndarray:
    """Sup-norm of each displacement row, optionally after projecting on ``directions``."""
    d = np.asarray(displacements, dtype=float)
    if directions is not None:
        d = d @ directions
    return np.max(np.abs(d), axis=-1)


def check_loss(s, tau: float):
    """``|s| + (2 tau - 1) s``: twice the textbook check function."""
    s = np.asarray(s, dtype=float)
    out = np.abs(s) + (2.0 * tau - 1.0) * s
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SolverConfig:
    """Majorize-minimize settings.

    The smoothing parameter starts at ``eps_start * sd(y)`` and is halved each
    round (``steps_per_round`` reweighting steps) until it drops below
    ``eps_min``.  ``tol`` is the relative change of the smoothed objective that
    ends a round early.  After every round the vertex through the smallest
    residuals is tested against the exact optimality conditions; problems still
    uncertified after ``irls_steps`` steps are finished by basis exchange.
    ``max_iter`` is the hard cap on reweighting steps.
    """

    eps_start: float = 1e-2
    eps_min: float = 1e-8
    tol: float = 1e-10
    max_iter: int = 200
    steps_per_round: int = 4
    irls_steps: int = 12
    polish: bool = True
    kkt_tol: float = 1e-9
    max_pivots: int = 200

    def __post_init__(self):
        if not (self.eps_start > 0 and self.eps_min > 0 and self.max_iter > 0):
            raise ConfigError("solver settings must be positive")


def solve_weighted_qr(D, y, w, tau, cfg: SolverConfig = SolverConfig(), scale=None, start=None):
    """Minimise ``sum_i w_i rho_tau(y_i - D_i c)`` for a batch of problems.

    Parameters
    ----------
    D : ndarray (B, m, s)
        Design rows; padded rows must carry zero weight.
    y : ndarray (B, m) or (m,)
    w : ndarray (B, m)
        Non-negative case weights.
    tau : float or ndarray (B,)
    scale : optional ndarray (B,)
        Response spread used to start the smoothing schedule; defaults to the
        standard deviation of ``y`` over the window.  Zero marks a constant response.
    start : optional ndarray (B, s)
        Warm-start coefficients; rows containing NaN are solved cold.

    Returns
    -------
    coef : ndarray (B, s)
    objective : ndarray (B,)
    converged : ndarray (B,) of bool
    """
    D = np.ascontiguousarray(D, dtype=float)
    B, m, s = D.shape
    y = np.ascontiguousarray(np.broadcast_to(np.asarray(y, dtype=float), (B, m)))
    w = np.ascontiguousarray(w, dtype=float)
    tau = np.ascontiguousarray(np.broadcast_to(np.asarray(tau, dtype=float), (B,)))
    if np.any((tau <= 0) | (tau >= 1)):
        raise ConfigError("quantile levels must lie strictly inside (0, 1)")
    if np.any(w < 0):
        raise ConfigError("weights must be non-negative")
    if scale is None:
        scale = _window_spread(y, w)
    scale = np.ascontiguousarray(np.broadcast_to(np.asarray(scale, dtype=float), (B,)))
    if start is None:
        c0 = np.zeros((B, s))
        use = np.zeros(B, dtype=bool)
    else:
        c0 = np.array(np.broadcast_to(np.asarray(start, dtype=float), (B, s)))
        use = np.isfinite(c0).all(axis=1)
        c0[~use] = 0.0
    return _qrkernel.solve_batch(
        D, y, w, tau, scale, cfg.eps_start, cfg.eps_min, cfg.tol, cfg.max_iter,
        cfg.steps_per_round, cfg.irls_steps, cfg.polish, cfg.max_pivots, cfg.kkt_tol, c0, use,
    )


def _window_spread(y, w):
    """Standard deviation of ``y`` over the positively weighted rows of each window."""
    mask = w > 0
    cnt = mask.sum(axis=1)
    safe = np.maximum(cnt, 1)
    mean = np.where(mask, y, 0.0).sum(axis=1) / safe
    var = np.where(mask, (y - mean[:, None]) ** 2, 0.0).sum(axis=1) / safe
    return np.sqrt(var)


@dataclass
class LocalFit:
    center: np.ndarray
    tau: float
    bandwidth: float
    coeffs: np.ndarray
    n_effective: int
    objective: float
    converged: bool
    kernel_bandwidth: float = field(default=float("nan"))


def fit_local_quantile(
    X,
    Y,
    center,
    tau: float,
    h_design: float,
    h_kernel: Optional[float] = None,
    A: Optional[MultiIndexSet] = None,
    kernel_directions: Optional[np.ndarray] = None,
    spec: KernelSpec = KernelSpec(),
    solver_cfg: SolverConfig = SolverConfig(),
    weights: Optional[np.ndarray] = None,
) -> LocalFit:
    """Local polynomial quantile fit at ``center``.

    The kernel distance is the sup-norm of ``(X_i - center)`` or, when
    ``kernel_directions`` is given, of ``B'(X_i - center)``, scaled by
    ``h_kernel`` (defaults to ``h_design``).  ``weights`` optionally overrides
    the kernel weights entirely; it exists for the scaling-invariance checks.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    n, p = X.shape
    if A is None:
        A = build_multi_index_set(p, 1)
    if A.p != p:
        raise ConfigError(f"multi-index set is for p={A.p}, data has p={p}")
    if not 0 < tau < 1:
        raise ConfigError("tau must lie in (0, 1)")
    if h_design <= 0:
        raise ConfigError("bandwidth must be positive")
    h_kernel = h_design if h_kernel is None else h_kernel
    center = np.asarray(center, dtype=float).ravel()
    disp = X - center
    if weights is None:
        w = np.asarray(kernel_weight(sup_distance(disp, kernel_directions), h_kernel, spec))
    else:
        w = np.asarray(weights, dtype=float)
    keep = w > 0
    n_eff = int(keep.sum())
    if n_eff < A.size:
        raise InsufficientLocalData(
            f"{n_eff} samples with positive kernel weight, need at least {A.size}"
        )
    D = design_matrix(disp[keep], h_design, A)
    coef, obj, conv = solve_weighted_qr(D[None], Y[keep][None], w[keep][None], tau, solver_cfg)
    if not conv[0]:
        warnings.warn(
            f"local quantile fit at tau={tau} hit the iteration cap", SolverDiverged, stacklevel=2
        )
    return LocalFit(
        center=center,
        tau=float(tau),
        bandwidth=float(h_design),
        coeffs=coef[0],
        n_effective=n_eff,
        objective=float(obj[0]),
        converged=bool(conv[0]),
        kernel_bandwidth=float(h_kernel),
    )


def extract_gradient(fit: LocalFit, A: MultiIndexSet) -> np.ndarray:
    if A.k < 1:
        raise OrderTooLow("a local constant fit carries no gradient")
    return np.asarray(fit.coeffs)[A.first_order_positions()] / fit.bandwidth


def local_gradients(
    X: np.ndarray,
    Y: np.ndarray,
    tau: float,
    h: float,
    A: MultiIndexSet,
    directions: Optional[np.ndarray] = None,
    h_design: Optional[float] = None,
    spec: KernelSpec = KernelSpec(),
    solver_cfg: SolverConfig = SolverConfig(),
    centers: Optional[Sequence[int]] = None,
    min_points: Optional[int] = None,
    start: Optional[np.ndarray] = None,
    return_coefs: bool = False,
):
    """Gradient estimates at every sample point (or ``centers``) for one level.

    Returns ``(gradients, valid, converged)``; rows whose window holds fewer
    than ``min_points`` (default ``A.size``) positively weighted samples are
    flagged invalid and left as zeros.  ``start`` holds warm-start
    coefficients per center (NaN rows start cold); ``return_coefs`` appends
    the full local coefficient matrix to the result.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n, p = X.shape
    h_design = h if h_design is None else h_design
    idx = np.arange(n) if centers is None else np.asarray(centers)
    proj = X if directions is None else X @ directions
    dist = np.max(np.abs(proj[idx][:, None, :] - proj[None, :, :]), axis=2)
    W = np.asarray(spec(dist / h)) / h
    counts = (W > 0).sum(axis=1)
    valid = counts >= max(A.size, min_points or 0)
    grads = np.zeros((len(idx), p))
    conv = np.zeros(len(idx), dtype=bool)
    coefs = np.full((len(idx), A.size), np.nan)
    if not valid.any():
        return (grads, valid, conv, coefs) if return_coefs else (grads, valid, conv)
    vi = np.nonzero(valid)[0]
    m = int(counts[vi].max())
    # gather each window into a padded block of its positive-weight rows
    order = np.argsort(W[vi] <= 0, axis=1, kind="stable")[:, :m]
    rows = vi[:, None]
    wblk = W[rows, order]
    disp = X[order] - X[idx[vi]][:, None, :]
    D = design_matrix(disp, h_design, A)
    c, _, cv = solve_weighted_qr(D, Y[order], wblk, tau, solver_cfg,
                                 start=None if start is None else np.asarray(start)[vi])
    grads[vi] = c[:, 1 : p + 1] / h_design
    conv[vi] = cv
    coefs[vi] = c
    return (grads, valid, conv, coefs) if return_coefs else (grads, valid, conv)
