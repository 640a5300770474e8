"""Structural dimension selection by leave-one-out composite quantile CV.

For each candidate ``q`` a basis ``B_q`` is estimated, and every response is
predicted at every grid level by a local polynomial quantile fit on
``B_q' X`` that leaves the point out.  The summed check loss is ``CV(q)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .bandwidth import default_h_grid, loo_local_quantile
from .errors import ConfigError, QsdrError
from .opg import QopgConfig, qopg_fit
from .smoother import build_multi_index_set, check_loss

log = logging.getLogger(__name__)


@dataclass
class DimensionConfig:
    """Settings for :func:`select_dimension_cv`.

    ``order`` is the degree of the leave-one-out smoother (0 local constant,
    1 local linear).  ``bandwidth="cv"`` scores each candidate at the grid
    bandwidth minimising its own CV value; ``"rot"`` uses the geometric centre
    of the grid.  ``estimator`` is ``qopg`` by default; any callable
    ``f(X, Y, q) -> basis`` is also accepted.
    """

    opg: QopgConfig = field(default_factory=QopgConfig)
    estimator: object = "qopg"
    order: int = 1
    bandwidth: str = "cv"
    grid_size: int = 10
    grid_lo: float = 0.45
    grid_hi: float = 4.5
    rot_constant: float = 2.34

    def __post_init__(self):
        if self.bandwidth not in ("cv", "rot"):
            raise ConfigError(f"unknown bandwidth rule {self.bandwidth!r}")
        if self.order not in (0, 1):
            raise ConfigError("order must be 0 or 1")


@dataclass
class DimensionResult:
    q_hat: int
    cv: Dict[int, float]
    bandwidths: Dict[int, float]
    bases: Dict[int, np.ndarray]

    def to_dict(self) -> dict:
        return {
            "q_hat": self.q_hat,
            "cv": {str(q): v for q, v in self.cv.items()},
            "bandwidths": {str(q): v for q, v in self.bandwidths.items()},
        }


def composite_loo_loss(Z, Y, tau_grid: Sequence[float], h: float, spec=None, order: int = 0) -> float:
    """Sum over levels and points of the leave-one-out local polynomial check loss on ``Z``."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    A0 = build_multi_index_set(Z.shape[1], order)
    kw = {} if spec is None else {"spec": spec}
    total = 0.0
    for tau in tau_grid:
        pred, _ = loo_local_quantile(Z, Y, tau, h, A0, **kw)
        total += float(np.sum(check_loss(Y - pred, tau)))
    return total


def _basis(X, Y, q, cfg: DimensionConfig) -> np.ndarray:
    p = X.shape[1]
    if q == p:
        return np.eye(p)
    if callable(cfg.estimator):
        return np.asarray(cfg.estimator(X, Y, q), dtype=float)
    if cfg.estimator == "qopg":
        return qopg_fit(X, Y, q, cfg.opg).basis
    if cfg.estimator == "qmave":
        from .qmave import QmaveConfig, qmave_fit

        return qmave_fit(X, Y, q, QmaveConfig(tau_grid=cfg.opg.tau_grid)).basis
    if cfg.estimator == "sir":
        from .sir import SirConfig, sir_fit

        return sir_fit(X, Y, SirConfig(q=q)).basis
    raise ConfigError(f"unknown estimator {cfg.estimator!r}")


def dimension_cv(X, Y, B, tau_grid, cfg: Optional[DimensionConfig] = None):
    """``(CV value, bandwidth)`` for one basis ``B``."""
    cfg = DimensionConfig() if cfg is None else cfg
    Z = np.asarray(X, dtype=float) @ np.asarray(B, dtype=float)
    grid = default_h_grid(Z, size=cfg.grid_size, lo=cfg.grid_lo, hi=cfg.grid_hi,
                          constant=cfg.rot_constant)
    if cfg.bandwidth == "rot":
        grid = np.array([float(np.exp(np.mean(np.log(grid))))])
    values = [composite_loo_loss(Z, Y, tau_grid, h, cfg.opg.kernel, cfg.order) for h in grid]
    k = int(np.argmin(values))
    return float(values[k]), float(grid[k])


def select_dimension_cv(X, Y, q_candidates: Sequence[int] = (1, 2, 3),
                        cfg: Optional[DimensionConfig] = None, return_result: bool = False):
    """Pick the candidate dimension with the smallest CV value.

    Returns ``(q_hat, cv_values)`` where ``cv_values`` maps each candidate to
    its CV value (``inf`` when its basis could not be estimated).  Ties go to
    the smallest candidate.  With ``return_result=True`` a
    :class:`DimensionResult` carrying bandwidths and bases is returned instead.
    """
    cfg = DimensionConfig() if cfg is None else cfg
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    cands = sorted({int(q) for q in q_candidates})
    if not cands:
        raise ConfigError("no candidate dimensions given")
    p = X.shape[1]
    if cands[0] < 1 or cands[-1] > p:
        raise ConfigError(f"candidate dimensions must lie in [1, {p}]")
    cv: Dict[int, float] = {}
    hs: Dict[int, float] = {}
    bases: Dict[int, np.ndarray] = {}
    if len(cands) == 1:
        q = cands[0]
        res = DimensionResult(q, {q: float("nan")}, {}, {})
        return res if return_result else (q, res.cv)
    for q in cands:
        try:
            B = _basis(X, Y, q, cfg)
            cv[q], hs[q] = dimension_cv(X, Y, B, cfg.opg.tau_grid, cfg)
            bases[q] = B
        except (QsdrError, np.linalg.LinAlgError) as exc:
            log.warning("dimension %d: estimation failed (%s)", q, exc)
            cv[q] = float("inf")
    finite = [q for q in cands if np.isfinite(cv[q])]
    if not finite:
        raise QsdrError("no candidate dimension could be evaluated")
    best = min(cv[q] for q in finite)
    q_hat = min(q for q in finite if cv[q] == best)
    res = DimensionResult(q_hat, cv, hs, bases)
    return res if return_result else (q_hat, cv)
