"""Sliced inverse regression, used as a baseline."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateCovariance, TooFewSlices
from .linalg import orthonormalize, symmetric_eigen
from .opg import CsEstimate


@dataclass
class SirConfig:
    """``n_slices=None`` picks 8 slices for n <= 300 and 10 otherwise."""

    q: int = 2
    n_slices: Optional[int] = None

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("q must be positive")
        if self.n_slices is not None and self.n_slices < 2:
            raise TooFewSlices("SIR needs at least two slices")

    def slices_for(self, n: int) -> int:
        if self.n_slices is not None:
            return int(self.n_slices)
        return 8 if n <= 300 else 10


def _inverse_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = symmetric_eigen(cov)
    if not vals[0] > 0 or vals[-1] <= 1e-10 * vals[0]:
        raise DegenerateCovariance(
            f"sample covariance of X is singular (condition number {vals[0] / max(vals[-1], 1e-300):.3g})"
        )
    return (vecs / np.sqrt(vals)) @ vecs.T


def sir_fit(X, Y, cfg: Optional[SirConfig] = None) -> CsEstimate:
    """Estimate a ``cfg.q``-dimensional basis by sliced inverse regression.

    Slices are consecutive blocks of the stably sorted response with sizes
    differing by at most one.
    """
    cfg = SirConfig() if cfg is None else cfg
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ConfigError("X must be n x p with n matching len(Y)")
    n, p = X.shape
    H = cfg.slices_for(n)
    if n < 2 * H:
        raise TooFewSlices(f"{n} observations cannot fill {H} slices of at least two")
    if cfg.q > p:
        raise ConfigError(f"q={cfg.q} exceeds p={p}")

    mu = X.mean(axis=0)
    Xc = X - mu
    root_inv = _inverse_sqrt(Xc.T @ Xc / n)
    Z = Xc @ root_inv

    order = np.argsort(Y, kind="stable")
    M = np.zeros((p, p))
    for block in np.array_split(order, H):
        m = Z[block].mean(axis=0)
        M += (len(block) / n) * np.outer(m, m)
    vals, vecs = symmetric_eigen(0.5 * (M + M.T))
    B = orthonormalize(root_inv @ vecs[:, : cfg.q])
    return CsEstimate(
        basis=B,
        q=cfg.q,
        eigenvalues=vals,
        iterations=1,
        converged=True,
        method="sir",
        extra={"n_slices": H},
    )
