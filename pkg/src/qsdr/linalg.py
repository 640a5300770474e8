"""Small linear-algebra helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .errors import NotSymmetric, RankDeficient


def symmetric_eigen(M, tol: float = 1e-10):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Each eigenvector is signed so that its largest-magnitude component is
    positive, which makes the output deterministic.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetric(f"expected a square matrix, got shape {M.shape}")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(M))):
        raise NotSymmetric(f"matrix is not symmetric (max |M - M'| = {asym:.3g})")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals, vecs = vals[::-1], vecs[:, ::-1]
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals.copy(), vecs * signs


def projection(B) -> np.ndarray:
    """``B (B'B)^{-1} B'``."""
    B = _as_columns(B)
    gram = B.T @ B
    if np.linalg.matrix_rank(B) < B.shape[1]:
        raise RankDeficient(f"basis of shape {B.shape} is not of full column rank")
    return B @ np.linalg.solve(gram, B.T)


def subspace_error(B_hat, B0, metric: str = "entry") -> float:
    """Distance between the column spans of two bases.

    Parameters
    ----------
    B_hat, B0 : array_like, shape (p, q)
        Full column rank bases.
    metric : {"entry", "spectral"}
        ``entry`` is the largest absolute entry of ``P_hat - P0`` where ``P``
        is the orthogonal projection.  ``spectral`` is the largest absolute
        eigenvalue of the same difference, the sine of the largest principal
        angle.

    Returns
    -------
    float
        A value in ``[0, 1]``.
    """
    P1 = projection(_as_columns(B_hat))
    P0 = projection(_as_columns(B0))
    if P1.shape != P0.shape:
        raise RankDeficient(f"bases live in different spaces: {P1.shape} vs {P0.shape}")
    diff = P1 - P0
    if metric == "entry":
        return float(np.max(np.abs(diff)))
    if metric == "spectral":
        return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.T)))))
    raise ValueError(f"unknown metric {metric!r}")


def orthonormalize(B) -> np.ndarray:
    """Orthonormal basis of span(B) via QR, column signs fixed for determinism."""
    B = _as_columns(B)
    Q, R = np.linalg.qr(B)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Q * d


def _as_columns(B) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    return B
