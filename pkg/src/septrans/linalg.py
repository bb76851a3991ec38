"""Spectral helpers for small dense matrices: SVD, conditioning, Gram log-det.

Every routine works on modest factor matrices (at most a few hundred per
side), so the LAPACK-backed ``numpy.linalg.svd`` is used throughout and the
singular values carry all the information we need: condition numbers,
numeric ranks, and log-determinants of Gram matrices without overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RankDeficientError(ValueError):
    """Raised when an operation needs numerically full rank and does not have it."""


def _as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix (2-D array), got ndim={m.ndim}")
    return m


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``a == u @ diag(s) @ v.T``.

    ``s`` is non-negative and non-increasing; ``u`` and ``v`` have
    orthonormal columns.
    """

    u: np.ndarray
    s: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.v.T


def svd(a) -> SvdResult:
    """Thin singular value decomposition; deterministic for a fixed input."""
    m = _as_matrix(a)
    if not np.all(np.isfinite(m)):
        raise ValueError("svd requires finite entries")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    return SvdResult(u=u, s=s, v=vt.T)


def rank_tolerance(singular_values, shape) -> float:
    """Cutoff below which a singular value counts as zero."""
    s = np.asarray(singular_values, dtype=float)
    smax = float(s[0]) if s.size else 0.0
    return 1e-12 * smax * max(shape)


def condition_number(a) -> float:
    """Ratio of the largest to the smallest singular value (always >= 1).

    Raises :class:`RankDeficientError` when the smallest singular value
    falls below the rank tolerance.
    """
    m = _as_matrix(a)
    s = svd(m).s
    tol = rank_tolerance(s, m.shape)
    smin = float(s[-1]) if s.size else 0.0
    if smin <= tol:
        raise RankDeficientError(
            "condition number undefined: smallest singular value "
            f"{smin:.3e} is below the rank tolerance {tol:.3e}"
        )
    return float(s[0]) / smin


def gram_logdet(a) -> float:
    """``log det(A^T A)`` from singular values: ``2 * sum(log sigma_i)``.

    Returns ``-inf`` whenever the Gram matrix is only positive
    semi-definite (rank-deficient or wide ``A``); never raises for that
    case so callers can treat ``det = 0`` uniformly.
    """
    m = _as_matrix(a)
    rows, cols = m.shape
    if cols > rows:
        return float("-inf")  # A^T A is always singular for a wide matrix
    s = svd(m).s
    tol = rank_tolerance(s, m.shape)
    if s.size == 0 or float(s[-1]) <= tol:
        return float("-inf")
    return float(2.0 * np.sum(np.log(s)))


def numeric_rank(a) -> int:
    """Number of singular values above the rank tolerance."""
    m = _as_matrix(a)
    s = svd(m).s
    tol = rank_tolerance(s, m.shape)
    return int(np.count_nonzero(s > tol))
