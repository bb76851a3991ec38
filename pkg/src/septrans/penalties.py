"""Differentiable penalties on factor matrices and their exact gradients.

Three terms steer the factors of a separable model:

* :func:`frobenius_penalty` shrinks overall scale (and with it the largest
  singular value): ``sum_t ||A_t||_F^2 / (2 T k_t^2)`` with
  ``k_t = min(rows, cols)`` of that factor.
* :func:`logdet_penalty` keeps each Gram determinant near 1 so singular
  values neither collapse nor blow up:
  ``sum_t (log[nu + det(A_t^T A_t)/k_t])^2 / (4 T k_t log k_t)``.
* :func:`sparsity_penalty` is a smooth row-wise l_p surrogate:
  ``sum_i (sum_j (a_ij^2 + w)^{p/2})^2 / (2 k_1)`` per factor.

Every gradient here is the exact derivative of the corresponding value
function; finite differences arbitrate in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import gram_logdet


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights and smoothing constants for the three penalties.

    ``frob_weight``, ``cond_weight`` and ``sparse_weight`` scale the
    Frobenius, log-det and sparsity terms; a zero weight disables the term
    entirely (it is neither evaluated nor differentiated).  ``det_smooth``
    keeps the log-det argument positive, ``sparse_smooth`` smooths the
    l_p surrogate, and ``p`` in (0, 1] selects the sparsity exponent.
    """

    frob_weight: float = 0.0
    cond_weight: float = 0.0
    sparse_weight: float = 0.0
    det_smooth: float = 1e-4
    sparse_smooth: float = 1e-6
    p: float = 1.0

    def __post_init__(self):
        if min(self.frob_weight, self.cond_weight, self.sparse_weight) < 0:
            raise ValueError("penalty weights must be non-negative")
        if not 0.0 < self.det_smooth < 1.0:
            raise ValueError("det_smooth must lie in (0, 1)")
        if not 0.0 < self.sparse_smooth < 1.0:
            raise ValueError("sparse_smooth must lie in (0, 1)")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("p must lie in (0, 1]")


def _factor_list(factors) -> list[np.ndarray]:
    mats = [np.asarray(f, dtype=float) for f in factors]
    if not mats:
        raise ValueError("need at least one factor")
    for m in mats:
        if m.ndim != 2:
            raise ValueError("factors must be matrices")
    return mats


def frobenius_penalty(factors) -> float:
    """``sum_t ||A_t||_F^2 / (2 T k_t^2)``, ``k_t = min(rows, cols)``."""
    mats = _factor_list(factors)
    t_count = len(mats)
    total = 0.0
    for m in mats:
        k = min(m.shape)
        total += float(np.sum(m * m)) / (2.0 * t_count * k * k)
    return total


def frobenius_penalty_grad(factors) -> list[np.ndarray]:
    """Exact gradient: ``A_t / (T k_t^2)`` per factor."""
    mats = _factor_list(factors)
    t_count = len(mats)
    return [m / (t_count * min(m.shape) ** 2) for m in mats]


def _logdet_terms(m: np.ndarray, smoothing: float) -> tuple[float, float, int]:
    """Return (outer log L, det ratio d/(k*nu + d), k) in a stable form."""
    k = min(m.shape)
    if k < 2:
        raise ValueError(
            f"log-det penalty needs factors with min(rows, cols) >= 2, got {m.shape}"
        )
    ld = gram_logdet(m)
    s = ld - math.log(k)  # log of det(A^T A)/k
    outer = np.logaddexp(math.log(smoothing), s)  # log(nu + det/k)
    if s == float("-inf") or s < -700.0:
        ratio = 0.0
    elif s > 700.0:
        ratio = 1.0
    else:
        ratio = 1.0 / (1.0 + smoothing * math.exp(-s))
    return float(outer), float(ratio), k


def logdet_penalty(factors, smoothing: float = 1e-4) -> float:
    """``sum_t (log[nu + det(A_t^T A_t)/k_t])^2 / (4 T k_t log k_t)``.

    Rank-deficient (or wide) factors contribute with ``det = 0``.  Factors
    with ``min(rows, cols) < 2`` are rejected: the ``log k`` normalizer
    vanishes.
    """
    mats = _factor_list(factors)
    t_count = len(mats)
    total = 0.0
    for m in mats:
        outer, _, k = _logdet_terms(m, smoothing)
        total += outer * outer / (4.0 * t_count * k * math.log(k))
    return total


def logdet_penalty_grad(factors, smoothing: float = 1e-4) -> list[np.ndarray]:
    """Exact gradient of :func:`logdet_penalty`.

    Per factor: ``coef * A (A^T A)^{-1}`` with
    ``coef = L * r / ((nu + r) T k log k)`` where ``r = det(A^T A)/k`` and
    ``L`` the outer log.  A singular Gram matrix contributes the zero
    matrix (the analytic limit: ``A adj(A^T A) -> 0`` as the rank drops).
    """
    mats = _factor_list(factors)
    t_count = len(mats)
    grads = []
    for m in mats:
        outer, ratio, k = _logdet_terms(m, smoothing)
        if ratio == 0.0:
            grads.append(np.zeros_like(m))
            continue
        coef = outer * ratio / (t_count * k * math.log(k))
        gram = m.T @ m
        grads.append(coef * np.linalg.solve(gram, m.T).T)
    return grads


def sparsity_penalty(a, p: float = 1.0, smoothing: float = 1e-6) -> float:
    """Smooth row-wise l_p surrogate for one matrix (see module docstring)."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError("sparsity penalty expects a matrix")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if not 0.0 < smoothing < 1.0:
        raise ValueError("smoothing must lie in (0, 1)")
    rows = m.shape[0]
    row_sums = np.sum((m * m + smoothing) ** (p / 2.0), axis=1)
    return float(np.sum(row_sums * row_sums) / (2.0 * rows))


def sparsity_penalty_grad(a, p: float = 1.0, smoothing: float = 1e-6) -> np.ndarray:
    """Exact gradient: ``(S_i / k_1) * p * a_ij * (a_ij^2 + w)^{p/2 - 1}``."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError("sparsity penalty expects a matrix")
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    if not 0.0 < smoothing < 1.0:
        raise ValueError("smoothing must lie in (0, 1)")
    rows = m.shape[0]
    shifted = m * m + smoothing
    row_sums = np.sum(shifted ** (p / 2.0), axis=1)
    return (row_sums[:, None] / rows) * p * m * shifted ** (p / 2.0 - 1.0)


def sparsity_penalty_total(factors, p: float = 1.0, smoothing: float = 1e-6) -> float:
    """Sum of :func:`sparsity_penalty` over every factor."""
    return sum(sparsity_penalty(f, p, smoothing) for f in _factor_list(factors))


@dataclass(frozen=True)
class PenaltyValues:
    """Unweighted values of the three terms (0.0 for disabled terms)."""

    frob: float
    logdet: float
    sparse: float

    def weighted_total(self, cfg: PenaltyConfig) -> float:
        return (
            cfg.frob_weight * self.frob
            + cfg.cond_weight * self.logdet
            + cfg.sparse_weight * self.sparse
        )


def penalty_values(factors, cfg: PenaltyConfig) -> PenaltyValues:
    """Evaluate the enabled penalties over a factor collection."""
    frob = frobenius_penalty(factors) if cfg.frob_weight > 0 else 0.0
    logdet = logdet_penalty(factors, cfg.det_smooth) if cfg.cond_weight > 0 else 0.0
    sparse = (
        sparsity_penalty_total(factors, cfg.p, cfg.sparse_smooth)
        if cfg.sparse_weight > 0
        else 0.0
    )
    return PenaltyValues(frob=frob, logdet=logdet, sparse=sparse)


def weighted_penalty_grads(factors, cfg: PenaltyConfig) -> list[np.ndarray]:
    """Weighted sum of the enabled penalty gradients, one array per factor."""
    mats = _factor_list(factors)
    grads = [np.zeros_like(m) for m in mats]
    if cfg.frob_weight > 0:
        for g, d in zip(grads, frobenius_penalty_grad(mats)):
            g += cfg.frob_weight * d
    if cfg.cond_weight > 0:
        for g, d in zip(grads, logdet_penalty_grad(mats, cfg.det_smooth)):
            g += cfg.cond_weight * d
    if cfg.sparse_weight > 0:
        for g, m in zip(grads, mats):
            g += cfg.sparse_weight * sparsity_penalty_grad(m, cfg.p, cfg.sparse_smooth)
    return grads
