"""Dense tensor primitives: vectorization, mode products, Kronecker algebra.

Every routine in this package linearizes tensors the same way: column-major
over modes, first mode fastest.  For a matrix this is the usual
column-stacking ``vec``.  All Kronecker-chain orderings elsewhere in the
package derive from this single convention, so :func:`vec`/:func:`unvec`
round-trip exactly and the materialized operator of a separable transform
reproduces the mode-product path bit for bit on integer data.

Tensors are plain ``numpy.ndarray`` values; functions never mutate their
arguments.
"""

from __future__ import annotations

from functools import reduce

import numpy as np


def _as_tensor(x) -> np.ndarray:
    t = np.asarray(x, dtype=float)
    if t.ndim < 1:
        t = t.reshape(1)
    return t


def _as_matrix(a, what: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a {what} (2-D array), got ndim={m.ndim}")
    return m


def vec(x) -> np.ndarray:
    """Flatten a tensor to a vector, first mode fastest (column stacking)."""
    return _as_tensor(x).ravel(order="F")


def unvec(v, shape) -> np.ndarray:
    """Reshape a vector into a tensor with the given extents.

    Exact inverse of :func:`vec`: ``vec(unvec(v, s)) == v`` bit for bit.
    Raises ``ValueError`` when the lengths disagree.
    """
    v = np.asarray(v, dtype=float).ravel()
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1 or any(s < 1 for s in shape):
        raise ValueError(f"extents must all be positive, got {shape}")
    size = int(np.prod(shape))
    if v.size != size:
        raise ValueError(
            f"cannot reshape a length-{v.size} vector to extents {shape} (need {size})"
        )
    return v.reshape(shape, order="F")


def mode_product(x, a, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of tensor ``x`` with the rows of matrix ``a``.

    Output entry ``(i_1, .., k, .., i_N)`` is
    ``sum_j x[i_1, .., j, .., i_N] * a[k, j]``; the extent at ``mode`` is
    replaced by ``a.shape[0]``.  Modes are 0-based.
    """
    x = _as_tensor(x)
    a = _as_matrix(a)
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode {mode} out of range for a {x.ndim}-way tensor")
    if a.shape[1] != x.shape[mode]:
        raise ValueError(
            f"matrix has {a.shape[1]} columns but mode {mode} has extent {x.shape[mode]}"
        )
    out = np.tensordot(a, x, axes=(1, mode))
    return np.moveaxis(out, 0, mode)


def kron(a, b) -> np.ndarray:
    """Kronecker product of two matrices: block ``(i, j)`` equals ``a[i, j] * b``."""
    return np.kron(_as_matrix(a), _as_matrix(b))


def kron_chain(factors) -> np.ndarray:
    """Left fold of :func:`kron` over a non-empty sequence of matrices.

    The fold order only reassociates scalar products, so any other fold
    gives the same entries up to floating-point reassociation.
    """
    mats = [_as_matrix(f) for f in factors]
    if not mats:
        raise ValueError("kron_chain requires at least one factor")
    return reduce(kron, mats)
