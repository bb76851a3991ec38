"""Independent reference implementations used as test oracles.

Everything here is deliberately written from definitions (explicit loops,
cofactor expansions, closed-form cubic roots, central differences) and never
calls into the package paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np


def kron_blocks(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product by explicit block placement."""
    ra, ca = a.shape
    rb, cb = b.shape
    out = np.zeros((ra * rb, ca * cb))
    for i in range(ra):
        for j in range(ca):
            out[i * rb : (i + 1) * rb, j * cb : (j + 1) * cb] = a[i, j] * b
    return out


def kron_fold_right(mats) -> np.ndarray:
    """Right fold of the block-placement Kronecker product."""
    out = mats[-1]
    for m in reversed(mats[:-1]):
        out = kron_blocks(m, out)
    return out


def mode_product_loops(x: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    """Definitional mode product with an ascending summation loop."""
    out_shape = list(x.shape)
    out_shape[mode] = a.shape[0]
    out = np.zeros(out_shape)
    for idx in np.ndindex(*out_shape):
        acc = 0.0
        for j in range(x.shape[mode]):
            src = list(idx)
            src[mode] = j
            acc += x[tuple(src)] * a[idx[mode], j]
        out[idx] = acc
    return out


def determinant_cofactor(m: np.ndarray) -> float:
    """Cofactor-expansion determinant (fine for the small sizes in tests)."""
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += ((-1) ** j) * float(m[0, j]) * determinant_cofactor(minor)
    return total


def sym3_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric 3x3 matrix via the trigonometric cubic formula."""
    assert m.shape == (3, 3)
    p1 = m[0, 1] ** 2 + m[0, 2] ** 2 + m[1, 2] ** 2
    q = float(np.trace(m)) / 3.0
    if p1 == 0.0:
        return np.sort(np.diag(m))[::-1]
    p2 = sum((m[i, i] - q) ** 2 for i in range(3)) + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    b = (m - q * np.eye(3)) / p
    r = determinant_cofactor(b) / 2.0
    r = min(1.0, max(-1.0, r))
    phi = math.acos(r) / 3.0
    eig1 = q + 2.0 * p * math.cos(phi)
    eig3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    eig2 = 3.0 * q - eig1 - eig3
    return np.array(sorted([eig1, eig2, eig3], reverse=True))


def central_difference_grad(f, a: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Entrywise central differences with magnitude-scaled steps."""
    g = np.zeros_like(a, dtype=float)
    for idx in np.ndindex(a.shape):
        h = step * max(1.0, abs(float(a[idx])))
        ap = a.astype(float).copy()
        am = a.astype(float).copy()
        ap[idx] += h
        am[idx] -= h
        g[idx] = (f(ap) - f(am)) / (2.0 * h)
    return g


def direct_conv3d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode stride-1 correlation of (p,q,c) input with (k1,k2,c,n) kernel."""
    p, q, c = x.shape
    k1, k2, kc, n = kernel.shape
    assert kc == c
    out = np.zeros((p - k1 + 1, q - k2 + 1, n))
    for u in range(p - k1 + 1):
        for v in range(q - k2 + 1):
            for o in range(n):
                acc = 0.0
                for d1 in range(k1):
                    for d2 in range(k2):
                        for ch in range(c):
                            acc += x[u + d1, v + d2, ch] * kernel[d1, d2, ch, o]
                out[u, v, o] = acc
    return out


def max_rel_err(got, want) -> float:
    """max |got-want| / max(|got|, |want|, 1) over all entries."""
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    scale = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1.0)
    return float(np.max(np.abs(got - want) / scale)) if got.size else 0.0
