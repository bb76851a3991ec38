"""Separable linear transformations: chains of small factor matrices.

A :class:`SeparableTransform` represents a large linear map implicitly as an
ordered list of small factors ``A^(1), ..., A^(T)`` (factor ``t`` of size
``K_t x I_t``).  It accepts tensors of shape ``(I_1, ..., I_T)``, applies
factor ``t`` along mode ``t`` and returns a ``(K_1, ..., K_T)`` tensor; the
equivalent dense operator is the Kronecker product of the factors taken in
reverse order (a consequence of the column-major ``vec`` convention in
:mod:`septrans.tensor_ops`) and is only ever formed for inspection and
testing, never to apply the transform.

The module also carries the bookkeeping that motivates the representation:
parameter counts against the dense equivalent, exact sparsity accounting of
the materialized operator, and the separable (asymmetric) convolution that
replaces a full ``k1 x k2 x c`` kernel with three thin filters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensor_ops import kron_chain, mode_product, unvec, vec


class SeparableTransform:
    """Ordered factor matrices plus an optional bias in vectorized output space.

    Factors are copied on construction and treated as immutable during
    forward evaluation; training code swaps whole arrays via the owning
    model rather than mutating entries in place.
    """

    def __init__(self, factors, bias=None):
        self.factors = [np.array(f, dtype=float) for f in factors]
        if not self.factors:
            raise ValueError("a separable transform needs at least one factor")
        for f in self.factors:
            if f.ndim != 2:
                raise ValueError("every factor must be a matrix")
            if min(f.shape) < 1:
                raise ValueError("factor extents must be positive")
        self.bias = None if bias is None else np.array(bias, dtype=float).ravel()
        if self.bias is not None and self.bias.size != self.out_size:
            raise ValueError(
                f"bias length {self.bias.size} does not match output size {self.out_size}"
            )

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self.factors)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def in_size(self) -> int:
        return int(np.prod(self.input_shape))

    @property
    def out_size(self) -> int:
        return int(np.prod(self.output_shape))

    def forward(self, x) -> np.ndarray:
        """Apply the factor chain mode by mode; add the bias if present."""
        x = np.asarray(x, dtype=float)
        if x.shape != self.input_shape:
            raise ValueError(
                f"input shape {x.shape} does not match transform input {self.input_shape}"
            )
        out = x
        for mode, f in enumerate(self.factors):
            out = mode_product(out, f, mode)
        if self.bias is not None:
            out = out + unvec(self.bias, self.output_shape)
        return out

    def forward_vec(self, v) -> np.ndarray:
        """Vectorized path: ``vec(forward(unvec(v)))``, exactly.

        This equality is the normative contract tying the mode-product
        path to the materialized operator.
        """
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.in_size:
            raise ValueError(
                f"input length {v.size} does not match transform input size {self.in_size}"
            )
        return vec(self.forward(unvec(v, self.input_shape)))

    def materialize(self) -> np.ndarray:
        """Dense equivalent ``W`` with ``forward_vec(v) == W @ v + bias``.

        Under the column-major ``vec`` convention the factors compose in
        reverse order: ``W = A^(T) kron ... kron A^(1)``.  Intended for
        inspection and cross-checks only; it has ``prod(K) * prod(I)``
        entries.
        """
        return kron_chain(list(reversed(self.factors)))

    def copy(self) -> "SeparableTransform":
        return SeparableTransform(self.factors, self.bias)


class ParamCount(NamedTuple):
    """Parameter counts of the factored map vs. its dense equivalent."""

    separable: int
    dense: int


def param_count(t: SeparableTransform) -> ParamCount:
    """``sum(K_t * I_t)`` factored entries against ``prod(K) * prod(I)`` dense ones.

    The bias, when present, counts on both sides (a dense replacement
    would carry the same bias).
    """
    bias_len = 0 if t.bias is None else t.bias.size
    separable = sum(f.size for f in t.factors) + bias_len
    dense = t.out_size * t.in_size + bias_len
    return ParamCount(separable=int(separable), dense=int(dense))


def compression_ratio(regular_params: int, light_params: int) -> float:
    """Regular model size divided by lightweight model size."""
    if light_params <= 0:
        raise ZeroDivisionError("lightweight parameter count must be positive")
    return float(regular_params) / float(light_params)


@dataclass(frozen=True)
class SparsityReport:
    """Exact zero/nonzero accounting for the factors and the materialized map.

    Entries of the materialized operator are single products of factor
    entries, so (ignoring underflow of extreme magnitudes)
    ``materialized_nonzeros == prod(factor_nonzeros)``; for two factors the
    zero count obeys the closed form
    ``z_A*K_2*I_2 + z_B*K_1*I_1 - z_A*z_B``.
    """

    factor_nonzeros: list[int]
    factor_zeros: list[int]
    materialized_nonzeros: int
    materialized_zeros: int


def sparsity_report(t: SeparableTransform) -> SparsityReport:
    """Count exact zeros per factor and in the materialized operator."""
    nnz = [int(np.count_nonzero(f)) for f in t.factors]
    zer = [int(f.size - n) for f, n in zip(t.factors, nnz)]
    w = t.materialize()
    wn = int(np.count_nonzero(w))
    return SparsityReport(
        factor_nonzeros=nnz,
        factor_zeros=zer,
        materialized_nonzeros=wn,
        materialized_zeros=int(w.size - wn),
    )


def two_factor_zero_count(t: SeparableTransform) -> int:
    """Closed-form zero count of the materialized map for exactly two factors."""
    if t.order != 2:
        raise ValueError("the closed form applies to two-factor transforms only")
    a, b = t.factors
    z_a = a.size - int(np.count_nonzero(a))
    z_b = b.size - int(np.count_nonzero(b))
    return z_a * b.size + z_b * a.size - z_a * z_b


def asym_conv_forward(x, f1, f2, f3) -> np.ndarray:
    """Separable convolution: ``k1 x 1`` then ``1 x k2`` per channel, then ``1 x 1`` mixing.

    ``x`` has shape ``(p, q, c)``; ``f1`` is ``(k1, c)`` (one column filter
    per channel), ``f2`` is ``(k2, c)`` (row filter per channel) and ``f3``
    is ``(n, c)`` (channel-mixing bank).  Valid padding, stride 1,
    correlation orientation (no kernel flip).  The result equals a direct
    3-D convolution with the rank-1 composed kernel
    ``K[d1, d2, ch, o] = f1[d1, ch] * f2[d2, ch] * f3[o, ch]``.
    """
    x = np.asarray(x, dtype=float)
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    f3 = np.asarray(f3, dtype=float)
    if x.ndim != 3:
        raise ValueError("input must be a (p, q, c) tensor")
    p, q, c = x.shape
    if f1.ndim != 2 or f1.shape[1] != c:
        raise ValueError("f1 must have shape (k1, channels)")
    if f2.ndim != 2 or f2.shape[1] != c:
        raise ValueError("f2 must have shape (k2, channels)")
    if f3.ndim != 2 or f3.shape[1] != c:
        raise ValueError("f3 must have shape (outputs, channels)")
    k1, k2 = f1.shape[0], f2.shape[0]
    if p < k1 or q < k2:
        raise ValueError(
            f"spatial extents ({p}, {q}) too small for filters ({k1}, {k2})"
        )
    out = np.zeros((p - k1 + 1, q, c))
    for d in range(k1):
        out += x[d : d + p - k1 + 1, :, :] * f1[d, :]
    out2 = np.zeros((p - k1 + 1, q - k2 + 1, c))
    for d in range(k2):
        out2 += out[:, d : d + q - k2 + 1, :] * f2[d, :]
    return np.tensordot(out2, f3, axes=([2], [1]))


def separable_conv_ratios(k1: int, k2: int, n: int) -> tuple[float, float]:
    """Parameter and complexity ratios of the separable conv vs. the depthwise split.

    Both ratios reduce to ``(k1 + k2 + n) / (k1*k2 + n)``: the channel count
    and the spatial extent cancel.
    """
    if min(k1, k2, n) < 1:
        raise ValueError("filter extents and output count must be positive")
    r = (k1 + k2 + n) / (k1 * k2 + n)
    return r, r


def matrix_pair_ratios(k1: int, i1: int, k2: int, i2: int) -> tuple[float, float]:
    """Two-factor savings for a ``(K1 K2) x (I1 I2)`` dense map.

    Returns ``(parameter ratio, complexity ratio)``:
    ``1/(K1*I1) + 1/(K2*I2)`` and ``1/K2 + 1/I1``.
    """
    if min(k1, i1, k2, i2) < 1:
        raise ValueError("extents must be positive")
    return 1.0 / (k1 * i1) + 1.0 / (k2 * i2), 1.0 / k2 + 1.0 / i1
