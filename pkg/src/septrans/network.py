"""A small feed-forward classifier whose linear layers are separable transforms.

Forward and backward passes run entirely through mode products; the dense
equivalent of a layer is never formed during training.  Backpropagation is
manual: for a layer ``Y = X x_1 A^(1) ... x_T A^(T) + bias`` with upstream
gradient ``G = dL/dY``, the gradient of factor ``t`` is
``unfold_t(G) @ unfold_t(Z_t)^T`` where ``Z_t`` applies every factor except
``t`` to the layer input, and the gradient passed down is the mode-product
chain of ``G`` with the transposed factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor_ops import unvec, vec
from .transform import SeparableTransform

ACTIVATIONS = ("relu", "none")


def _unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization; remaining modes keep their relative order."""
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1, order="F")


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z)
    e = np.exp(z)
    return e / np.sum(e)


def cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` with log-sum-exp stabilization."""
    z = np.asarray(logits, dtype=float).ravel()
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    m = float(np.max(z))
    lse = m + math.log(float(np.sum(np.exp(z - m))))
    return lse - float(z[label])


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations recorded by :meth:`SepMlp.forward`."""

    version: int
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    logits: np.ndarray


@dataclass
class LayerGrads:
    factors: list[np.ndarray]
    bias: np.ndarray | None


@dataclass
class GradientSet:
    """Gradients mirroring the model parameters, plus the input gradient."""

    layers: list[LayerGrads]
    input_grad: np.ndarray

    def flat(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for lg in self.layers:
            out.extend(lg.factors)
            if lg.bias is not None:
                out.append(lg.bias)
        return out


class SepMlp:
    """Stack of separable layers with ReLU between them and raw logits on top."""

    def __init__(self, layers, activations, num_classes: int):
        self.layers: list[SeparableTransform] = list(layers)
        self.activations: list[str] = list(activations)
        self.num_classes = int(num_classes)
        self._version = 0
        if not self.layers:
            raise ValueError("model needs at least one layer")
        if len(self.activations) != len(self.layers):
            raise ValueError("one activation tag per layer required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.output_shape != nxt.input_shape:
                raise ValueError(
                    f"layer output {prev.output_shape} does not feed layer input {nxt.input_shape}"
                )
        if self.layers[-1].out_size != self.num_classes:
            raise ValueError(
                f"final layer produces {self.layers[-1].out_size} logits "
                f"for {self.num_classes} classes"
            )

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.layers[0].input_shape

    def parameters(self) -> list[np.ndarray]:
        """Live parameter arrays: per layer, factors first, then bias."""
        params: list[np.ndarray] = []
        for layer in self.layers:
            params.extend(layer.factors)
            if layer.bias is not None:
                params.append(layer.bias)
        return params

    def set_parameters(self, new_params) -> None:
        """Replace all parameters (same order as :meth:`parameters`)."""
        expected = self.parameters()
        if len(new_params) != len(expected):
            raise ValueError(
                f"expected {len(expected)} parameter arrays, got {len(new_params)}"
            )
        idx = 0
        for layer in self.layers:
            for t in range(len(layer.factors)):
                p = np.asarray(new_params[idx], dtype=float)
                if p.shape != layer.factors[t].shape:
                    raise ValueError("parameter shape mismatch")
                layer.factors[t] = p.copy()
                idx += 1
            if layer.bias is not None:
                b = np.asarray(new_params[idx], dtype=float).ravel()
                if b.size != layer.bias.size:
                    raise ValueError("bias length mismatch")
                layer.bias = b.copy()
                idx += 1
        self._version += 1

    def all_factors(self) -> list[np.ndarray]:
        """Every factor matrix of every layer, in parameter order."""
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend(layer.factors)
        return out

    def copy(self) -> "SepMlp":
        return SepMlp(
            [layer.copy() for layer in self.layers],
            list(self.activations),
            self.num_classes,
        )

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        """Run the stack on one sample; the cache feeds :meth:`backward`."""
        h = np.asarray(x, dtype=float)
        if h.shape != self.input_shape:
            raise ValueError(
                f"input shape {h.shape} does not match model input {self.input_shape}"
            )
        inputs: list[np.ndarray] = []
        preacts: list[np.ndarray] = []
        for layer, act in zip(self.layers, self.activations):
            inputs.append(h)
            z = layer.forward(h)
            preacts.append(z)
            h = np.maximum(z, 0.0) if act == "relu" else z
        logits = vec(h)
        return logits, ForwardCache(self._version, inputs, preacts, logits)

    def backward(self, cache: ForwardCache, label: int) -> GradientSet:
        """Gradients of ``cross_entropy(forward(x), label)`` for every parameter.

        The cache must come from a forward pass against the current
        parameters; caches recorded before an update are rejected.
        """
        if cache.version != self._version:
            raise ValueError("stale forward cache: parameters changed since forward()")
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} out of range")
        p = softmax(cache.logits)
        p[label] -= 1.0
        grad = unvec(p, self.layers[-1].output_shape)

        layer_grads: list[LayerGrads] = [None] * len(self.layers)  # type: ignore
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            if self.activations[li] == "relu":
                grad = grad * (cache.preacts[li] > 0.0)
            x_in = cache.inputs[li]
            fgrads: list[np.ndarray] = []
            for t in range(layer.order):
                z = x_in
                for m, f in enumerate(layer.factors):
                    if m != t:
                        z = _mode_product_keep(z, f, m)
                fgrads.append(_unfold(grad, t) @ _unfold(z, t).T)
            bgrad = vec(grad) if layer.bias is not None else None
            layer_grads[li] = LayerGrads(factors=fgrads, bias=bgrad)
            down = grad
            for m, f in enumerate(layer.factors):
                down = _mode_product_keep(down, f.T, m)
            grad = down
        return GradientSet(layers=layer_grads, input_grad=grad)


def _mode_product_keep(x: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    # Local mode product without revalidation; shapes were checked at forward time.
    return np.moveaxis(np.tensordot(a, x, axes=(1, mode)), 0, mode)


def zero_grads_like(params) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def accumulate(total, delta) -> None:
    """In-place ``total += delta`` across matching parameter lists."""
    for t, d in zip(total, delta):
        t += d


def scale(total, c: float) -> None:
    for t in total:
        t *= c


@dataclass
class AdamState:
    """Adam moments and hyperparameters; moments mirror the parameter list."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params, grads) -> list[np.ndarray]:
    """One bias-corrected Adam update; returns new parameter arrays.

    Moment accumulators live in ``state`` and are updated in place, so a
    fixed (state, params, grads) sequence is bit-reproducible.
    """
    if len(params) != len(grads):
        raise ValueError("parameter/gradient count mismatch")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not mirror the parameters")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise ValueError("gradient shape mismatch")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    out = []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        out.append(p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
    return out


def build_mlp(layer_factor_shapes, num_classes: int, seed: int = 0, bias=True) -> SepMlp:
    """Construct and initialize a separable MLP.

    ``layer_factor_shapes`` lists, per layer, the ``(K_t, I_t)`` shapes of
    its factors.  Hidden layers get ReLU, the final layer none; ``bias`` is
    one flag for all layers or a per-layer list.  Factors draw from the
    uniform Glorot range of their own shape and are then rescaled by the
    T-th root of a gain so the materialized layer operator has
    approximately the Glorot scale of the full map; without that correction
    the product's magnitude collapses or explodes with T.
    """
    n_layers = len(layer_factor_shapes)
    bias_flags = list(bias) if isinstance(bias, (list, tuple)) else [bias] * n_layers
    if len(bias_flags) != n_layers:
        raise ValueError("need one bias flag per layer")
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    acts = []
    for li, shapes in enumerate(layer_factor_shapes):
        t_count = len(shapes)
        in_size = int(np.prod([i for _, i in shapes]))
        out_size = int(np.prod([k for k, _ in shapes]))
        target_std = math.sqrt(2.0 / (in_size + out_size))
        factor_std = math.prod(math.sqrt(2.0 / (k + i)) for k, i in shapes)
        gain = (target_std / factor_std) ** (1.0 / t_count)
        factors = []
        for k, i in shapes:
            limit = math.sqrt(6.0 / (k + i))
            factors.append(gain * rng.uniform(-limit, limit, size=(k, i)))
        b = np.zeros(out_size) if bias_flags[li] else None
        layers.append(SeparableTransform(factors, b))
        acts.append("none" if li == n_layers - 1 else "relu")
    return SepMlp(layers, acts, num_classes)
