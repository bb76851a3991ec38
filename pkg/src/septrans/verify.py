"""Randomized property suite behind ``septrans verify``.

Each check pits a fast implementation against an independent reference:
definitional loops for the Kronecker/mode-product algebra, central finite
differences for every analytic gradient, exact counting for sparsity, and
brute-force materialization for the vectorized/multi-dimensional
equivalence.  All sampling is seeded, so a given (seed, trials) pair is
reproducible.

``fault="kron-sign"`` flips the sign of one entry of every Kronecker
product while the suite runs; it exists to prove the suite can fail.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor_ops
from .attacks import AttackConfig, attack
from .data import synthetic_gaussians
from .linalg import condition_number, numeric_rank
from .network import build_mlp, cross_entropy
from .penalties import (
    frobenius_penalty,
    frobenius_penalty_grad,
    logdet_penalty,
    logdet_penalty_grad,
    sparsity_penalty,
    sparsity_penalty_grad,
)
from .transform import SeparableTransform, sparsity_report, two_factor_zero_count

FAULT_MODES = ("kron-sign",)


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str


def finite_difference_grad(f, a: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences with per-entry steps scaled by entry magnitude."""
    g = np.zeros_like(a)
    for idx in np.ndindex(a.shape):
        h = step * max(1.0, abs(float(a[idx])))
        ap = a.copy()
        am = a.copy()
        ap[idx] += h
        am[idx] -= h
        g[idx] = (f(ap) - f(am)) / (2.0 * h)
    return g


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    got = np.asarray(got, dtype=float)
    want = np.asarray(want, dtype=float)
    scale = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1.0)
    return float(np.max(np.abs(got - want) / scale))


def _kron_loops(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ra, ca = a.shape
    rb, cb = b.shape
    out = np.zeros((ra * rb, ca * cb))
    for i in range(ra):
        for j in range(ca):
            out[i * rb : (i + 1) * rb, j * cb : (j + 1) * cb] = a[i, j] * b
    return out


def _mode_product_loops(x: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    out_shape = list(x.shape)
    out_shape[mode] = a.shape[0]
    out = np.zeros(out_shape)
    for out_idx in np.ndindex(*out_shape):
        acc = 0.0
        for j in range(x.shape[mode]):
            src = list(out_idx)
            src[mode] = j
            acc += x[tuple(src)] * a[out_idx[mode], j]
        out[out_idx] = acc
    return out


def check_kron_definition(trials: int, rng) -> PropertyResult:
    for _ in range(trials):
        a = rng.integers(-4, 5, size=(rng.integers(1, 4), rng.integers(1, 4))).astype(float)
        b = rng.integers(-4, 5, size=(rng.integers(1, 4), rng.integers(1, 4))).astype(float)
        got = tensor_ops.kron(a, b)
        want = _kron_loops(a, b)
        if got.shape != want.shape or not np.array_equal(got, want):
            return PropertyResult("kron-definition", False, "block expansion mismatch")
    return PropertyResult("kron-definition", True, f"{trials} trials, exact")


def check_mode_product_definition(trials: int, rng) -> PropertyResult:
    for _ in range(trials):
        shape = tuple(rng.integers(1, 4, size=rng.integers(1, 4)))
        mode = int(rng.integers(0, len(shape)))
        x = rng.integers(-3, 4, size=shape).astype(float)
        a = rng.integers(-3, 4, size=(rng.integers(1, 5), shape[mode])).astype(float)
        got = tensor_ops.mode_product(x, a, mode)
        want = _mode_product_loops(x, a, mode)
        if not np.array_equal(got, want):
            return PropertyResult("mode-product-definition", False, "loop oracle mismatch")
    return PropertyResult("mode-product-definition", True, f"{trials} trials, exact")


def check_kron_associativity(trials: int, rng) -> PropertyResult:
    worst = 0.0
    for _ in range(trials):
        a = rng.normal(size=(2, 2))
        b = rng.normal(size=(2, 3))
        c = rng.normal(size=(3, 2))
        left = tensor_ops.kron(tensor_ops.kron(a, b), c)
        right = tensor_ops.kron(a, tensor_ops.kron(b, c))
        worst = max(worst, _rel_err(left, right))
    ok = worst <= 1e-14
    return PropertyResult("kron-associativity", ok, f"{trials} trials, max rel err {worst:.2e}")


def check_kron_norm(trials: int, rng) -> PropertyResult:
    worst = 0.0
    for _ in range(trials):
        mats = [rng.normal(size=(rng.integers(2, 4), rng.integers(2, 4))) for _ in range(3)]
        chain = tensor_ops.kron_chain(mats)
        got = float(np.linalg.norm(chain))
        want = math.prod(float(np.linalg.norm(m)) for m in mats)
        worst = max(worst, abs(got - want) / max(want, 1e-300))
    ok = worst <= 1e-12
    return PropertyResult("kron-norm-multiplicativity", ok, f"{trials} trials, max rel err {worst:.2e}")


def check_kron_rank(trials: int, rng) -> PropertyResult:
    for _ in range(trials):
        ra = int(rng.integers(1, 4))
        rb = int(rng.integers(1, 4))
        a = rng.normal(size=(3, ra)) @ rng.normal(size=(ra, 3))
        b = rng.normal(size=(3, rb)) @ rng.normal(size=(rb, 3))
        got = numeric_rank(tensor_ops.kron(a, b))
        if got != ra * rb:
            return PropertyResult(
                "kron-rank-multiplicativity", False, f"rank {got} != {ra}*{rb}"
            )
    return PropertyResult("kron-rank-multiplicativity", True, f"{trials} trials, exact")


def _well_conditioned(rng, n: int, kappa_cap: float = 1e3) -> np.ndarray:
    while True:
        m = rng.normal(size=(n, n))
        try:
            if condition_number(m) <= kappa_cap:
                return m
        except Exception:
            continue


def check_kron_condition(trials: int, rng) -> PropertyResult:
    worst = 0.0
    for _ in range(trials):
        a = _well_conditioned(rng, 3)
        b = _well_conditioned(rng, 3)
        got = condition_number(tensor_ops.kron(a, b))
        want = condition_number(a) * condition_number(b)
        worst = max(worst, abs(got - want) / want)
    ok = worst <= 1e-8
    return PropertyResult(
        "kron-condition-multiplicativity", ok, f"{trials} trials, max rel err {worst:.2e}"
    )


def check_sparsity_counting(trials: int, rng) -> PropertyResult:
    for _ in range(trials):
        shape_a = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        shape_b = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
        a = rng.uniform(0.5, 2.0, size=shape_a) * (rng.random(size=shape_a) < 0.6)
        b = rng.uniform(0.5, 2.0, size=shape_b) * (rng.random(size=shape_b) < 0.6)
        t = SeparableTransform([a, b])
        rep = sparsity_report(t)
        if rep.materialized_nonzeros != rep.factor_nonzeros[0] * rep.factor_nonzeros[1]:
            return PropertyResult("kron-sparsity-counting", False, "nonzero product violated")
        if rep.materialized_zeros != two_factor_zero_count(t):
            return PropertyResult("kron-sparsity-counting", False, "zero-count closed form violated")
    return PropertyResult("kron-sparsity-counting", True, f"{trials} trials, exact")


def check_mdvec_equivalence(trials: int, rng) -> PropertyResult:
    worst = 0.0
    for trial in range(trials):
        t_count = int(rng.integers(1, 4))
        shapes = [(int(rng.integers(1, 4)), int(rng.integers(1, 4))) for _ in range(t_count)]
        integer_data = trial % 2 == 0
        if integer_data:
            factors = [rng.integers(-3, 4, size=s).astype(float) for s in shapes]
            bias = rng.integers(-3, 4, size=int(np.prod([k for k, _ in shapes]))).astype(float)
        else:
            factors = [rng.normal(size=s) for s in shapes]
            bias = rng.normal(size=int(np.prod([k for k, _ in shapes])))
        t = SeparableTransform(factors, bias)
        if integer_data:
            x = rng.integers(-3, 4, size=t.input_shape).astype(float)
        else:
            x = rng.normal(size=t.input_shape)
        via_md = tensor_ops.vec(t.forward(x))
        via_vec = t.forward_vec(tensor_ops.vec(x))
        if integer_data and not np.array_equal(via_md, via_vec):
            return PropertyResult(
                "mdvec-equivalence", False, "vec path diverged from md path on integer data"
            )
        worst = max(worst, _rel_err(via_md, via_vec))
        dense = t.materialize() @ tensor_ops.vec(x) + t.bias
        worst = max(worst, _rel_err(via_vec, dense))
    ok = worst <= 1e-12
    return PropertyResult("mdvec-equivalence", ok, f"{trials} trials, max rel err {worst:.2e}")


def _grad_check(name: str, value_fn, grad_fn, points, tol: float) -> PropertyResult:
    worst = 0.0
    for a in points:
        want = finite_difference_grad(value_fn, a)
        got = grad_fn(a)
        worst = max(worst, _rel_err(got, want))
    ok = worst <= tol
    return PropertyResult(name, ok, f"{len(points)} points, max rel err {worst:.2e}")


def check_frobenius_gradient(trials: int, rng) -> PropertyResult:
    points = [rng.normal(size=(int(rng.integers(2, 5)), int(rng.integers(2, 5)))) for _ in range(trials)]
    return _grad_check(
        "frobenius-penalty-gradient",
        lambda a: frobenius_penalty([a]),
        lambda a: frobenius_penalty_grad([a])[0],
        points,
        1e-5,
    )


def check_logdet_gradient(trials: int, rng) -> PropertyResult:
    points = []
    for _ in range(trials):
        n = int(rng.integers(2, 4))
        points.append(np.eye(n) + 0.3 * rng.normal(size=(n, n)))
    return _grad_check(
        "logdet-penalty-gradient",
        lambda a: logdet_penalty([a]),
        lambda a: logdet_penalty_grad([a])[0],
        points,
        1e-5,
    )


def check_sparsity_gradient(trials: int, rng) -> PropertyResult:
    points = [rng.normal(size=(3, 4)) for _ in range(trials)]
    p = 0.5
    return _grad_check(
        "sparsity-penalty-gradient",
        lambda a: sparsity_penalty(a, p=p),
        lambda a: sparsity_penalty_grad(a, p=p),
        points,
        1e-5,
    )


def check_network_gradient(trials: int, rng) -> PropertyResult:
    worst = 0.0
    for trial in range(max(1, trials // 4)):
        model = build_mlp([[(3, 2), (2, 3)], [(1, 3), (3, 2)]], num_classes=3, seed=int(rng.integers(1 << 30)))
        x = rng.uniform(0.1, 0.9, size=model.input_shape)
        label = int(rng.integers(0, 3))
        logits, cache = model.forward(x)
        if float(np.min(np.abs(np.concatenate([p.ravel() for p in cache.preacts])))) < 1e-3:
            continue  # keep finite differences away from the ReLU kink
        grads = model.backward(cache, label).flat()
        params = model.parameters()
        for pi in range(len(params)):
            def loss_at(a, pi=pi):
                trial_params = [p.copy() for p in params]
                trial_params[pi] = a.reshape(trial_params[pi].shape)
                probe = model.copy()
                probe.set_parameters(trial_params)
                lg, _ = probe.forward(x)
                return cross_entropy(lg, label)

            want = finite_difference_grad(loss_at, params[pi].copy())
            worst = max(worst, _rel_err(grads[pi], want))
    ok = worst <= 1e-4
    return PropertyResult("network-backprop-gradient", ok, f"max rel err {worst:.2e}")


def check_attack_containment(trials: int, rng) -> PropertyResult:
    model = build_mlp([[(2, 2), (2, 2)]], num_classes=4, seed=7)
    data = synthetic_gaussians(4, max(2, trials // 16), (2, 2), separation=0.8, seed=11)
    cfgs = [
        AttackConfig(kind="fgsm", eps=0.1),
        AttackConfig(kind="pgd", eps=0.031, steps=10, step_size=0.0078),
    ]
    for cfg in cfgs:
        for x, y in data:
            adv = attack(model, x, y, cfg)
            if float(np.max(np.abs(adv - x))) > cfg.eps + 1e-12:
                return PropertyResult("attack-ball-containment", False, f"{cfg.kind} left the ball")
            if np.any(adv < cfg.lo) or np.any(adv > cfg.hi):
                return PropertyResult("attack-ball-containment", False, f"{cfg.kind} left the range")
    return PropertyResult("attack-ball-containment", True, f"{2 * len(data)} attacked samples in bounds")


_CHECKS = (
    check_kron_definition,
    check_mode_product_definition,
    check_kron_associativity,
    check_kron_norm,
    check_kron_rank,
    check_kron_condition,
    check_sparsity_counting,
    check_mdvec_equivalence,
    check_frobenius_gradient,
    check_logdet_gradient,
    check_sparsity_gradient,
    check_network_gradient,
    check_attack_containment,
)


@contextmanager
def _kron_sign_fault():
    original = tensor_ops.kron

    def flipped(a, b):
        out = original(a, b)
        out[0, 0] = -out[0, 0]
        return out

    tensor_ops.kron = flipped
    try:
        yield
    finally:
        tensor_ops.kron = original


def run_all(trials: int = 100, seed: int = 2024, fault: str | None = None) -> list[PropertyResult]:
    """Run every property check; ``trials`` scales the sample counts."""
    if trials < 1:
        raise ValueError("trials must be positive")
    if fault is not None and fault not in FAULT_MODES:
        raise ValueError(f"unknown fault mode {fault!r}")

    def _execute() -> list[PropertyResult]:
        results = []
        for i, check in enumerate(_CHECKS):
            rng = np.random.Generator(np.random.PCG64(seed + 7919 * i))
            results.append(check(trials, rng))
        return results

    if fault == "kron-sign":
        with _kron_sign_fault():
            return _execute()
    return _execute()
