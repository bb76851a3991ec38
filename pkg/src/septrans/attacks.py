"""Adversarial example generation under an l-infinity budget.

Both attacks perturb a clean input within ``[lo, hi]`` and an epsilon ball
around it: FGSM takes one signed-gradient step of size epsilon, PGD iterates
smaller signed steps and re-projects after every one, so every iterate obeys
both constraints.  ``sign(0) = 0``: a zero gradient leaves the input alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .network import SepMlp


@dataclass(frozen=True)
class AttackConfig:
    """Kind, budget and iteration schedule of an attack.

    ``eps`` is in input units and must fit the ``[lo, hi]`` range.  For PGD,
    ``steps * step_size >= eps`` is recommended (a smaller total movement
    cannot reach the ball boundary); a warning is emitted otherwise.
    ``random_start`` begins PGD from a seeded uniform point inside the ball
    instead of the clean input.
    """

    kind: str
    eps: float
    steps: int = 10
    step_size: float | None = None
    lo: float = 0.0
    hi: float = 1.0
    random_start: bool = False
    start_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.hi <= self.lo:
            raise ValueError("input range is empty")
        if self.eps > self.hi - self.lo:
            raise ValueError("eps exceeds the input range")
        if self.kind == "pgd":
            if self.steps < 1:
                raise ValueError("pgd needs at least one step")
            if self.step_size is None or self.step_size <= 0:
                raise ValueError("pgd needs a positive step_size")
            if self.steps * self.step_size < self.eps:
                warnings.warn(
                    "pgd schedule cannot reach the ball boundary: "
                    f"steps*step_size = {self.steps * self.step_size:.4g} < eps = {self.eps:.4g}",
                    stacklevel=2,
                )


def input_gradient(model: SepMlp, x, label: int) -> np.ndarray:
    """Gradient of the cross-entropy loss with respect to the input tensor."""
    _, cache = model.forward(x)
    return model.backward(cache, label).input_grad


def fgsm(model: SepMlp, x, label: int, cfg: AttackConfig) -> np.ndarray:
    """Single signed-gradient step clipped to the input range."""
    x = _check_input(x, cfg)
    g = input_gradient(model, x, label)
    return np.clip(x + cfg.eps * np.sign(g), cfg.lo, cfg.hi)


def pgd(model: SepMlp, x, label: int, cfg: AttackConfig) -> np.ndarray:
    """Iterated signed steps, each projected onto the eps ball and the range."""
    x0 = _check_input(x, cfg)
    adv = x0.copy()
    if cfg.random_start:
        rng = np.random.Generator(np.random.PCG64(cfg.start_seed))
        adv = np.clip(
            np.clip(x0 + rng.uniform(-cfg.eps, cfg.eps, size=x0.shape), x0 - cfg.eps, x0 + cfg.eps),
            cfg.lo,
            cfg.hi,
        )
    step = cfg.step_size if cfg.step_size is not None else cfg.eps
    for _ in range(cfg.steps):
        g = input_gradient(model, adv, label)
        adv = adv + step * np.sign(g)
        adv = np.clip(adv, x0 - cfg.eps, x0 + cfg.eps)
        adv = np.clip(adv, cfg.lo, cfg.hi)
    return adv


def attack(model: SepMlp, x, label: int, cfg: AttackConfig) -> np.ndarray:
    """Dispatch on ``cfg.kind``."""
    if cfg.kind == "fgsm":
        return fgsm(model, x, label, cfg)
    return pgd(model, x, label, cfg)


def _check_input(x, cfg: AttackConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(x < cfg.lo) or np.any(x > cfg.hi):
        raise ValueError("input lies outside the configured [lo, hi] range")
    return x
