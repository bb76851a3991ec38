"""Training loops, evaluation metrics, pruning and condition reporting.

The objective is the mean cross-entropy of a batch plus the three weighted
factor penalties; the adversarially trained variant evaluates the data term
on per-sample attack outputs generated against the current parameters.  One
epoch shuffles the dataset with a seeded generator, walks minibatches, and
applies one Adam update per batch on the summed gradient (data term plus
penalty gradients).  Everything is deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, attack
from .data import Dataset
from .linalg import RankDeficientError, condition_number
from .network import (
    AdamState,
    SepMlp,
    accumulate,
    adam_step,
    cross_entropy,
    scale,
    zero_grads_like,
)
from .penalties import PenaltyConfig, penalty_values, weighted_penalty_grads
from .transform import param_count


@dataclass(frozen=True)
class TrainConfig:
    """Epoch count, batching, penalties, optional attack and optimizer knobs.

    ``attack = None`` trains on clean samples only; providing an attack
    configuration switches the data term to adversarial examples.  A positive
    ``prune_threshold`` zeroes small factor entries after the last epoch.
    """

    epochs: int
    batch_size: int
    penalties: PenaltyConfig = field(default_factory=PenaltyConfig)
    attack: AttackConfig | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    prune_threshold: float = 0.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.prune_threshold < 0:
            raise ValueError("prune_threshold must be non-negative")


@dataclass(frozen=True)
class LossParts:
    """Total objective and its summands (penalty parts are unweighted)."""

    total: float
    data: float
    frob: float
    logdet: float
    sparse: float


@dataclass
class EpochStats:
    total_loss: float
    data_loss: float
    frob: float
    logdet: float
    sparse: float
    na: float
    ra: float | None


@dataclass
class TrainReport:
    """Per-epoch metrics plus final compression and conditioning numbers."""

    epochs: list[EpochStats] = field(default_factory=list)
    final_na: float = 0.0
    final_ra: float | None = None
    structural_cr: float = 1.0
    pruned_cr: float = 1.0
    layer_conditions: list[float] = field(default_factory=list)
    na_variance: float | None = None
    ra_variance: float | None = None


def regularized_loss(model: SepMlp, batch, penalties: PenaltyConfig) -> LossParts:
    """Mean cross-entropy over the batch plus the weighted penalties."""
    data = _mean_data_loss(model, [(x, y) for x, y in batch])
    return _with_penalties(model, data, penalties)


def adversarial_loss(
    model: SepMlp, batch, penalties: PenaltyConfig, attack_cfg: AttackConfig
) -> LossParts:
    """Like :func:`regularized_loss` with the data term on attacked inputs."""
    adv_batch = [(attack(model, x, y, attack_cfg), y) for x, y in batch]
    data = _mean_data_loss(model, adv_batch)
    return _with_penalties(model, data, penalties)


def _mean_data_loss(model: SepMlp, pairs) -> float:
    if not pairs:
        raise ValueError("empty batch")
    total = 0.0
    for x, y in pairs:
        logits, _ = model.forward(x)
        total += cross_entropy(logits, y)
    return total / len(pairs)


def _with_penalties(model: SepMlp, data: float, penalties: PenaltyConfig) -> LossParts:
    vals = penalty_values(model.all_factors(), penalties)
    return LossParts(
        total=data + vals.weighted_total(penalties),
        data=data,
        frob=vals.frob,
        logdet=vals.logdet,
        sparse=vals.sparse,
    )


def loss_and_gradient(
    model: SepMlp,
    batch,
    penalties: PenaltyConfig,
    attack_cfg: AttackConfig | None = None,
) -> tuple[LossParts, list[np.ndarray]]:
    """Objective value and its gradient for one minibatch.

    The gradient is the elementwise sum of the mean data-term gradient
    (on attacked inputs when ``attack_cfg`` is given) and the weighted
    penalty gradients, aligned with ``model.parameters()``.
    """
    pairs = [(x, y) for x, y in batch]
    if attack_cfg is not None:
        pairs = [(attack(model, x, y, attack_cfg), y) for x, y in pairs]
    params = model.parameters()
    total_grads = zero_grads_like(params)
    data = 0.0
    for x, y in pairs:
        logits, cache = model.forward(x)
        data += cross_entropy(logits, y)
        accumulate(total_grads, model.backward(cache, y).flat())
    scale(total_grads, 1.0 / len(pairs))
    data /= len(pairs)

    pen_grads = iter(weighted_penalty_grads(model.all_factors(), penalties))
    idx = 0
    for layer in model.layers:
        for _ in layer.factors:
            total_grads[idx] += next(pen_grads)
            idx += 1
        if layer.bias is not None:
            idx += 1

    vals = penalty_values(model.all_factors(), penalties)
    parts = LossParts(
        total=data + vals.weighted_total(penalties),
        data=data,
        frob=vals.frob,
        logdet=vals.logdet,
        sparse=vals.sparse,
    )
    return parts, total_grads


def evaluate(model: SepMlp, dataset: Dataset, attack_cfg: AttackConfig | None = None) -> float:
    """Argmax accuracy in percent, on clean or per-sample attacked inputs."""
    if len(dataset) == 0:
        return 0.0
    correct = 0
    for x, y in dataset:
        if attack_cfg is not None:
            x = attack(model, x, y, attack_cfg)
        logits, _ = model.forward(x)
        if int(np.argmax(logits)) == y:
            correct += 1
    return 100.0 * correct / len(dataset)


def train(model: SepMlp, dataset: Dataset, cfg: TrainConfig) -> tuple[SepMlp, TrainReport]:
    """Run the full loop on a copy of ``model``; the original is untouched.

    Per epoch: seeded shuffle, minibatches of ``cfg.batch_size``, adversarial
    example generation when an attack is configured, one Adam step per batch,
    then accuracy bookkeeping.  After the last epoch the model is magnitude
    pruned when ``cfg.prune_threshold > 0``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.input_shape != model.input_shape:
        raise ValueError(
            f"dataset shape {dataset.input_shape} does not match model input {model.input_shape}"
        )
    model = model.copy()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    adam = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    report = TrainReport()
    n = len(dataset)
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        batch_stats: list[LossParts] = []
        for start in range(0, n, cfg.batch_size):
            batch = [dataset[int(i)] for i in perm[start : start + cfg.batch_size]]
            parts, grads = loss_and_gradient(model, batch, cfg.penalties, cfg.attack)
            model.set_parameters(adam_step(adam, model.parameters(), grads))
            batch_stats.append(parts)
        na = evaluate(model, dataset)
        ra = evaluate(model, dataset, cfg.attack) if cfg.attack is not None else None
        report.epochs.append(
            EpochStats(
                total_loss=_mean(s.total for s in batch_stats),
                data_loss=_mean(s.data for s in batch_stats),
                frob=_mean(s.frob for s in batch_stats),
                logdet=_mean(s.logdet for s in batch_stats),
                sparse=_mean(s.sparse for s in batch_stats),
                na=na,
                ra=ra,
            )
        )
    report.structural_cr = structural_compression(model)
    if cfg.prune_threshold > 0.0:
        model, report.pruned_cr = prune(model, cfg.prune_threshold)
    else:
        _, report.pruned_cr = prune(model, 0.0)
    report.final_na = evaluate(model, dataset)
    report.final_ra = evaluate(model, dataset, cfg.attack) if cfg.attack is not None else None
    report.layer_conditions = condition_report(model)
    return model, report


def _mean(values) -> float:
    vals = list(values)
    return sum(vals) / len(vals) if vals else 0.0


def structural_compression(model: SepMlp) -> float:
    """Dense-equivalent parameter count over the separable parameter count."""
    dense = sum(param_count(layer).dense for layer in model.layers)
    light = sum(param_count(layer).separable for layer in model.layers)
    return dense / light


def prune(model: SepMlp, threshold: float) -> tuple[SepMlp, float]:
    """Zero factor entries with ``|a| < threshold``; report the achieved ratio.

    The achieved compression is the dense-equivalent count divided by the
    surviving nonzero factor entries plus all bias entries (biases are never
    pruned).  A model pruned to nothing yields ``inf`` rather than an error
    so threshold sweeps survive the degenerate end.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    pruned = model.copy()
    for layer in pruned.layers:
        for t in range(layer.order):
            f = layer.factors[t].copy()
            f[np.abs(f) < threshold] = 0.0
            layer.factors[t] = f
    pruned._version += 1
    dense = sum(param_count(layer).dense for layer in pruned.layers)
    remaining = sum(int(np.count_nonzero(f)) for f in pruned.all_factors())
    remaining += sum(layer.bias.size for layer in pruned.layers if layer.bias is not None)
    cr = float("inf") if remaining == 0 else dense / remaining
    return pruned, cr


def condition_report(model: SepMlp) -> list[float]:
    """Per-layer condition number of the materialized operator, via the
    product of factor condition numbers (the operator itself is never formed).
    Rank-deficient factors give ``inf`` for their layer."""
    out = []
    for layer in model.layers:
        kappa = 1.0
        for f in layer.factors:
            try:
                kappa *= condition_number(f)
            except RankDeficientError:
                kappa = float("inf")
                break
        out.append(kappa)
    return out


@dataclass
class SeedSweep:
    """Per-seed models and reports plus accuracy spread across seeds."""

    seeds: list[int]
    models: list[SepMlp]
    reports: list[TrainReport]
    na_values: list[float]
    ra_values: list[float] | None
    na_variance: float
    ra_variance: float | None


def run_seeds(build_model, dataset: Dataset, cfg: TrainConfig, seeds) -> SeedSweep:
    """Train one model per seed and compute the population variance of the
    final accuracies.  ``build_model(seed)`` must return a freshly
    initialized model for that seed."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    models: list[SepMlp] = []
    reports: list[TrainReport] = []
    for s in seeds:
        run_cfg = _replace_seed(cfg, s)
        m, r = train(build_model(s), dataset, run_cfg)
        models.append(m)
        reports.append(r)
    na_values = [r.final_na for r in reports]
    has_ra = all(r.final_ra is not None for r in reports)
    ra_values = [float(r.final_ra) for r in reports] if has_ra else None
    multi = len(seeds) > 1
    na_var = float(np.var(na_values)) if multi else 0.0
    ra_var = float(np.var(ra_values)) if (multi and ra_values is not None) else None
    if multi:
        for r in reports:
            r.na_variance = na_var
            r.ra_variance = ra_var
    return SeedSweep(
        seeds=seeds,
        models=models,
        reports=reports,
        na_values=na_values,
        ra_values=ra_values,
        na_variance=na_var,
        ra_variance=ra_var,
    )


def _replace_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        penalties=cfg.penalties,
        attack=cfg.attack,
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        adam_eps=cfg.adam_eps,
        seed=seed,
        prune_threshold=cfg.prune_threshold,
    )
