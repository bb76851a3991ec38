"""Separable (Kronecker-factored) linear transformations for robust,
lightweight classifiers: tensor algebra, factor penalties with exact
gradients, manual-backprop networks, FGSM/PGD attacks, training loops,
and a randomized verification suite.
"""

from .attacks import AttackConfig, attack, fgsm, input_gradient, pgd
from .data import (
    CheckpointError,
    Dataset,
    IdxFormatError,
    load_checkpoint,
    load_idx,
    read_checkpoint,
    save_checkpoint,
    synthetic_gaussians,
)
from .linalg import (
    RankDeficientError,
    SvdResult,
    condition_number,
    gram_logdet,
    numeric_rank,
    svd,
)
from .network import (
    AdamState,
    ForwardCache,
    GradientSet,
    SepMlp,
    adam_step,
    build_mlp,
    cross_entropy,
    softmax,
)
from .penalties import (
    PenaltyConfig,
    PenaltyValues,
    frobenius_penalty,
    frobenius_penalty_grad,
    logdet_penalty,
    logdet_penalty_grad,
    penalty_values,
    sparsity_penalty,
    sparsity_penalty_grad,
    sparsity_penalty_total,
    weighted_penalty_grads,
)
from .tensor_ops import kron, kron_chain, mode_product, unvec, vec
from .training import (
    EpochStats,
    LossParts,
    SeedSweep,
    TrainConfig,
    TrainReport,
    adversarial_loss,
    condition_report,
    evaluate,
    loss_and_gradient,
    prune,
    regularized_loss,
    run_seeds,
    structural_compression,
    train,
)
from .transform import (
    ParamCount,
    SeparableTransform,
    SparsityReport,
    asym_conv_forward,
    compression_ratio,
    matrix_pair_ratios,
    param_count,
    separable_conv_ratios,
    sparsity_report,
    two_factor_zero_count,
)
from .verify import PropertyResult, finite_difference_grad, run_all

__version__ = "0.1.0"
