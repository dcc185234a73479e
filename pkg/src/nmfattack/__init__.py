"""Adversarial robustness probes for KL-divergence NMF.

The package fits non-negative factorizations with multiplicative updates,
scores how far a factorization's latent features drift from a reference with
a permutation- and scaling-invariant feature-error loss, and drives FGSM/PGD
attacks on that loss using either of two interchangeable gradient engines:
full reverse-mode through the unrolled updates, or implicit differentiation
at the solver's fixed point (constant memory in the iteration count).
"""

from .attacks import (
    AttackConfig,
    AttackResult,
    PathPoint,
    StepReport,
    fgsm,
    interpolation_path,
    pgd,
    rank_profile,
)
from .backprop import (
    GradientReport,
    IterateTape,
    backprop_gradient,
    mu_step_vjp,
    record_tape,
)
from .data import (
    DatasetBundle,
    SyntheticSpec,
    gen_synthetic,
    load_matrix,
    normalize_unit,
    remove_spikes,
    save_matrix,
)
from .feature_error import (
    Assignment,
    BalancedFeatures,
    DegenerateComponentError,
    balance,
    fe_loss,
    fem,
    hungarian,
    w_only_error,
)
from .implicit import (
    FixedPointError,
    ImplicitGradientReport,
    JacobianBlocks,
    assemble_jacobians,
    fixed_point_residual,
    implicit_gradient,
)
from .matrixcore import (
    SingularMatrixError,
    frobenius_norm,
    make_rng,
    matmul,
    solve_linear,
    uniform_matrix,
)
from .nmf import (
    NmfConfig,
    NmfModel,
    ReconError,
    kl_divergence,
    mu_step,
    reconstruction_error,
    run_nmf,
    seed_factors,
)

__version__ = "0.1.0"
