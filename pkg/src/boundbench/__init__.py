"""Instrumented gradient descent on fixed-width smoothed-ReLU networks:
closed-form hyperparameters, logistic-loss training, and runtime monitors
for the step-by-step inequalities behind its convergence guarantees."""

from .activations import (
    Activation,
    ActivationKind,
    SmoothnessReport,
    certify_h_smooth,
    huberized,
    swish,
)
from .bounds import (
    RunContext,
    RunLog,
    StepRecord,
    StepState,
    TheoryConstants,
    Tolerances,
    Verdict,
    compute_alpha_max,
    compute_h_max,
    compute_q_tilde,
    grad_lower_bound,
    grad_upper_bound,
    monitor_transition,
    probe_local_lipschitz,
    smoothness_bound,
    summarize,
    theory_constants,
    weight_norm_floor,
    write_csv,
    write_summary_json,
)
from .linalg import (
    PowerIterationResult,
    ShapeMismatchError,
    StackNorms,
    WeightStack,
    frobenius_norm,
    operator_norm,
    stack_axpy,
    stack_dot,
    stack_norms,
    stack_scale,
)
from .network import (
    Dataset,
    ForwardTrace,
    LossValue,
    forward,
    g_factor,
    gd_step,
    gradient,
    loss_and_gradient,
    output_gradient,
    sample_loss,
    total_loss,
)
from .ntk import (
    ClusteredDataSpec,
    InitSpec,
    MarginWitness,
    NtBallConfig,
    NumericalDivergenceError,
    PhasePlan,
    approx_error_sample,
    gamma_bound,
    gaussian_init,
    init_diagnostics,
    make_clustered_dataset,
    margin_estimate_subgradient,
    margin_gamma,
    margin_witness_clustered,
    nt_class_minimize,
    ntk_features,
    two_phase_train,
)
from .oracles import FdConfig, fd_compare, fd_gradient, kink_exclusions

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
