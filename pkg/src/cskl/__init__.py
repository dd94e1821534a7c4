"""Multiple kernel learning with direct control over the number of selected kernels."""

from .kernels import (
    Dataset,
    GramMatrix,
    KernelBank,
    KernelSpec,
    build_bank,
    combine,
    compute_gram,
    cross_gram,
    load_bank,
    load_bank_csv,
    save_bank,
    stabilize,
    subset_bank,
    trace_normalize,
)
from .optimizer import (
    CsklConfig,
    MklWeights,
    OptTrace,
    cskl_train,
    descent_direction,
    lp_direction,
    lpnorm_mkl_train,
    max_step,
    reduced_gradient_gamma_step,
    simplemkl_train,
    top_t_sum,
    top_t_weights,
)
from .svm import (
    SvmConfig,
    SvmSolution,
    decision_values,
    kernel_quad_forms,
    solve_csvm,
    solve_nusvm,
    solve_svm,
)

__version__ = "0.1.0"
