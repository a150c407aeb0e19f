"""Moment tests for instrumental-variable models with simulated critical values.

The test statistic is a non-Studentized quadratic form in the instrument-moment
vector; critical values come from simulating the same quadratic form under a
normal with the estimated covariance. The package covers simple and composite
parameter tests for mean and quantile IV models, specification tests against
an unrestricted alternative, finite-sample bounds on the rejection-probability
error, asymptotic power via weighted noncentral-chi-square mixtures, the
Anderson-Rubin baseline, and a Monte Carlo replication engine.
"""

from .anderson_rubin import ARResult, ar_statistic, f_cdf, f_quantile
from .critical import NullSim, SimPlan, p_value, simulate_null
from .linprob import (
    PsdFactor,
    RngState,
    SymMatrix,
    derive_seed,
    empirical_quantile,
    mvn_quadratic_draws,
    psd_factor,
    standard_normal_matrix,
)
from .montecarlo import (
    ERROR_KINDS,
    CellResult,
    ErrorDist,
    ExperimentDesign,
    draw_errors,
    gen_composite_power_data,
    gen_null_data,
    gen_simple_power_data,
    replicate_table,
    run_cell,
    table_designs,
    write_cells_csv,
)
from .stats import (
    Dataset,
    ModelSpec,
    SigmaEstimate,
    ThetaPartition,
    moment_vector,
    quantile_indicators,
    residuals,
    sigma_hat,
    sigma_hat_q,
    t_statistic,
    tq_statistic,
)
from .testing import (
    OptimizerConfig,
    TestConfig,
    TestResult,
    estimate_theta,
    test_composite,
    test_composite_auto,
    test_composite_shortcut,
    test_simple,
    test_simple_quantile,
    test_specification,
    test_specification_quantile,
)
from .theory import (
    BoundInputs,
    BoundResult,
    MixtureSpec,
    TailEstimate,
    TheoryConstants,
    asymptotic_power,
    erp_bound,
    estimate_theory_constants,
    mixture_from_sigma,
    mixture_tail,
)

__version__ = "0.1.0"
