"""coverplan: scale-invariant coverage trajectory optimization.

Generates coverage trajectories over arbitrary sampled domains by minimizing
a log-surrogate kernel distribution-matching objective under differential
dynamics constraints with optimizable time steps, using bandwidth annealing
and an augmented-Lagrangian solver.
"""

from .domain import (
    DegenerateDomain,
    DomainSamples,
    NormalizedDomain,
    ParseError,
    compute_extent,
    load_samples,
)
from .kernel import (
    EmptyInput,
    KernelConfig,
    LogKernelMatrix,
    eval_kernel,
    log_kernel_matrix,
    logsumexp,
    metric_gradient,
)
from .objective import (
    EmmdProblem,
    ObjectiveEval,
    TrajectoryPoints,
    attention_weights,
    emmd,
    emmd_gradient,
    log_emmd,
    log_emmd_gradient,
)
from .dynamics import (
    ConstraintResidual,
    DynamicsModel,
    Trajectory,
    equality_residuals,
    inequality_residuals,
    project_to_search_space,
    seed_trajectory,
)
from .solver import (
    ALConfig,
    AnnealingSchedule,
    InnerConfig,
    InvalidSchedule,
    SolverConfig,
    SolverReport,
    anneal_sequence,
    augmented_lagrangian_value_and_grad,
    inner_minimize,
    solve,
)
from .evaluation import (
    AdaptiveDtComparison,
    BenchmarkRow,
    CoverageResult,
    SweepConfig,
    coverage,
    fixed_vs_adaptive_dt,
    run_scale_sweep,
    tsp_nearest_neighbor,
)

__version__ = "0.1.0"
