"""torusflow: reflected stochastic transport on the circle.

Simulation library for a measure-valued process represented by the pair
(g, M): the derivative of an equivariant quantile-type map and its mean
level.  The package provides circular optimal-transport geometry, a
parabolic obstacle solver, a reflected SPDE stepper with penalised and
projected variants, shared-noise coupling with a Girsanov ledger, and
deterministic transport baselines, plus a batch CLI.
"""

from .baseline import FlowState, evolve_lagrangian, evolve_quantile
from .coupling import (
    CouplingConfig,
    CouplingResult,
    FellerEstimate,
    GirsanovLedger,
    girsanov_log_density,
    markov_shift_test,
    run_coupled_pair,
    strong_feller_probe,
    tv_bound_estimate,
)
from .heat import SpectralPlan, greens_function, semigroup_apply, stochastic_convolution
from .interaction import (
    AssumptionReport,
    KernelSpec,
    beta_field,
    eval_b,
    eval_b_prime,
    load_kernel_csv,
    m_drift,
    probe_assumptions,
)
from .kernels import BACKEND
from .noise import (
    NoiseIncrement,
    SeedSpec,
    read_noise,
    sample_bm,
    sample_increments,
    sample_white_noise,
    write_noise,
)
from .obstacle import (
    ObstaclePath,
    ObstacleSolution,
    solve_obstacle,
    solve_obstacle_penalised,
    weak_form_residual,
)
from .spde import (
    CoupledState,
    PicardDivergenceError,
    ReflectionLedger,
    SolverConfig,
    Trajectory,
    check_solution,
    picard_solve,
    simulate,
)
from .torus import (
    EquivariantMap,
    GridSpec,
    MeasureH1,
    PeriodicField,
    TorusMeasure,
    circular_wasserstein,
    d12_metric,
    equivariant_l2_distance,
    pushforward_measure,
    quantile_from_atoms,
    reconstruct_A,
    torus_distance,
)

__version__ = "0.1.0"
