"""singulo: desingularization and singularity measurement for LQ and control-affine problems.

The package turns a singular linear-quadratic optimal control problem
(control weight R with nontrivial kernel) into a regular reduced problem,
reconstructs the impulsive generalized minimizer, evaluates the exact
degree of singularity of minimizing control families, and measures the
same degree empirically from constructed families of ordinary controls.
A nonlinear harness covers driftless boundary-layer families, an
oscillatory three-state example, and the chattering/smoothing
approximation chain for relaxed controls.
"""

from singulo.errors import (
    AssumptionViolated,
    Blowup,
    CommutativityViolated,
    DegenerateGaps,
    GridTooCoarse,
    IllConditioned,
    NonConvergent,
    NotPSD,
    NotStabilizable,
    NoStabilizingSolution,
    OrderExceeded,
    ProblemInvalid,
    RankDeficientBasis,
    ResidualTooLarge,
    ScheduleViolated,
    SingularM,
    SteeringInvalid,
)
from singulo.signals import SampledSignal, h_minus_norm, l2_norm, primitive
from singulo.lq import LQProblem, NormalizedLQ, load_problem, normalize_controls, validate
from singulo.desing import DesingChain, DesingStep, desing_step, gamma_apply, run_chain
from singulo.reduced import (
    ReducedLQ,
    ReducedSolution,
    infimum_extrapolate,
    solve_finite,
    solve_infinite,
)
from singulo.genmin import (
    GeneralizedControl,
    JumpDecomposition,
    SigmaReport,
    decompose_boundary,
    sigma_exact,
    sigma_exact_infinite,
    stratum_report,
    synthesize,
)
from singulo.deltas import DeltaApproximant, build as build_delta, solve_alpha, verify_rates
from singulo.estimator import (
    MinimizingFamily,
    PenaltySpec,
    build_minimizing_family,
    epsilon_schedule,
    fit_sigma,
    regularization_sweep,
)
from singulo.nonlin import (
    ControlAffineSystem,
    RelaxedControl,
    chattering_approx,
    driftless_family,
    example1_family,
    goh_reduced_rhs,
    integrate,
    p5_pipeline,
    relaxation_deviation,
    smooth_pwc,
)

__version__ = "0.1.0"
