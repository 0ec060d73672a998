"""Asynchronous momentum SGD for streaming PCA: simulator and theory checks.

The package simulates the delayed-gradient momentum power iteration on
streaming data, and compares what it measures against the closed-form
predictions: the deterministic alignment flow, the per-coordinate
fluctuation law, the three phase times, staleness budgets, and the
decomposition of each update into mean drift, momentum transient, and
noise.
"""

from .core import (
    AsyncPcaError,
    DelayExceedsCap,
    GammaOutOfRange,
    IndexIsLeading,
    IoFailure,
    MissingRequired,
    NeedsFullTrace,
    NonDescendingSpectrum,
    NotOrthogonal,
    ProbabilityOutOfRange,
    SpectralModel,
    StepTooLarge,
    TypeMismatch,
    UnknownKey,
    build_spectral_model,
    draw_coordinates,
    sample_data,
    seed_stream,
)
from .diagnostics import (
    AsyncErrorTrace,
    DecompositionTrace,
    MomentumErrorSummary,
    async_error,
    decompose,
    default_burn_in,
    manifold_drift,
    momentum_error_profile,
    sample_gradient,
    write_diagnostics_csv,
)
from .dynamics import (
    BatchResult,
    DelayModel,
    PhaseWatch,
    RunConfig,
    SolverState,
    Trajectory,
    async_step,
    generate_delay,
    make_streams,
    run_replicas,
    run_trajectory,
)
from .experiments import (
    CellStats,
    EscapeEstimate,
    PhaseReport,
    PhaseTimes,
    SpeedupPoint,
    SweepGrid,
    TradeoffCurve,
    detect_phases,
    escape_probability,
    run_phase_experiment,
    run_sweep,
    speedup_curve,
    wilson_interval,
)
from .svg import Series, line_chart
from .theory import (
    CALIBRATED_GAMMA,
    CALIBRATED_ODE_COEFF,
    PhaseParams,
    budget_exponent,
    delay_budget,
    effective_complexity,
    normal_cdf,
    normal_quantile,
    ode_solution,
    ou_second_moment,
    phase1_time,
    phase2_time,
    phase2_transit_time,
    phase3_time,
    predict_optimal_delay,
)

__version__ = "0.1.0"

__all__ = [
    "AsyncPcaError",
    "NonDescendingSpectrum",
    "NotOrthogonal",
    "DelayExceedsCap",
    "StepTooLarge",
    "GammaOutOfRange",
    "ProbabilityOutOfRange",
    "IndexIsLeading",
    "NeedsFullTrace",
    "UnknownKey",
    "TypeMismatch",
    "MissingRequired",
    "IoFailure",
    "seed_stream",
    "SpectralModel",
    "build_spectral_model",
    "draw_coordinates",
    "sample_data",
    "PhaseParams",
    "normal_cdf",
    "normal_quantile",
    "ode_solution",
    "ou_second_moment",
    "phase1_time",
    "phase2_time",
    "phase2_transit_time",
    "phase3_time",
    "delay_budget",
    "budget_exponent",
    "predict_optimal_delay",
    "effective_complexity",
    "CALIBRATED_GAMMA",
    "CALIBRATED_ODE_COEFF",
    "DelayModel",
    "RunConfig",
    "make_streams",
    "generate_delay",
    "SolverState",
    "async_step",
    "Trajectory",
    "PhaseWatch",
    "BatchResult",
    "run_replicas",
    "run_trajectory",
    "manifold_drift",
    "sample_gradient",
    "DecompositionTrace",
    "decompose",
    "default_burn_in",
    "MomentumErrorSummary",
    "momentum_error_profile",
    "AsyncErrorTrace",
    "async_error",
    "write_diagnostics_csv",
    "wilson_interval",
    "SweepGrid",
    "CellStats",
    "TradeoffCurve",
    "run_sweep",
    "PhaseTimes",
    "detect_phases",
    "PhaseReport",
    "run_phase_experiment",
    "EscapeEstimate",
    "escape_probability",
    "SpeedupPoint",
    "speedup_curve",
    "Series",
    "line_chart",
    "__version__",
]
