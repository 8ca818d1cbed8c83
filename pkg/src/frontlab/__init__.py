"""Numerical laboratory for bistable fronts crossing a transition zone."""

from .reaction import (
    BistableNonlinearity,
    ReactionError,
    SpatialReaction,
    cubic,
    derive_cf,
    eval_spatial,
    tabulated,
    validate_bistable,
)
from .waves import (
    EnvelopeConstants,
    WaveProfile,
    WaveSolveError,
    decay_rates,
    fit_envelope_constants,
    solve_wave,
)
from .pde import (
    ConfigError,
    Frame,
    SimGrid,
    Snapshot,
    Trajectory,
    construct_entire,
    simulate,
    to_moving_frame,
    uniqueness_probe,
)
from .reporting import CheckResult, VerificationReport

__version__ = "0.1.0"

__all__ = [
    "BistableNonlinearity", "ReactionError", "SpatialReaction", "cubic",
    "derive_cf", "eval_spatial", "tabulated", "validate_bistable",
    "EnvelopeConstants", "WaveProfile", "WaveSolveError", "decay_rates",
    "fit_envelope_constants", "solve_wave",
    "ConfigError", "Frame", "SimGrid", "Snapshot", "Trajectory",
    "construct_entire", "simulate", "to_moving_frame", "uniqueness_probe",
    "CheckResult", "VerificationReport",
    "__version__",
]
