"""Repeated Bayesian voting: simulation engine, exhaustive oracle and experiments."""

from .engine import (
    RoundRecord,
    SimulationResult,
    SimulationState,
    compute_vote,
    consensus_certificate,
    format_transcript,
    init_bounds,
    run_round,
    run_to_consensus,
    update_bounds,
)
from .signal_model import (
    DiscreteModel,
    GaussianModel,
    hiring_model,
    interval_llr,
    llr,
    sample_signal,
    validate_model,
)

__version__ = "0.1.0"
