"""Stability and outage analysis of a cloud-controlled AGV on a fading link.

The package splits along the system boundary: `control` holds the unicycle
tracking loop (reference tracks, error transform, control law, plant, the
zero-order-hold input buffer, and the closed-loop simulator), `stability`
linearizes that loop under an n-sample-old input and searches for the largest
tolerable loss run, `channel` models the correlated Rayleigh downlink
(special functions, per-slot and back-to-back outage probabilities, fading
samplers), `analysis` composes the two sides into the instability probability
and its parameter sweeps, and `cli` exposes everything as subcommands.
"""

from ._version import __version__
from .analysis import (
    DEFAULT_TRACE_GRID,
    DEFAULT_TS_GRID,
    MonteCarloResult,
    MonteCarloRow,
    PointResult,
    ScenarioConfig,
    SweepResult,
    SweepRow,
    instability_probability,
    longest_outage_run,
    montecarlo_instability,
    sweep_sampling_time,
    sweep_trace_time,
    wilson_interval,
    write_montecarlo_csv,
    write_sweep_csv,
)
from .channel import (
    DEFAULT_CARRIER_FREQ,
    PRNG_ID,
    SPEED_OF_LIGHT,
    LinkParams,
    OutageModel,
    back_to_back_prob,
    bessel_j0,
    build_outage_model,
    consecutive_outage_log10,
    consecutive_outage_prob,
    doppler_shift,
    fading_correlation,
    marcum_q1,
    outage_probability,
    phi_variable,
    sample_fading_gains,
    sample_markov_outages,
    sample_outage_sequence,
    snr_threshold,
    spectral_efficiency,
)
from .control import (
    ControlInput,
    Gains,
    InputBuffer,
    Pose,
    ReferenceTrack,
    TrackError,
    TrackSpec,
    Trajectory,
    build_reference_track,
    control_law,
    delayed_input,
    plant_step,
    simulate_closed_loop,
    tracking_error,
    wrap_angle,
    write_trajectory_csv,
)
from .exceptions import (
    BufferUnderflowError,
    NumericConsistencyError,
    ParameterError,
)
from .stability import (
    CandidateScan,
    StabilityReport,
    eigenvalues_3x3,
    evaluate_candidate,
    input_jacobian,
    is_stable_step,
    outage_tolerance,
    simulate_burst_stability,
    spectral_radius_3x3,
    state_jacobian,
    write_stability_csv,
)

__all__ = [
    "__version__",
    # control
    "Pose", "TrackError", "ControlInput", "Gains", "TrackSpec",
    "ReferenceTrack", "InputBuffer", "Trajectory",
    "build_reference_track", "tracking_error", "control_law", "plant_step",
    "delayed_input", "simulate_closed_loop", "wrap_angle",
    "write_trajectory_csv",
    # stability
    "CandidateScan", "StabilityReport", "state_jacobian", "input_jacobian",
    "eigenvalues_3x3", "spectral_radius_3x3", "is_stable_step",
    "evaluate_candidate", "outage_tolerance", "simulate_burst_stability",
    "write_stability_csv",
    # channel
    "LinkParams", "OutageModel", "spectral_efficiency", "snr_threshold",
    "outage_probability", "doppler_shift", "bessel_j0", "fading_correlation",
    "marcum_q1", "phi_variable", "back_to_back_prob",
    "consecutive_outage_prob", "consecutive_outage_log10",
    "build_outage_model", "sample_fading_gains", "sample_outage_sequence",
    "sample_markov_outages", "SPEED_OF_LIGHT", "DEFAULT_CARRIER_FREQ",
    "PRNG_ID",
    # analysis
    "ScenarioConfig", "PointResult", "SweepRow", "SweepResult",
    "MonteCarloRow", "MonteCarloResult", "instability_probability",
    "sweep_sampling_time", "sweep_trace_time", "montecarlo_instability",
    "longest_outage_run", "wilson_interval", "write_sweep_csv",
    "write_montecarlo_csv", "DEFAULT_TS_GRID", "DEFAULT_TRACE_GRID",
    # errors
    "ParameterError", "BufferUnderflowError", "NumericConsistencyError",
]
