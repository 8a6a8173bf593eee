"""
Adaptive distributed beamforming as local random search.

Transmitters perturb their phases at random; the receiver feeds back one bit
saying whether the received SNR went up, and the perturbation is kept only if
it did. This package simulates that loop for arbitrary objectives and
perturbation measures, synchronous or asynchronous updates, and runs the
Monte Carlo studies of convergence and hitting-time scaling.
"""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    UNDECIDABLE,
    ChannelRealization,
    ModPiQuadraticObjective,
    Objective,
    PerturbationModel,
    PhaseState,
    SnrObjective,
    TransformedObjective,
    UpdateSchedule,
    UsageError,
    check_origin_interior,
    evaluate_mod_quadratic,
    evaluate_snr,
    make_rng,
    sample_channels,
    sample_mask,
    sample_perturbation,
    snr_global_max,
)
from .search import (  # noqa: E402
    SearchConfig,
    SearchError,
    StopCriterion,
    Trace,
    hitting_time,
    in_epsilon_region,
    run,
    step,
)
from .experiments import (  # noqa: E402
    AsyncSweepResult,
    ExperimentError,
    LinearFit,
    MonteCarloResult,
    ScalingResult,
    async_sweep,
    improvement_probability_estimate,
    linear_fit,
    monte_carlo_convergence,
    scaling_study,
)
