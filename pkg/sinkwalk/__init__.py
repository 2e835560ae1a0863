"""
sinkwalk: recurrence of monitored discrete-time quantum walks

This package simulates coined quantum walks on the line whose origin is
watched by absorbing sinks, compares the reset and continual observation
schemes with the classical random walk, and models the time-multiplexed
photonic loop that realizes them.

Key Components:
- walk_core: coins, initial states and exact unitary evolution
- monitoring: sink schedules, survival, first-return and recurrence series
- classical_baseline: lattice random walks in d = 1, 2, 3 and Monte Carlo checks
- experiment_model: loop losses, detector counts, normalization and error envelopes
- timebins: arrival-time encoding of positions
- SimulationService: cached, timed orchestration used by the command line
"""

__version__ = "1.0.0"

from .config import settings, get_settings, Environment, LogLevel
from .walk_core import (
    CoinLabel,
    CoinSpec,
    InitialSpec,
    WalkState,
    WalkCoreError,
    hadamard_coin,
    hwp_coin,
    identity_coin,
    initial_state,
    step,
    evolve,
    position_distribution,
)
from .monitoring import (
    MonitoringError,
    RecurrenceSeries,
    SinkSchedule,
    apply_sink,
    conditional_evolve,
    continual_recurrence,
    first_return_probability,
    recurrence_series,
    reset_probability,
    reset_recurrence,
    survival_probability,
)
from .classical_baseline import (
    ClassicalBaselineError,
    ClassicalSeries,
    LatticeWalkSpec,
    classical_first_return,
    classical_origin_probability,
    classical_series,
    monte_carlo_first_return,
    polya_number_from_p,
    polya_number_from_q,
)
from .experiment_model import (
    CountRecord,
    ErrorRanges,
    ExperimentModelError,
    ImperfectionParams,
    error_envelope,
    normalize_continual,
    normalize_continual_alternative,
    normalize_reset,
    simulate_counts,
)
from .timebins import TimeBinError, TimeBinMap, arrival_time, check_bin_uniqueness
from .service import SimulationService, ServiceConfig

__all__ = [
    # Configuration
    'settings',
    'get_settings',
    'Environment',
    'LogLevel',

    # Walk engine
    'CoinLabel',
    'CoinSpec',
    'InitialSpec',
    'WalkState',
    'hadamard_coin',
    'hwp_coin',
    'identity_coin',
    'initial_state',
    'step',
    'evolve',
    'position_distribution',

    # Monitoring and recurrence
    'RecurrenceSeries',
    'SinkSchedule',
    'apply_sink',
    'conditional_evolve',
    'continual_recurrence',
    'first_return_probability',
    'recurrence_series',
    'reset_probability',
    'reset_recurrence',
    'survival_probability',

    # Classical baseline
    'ClassicalSeries',
    'LatticeWalkSpec',
    'classical_first_return',
    'classical_origin_probability',
    'classical_series',
    'monte_carlo_first_return',
    'polya_number_from_p',
    'polya_number_from_q',

    # Experiment model
    'CountRecord',
    'ErrorRanges',
    'ImperfectionParams',
    'error_envelope',
    'normalize_continual',
    'normalize_continual_alternative',
    'normalize_reset',
    'simulate_counts',
    'TimeBinMap',
    'arrival_time',
    'check_bin_uniqueness',

    # Service
    'SimulationService',
    'ServiceConfig',

    # Exceptions
    'WalkCoreError',
    'MonitoringError',
    'ClassicalBaselineError',
    'ExperimentModelError',
    'TimeBinError',
]
