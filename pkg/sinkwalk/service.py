"""
Simulation Service Layer

High-level service interface over the walk, monitoring, classical and
experiment modules. Adds result caching, timing, logging and health
statistics on top of the pure computation functions.

Features:
- Recurrence series for both observation schemes with Parquet caching
- Probability histories for heatmaps
- Classical baseline with optional Monte Carlo cross-check
- Simulated experiment runs with normalized probabilities and error envelopes
- Health monitoring and statistics
"""

import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from .classical_baseline import (
    ClassicalSeries,
    EquivalenceReport,
    LatticeWalkSpec,
    MonteCarloResult,
    classical_series,
    monte_carlo_first_return,
    scheme_equivalence_check,
)
from .config import settings
from .experiment_model import (
    CountRecord,
    ErrorEnvelope,
    ErrorRanges,
    ExperimentModelError,
    ImperfectionParams,
    normalize_continual,
    normalize_continual_alternative,
    normalize_reset,
    poisson_errors,
    error_envelope,
    simulate_counts,
    snr_series,
)
from .monitoring import (
    RecurrenceSeries,
    SinkSchedule,
    conditional_history,
    continual_recurrence,
    recurrence_series,
    reset_recurrence,
    unconditional_history,
)
from .result_cache import ResultCache
from .timebins import BinUniquenessReport, TimeBinMap, check_bin_uniqueness
from .walk_core import CoinSpec, InitialSpec

logger = logging.getLogger(__name__)

SCHEME_CHOICES = ("reset", "continual", "both")
PROBABILITY_COLUMNS = [
    "p_origin", "q_first_return", "q_first_return_alternative", "survival", "p_conditional",
    "sigma_p_origin", "sigma_q_first_return", "sigma_survival",
]


class ServiceError(Exception):
    """Custom exception for orchestration errors"""
    pass


class ServiceConfig(BaseModel):
    """Configuration for the simulation service"""

    cache_dir: str = Field(default=settings.cache_dir, description="Result cache directory path")
    enable_cache: bool = Field(default=settings.enable_cache, description="Enable result caching")
    mc_chunk_size: int = Field(default=settings.mc_chunk_size, description="Monte Carlo trials per RNG chunk")
    max_workers: int = Field(default=settings.max_workers, description="Maximum concurrent Monte Carlo workers")

    @field_validator('mc_chunk_size', 'max_workers')
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError("Chunk size and worker count must be positive")
        return v


@dataclass(eq=False)
class ExperimentResult:
    """Records and derived tables of one simulated experiment"""

    reset_record: CountRecord
    continual_record: CountRecord
    probabilities: pd.DataFrame
    snr: pd.DataFrame
    envelopes: Dict[str, ErrorEnvelope] = field(default_factory=dict)
    duration_seconds: float = 0.0


def _coin_request(coin: CoinSpec) -> Dict[str, Any]:
    matrix = np.asarray(coin.matrix)
    return {
        'name': coin.name,
        'hwp_angle': coin.hwp_angle,
        'matrix': [[repr(complex(v)) for v in row] for row in matrix],
    }


def _initial_request(initial: InitialSpec) -> List[str]:
    return [repr(complex(v)) for v in initial.coin_amplitudes]


def _schedule_request(schedule: Optional[SinkSchedule]) -> Optional[Dict[str, Any]]:
    """JSON description of a schedule, or None when it cannot be keyed"""
    schedule = schedule or SinkSchedule.origin()
    if schedule.predicate is not None:
        return None
    return {
        'positions': sorted(schedule.positions),
        'steps': sorted(schedule.steps) if schedule.steps is not None else None,
        'residual_transmission': schedule.residual_transmission,
        'coins': schedule.coin_indices,
    }


class SimulationService:
    """
    High-level simulation service

    Provides caching, timing and logging around the computation modules.
    Computation errors are logged here and re-raised to the caller.
    """

    def __init__(self, config: Optional[ServiceConfig] = None):
        """
        Initialize simulation service

        Args:
            config: Service configuration, uses defaults if not provided
        """
        self.config = config or ServiceConfig()
        self.cache = ResultCache(self.config.cache_dir) if self.config.enable_cache else None
        self.runs = 0
        self.failures = 0
        self.total_duration_seconds = 0.0

        logger.info("Simulation service initialized with config: %s", self.config.model_dump())

    def _timed(self, label: str, func, *args, **kwargs):
        start = time.time()
        try:
            result = func(*args, **kwargs)
        except Exception as e:
            self.failures += 1
            logger.error(f"{label} failed after {time.time() - start:.2f}s: {e}")
            raise
        duration = time.time() - start
        self.runs += 1
        self.total_duration_seconds += duration
        logger.info(f"{label} completed in {duration:.2f}s")
        return result

    def get_recurrence(
        self,
        initial: InitialSpec,
        coin: CoinSpec,
        T: int,
        scheme: str = "both",
        schedule: Optional[SinkSchedule] = None
    ) -> RecurrenceSeries:
        """
        Recurrence series for the selected scheme(s)

        Args:
            initial: Initial coin state
            coin: Coin operator
            T: Horizon
            scheme: 'reset', 'continual' or 'both'
            schedule: Sink layout for the continual scheme (default: ideal origin sink)

        Returns:
            RecurrenceSeries with the requested columns filled
        """
        if scheme not in SCHEME_CHOICES:
            raise ServiceError(f"Unknown scheme '{scheme}', expected one of {SCHEME_CHOICES}")

        schedule_key = _schedule_request(schedule)
        request = None
        if self.cache is not None and schedule_key is not None:
            request = {
                'kind': 'recurrence',
                'initial': _initial_request(initial),
                'coin': _coin_request(coin),
                'T': T,
                'scheme': scheme,
                'schedule': schedule_key,
            }
            cached = self.cache.get(request)
            if cached is not None:
                return RecurrenceSeries.from_frame(cached)

        if scheme == "reset":
            series = self._timed(f"Reset recurrence T={T}", reset_recurrence, initial, coin, T)
        elif scheme == "continual":
            series = self._timed(f"Continual recurrence T={T}", continual_recurrence, initial, coin, T, schedule)
        else:
            series = self._timed(f"Recurrence T={T}", recurrence_series, initial, coin, T, schedule)

        if request is not None:
            self.cache.set(request, series.to_frame(), kind='recurrence')
        return series

    def get_histories(
        self,
        initial: InitialSpec,
        coin: CoinSpec,
        T: int,
        scheme: str = "both",
        schedule: Optional[SinkSchedule] = None
    ) -> Dict[str, pd.DataFrame]:
        """Long t, x, probability tables keyed by scheme"""
        if scheme not in SCHEME_CHOICES:
            raise ServiceError(f"Unknown scheme '{scheme}', expected one of {SCHEME_CHOICES}")
        histories = {}
        if scheme in ("reset", "both"):
            histories['reset'] = self._timed(f"Unconditional history T={T}", unconditional_history, initial, coin, T)
        if scheme in ("continual", "both"):
            histories['continual'] = self._timed(
                f"Conditional history T={T}", conditional_history, initial, coin, schedule, T
            )
        return histories

    def get_classical(
        self,
        spec: LatticeWalkSpec,
        T: int,
        trials: int = 0,
        seed: Optional[int] = None
    ) -> Dict[str, Any]:
        """
        Exact classical series plus an optional Monte Carlo estimate

        Returns:
            Dictionary with 'series' (ClassicalSeries) and 'monte_carlo'
            (MonteCarloResult or None)
        """
        series: ClassicalSeries = self._timed(f"Classical series d={spec.dimension} T={T}", classical_series, spec, T)
        monte_carlo: Optional[MonteCarloResult] = None
        if trials > 0:
            if seed is None:
                raise ServiceError("Monte Carlo runs require an explicit seed")
            monte_carlo = self._timed(
                f"Monte Carlo d={spec.dimension} trials={trials}",
                monte_carlo_first_return, spec, T, trials, seed, self.config.mc_chunk_size,
            )
        return {'series': series, 'monte_carlo': monte_carlo}

    def get_equivalence(self, spec: LatticeWalkSpec, T: int, coin: CoinSpec, initial: InitialSpec) -> EquivalenceReport:
        return self._timed(f"Scheme equivalence T={T}", scheme_equivalence_check, spec, T, coin, initial)

    def get_bin_report(self, T: int, time_bins: Optional[TimeBinMap] = None) -> BinUniquenessReport:
        return self._timed(f"Time-bin check T={T}", check_bin_uniqueness, time_bins, T)

    def run_experiment(
        self,
        params: ImperfectionParams,
        coin: CoinSpec,
        T: int,
        initial: Optional[InitialSpec] = None,
        mode: str = "expected",
        seed: Optional[int] = None,
        ranges: Optional[ErrorRanges] = None,
        with_envelopes: bool = True
    ) -> ExperimentResult:
        """
        Simulate both schemes and recover probabilities from the counts

        Returns:
            ExperimentResult with per-step p_origin, q_first_return (both
            normalizations), survival, p_conditional, statistical errors and,
            when requested, systematic error envelopes
        """
        start = time.time()
        reset_seed = seed
        continual_seed = seed + 1 if seed is not None else None

        reset = self._timed(
            f"Reset counts T={T}", simulate_counts, "reset", params, coin, T, reset_seed, mode, initial
        )
        continual = self._timed(
            f"Continual counts T={T}", simulate_counts, "continual", params, coin, T, continual_seed, mode, initial
        )

        rows = []
        for t in range(1, T + 1):
            try:
                estimate = normalize_continual(continual, reset, t)
                errors = poisson_errors(continual, reset, t)
                rows.append({
                    'p_origin': normalize_reset(reset, t),
                    'q_first_return': estimate.q_first_return,
                    'q_first_return_alternative': normalize_continual_alternative(continual, reset, t),
                    'survival': estimate.survival,
                    'p_conditional': estimate.p_conditional,
                    'sigma_p_origin': errors.p_origin,
                    'sigma_q_first_return': errors.q_first_return,
                    'sigma_survival': errors.survival,
                })
            except ExperimentModelError as e:
                # sampled runs can leave late steps without counts
                logger.warning(f"Step {t} left undefined: {e}")
                rows.append({column: float('nan') for column in PROBABILITY_COLUMNS})
        probabilities = pd.DataFrame(rows, index=pd.Index(np.arange(1, T + 1), name='t'), columns=PROBABILITY_COLUMNS)

        envelopes = {}
        if with_envelopes:
            for scheme in ("reset", "continual"):
                envelopes[scheme] = self._timed(
                    f"Error envelope {scheme} T={T}", error_envelope, params, coin, scheme, T, ranges, initial
                )

        snr = pd.DataFrame({
            'snr_reset': snr_series(reset),
            'snr_continual': snr_series(continual),
        })

        return ExperimentResult(
            reset_record=reset,
            continual_record=continual,
            probabilities=probabilities,
            envelopes=envelopes,
            snr=snr,
            duration_seconds=time.time() - start,
        )

    def get_service_health(self) -> Dict:
        """
        Get service health and statistics

        Returns:
            Dictionary with service health information
        """
        cache_info = {'cache_enabled': self.cache is not None}
        if self.cache is not None:
            cache_dir = Path(self.cache.cache_dir)
            cache_info.update({
                'cache_dir_exists': cache_dir.exists(),
                'cache_dir_path': str(cache_dir),
                'cache_files_count': len(list(cache_dir.glob('*.parquet'))) if cache_dir.exists() else 0,
                **self.cache.get_stats(),
            })

        return {
            'service_name': 'SimulationService',
            'timestamp': datetime.now().isoformat(),
            'status': 'healthy' if self.failures == 0 else 'degraded',
            'config': self.config.model_dump(),
            'runs': self.runs,
            'failures': self.failures,
            'total_duration_seconds': self.total_duration_seconds,
            **cache_info,
        }

    def clear_cache(self):
        """Clear all cached results"""
        if self.cache is not None:
            self.cache.clear()

    @classmethod
    def from_env(cls) -> 'SimulationService':
        """
        Create SimulationService instance from environment variables

        Environment variables:
        - SINKWALK_CACHE_DIR: Cache directory path
        - SINKWALK_ENABLE_CACHE: Enable caching (true/false)
        - SINKWALK_MC_CHUNK_SIZE: Monte Carlo trials per chunk
        - SINKWALK_MAX_WORKERS: Maximum concurrent Monte Carlo workers

        Returns:
            Configured SimulationService instance
        """
        config = ServiceConfig(
            cache_dir=os.getenv('SINKWALK_CACHE_DIR', settings.cache_dir),
            enable_cache=os.getenv('SINKWALK_ENABLE_CACHE', str(settings.enable_cache)).lower() == 'true',
            mc_chunk_size=int(os.getenv('SINKWALK_MC_CHUNK_SIZE', str(settings.mc_chunk_size))),
            max_workers=int(os.getenv('SINKWALK_MAX_WORKERS', str(settings.max_workers))),
        )
        return cls(config)
