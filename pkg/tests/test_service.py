"""
Tests for the Simulation Service

Tests for the service layer: configuration, cached recurrence series,
classical baseline orchestration, simulated experiments and health reporting.
"""

import shutil
import tempfile
from pathlib import Path
from unittest.mock import patch
import pytest
import numpy as np

# Add package to path
import sys
sys.path.append(str(Path(__file__).parent.parent))

from sinkwalk.classical_baseline import LatticeWalkSpec
from sinkwalk.experiment_model import ImperfectionParams
from sinkwalk.monitoring import MonitoringError, SinkSchedule
from sinkwalk.service import (
    PROBABILITY_COLUMNS,
    ServiceConfig,
    ServiceError,
    SimulationService,
)


class TestServiceConfig:
    """Test cases for service configuration"""

    def test_validation(self):
        """Test chunk size and worker count must be positive"""
        with pytest.raises(ValueError, match="must be positive"):
            ServiceConfig(mc_chunk_size=0)

        with pytest.raises(ValueError, match="must be positive"):
            ServiceConfig(max_workers=-1)

    def test_cache_disabled(self):
        """Test no cache is created when disabled"""
        service = SimulationService(ServiceConfig(enable_cache=False))
        assert service.cache is None
        assert service.get_service_health()['cache_enabled'] is False


class TestCachedRecurrence:
    """Test cases for cached recurrence series"""

    def setup_method(self):
        """Setup for each test method"""
        self.temp_dir = tempfile.mkdtemp()
        self.service = SimulationService(ServiceConfig(cache_dir=self.temp_dir, enable_cache=True))

    def teardown_method(self):
        """Cleanup after each test method"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_second_request_hits_cache(self, hadamard, right):
        """Test repeated requests are served from the cache"""
        first = self.service.get_recurrence(right, hadamard, 12)
        second = self.service.get_recurrence(right, hadamard, 12)

        np.testing.assert_array_equal(first.P_continual, second.P_continual)
        np.testing.assert_array_equal(first.P_reset, second.P_reset)
        stats = self.service.cache.get_stats()
        assert stats['cache_hits'] == 1
        assert stats['cache_misses'] == 1

    def test_scheme_changes_key(self, hadamard, right):
        """Test different schemes are cached separately"""
        reset = self.service.get_recurrence(right, hadamard, 6, scheme="reset")
        continual = self.service.get_recurrence(right, hadamard, 6, scheme="continual")
        assert reset.P_continual is None
        assert continual.P_reset is None
        assert self.service.cache.get_stats()['entries'] == 2

    def test_predicate_schedule_not_cached(self, hadamard, right):
        """Test predicate sinks bypass the cache"""
        schedule = SinkSchedule.from_predicate(lambda x, t: x == 0)
        self.service.get_recurrence(right, hadamard, 6, scheme="continual", schedule=schedule)
        assert self.service.cache.get_stats()['entries'] == 0

    def test_clear_cache(self, hadamard, right):
        """Test clearing the cache through the service"""
        self.service.get_recurrence(right, hadamard, 4)
        self.service.clear_cache()
        assert self.service.get_service_health()['cache_files_count'] == 0

    def test_unknown_scheme(self, hadamard, right):
        """Test unknown schemes are rejected"""
        with pytest.raises(ServiceError, match="Unknown scheme"):
            self.service.get_recurrence(right, hadamard, 4, scheme="weekly")


class TestClassicalAndReports:
    """Test cases for classical baseline orchestration"""

    def setup_method(self):
        """Setup for each test method"""
        self.service = SimulationService(ServiceConfig(enable_cache=False, mc_chunk_size=1000))

    def test_classical_without_monte_carlo(self):
        """Test the exact series alone"""
        result = self.service.get_classical(LatticeWalkSpec(1), 10)
        assert result['monte_carlo'] is None
        assert result['series'].horizon == 10

    def test_monte_carlo_requires_seed(self):
        """Test Monte Carlo needs an explicit seed"""
        with pytest.raises(ServiceError, match="explicit seed"):
            self.service.get_classical(LatticeWalkSpec(1), 10, trials=100)

    def test_monte_carlo_uses_chunk_size(self):
        """Test the configured chunk size reaches the oracle"""
        result = self.service.get_classical(LatticeWalkSpec(1), 10, trials=2500, seed=4)
        assert result['monte_carlo'].chunk_size == 1000
        assert result['monte_carlo'].trials == 2500

    def test_bin_report(self):
        """Test the time-bin report for the default loop"""
        report = self.service.get_bin_report(39)
        assert report.first_collision_step == 39

    def test_histories(self, hadamard, right):
        """Test both histories are produced"""
        histories = self.service.get_histories(right, hadamard, 4)
        assert set(histories) == {'reset', 'continual'}


class TestRunExperiment:
    """Test cases for simulated experiment runs"""

    def setup_method(self):
        """Setup for each test method"""
        self.service = SimulationService(ServiceConfig(enable_cache=False))

    def test_expected_mode_recovers_walk(self, hadamard):
        """Test recovered probabilities for a lossy but otherwise ideal loop"""
        params = ImperfectionParams.ideal(roundtrip_efficiency=0.8)
        result = self.service.run_experiment(params, hadamard, 4, with_envelopes=False)

        assert list(result.probabilities.columns) == PROBABILITY_COLUMNS
        row = result.probabilities.loc[4]
        assert row['p_origin'] == pytest.approx(0.125, abs=1e-12)
        assert row['q_first_return'] == pytest.approx(0.125, abs=1e-12)
        assert row['q_first_return_alternative'] == pytest.approx(0.125, abs=1e-12)
        assert row['survival'] == pytest.approx(0.5, abs=1e-12)
        assert result.envelopes == {}
        assert list(result.snr.columns) == ['snr_reset', 'snr_continual']

    def test_envelopes_for_both_schemes(self, hadamard):
        """Test envelopes are computed per scheme"""
        result = self.service.run_experiment(ImperfectionParams(), hadamard, 4)
        assert set(result.envelopes) == {'reset', 'continual'}

    def test_sampled_run_with_dim_input(self, hadamard):
        """Test steps without counts are left undefined instead of failing"""
        params = ImperfectionParams(mean_input_photons=1.0)
        result = self.service.run_experiment(params, hadamard, 12, mode="sampled", seed=2, with_envelopes=False)
        assert result.probabilities.shape == (12, len(PROBABILITY_COLUMNS))
        assert result.probabilities['p_origin'].isna().any()
        assert result.continual_record.seed == 3


class TestServiceHealth:
    """Test cases for health reporting"""

    def test_healthy_then_degraded(self, hadamard, right):
        """Test a failed computation degrades the status"""
        service = SimulationService(ServiceConfig(enable_cache=False))
        service.get_recurrence(right, hadamard, 4)
        assert service.get_service_health()['status'] == 'healthy'

        with pytest.raises(MonitoringError):
            service.get_recurrence(right, hadamard, 0)

        health = service.get_service_health()
        assert health['status'] == 'degraded'
        assert health['failures'] == 1
        assert health['runs'] == 1

    @patch.dict('os.environ', {
        'SINKWALK_ENABLE_CACHE': 'false',
        'SINKWALK_MC_CHUNK_SIZE': '2000',
        'SINKWALK_MAX_WORKERS': '3',
    })
    def test_from_env(self):
        """Test service creation from environment variables"""
        service = SimulationService.from_env()
        assert service.config.enable_cache is False
        assert service.config.mc_chunk_size == 2000
        assert service.config.max_workers == 3
