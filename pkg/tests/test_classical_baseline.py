"""
Test Suite for the Classical Random-Walk Baseline

Tests cover:
- Exact return and first-return probabilities with known values
- Renewal identity between p and q
- Polya number estimates and truncation flags
- Monte Carlo oracle reproducibility and agreement with the exact series
- Scheme equivalence report
"""

import pytest
import numpy as np
from unittest.mock import patch
from hypothesis import given, strategies as st
from hypothesis import settings as hypothesis_settings

import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

from sinkwalk.classical_baseline import (
    ClassicalBaselineError,
    LatticeWalkSpec,
    classical_first_return,
    classical_origin_probability,
    classical_reset_recurrence,
    classical_series,
    first_return_series,
    monte_carlo_first_return,
    monte_carlo_first_return_async,
    origin_series,
    polya_number_from_p,
    polya_number_from_q,
    renewal_residual,
    scaling_exponent,
    scheme_equivalence_check,
)


class TestLatticeWalkSpec:
    """Test suite for lattice walk descriptions"""

    def test_step_probability(self):
        """Test each neighbour has probability 1/(2d)"""
        assert LatticeWalkSpec(1).step_probability == 0.5
        assert LatticeWalkSpec(3).step_probability == pytest.approx(1 / 6)

    def test_invalid_dimension(self):
        """Test nonpositive dimensions are rejected"""
        with pytest.raises(ClassicalBaselineError, match="positive integer"):
            LatticeWalkSpec(0)


class TestExactSeries:
    """Test suite for exact classical series"""

    def test_one_dimensional_origin_probability(self):
        """Test p(0,2) = 1/2 and p(0,4) = 3/8 in one dimension"""
        spec = LatticeWalkSpec(1)
        assert classical_origin_probability(spec, 2) == pytest.approx(0.5)
        assert classical_origin_probability(spec, 4) == pytest.approx(0.375)
        assert classical_origin_probability(spec, 3) == 0.0

    def test_one_dimensional_first_return(self):
        """Test q(0,2) = 1/2 and q(0,4) = 1/8 in one dimension"""
        spec = LatticeWalkSpec(1)
        assert classical_first_return(spec, 2) == pytest.approx(0.5)
        assert classical_first_return(spec, 4) == pytest.approx(0.125)
        assert classical_first_return(spec, 1) == 0.0

    def test_two_dimensional_values(self):
        """Test p(0,2) = q(0,2) = 1/4 on the square lattice"""
        spec = LatticeWalkSpec(2)
        assert classical_origin_probability(spec, 2) == pytest.approx(0.25)
        assert classical_first_return(spec, 2) == pytest.approx(0.25)

    def test_origin_series_starts_at_one(self):
        """Test p(0,0) = 1"""
        assert origin_series(LatticeWalkSpec(2), 4)[0] == 1.0

    @pytest.mark.parametrize("dimension, horizon", [(1, 50), (2, 50), (3, 50)])
    def test_renewal_identity(self, dimension, horizon):
        """Test p(0,t) = sum q(0,k) p(0,t-k) for every t up to 50"""
        spec = LatticeWalkSpec(dimension)
        residual = renewal_residual(origin_series(spec, horizon), first_return_series(spec, horizon))
        np.testing.assert_allclose(residual, 0.0, atol=1e-12)

    def test_survival_identity_one_dimension(self):
        """Test 1 - sum_{t<=2n} q = p(0,2n) in one dimension"""
        spec = LatticeWalkSpec(1)
        assert 1.0 - polya_number_from_q(spec, 20) == pytest.approx(classical_origin_probability(spec, 20))

    def test_reset_recurrence_at_four(self):
        """Test P_r(4) = 1 - (1/2)(5/8) = 11/16"""
        assert classical_reset_recurrence(LatticeWalkSpec(1), 4) == pytest.approx(0.6875)

    def test_dimension_cap(self):
        """Test the first-return DP refuses d > 3"""
        with pytest.raises(ClassicalBaselineError, match="d <= 3"):
            first_return_series(LatticeWalkSpec(4), 4)

    def test_three_dimensional_step_cap(self):
        """Test the first-return DP refuses long horizons in three dimensions"""
        with pytest.raises(ClassicalBaselineError, match="capped"):
            first_return_series(LatticeWalkSpec(3), 500)

    def test_lattice_budget(self):
        """Test the configured cell budget is enforced"""
        with patch('sinkwalk.classical_baseline.settings') as mock_settings:
            mock_settings.max_lattice_cells = 10
            with pytest.raises(ClassicalBaselineError, match="max_lattice_cells"):
                first_return_series(LatticeWalkSpec(2), 10)

    def test_invalid_horizon(self):
        """Test negative horizons are rejected"""
        with pytest.raises(ClassicalBaselineError, match="at least"):
            origin_series(LatticeWalkSpec(1), -1)

    @pytest.mark.parametrize("dimension", [1, 2, 3])
    def test_scaling_exponent(self, dimension):
        """Test p(0,t) decays as t^(-d/2)"""
        slope = scaling_exponent(LatticeWalkSpec(dimension), t_min=200, t_max=800)
        assert slope == pytest.approx(-dimension / 2, abs=0.02)

    @pytest.mark.parametrize("dimension", [1, 2, 3])
    def test_scaling_exponent_default_window(self, dimension):
        """Test the fit over [100, 1000] gives -d/2 within 0.05"""
        assert scaling_exponent(LatticeWalkSpec(dimension)) == pytest.approx(-dimension / 2, abs=0.05)

    @given(st.integers(min_value=2, max_value=60))
    @hypothesis_settings(max_examples=15, deadline=None)
    def test_first_return_sum_below_one(self, horizon):
        """Property: the truncated Polya number never exceeds one"""
        total = polya_number_from_q(LatticeWalkSpec(1), horizon)
        assert 0.0 <= total <= 1.0


class TestPolyaNumbers:
    """Test suite for Polya number estimates"""

    def test_polya_from_q_small_horizon(self):
        """Test sum q up to T = 4 is 5/8 in one dimension"""
        assert polya_number_from_q(LatticeWalkSpec(1), 4) == pytest.approx(0.625)

    def test_polya_from_p_truncated_in_low_dimensions(self):
        """Test the p-based estimate is flagged for d <= 2"""
        value, truncated = polya_number_from_p(LatticeWalkSpec(1), 2)
        assert value == pytest.approx(-1.0)
        assert truncated is True

    def test_polya_from_p_vanishing_series(self):
        """Test T = 1 has no return and no estimate"""
        with pytest.raises(ClassicalBaselineError, match="undefined"):
            polya_number_from_p(LatticeWalkSpec(1), 1)

    def test_classical_series_bundle(self):
        """Test the combined series agrees with the individual functions"""
        spec = LatticeWalkSpec(1)
        series = classical_series(spec, 10)
        assert series.horizon == 10
        assert series.polya_from_q == pytest.approx(polya_number_from_q(spec, 10))
        assert series.reset_recurrence == pytest.approx(classical_reset_recurrence(spec, 10))
        frame = series.to_frame()
        assert list(frame.columns) == ['p_origin', 'q_first_return', 'P_continual', 'P_reset']
        assert frame.index.name == 't'
        assert frame['P_reset'].iloc[-1] == pytest.approx(series.reset_recurrence)

    def test_one_dimension_recurrent_at_long_horizon(self):
        """Test both recurrence numbers exceed 0.97 by T = 10^4 in one dimension"""
        series = classical_series(LatticeWalkSpec(1), 10_000)
        assert series.polya_from_q > 0.97
        assert series.reset_recurrence > 0.97


class TestMonteCarlo:
    """Test suite for the Monte Carlo oracle"""

    def test_reproducible_for_fixed_seed(self):
        """Test the same seed and chunk size reproduce the estimate exactly"""
        spec = LatticeWalkSpec(1)
        a = monte_carlo_first_return(spec, 10, trials=5000, seed=7, chunk_size=1000)
        b = monte_carlo_first_return(spec, 10, trials=5000, seed=7, chunk_size=1000)
        np.testing.assert_array_equal(a.q_estimate, b.q_estimate)
        assert a.rng_algorithm == "PCG64"

    def test_agrees_with_exact(self):
        """Test estimates fall within five standard errors of the exact series"""
        spec = LatticeWalkSpec(1)
        result = monte_carlo_first_return(spec, 12, trials=20000, seed=42, chunk_size=5000)
        z = result.z_scores(first_return_series(spec, 12))
        assert np.all(np.abs(z) < 5)

    @pytest.mark.slow
    @pytest.mark.parametrize("dimension", [1, 2, 3])
    def test_million_trials_within_four_sigma(self, dimension):
        """Test 10^6 walkers reproduce q(0,t) within four standard errors for t <= 20"""
        spec = LatticeWalkSpec(dimension)
        result = monte_carlo_first_return(spec, 20, trials=1_000_000, seed=2024 + dimension, chunk_size=250_000)
        z = result.z_scores(first_return_series(spec, 20))
        assert np.all(np.abs(z) < 4)

    def test_odd_steps_zero(self):
        """Test parity forbids returns at odd steps"""
        result = monte_carlo_first_return(LatticeWalkSpec(2), 9, trials=2000, seed=1, chunk_size=500)
        assert np.all(result.q_estimate[0::2] == 0.0)

    def test_uneven_final_chunk(self):
        """Test trial counts that are not a multiple of the chunk size"""
        result = monte_carlo_first_return(LatticeWalkSpec(1), 4, trials=2500, seed=3, chunk_size=1000)
        assert result.trials == 2500
        assert result.to_frame().shape == (4, 2)

    def test_zero_trials_rejected(self):
        """Test at least one trial is required"""
        with pytest.raises(ClassicalBaselineError, match="at least one trial"):
            monte_carlo_first_return(LatticeWalkSpec(1), 4, trials=0, seed=1)

    @pytest.mark.asyncio
    async def test_async_matches_sync(self):
        """Test the concurrent variant gives identical counts"""
        spec = LatticeWalkSpec(1)
        sync = monte_carlo_first_return(spec, 8, trials=3000, seed=11, chunk_size=1000)
        concurrent = await monte_carlo_first_return_async(
            spec, 8, trials=3000, seed=11, chunk_size=1000, max_workers=2
        )
        np.testing.assert_array_equal(sync.q_estimate, concurrent.q_estimate)


class TestSchemeEquivalence:
    """Test suite for the classical versus quantum comparison"""

    def test_classical_agree_quantum_separate(self):
        """Test classical schemes agree while quantum schemes separate"""
        report = scheme_equivalence_check(LatticeWalkSpec(1), 200)
        assert report.classical_schemes_agree is True
        assert report.quantum_schemes_separate is True
        assert report.quantum_continual < 2 / np.pi
        assert report.quantum_gap > 0
        assert report.classical_gap < 0.1
