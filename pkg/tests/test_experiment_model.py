"""
Test Suite for the Photonic Loop Model

Tests cover:
- Imperfection parameter validation
- Forward-model record layout, sampling and saturation flags
- Recovery of walk probabilities from expected-value records
- Alternative continual normalization
- Systematic error envelopes
- Signal-to-noise ratio
- Record file round trip
"""

import dataclasses
import math

import pytest
import numpy as np
import pandas as pd

import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

from sinkwalk.experiment_model import (
    SINK_GRID_POINTS,
    AcquisitionPlan,
    AcquisitionSegment,
    ErrorRanges,
    ExperimentModelError,
    ImperfectionParams,
    corner_params,
    derived_probabilities,
    envelope_violations,
    error_envelope,
    normalize_continual,
    normalize_continual_alternative,
    normalize_distribution,
    normalize_reset,
    poisson_errors,
    read_count_record,
    simulate_acquisition,
    simulate_counts,
    sink_residual_grid,
    snr,
    snr_series,
    snr_trend,
    write_count_record,
    _bound_along_grid,
)
from sinkwalk.timebins import TimeBinMap
from sinkwalk.walk_core import hadamard_coin, identity_coin


@pytest.fixture
def lossy_ideal():
    """Lossy loop with otherwise perfect components"""
    return ImperfectionParams.ideal(roundtrip_efficiency=0.8)


class TestImperfectionParams:
    """Test suite for imperfection parameters"""

    def test_defaults(self):
        """Test default experimental values"""
        params = ImperfectionParams()
        assert params.roundtrip_efficiency == 0.8
        assert params.sink_residual_transmission == 0.01
        assert params.detector_efficiencies == (0.6, 0.7)
        assert params.mean_input_photons == 1e4

    def test_ideal(self):
        """Test the ideal preset removes every imperfection"""
        params = ImperfectionParams.ideal()
        assert params.roundtrip_efficiency == 1.0
        assert params.sink_residual_transmission == 0.0
        assert params.detector_efficiencies == (1.0, 1.0)

    @pytest.mark.parametrize("field_name, value, message", [
        ("roundtrip_efficiency", 0.0, "Round-trip efficiency"),
        ("arm_loss_asymmetry", 1.0, "Arm loss asymmetry"),
        ("coin_angle_error", 1.0, "Coin angle error"),
        ("sink_residual_transmission", -0.1, "Sink residual"),
        ("detector_efficiencies", (0.0, 0.5), "Detector efficiencies"),
        ("dark_count_rate", -1.0, "nonnegative"),
    ])
    def test_validation(self, field_name, value, message):
        """Test physical sanity bounds"""
        with pytest.raises(ValueError, match=message):
            ImperfectionParams(**{field_name: value})

    def test_frozen(self):
        """Test parameters are immutable"""
        params = ImperfectionParams()
        with pytest.raises(ValueError):
            params.roundtrip_efficiency = 0.5


class TestAcquisitionPlan:
    """Test suite for ND-filter acquisition plans"""

    def test_default_plan(self):
        """Test the default three data sets"""
        plan = AcquisitionPlan()
        assert plan.horizon == 36
        assert plan.segment_for(5).optical_density == 8.0
        assert plan.segment_for(6).optical_density == 7.0
        assert plan.segment_for(36).integration_time_s == 3600.0

    def test_beyond_horizon(self):
        """Test steps past the plan are rejected"""
        with pytest.raises(ExperimentModelError, match="beyond"):
            AcquisitionPlan().segment_for(37)

    def test_unsorted_segments_rejected(self):
        """Test segments must cover increasing steps"""
        with pytest.raises(ValueError, match="strictly increasing"):
            AcquisitionPlan(segments=[
                AcquisitionSegment(max_step=10, optical_density=7, integration_time_s=1),
                AcquisitionSegment(max_step=5, optical_density=8, integration_time_s=1),
            ])

    def test_simulated_inputs(self, lossy_ideal, hadamard):
        """Test per-step input photons follow the filter and integration time"""
        record = simulate_acquisition("reset", lossy_ideal, hadamard)
        assert record.horizon == 36
        assert record.input_at(1) == pytest.approx(1e7 * 1e-8 * 8000 * 10)
        assert record.input_at(36) == pytest.approx(1e7 * 1e-6 * 8000 * 3600)
        assert record.pulses_at(10) == pytest.approx(8000 * 60)
        assert normalize_reset(record, 4) == pytest.approx(0.125, abs=1e-12)


class TestSimulateCounts:
    """Test suite for the forward model"""

    def test_record_layout(self, hadamard):
        """Test rows per step for both schemes"""
        reset = simulate_counts("reset", ImperfectionParams(), hadamard, 2)
        continual = simulate_counts("continual", ImperfectionParams(), hadamard, 2)
        assert len(reset.frame) == 15
        assert len(continual.frame) == 19
        assert list(reset.frame.columns) == ['t', 'x', 'coin', 'expected', 'counts']
        assert not reset.has_sink_channels
        assert continual.has_sink_channels

    def test_unknown_scheme(self, hadamard):
        """Test unknown schemes are rejected"""
        with pytest.raises(ExperimentModelError, match="Unknown scheme"):
            simulate_counts("weekly", ImperfectionParams(), hadamard, 4)

    def test_sampled_requires_seed(self, hadamard):
        """Test Poisson sampling needs an explicit seed"""
        with pytest.raises(ExperimentModelError, match="explicit seed"):
            simulate_counts("reset", ImperfectionParams(), hadamard, 4, mode="sampled")

    def test_sampled_reproducible(self, hadamard):
        """Test the same seed reproduces the same counts"""
        a = simulate_counts("reset", ImperfectionParams(), hadamard, 6, seed=5, mode="sampled")
        b = simulate_counts("reset", ImperfectionParams(), hadamard, 6, seed=5, mode="sampled")
        pd.testing.assert_frame_equal(a.frame, b.frame)
        assert a.value_column == 'counts'

    def test_coin_error_needs_plate_angle(self):
        """Test a coin without a plate angle cannot be mis-set"""
        params = ImperfectionParams(coin_angle_error=0.01)
        with pytest.raises(ExperimentModelError, match="half-wave plate"):
            simulate_counts("reset", params, identity_coin(), 2)

    def test_no_saturation_by_default(self, hadamard):
        """Test default photon numbers stay below the ceiling"""
        record = simulate_counts("reset", ImperfectionParams(), hadamard, 10)
        assert record.saturated_steps == ()

    def test_saturation_flagged(self, hadamard):
        """Test bright inputs flag saturated steps"""
        params = ImperfectionParams(mean_input_photons=1e5)
        record = simulate_counts("reset", params, hadamard, 3)
        assert 1 in record.saturated_steps

    def test_negative_noise_profile(self, hadamard):
        """Test a noise profile cannot produce negative background"""
        with pytest.raises(ExperimentModelError, match="negative background"):
            simulate_counts("reset", ImperfectionParams(), hadamard, 2, noise_profile=lambda t, s: -1.0)

    def test_invalid_integration(self, hadamard):
        """Test integration time must be positive"""
        with pytest.raises(ExperimentModelError, match="positive"):
            simulate_counts("reset", ImperfectionParams(), hadamard, 2, integration_time_s=0)


class TestNormalization:
    """Test suite for recovering walk probabilities from counts"""

    def test_reset_recovers_origin_probability(self, lossy_ideal, hadamard):
        """Test p(0,4) = 1/8 with homogeneous loss"""
        record = simulate_counts("reset", lossy_ideal, hadamard, 4)
        assert normalize_reset(record, 2) == pytest.approx(0.5, abs=1e-12)
        assert normalize_reset(record, 4) == pytest.approx(0.125, abs=1e-12)

    def test_continual_recovers_conditional_values(self, lossy_ideal, hadamard):
        """Test q(0,4) = 1/8, s_3 = 1/2 and p_c(0,4) = 1/4"""
        reset = simulate_counts("reset", lossy_ideal, hadamard, 4)
        continual = simulate_counts("continual", lossy_ideal, hadamard, 4)
        estimate = normalize_continual(continual, reset, 4)
        assert estimate.q_first_return == pytest.approx(0.125, abs=1e-12)
        assert estimate.survival == pytest.approx(0.5, abs=1e-12)
        assert estimate.p_conditional == pytest.approx(0.25, abs=1e-12)

    def test_detector_calibration_and_leaky_sink(self, hadamard):
        """Test default imperfections give the leaky-sink first return"""
        params = ImperfectionParams()
        reset = simulate_counts("reset", params, hadamard, 4)
        continual = simulate_counts("continual", params, hadamard, 4)
        assert normalize_reset(reset, 4) == pytest.approx(0.125, abs=1e-12)
        assert normalize_continual(continual, reset, 4).q_first_return == pytest.approx(0.1025, abs=1e-12)

    def test_background_subtraction(self, hadamard):
        """Test dark counts are removed before normalization"""
        params = ImperfectionParams.ideal(roundtrip_efficiency=0.8, dark_count_rate=1000.0)
        record = simulate_counts("reset", params, hadamard, 4)
        assert normalize_reset(record, 4) == pytest.approx(0.125, rel=1e-9)
        assert normalize_reset(record, 4, subtract_background=False) > 0.125

    def test_distribution_sums_to_one(self, hadamard):
        """Test normalized distributions sum to one"""
        record = simulate_counts("continual", ImperfectionParams(), hadamard, 6)
        assert sum(normalize_distribution(record, 6).values()) == pytest.approx(1.0)

    def test_wrong_record_scheme(self, lossy_ideal, hadamard):
        """Test the reset normalizer refuses continual records"""
        continual = simulate_counts("continual", lossy_ideal, hadamard, 2)
        with pytest.raises(ExperimentModelError, match="must be a reset record"):
            normalize_reset(continual, 2)

    def test_no_signal(self, lossy_ideal, hadamard):
        """Test empty steps cannot be normalized"""
        record = simulate_counts("reset", lossy_ideal, hadamard, 2)
        empty = dataclasses.replace(record, frame=record.frame.assign(expected=0.0))
        with pytest.raises(ExperimentModelError, match="no signal at step 1"):
            normalize_reset(empty, 1)

    def test_step_out_of_range(self, lossy_ideal, hadamard):
        """Test steps outside the record are rejected"""
        record = simulate_counts("reset", lossy_ideal, hadamard, 2)
        with pytest.raises(ExperimentModelError, match="outside recorded range"):
            normalize_reset(record, 3)

    def test_poisson_errors_positive(self, hadamard):
        """Test shot-noise errors are finite and positive at a return step"""
        reset = simulate_counts("reset", ImperfectionParams(), hadamard, 4)
        continual = simulate_counts("continual", ImperfectionParams(), hadamard, 4)
        errors = poisson_errors(continual, reset, 4)
        assert 0 < errors.p_origin < 0.1
        assert 0 < errors.q_first_return < 0.1
        assert 0 < errors.survival < 0.1

    def test_sampled_first_return_is_consistent(self, lossy_ideal, hadamard):
        """Test the mean of q(0,2) over 100 Poisson runs lies within 4 sigma of 1/2"""
        estimates = []
        for seed in range(100):
            reset = simulate_counts("reset", lossy_ideal, hadamard, 2, seed=2 * seed, mode="sampled")
            continual = simulate_counts("continual", lossy_ideal, hadamard, 2, seed=2 * seed + 1, mode="sampled")
            estimates.append(normalize_continual(continual, reset, 2).q_first_return)
        estimates = np.array(estimates)
        sigma = estimates.std(ddof=1) / np.sqrt(len(estimates))
        assert sigma > 0
        assert abs(estimates.mean() - 0.5) < 4 * sigma


class TestAlternativeNormalization:
    """Test suite for normalization by the continual run's own light"""

    def test_agrees_with_standard_normalization(self, lossy_ideal, hadamard):
        """Test both normalizations give q(0,4) = 1/8"""
        reset = simulate_counts("reset", lossy_ideal, hadamard, 4)
        continual = simulate_counts("continual", lossy_ideal, hadamard, 4)
        assert normalize_continual_alternative(continual, reset, 4) == pytest.approx(0.125, abs=1e-12)

    def test_agrees_over_horizon(self, lossy_ideal, hadamard):
        """Test agreement at every step up to T = 10"""
        reset = simulate_counts("reset", lossy_ideal, hadamard, 10)
        continual = simulate_counts("continual", lossy_ideal, hadamard, 10)
        for t in range(1, 11):
            standard = normalize_continual(continual, reset, t).q_first_return
            alternative = normalize_continual_alternative(continual, reset, t)
            assert alternative == pytest.approx(standard, abs=1e-12)

    def test_missing_sink_counts(self, lossy_ideal, hadamard):
        """Test records without sink channels are rejected"""
        reset = simulate_counts("reset", lossy_ideal, hadamard, 4)
        continual = simulate_counts("continual", lossy_ideal, hadamard, 4)
        frame = continual.frame[~continual.frame['coin'].str.startswith('sink')].reset_index(drop=True)
        stripped = dataclasses.replace(continual, frame=frame)
        with pytest.raises(ExperimentModelError, match="missing sink counts"):
            normalize_continual_alternative(stripped, reset, 4)


class TestDerivedProbabilities:
    """Test suite for the expected-value analysis pipeline"""

    def test_reset_pipeline(self, hadamard):
        """Test derived p(0,t) for default imperfections"""
        derived = derived_probabilities(ImperfectionParams(), hadamard, "reset", 4)
        assert derived.frame.loc[4, 'p_origin'] == pytest.approx(0.125, abs=1e-12)
        assert derived.distributions.shape == (4, 9)
        np.testing.assert_allclose(derived.distributions.sum(axis=1), 1.0)

    def test_continual_pipeline(self, lossy_ideal, hadamard):
        """Test derived continual columns"""
        derived = derived_probabilities(lossy_ideal, hadamard, "continual", 4)
        assert list(derived.frame.columns) == ['q_first_return', 'survival', 'p_conditional']
        assert derived.frame.loc[4, 'p_conditional'] == pytest.approx(0.25, abs=1e-12)

    def test_unknown_scheme(self, hadamard):
        """Test unknown schemes are rejected"""
        with pytest.raises(ExperimentModelError):
            derived_probabilities(ImperfectionParams(), hadamard, "weekly", 4)


class TestErrorEnvelope:
    """Test suite for systematic error envelopes"""

    def test_sixteen_corners(self):
        """Test the error box has 16 corners"""
        corners = corner_params(ImperfectionParams(), ErrorRanges())
        assert len(corners) == 16
        residuals = {c.sink_residual_transmission for c in corners}
        assert residuals == {0.0, 0.01}

    def test_zero_ranges_give_zero_width(self, hadamard):
        """Test a degenerate box has no spread"""
        envelope = error_envelope(ImperfectionParams(), hadamard, "continual", 4, ranges=ErrorRanges.zero())
        assert (envelope.deviation.to_numpy() == 0).all()

    def test_bounds_contain_reference(self, hadamard):
        """Test envelope bounds straddle the nominal values"""
        envelope = error_envelope(ImperfectionParams(), hadamard, "continual", 6)
        bounds = envelope.bounds('q_first_return')
        assert (bounds['lower'] <= bounds['value']).all()
        assert (bounds['upper'] >= bounds['value']).all()
        assert envelope.evaluations == 8 * SINK_GRID_POINTS
        assert envelope.deviation['q_first_return'].max() > 0

    def test_reset_scheme_uses_corners(self, hadamard):
        """Test the sink-blind reset scheme is evaluated at the 16 corners"""
        envelope = error_envelope(ImperfectionParams(), hadamard, "reset", 4)
        assert envelope.evaluations == 16

    def test_sink_grid_spacing(self):
        """Test the sink residual grid is even in amplitude and hits both edges exactly"""
        grid = sink_residual_grid(ImperfectionParams(sink_residual_transmission=0.02), ErrorRanges())
        assert len(grid) == SINK_GRID_POINTS
        assert grid[0] == 0.01
        assert grid[-1] == 0.02
        assert np.allclose(np.diff(np.sqrt(grid)), (math.sqrt(0.02) - math.sqrt(0.01)) / (SINK_GRID_POINTS - 1))

        collapsed = sink_residual_grid(ImperfectionParams(sink_residual_transmission=0.0), ErrorRanges())
        assert collapsed.tolist() == [0.0]

    def test_bound_along_grid_covers_interior_peak(self):
        """Test a peak between grid points stays under the curvature allowance"""
        s = np.linspace(0.0, 0.1, SINK_GRID_POINTS)
        curve = lambda u: (u - 0.1) * (u - 0.0137) * 40.0
        bound = _bound_along_grid(curve(s))
        fine = np.linspace(0.0, 0.1, 10001)
        assert np.abs(curve(fine)).max() <= bound
        assert np.abs(curve(s)).max() < np.abs(curve(fine)).max()

    @pytest.mark.slow
    @pytest.mark.parametrize("scheme", ["reset", "continual"])
    def test_interior_samples_inside_envelope(self, hadamard, scheme):
        """Test 100 interior parameter draws stay within the envelope at every step up to 36"""
        nominal = ImperfectionParams()
        envelope = error_envelope(nominal, hadamard, scheme, 36)
        violations = envelope_violations(envelope, nominal, hadamard, samples=100, seed=0, tolerance=1e-12)
        assert violations == []

    def test_draw_near_sink_extremum_inside_envelope(self, hadamard):
        """Test a small-residual draw, where q peaks inside the sink range, is covered"""
        nominal = ImperfectionParams()
        envelope = error_envelope(nominal, hadamard, "continual", 12)
        inside = nominal.model_copy(update={
            'detector_efficiencies': (0.5996, 0.7005),
            'arm_loss_asymmetry': 0.0077,
            'coin_angle_error': -0.00096,
            'sink_residual_transmission': 2.1e-4,
        })
        derived = derived_probabilities(inside, hadamard, "continual", 12, nominal.detector_efficiencies)
        diff = (derived.frame - envelope.reference.frame).abs()
        for column in ('q_first_return', 'p_conditional'):
            assert (diff[column] <= envelope.deviation[column] + 1e-12).all()

    @pytest.mark.parametrize("axis", ['detector_relative', 'arm_loss', 'coin_angle', 'sink_residual'])
    def test_envelope_grows_with_range(self, hadamard, axis):
        """Test widening one error range never narrows the envelope"""
        nominal = ImperfectionParams()
        base = ErrorRanges()
        narrow = base.model_copy(update={axis: getattr(base, axis) / 2})
        for scheme in ("reset", "continual"):
            small = error_envelope(nominal, hadamard, scheme, 10, ranges=narrow)
            large = error_envelope(nominal, hadamard, scheme, 10, ranges=base)
            assert (small.deviation.to_numpy() <= large.deviation.to_numpy() + 1e-12).all()


class TestSignalToNoise:
    """Test suite for signal-to-noise ratios"""

    def test_noiseless_is_infinite(self, hadamard):
        """Test zero background gives infinite SNR"""
        record = simulate_counts("reset", ImperfectionParams(), hadamard, 3)
        assert snr(record, None, 2) == math.inf

    def test_snr_decreases_with_loss(self, hadamard):
        """Test SNR falls step by step when dark counts are present"""
        record = simulate_counts("reset", ImperfectionParams(dark_count_rate=1e5), hadamard, 12)
        series = snr_series(record)
        assert series.index.name == 't'
        trend = snr_trend(series, threshold=1e9)
        assert trend.monotone_decreasing is True
        assert trend.first_step_below == 1
        assert snr_trend(series, threshold=0.0).first_step_below is None

    def test_window_mismatch(self, hadamard):
        """Test the time-bin map must match the record's windows"""
        record = simulate_counts("reset", ImperfectionParams(), hadamard, 2)
        with pytest.raises(ExperimentModelError, match="windows"):
            snr(record, TimeBinMap(detection_window_ns=10.0), 1)


class TestRecordFiles:
    """Test suite for the columnar record format"""

    def test_write_and_read(self, tmp_path, hadamard):
        """Test a sampled continual record survives a file round trip"""
        record = simulate_counts("continual", ImperfectionParams(), hadamard, 5, seed=9, mode="sampled")
        path = write_count_record(record, tmp_path / "continual.csv", extra_header=["command=test"])

        text = path.read_text()
        assert text.startswith("# command=test\n# scheme=continual\n# seed=9\n")

        loaded = read_count_record(path)
        assert loaded.scheme == "continual"
        assert loaded.seed == 9
        assert loaded.params == record.params
        pd.testing.assert_frame_equal(loaded.frame, record.frame)
        np.testing.assert_array_equal(loaded.input_photons, record.input_photons)

    def test_missing_header(self, tmp_path):
        """Test files without the header are rejected"""
        path = tmp_path / "bare.csv"
        path.write_text("t,x,coin,expected,counts\n1,1,R,1.0,1\n")
        with pytest.raises(ExperimentModelError, match="missing header keys"):
            read_count_record(path)
