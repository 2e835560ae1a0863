"""
Photonic Loop Model

Forward model of the time-multiplexed fibre-loop walk and the pipeline that
turns detector counts back into walk probabilities.

Forward model, per round trip:
- Walk step with the (possibly mis-set) half-wave plate coin
- Homogeneous loss: amplitudes scaled by sqrt(roundtrip_efficiency)
- Arm asymmetry: L-path intensity scaled by (1 + arm_loss_asymmetry)
- Detection of every occupied bin by the polarization-resolving unit
  (R -> detector 0, L -> detector 1)
- Continual scheme only: origin sink with residual transmission; the
  out-coupled light is detected as well

Expected counts = input photons x intensity x detector efficiency + background,
where the background of one 4.8 ns window is dark_count_rate x window x pulses
plus an optional user-supplied noise profile.

Normalization:
- p(0,t) = N(0,t) / sum_y N(y,t) from a reset run
- q(0,t) = N_c(0,t) / sum_y N(y,t), s_{t-1} = sum_y N_c(y,t) / sum_y N(y,t),
  p_c(0,t) = q / s, from a continual run plus a reset run
- Homogeneous loss cancels in every ratio
"""

import io
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

from .config import settings
from .fileio import atomic_write_text, format_float
from .timebins import TimeBinMap
from .walk_core import (
    CoinSpec,
    InitialSpec,
    WalkState,
    hwp_coin,
    initial_state,
    step,
)

logger = logging.getLogger(__name__)

SCHEMES = ("reset", "continual")
MODES = ("expected", "sampled")
SIGNAL_CHANNELS = ("R", "L")
SINK_CHANNELS = ("sink_R", "sink_L")
NOISE_CHANNEL = "noise"
RECORD_COLUMNS = ["t", "x", "coin", "expected", "counts"]

DEFAULT_REPETITION_RATE_HZ = 8000.0
DEFAULT_INTEGRATION_TIME_S = 10.0
DEFAULT_SOURCE_PHOTONS_PER_PULSE = 1e7

# Envelope sampling of the sink residual
SINK_GRID_POINTS = 9
CURVATURE_ALLOWANCE = 2.0

# (t, total expected signal at t) -> extra expected background counts per window
NoiseProfile = Callable[[int, float], float]


class ExperimentModelError(Exception):
    """Custom exception for forward-model and normalization errors"""
    pass


class ImperfectionParams(BaseModel):
    """
    Imperfections of the loop and the detection unit.

    Validators enforce physical sanity bounds only; the error ranges used for
    the envelope live in ErrorRanges.
    """

    roundtrip_efficiency: float = Field(default=0.8, description="Intensity transmission per round trip")
    arm_loss_asymmetry: float = Field(default=0.0, description="Relative extra intensity change of the L path")
    coin_angle_error: float = Field(default=0.0, description="Coin plate angle error in radians")
    sink_residual_transmission: float = Field(default=0.01, description="Intensity fraction leaking through a sink")
    detector_efficiencies: Tuple[float, float] = Field(default=(0.6, 0.7), description="Detector efficiencies (R, L)")
    dark_count_rate: float = Field(default=0.0, description="Dark counts per second per detector")
    mean_input_photons: float = Field(default=1e4, description="Photons entering the loop over one integration")

    model_config = {"frozen": True}

    @field_validator('roundtrip_efficiency')
    def validate_efficiency(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError("Round-trip efficiency must be in (0, 1]")
        return v

    @field_validator('arm_loss_asymmetry')
    def validate_arm_asymmetry(cls, v):
        if not -1.0 < v < 1.0:
            raise ValueError("Arm loss asymmetry must lie strictly between -1 and 1")
        return v

    @field_validator('coin_angle_error')
    def validate_coin_error(cls, v):
        if not math.isfinite(v) or abs(v) > math.pi / 4:
            raise ValueError("Coin angle error must be finite and at most pi/4 in magnitude")
        return v

    @field_validator('sink_residual_transmission')
    def validate_residual(cls, v):
        if not 0.0 <= v <= 1.0:
            raise ValueError("Sink residual transmission must be in [0, 1]")
        return v

    @field_validator('detector_efficiencies')
    def validate_detectors(cls, v):
        if any(not 0.0 < e <= 1.0 for e in v):
            raise ValueError("Detector efficiencies must be in (0, 1]")
        return v

    @field_validator('dark_count_rate', 'mean_input_photons')
    def validate_nonnegative(cls, v):
        if not math.isfinite(v) or v < 0:
            raise ValueError("Rates and photon numbers must be nonnegative")
        return v

    @classmethod
    def ideal(cls, **overrides) -> "ImperfectionParams":
        """Lossless loop, perfect sink and detectors, no noise"""
        base = dict(
            roundtrip_efficiency=1.0,
            arm_loss_asymmetry=0.0,
            coin_angle_error=0.0,
            sink_residual_transmission=0.0,
            detector_efficiencies=(1.0, 1.0),
            dark_count_rate=0.0,
        )
        base.update(overrides)
        return cls(**base)


class ErrorRanges(BaseModel):
    """Half-widths of the systematic error box around the nominal parameters"""

    detector_relative: float = Field(default=0.01, description="Relative detector spread, ratio flipped at corners")
    arm_loss: float = Field(default=0.01, description="Arm asymmetry half-width")
    coin_angle: float = Field(default=math.radians(0.15), description="Coin angle half-width in radians")
    sink_residual: float = Field(default=0.01, description="Sink residual range below the nominal value")

    model_config = {"frozen": True}

    @field_validator('detector_relative', 'arm_loss', 'coin_angle', 'sink_residual')
    def validate_nonnegative(cls, v):
        if v < 0:
            raise ValueError("Error ranges must be nonnegative")
        return v

    @classmethod
    def zero(cls) -> "ErrorRanges":
        return cls(detector_relative=0.0, arm_loss=0.0, coin_angle=0.0, sink_residual=0.0)


class AcquisitionSegment(BaseModel):
    """One data set: steps up to max_step measured behind an ND filter"""

    max_step: int
    optical_density: float
    integration_time_s: float

    @field_validator('max_step')
    def validate_max_step(cls, v):
        if v < 1:
            raise ValueError("Segment must cover at least step 1")
        return v

    @field_validator('integration_time_s')
    def validate_integration(cls, v):
        if v <= 0:
            raise ValueError("Integration time must be positive")
        return v


class AcquisitionPlan(BaseModel):
    """Sequence of ND-filter data sets covering steps 1..horizon"""

    segments: List[AcquisitionSegment] = Field(default_factory=lambda: [
        AcquisitionSegment(max_step=5, optical_density=8.0, integration_time_s=10.0),
        AcquisitionSegment(max_step=21, optical_density=7.0, integration_time_s=60.0),
        AcquisitionSegment(max_step=36, optical_density=6.0, integration_time_s=3600.0),
    ])
    repetition_rate_hz: float = DEFAULT_REPETITION_RATE_HZ

    @model_validator(mode='after')
    def validate_segments(self):
        if not self.segments:
            raise ValueError("Acquisition plan needs at least one segment")
        steps = [s.max_step for s in self.segments]
        if steps != sorted(set(steps)):
            raise ValueError("Segment max_step values must be strictly increasing")
        if self.repetition_rate_hz <= 0:
            raise ValueError("Repetition rate must be positive")
        return self

    @property
    def horizon(self) -> int:
        return self.segments[-1].max_step

    def segment_for(self, t: int) -> AcquisitionSegment:
        for segment in self.segments:
            if t <= segment.max_step:
                return segment
        raise ExperimentModelError(f"Step {t} is beyond the acquisition plan horizon {self.horizon}")


@dataclass(frozen=True, eq=False)
class CountRecord:
    """
    Detector data of one scheme over steps 1..horizon.

    frame columns: t, x, coin, expected, counts. The coin column holds the
    signal channels R and L, the sink channels sink_R and sink_L (continual
    scheme, x = 0) and the noise channel, one offset window pair per signal bin.
    In expected-value mode the normalizers read `expected`; `counts` then holds
    the rounded expectation for reference.
    """

    scheme: str
    mode: str
    seed: Optional[int]
    params: ImperfectionParams
    horizon: int
    frame: pd.DataFrame
    input_photons: np.ndarray
    integration_times_s: np.ndarray
    repetition_rate_hz: float = DEFAULT_REPETITION_RATE_HZ
    detection_window_ns: float = 4.8
    saturated_steps: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ExperimentModelError(f"Unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        if self.mode not in MODES:
            raise ExperimentModelError(f"Unknown mode '{self.mode}', expected one of {MODES}")
        if list(self.frame.columns) != RECORD_COLUMNS:
            raise ExperimentModelError(f"Record columns must be {RECORD_COLUMNS}, got {list(self.frame.columns)}")
        if (self.frame['expected'] < 0).any():
            raise ExperimentModelError("Expected intensities must be nonnegative")
        if (self.frame['counts'] < 0).any():
            raise ExperimentModelError("Counts must be nonnegative")
        for name in ('input_photons', 'integration_times_s'):
            values = np.asarray(getattr(self, name), dtype=float)
            if values.shape != (self.horizon,):
                raise ExperimentModelError(f"{name} must have one entry per step 1..{self.horizon}")
            object.__setattr__(self, name, values)
        object.__setattr__(self, 'saturated_steps', tuple(int(t) for t in self.saturated_steps))

    @property
    def value_column(self) -> str:
        return 'expected' if self.mode == 'expected' else 'counts'

    @property
    def has_sink_channels(self) -> bool:
        return bool(self.frame['coin'].isin(SINK_CHANNELS).any())

    def step_frame(self, t: int) -> pd.DataFrame:
        if not 1 <= t <= self.horizon:
            raise ExperimentModelError(f"Step {t} outside recorded range 1..{self.horizon}")
        return self.frame[self.frame['t'] == t]

    def input_at(self, t: int) -> float:
        return float(self.input_photons[t - 1])

    def pulses_at(self, t: int) -> float:
        return float(self.repetition_rate_hz * self.integration_times_s[t - 1])


class ContinualEstimate(NamedTuple):
    q_first_return: float
    survival: float
    p_conditional: float


class StatisticalErrors(NamedTuple):
    p_origin: float
    q_first_return: float
    survival: float


@dataclass(eq=False)
class DerivedProbabilities:
    """
    Probabilities recovered from expected-value records.

    frame is indexed by t. distributions has shape (T, 2T+1), column x + T.
    """

    scheme: str
    horizon: int
    frame: pd.DataFrame
    distributions: np.ndarray


@dataclass(eq=False)
class ErrorEnvelope:
    """Nominal reference values and per-step maximal deviations over the error box"""

    scheme: str
    horizon: int
    reference: DerivedProbabilities
    deviation: pd.DataFrame
    evaluations: int = 16

    def bounds(self, column: str) -> pd.DataFrame:
        value = self.reference.frame[column]
        width = self.deviation[column]
        return pd.DataFrame({'value': value, 'lower': value - width, 'upper': value + width})


class SnrTrend(BaseModel):
    threshold: float
    first_step_below: Optional[int] = None
    monotone_decreasing: bool
    final_snr: float


@dataclass(eq=False)
class _ForwardIntensities:
    """Intensities reaching the detection unit, before detector efficiency"""

    signal: List[np.ndarray] = field(default_factory=list)  # step t-1 -> (2t+1, 2)
    sink: List[np.ndarray] = field(default_factory=list)  # step t-1 -> (2,)


def _perturbed_coin(coin: CoinSpec, coin_angle_error: float) -> CoinSpec:
    if coin_angle_error == 0.0:
        return coin
    if coin.hwp_angle is None:
        raise ExperimentModelError(
            f"Coin '{coin.name}' has no half-wave plate angle, so a coin angle error cannot be applied"
        )
    return hwp_coin(coin.hwp_angle + coin_angle_error)


def _forward_intensities(
    scheme: str,
    params: ImperfectionParams,
    coin: CoinSpec,
    T: int,
    initial: Optional[InitialSpec] = None
) -> _ForwardIntensities:
    walk_coin = _perturbed_coin(coin, params.coin_angle_error)
    loss = np.array([
        math.sqrt(params.roundtrip_efficiency),
        math.sqrt(params.roundtrip_efficiency * (1.0 + params.arm_loss_asymmetry)),
    ])
    leak = math.sqrt(params.sink_residual_transmission)

    state = initial_state(initial or InitialSpec.right())
    result = _ForwardIntensities()
    for t in range(1, T + 1):
        stepped = step(state, walk_coin)
        amplitudes = stepped.amplitudes * loss
        result.signal.append(np.abs(amplitudes) ** 2)

        if scheme == "continual":
            origin = amplitudes[t].copy()
            amplitudes = np.array(amplitudes)
            amplitudes[t] = origin * leak
            result.sink.append(np.abs(origin) ** 2 - np.abs(amplitudes[t]) ** 2)
        state = WalkState(t, amplitudes)
    return result


def _build_record(
    scheme: str,
    params: ImperfectionParams,
    coin: CoinSpec,
    T: int,
    mode: str,
    seed: Optional[int],
    input_photons: np.ndarray,
    integration_times: np.ndarray,
    repetition_rate_hz: float,
    time_bins: TimeBinMap,
    noise_profile: Optional[NoiseProfile],
    initial: Optional[InitialSpec],
    saturation_ceiling: Optional[float],
) -> CountRecord:
    if scheme not in SCHEMES:
        raise ExperimentModelError(f"Unknown scheme '{scheme}', expected one of {SCHEMES}")
    if mode not in MODES:
        raise ExperimentModelError(f"Unknown mode '{mode}', expected one of {MODES}")
    if T < 1:
        raise ExperimentModelError(f"Horizon must be at least 1, got {T}")
    if mode == "sampled" and seed is None:
        raise ExperimentModelError("Poisson sampling requires an explicit seed")

    start = time.time()
    forward = _forward_intensities(scheme, params, coin, T, initial)
    efficiencies = np.array(params.detector_efficiencies, dtype=float)
    ceiling = saturation_ceiling if saturation_ceiling is not None else settings.saturation_ceiling
    window_s = time_bins.detection_window_ns * 1e-9

    t_col: List[int] = []
    x_col: List[int] = []
    coin_col: List[str] = []
    expected_col: List[float] = []
    saturated = []

    for t in range(1, T + 1):
        n_in = float(input_photons[t - 1])
        pulses = repetition_rate_hz * float(integration_times[t - 1])
        signal = forward.signal[t - 1][::2]  # parity sublattice
        positions = np.arange(-t, t + 1, 2)
        detected = n_in * signal * efficiencies

        background = params.dark_count_rate * window_s * pulses
        if noise_profile is not None:
            background += float(noise_profile(t, float(detected.sum())))
        if background < 0:
            raise ExperimentModelError(f"Noise profile produced negative background at step {t}")

        if pulses > 0 and detected.size and detected.max() / pulses > ceiling:
            saturated.append(t)

        for i, x in enumerate(positions):
            for c, channel in enumerate(SIGNAL_CHANNELS):
                t_col.append(t)
                x_col.append(int(x))
                coin_col.append(channel)
                expected_col.append(float(detected[i, c] + background))

        if scheme == "continual":
            sink_detected = n_in * forward.sink[t - 1] * efficiencies
            for c, channel in enumerate(SINK_CHANNELS):
                t_col.append(t)
                x_col.append(0)
                coin_col.append(channel)
                expected_col.append(float(sink_detected[c] + background))

        for x in positions:
            t_col.append(t)
            x_col.append(int(x))
            coin_col.append(NOISE_CHANNEL)
            expected_col.append(2.0 * background)

    expected = np.array(expected_col, dtype=float)
    if mode == "sampled":
        rng = np.random.Generator(np.random.PCG64(seed))
        counts = rng.poisson(expected).astype(np.int64)
    else:
        counts = np.rint(expected).astype(np.int64)

    frame = pd.DataFrame({
        't': np.array(t_col, dtype=np.int64),
        'x': np.array(x_col, dtype=np.int64),
        'coin': coin_col,
        'expected': expected,
        'counts': counts,
    })

    if saturated:
        logger.warning(
            f"{scheme} record: detectors saturate at steps {saturated} "
            f"(ceiling {ceiling} photons per pulse per bin)"
        )

    record = CountRecord(
        scheme=scheme,
        mode=mode,
        seed=seed,
        params=params,
        horizon=T,
        frame=frame,
        input_photons=np.asarray(input_photons, dtype=float),
        integration_times_s=np.asarray(integration_times, dtype=float),
        repetition_rate_hz=repetition_rate_hz,
        detection_window_ns=time_bins.detection_window_ns,
        saturated_steps=tuple(saturated),
    )
    logger.info(f"Simulated {scheme} record ({mode}) to T={T} in {time.time() - start:.3f}s")
    return record


def simulate_counts(
    scheme: str,
    params: ImperfectionParams,
    coin: CoinSpec,
    T: int,
    seed: Optional[int] = None,
    mode: str = "expected",
    initial: Optional[InitialSpec] = None,
    time_bins: Optional[TimeBinMap] = None,
    repetition_rate_hz: float = DEFAULT_REPETITION_RATE_HZ,
    integration_time_s: float = DEFAULT_INTEGRATION_TIME_S,
    noise_profile: Optional[NoiseProfile] = None,
    saturation_ceiling: Optional[float] = None
) -> CountRecord:
    """
    Simulate detector data for one scheme over steps 1..T.

    Args:
        scheme: 'reset' or 'continual'
        params: Loop and detector imperfections
        coin: Nominal coin; the plate angle error is applied on top of it
        T: Horizon
        seed: PCG64 seed, required when mode is 'sampled'
        mode: 'expected' (deterministic) or 'sampled' (Poisson counts)
        initial: Initial coin state (default |R>)
        time_bins: Detection window length source
        repetition_rate_hz: Pulse repetition rate
        integration_time_s: Integration time of every step
        noise_profile: Extra background per window as a function of (t, total signal)
        saturation_ceiling: Photons per pulse per bin above which a step is flagged

    Returns:
        CountRecord with signal, sink (continual) and noise channels

    Raises:
        ExperimentModelError: For unknown scheme or mode, T < 1, or sampling without seed
    """
    if integration_time_s <= 0 or repetition_rate_hz <= 0:
        raise ExperimentModelError("Repetition rate and integration time must be positive")
    horizon = max(T, 0)
    return _build_record(
        scheme, params, coin, T, mode, seed,
        input_photons=np.full(horizon, params.mean_input_photons),
        integration_times=np.full(horizon, integration_time_s),
        repetition_rate_hz=repetition_rate_hz,
        time_bins=time_bins or TimeBinMap(),
        noise_profile=noise_profile,
        initial=initial,
        saturation_ceiling=saturation_ceiling,
    )


def simulate_acquisition(
    scheme: str,
    params: ImperfectionParams,
    coin: CoinSpec,
    plan: Optional[AcquisitionPlan] = None,
    source_photons_per_pulse: float = DEFAULT_SOURCE_PHOTONS_PER_PULSE,
    seed: Optional[int] = None,
    mode: str = "expected",
    initial: Optional[InitialSpec] = None,
    time_bins: Optional[TimeBinMap] = None,
    noise_profile: Optional[NoiseProfile] = None,
    saturation_ceiling: Optional[float] = None
) -> CountRecord:
    """
    Simulate a measurement campaign made of ND-filtered data sets.

    Each step is taken from the first segment that covers it; its input photon
    number is source x 10^-OD x repetition rate x integration time. The
    params' mean_input_photons is ignored.
    """
    plan = plan or AcquisitionPlan()
    if source_photons_per_pulse <= 0:
        raise ExperimentModelError("Source photon number per pulse must be positive")

    T = plan.horizon
    integration = np.zeros(T)
    inputs = np.zeros(T)
    for t in range(1, T + 1):
        segment = plan.segment_for(t)
        integration[t - 1] = segment.integration_time_s
        pulses = plan.repetition_rate_hz * segment.integration_time_s
        inputs[t - 1] = source_photons_per_pulse * 10.0 ** (-segment.optical_density) * pulses

    logger.info(f"Acquisition plan with {len(plan.segments)} data sets up to step {T}")
    return _build_record(
        scheme, params, coin, T, mode, seed,
        input_photons=inputs,
        integration_times=integration,
        repetition_rate_hz=plan.repetition_rate_hz,
        time_bins=time_bins or TimeBinMap(),
        noise_profile=noise_profile,
        initial=initial,
        saturation_ceiling=saturation_ceiling,
    )


def _background_per_window(frame: pd.DataFrame, column: str) -> float:
    """Mean noise count of one detector window; noise rows cover both detectors"""
    noise = frame.loc[frame['coin'] == NOISE_CHANNEL, column]
    if noise.empty:
        return 0.0
    return float(noise.mean()) / 2.0


def _calibrated(
    record: CountRecord,
    t: int,
    channels: Sequence[str],
    efficiencies: Optional[Tuple[float, float]],
    subtract_background: bool
) -> pd.Series:
    """Background-subtracted, efficiency-corrected photon numbers per x for the given channels"""
    frame = record.step_frame(t)
    column = record.value_column
    effs = efficiencies or record.params.detector_efficiencies
    background = _background_per_window(frame, column) if subtract_background else 0.0

    totals = None
    for c, channel in enumerate(channels):
        rows = frame[frame['coin'] == channel]
        values = np.clip(rows[column].to_numpy(dtype=float) - background, 0.0, None) / effs[c]
        part = pd.Series(values, index=rows['x'].to_numpy())
        totals = part if totals is None else totals.add(part, fill_value=0.0)
    if totals is None:
        return pd.Series(dtype=float)
    return totals.sort_index()


def _signal(record, t, efficiencies, subtract_background) -> pd.Series:
    return _calibrated(record, t, SIGNAL_CHANNELS, efficiencies, subtract_background)


def _require_scheme(record: CountRecord, scheme: str, role: str):
    if record.scheme != scheme:
        raise ExperimentModelError(f"{role} must be a {scheme} record, got {record.scheme}")


def normalize_reset(
    record: CountRecord,
    t: int,
    efficiencies: Optional[Tuple[float, float]] = None,
    subtract_background: bool = True
) -> float:
    """
    p(0,t) = N(0,t) / sum_y N(y,t) from a reset record.

    Raises:
        ExperimentModelError: If the record is not a reset record or carries no signal at t
    """
    _require_scheme(record, "reset", "Record")
    signal = _signal(record, t, efficiencies, subtract_background)
    total = float(signal.sum())
    if total <= 0.0:
        raise ExperimentModelError(f"no signal at step {t}")
    return float(signal.get(0, 0.0)) / total


def normalize_distribution(
    record: CountRecord,
    t: int,
    efficiencies: Optional[Tuple[float, float]] = None,
    subtract_background: bool = True
) -> Dict[int, float]:
    """p(x,t) from a reset record, or p_c(x,t) from a continual record"""
    signal = _signal(record, t, efficiencies, subtract_background)
    total = float(signal.sum())
    if total <= 0.0:
        raise ExperimentModelError(f"no signal at step {t}")
    return {int(x): float(v) / total for x, v in signal.items()}


def normalize_continual(
    record_continual: CountRecord,
    record_reset: CountRecord,
    t: int,
    efficiencies: Optional[Tuple[float, float]] = None,
    subtract_background: bool = True
) -> ContinualEstimate:
    """
    First return, survival and conditional origin probability at step t.

    Both records are scaled by their own input photon numbers before the
    ratios are taken. p_conditional is nan when the continual record has no
    signal at t.

    Returns:
        ContinualEstimate(q_first_return, survival, p_conditional) with q = s * p_c

    Raises:
        ExperimentModelError: If the reset record has no signal at step t
    """
    _require_scheme(record_continual, "continual", "First record")
    _require_scheme(record_reset, "reset", "Second record")

    reset_total = float(_signal(record_reset, t, efficiencies, subtract_background).sum())
    reset_total /= record_reset.input_at(t)
    if reset_total <= 0.0:
        raise ExperimentModelError(f"no signal at step {t} in the reset record")

    continual = _signal(record_continual, t, efficiencies, subtract_background) / record_continual.input_at(t)
    continual_total = float(continual.sum())
    survival = continual_total / reset_total
    if continual_total <= 0.0:
        return ContinualEstimate(0.0, survival, float('nan'))

    p_conditional = float(continual.get(0, 0.0)) / continual_total
    return ContinualEstimate(survival * p_conditional, survival, p_conditional)


def normalize_continual_alternative(
    record_continual: CountRecord,
    record_reset: CountRecord,
    t: int,
    efficiencies: Optional[Tuple[float, float]] = None,
    subtract_background: bool = True
) -> float:
    """
    q(0,t) normalized by the total light of the continual run itself.

    Light out-coupled by the sink at an earlier step k is propagated to step t
    with the homogeneous loss ratio R(t)/R(k) taken from the reset run:

        q = N_c(0,t) / (sum_{k<t} S(k) R(t)/R(k) + sum_y N_c(y,t))

    All quantities are per input photon.

    Raises:
        ExperimentModelError: If the continual record has no sink channels or a
            reset step carries no signal
    """
    _require_scheme(record_continual, "continual", "First record")
    _require_scheme(record_reset, "reset", "Second record")
    if not record_continual.has_sink_channels:
        raise ExperimentModelError("missing sink counts: record carries no sink channels")

    def reset_total(k: int) -> float:
        value = float(_signal(record_reset, k, efficiencies, subtract_background).sum()) / record_reset.input_at(k)
        if value <= 0.0:
            raise ExperimentModelError(f"no signal at step {k} in the reset record")
        return value

    r_t = reset_total(t)
    absorbed = 0.0
    for k in range(1, t):
        sink = float(_calibrated(record_continual, k, SINK_CHANNELS, efficiencies, subtract_background).sum())
        if sink > 0.0:
            absorbed += sink / record_continual.input_at(k) * r_t / reset_total(k)

    continual = _signal(record_continual, t, efficiencies, subtract_background) / record_continual.input_at(t)
    total = absorbed + float(continual.sum())
    if total <= 0.0:
        raise ExperimentModelError(f"no signal at step {t} in the continual record")
    return float(continual.get(0, 0.0)) / total


def poisson_errors(record_continual: CountRecord, record_reset: CountRecord, t: int) -> StatisticalErrors:
    """
    Shot-noise standard errors of p(0,t), q(0,t) and s_{t-1}.

    First-order propagation with Var(N) = N on the raw signal counts.
    """
    _require_scheme(record_continual, "continual", "First record")
    _require_scheme(record_reset, "reset", "Second record")

    def raw(record):
        frame = record.step_frame(t)
        signal = frame[frame['coin'].isin(SIGNAL_CHANNELS)]
        column = record.value_column
        return float(signal[column].sum()), float(signal.loc[signal['x'] == 0, column].sum())

    reset_total, reset_origin = raw(record_reset)
    continual_total, continual_origin = raw(record_continual)
    if reset_total <= 0:
        raise ExperimentModelError(f"no signal at step {t} in the reset record")

    p = normalize_reset(record_reset, t)
    estimate = normalize_continual(record_continual, record_reset, t)

    sigma_p = math.sqrt(max(p * (1.0 - p), 0.0) / reset_total)
    sigma_q = estimate.q_first_return * math.sqrt(
        (1.0 / continual_origin if continual_origin > 0 else 0.0) + 1.0 / reset_total
    )
    sigma_s = estimate.survival * math.sqrt(
        (1.0 / continual_total if continual_total > 0 else 0.0) + 1.0 / reset_total
    )
    return StatisticalErrors(sigma_p, sigma_q, sigma_s)


def derived_probabilities(
    params: ImperfectionParams,
    coin: CoinSpec,
    scheme: str,
    T: int,
    calibration: Optional[Tuple[float, float]] = None,
    initial: Optional[InitialSpec] = None
) -> DerivedProbabilities:
    """
    Run the expected-value forward model and normalize it back.

    Args:
        calibration: Detector efficiencies assumed by the analysis (default: params')
    """
    if scheme not in SCHEMES:
        raise ExperimentModelError(f"Unknown scheme '{scheme}', expected one of {SCHEMES}")
    reset = simulate_counts("reset", params, coin, T, initial=initial)
    distributions = np.zeros((T, 2 * T + 1))
    rows = []

    if scheme == "reset":
        for t in range(1, T + 1):
            dist = normalize_distribution(reset, t, calibration)
            for x, v in dist.items():
                distributions[t - 1, x + T] = v
            rows.append({'p_origin': dist.get(0, 0.0)})
    else:
        continual = simulate_counts("continual", params, coin, T, initial=initial)
        for t in range(1, T + 1):
            estimate = normalize_continual(continual, reset, t, calibration)
            rows.append({
                'q_first_return': estimate.q_first_return,
                'survival': estimate.survival,
                'p_conditional': estimate.p_conditional,
            })
            if estimate.survival > 0:
                for x, v in normalize_distribution(continual, t, calibration).items():
                    distributions[t - 1, x + T] = v

    frame = pd.DataFrame(rows, index=pd.Index(np.arange(1, T + 1), name='t'))
    return DerivedProbabilities(scheme=scheme, horizon=T, frame=frame, distributions=distributions)


def _vertex_updates(nominal: ImperfectionParams, ranges: ErrorRanges) -> List[Dict[str, object]]:
    """Detector, arm and coin settings at the 8 vertices of the box, sink left out"""
    e_r, e_l = nominal.detector_efficiencies
    rel = ranges.detector_relative
    detectors = [
        (min(e_r * (1 + rel), 1.0), e_l * (1 - rel)),
        (e_r * (1 - rel), min(e_l * (1 + rel), 1.0)),
    ]
    arms = [nominal.arm_loss_asymmetry - ranges.arm_loss, nominal.arm_loss_asymmetry + ranges.arm_loss]
    coins = [nominal.coin_angle_error - ranges.coin_angle, nominal.coin_angle_error + ranges.coin_angle]
    return [
        {'detector_efficiencies': det, 'arm_loss_asymmetry': arm, 'coin_angle_error': coin_error}
        for det, arm, coin_error in itertools.product(detectors, arms, coins)
    ]


def sink_residual_grid(
    nominal: ImperfectionParams,
    ranges: ErrorRanges,
    points: int = SINK_GRID_POINTS
) -> np.ndarray:
    """
    Sink residuals evenly spaced in amplitude, sqrt(tau), across the box.

    The first and last entries are exactly the low edge and the nominal value.
    A degenerate range collapses to the nominal value alone.
    """
    high = nominal.sink_residual_transmission
    low = max(high - ranges.sink_residual, 0.0)
    if high <= low or points < 2:
        return np.array([high])
    grid = np.linspace(math.sqrt(low), math.sqrt(high), points) ** 2
    grid[0], grid[-1] = low, high
    return grid


def corner_params(nominal: ImperfectionParams, ranges: ErrorRanges) -> List[ImperfectionParams]:
    """The 16 sign corners of the systematic error box"""
    residuals = [max(nominal.sink_residual_transmission - ranges.sink_residual, 0.0), nominal.sink_residual_transmission]
    return [
        nominal.model_copy(update={**update, 'sink_residual_transmission': residual})
        for update in _vertex_updates(nominal, ranges)
        for residual in residuals
    ]


def sample_interior_params(
    nominal: ImperfectionParams,
    ranges: ErrorRanges,
    rng: np.random.Generator
) -> ImperfectionParams:
    """Draw a parameter set uniformly from inside the systematic error box"""
    e_r, e_l = nominal.detector_efficiencies
    rel = rng.uniform(-ranges.detector_relative, ranges.detector_relative) if ranges.detector_relative else 0.0
    low_residual = max(nominal.sink_residual_transmission - ranges.sink_residual, 0.0)
    return nominal.model_copy(update={
        'detector_efficiencies': (min(e_r * (1 + rel), 1.0), min(e_l * (1 - rel), 1.0)),
        'arm_loss_asymmetry': nominal.arm_loss_asymmetry + rng.uniform(-ranges.arm_loss, ranges.arm_loss),
        'coin_angle_error': nominal.coin_angle_error + rng.uniform(-ranges.coin_angle, ranges.coin_angle),
        'sink_residual_transmission': rng.uniform(low_residual, nominal.sink_residual_transmission),
    })


def _deviation(reference: DerivedProbabilities, other: DerivedProbabilities) -> pd.DataFrame:
    diff = (other.frame - reference.frame).abs().fillna(0.0)
    diff['distribution'] = np.max(np.abs(other.distributions - reference.distributions), axis=1)
    return diff


def _bound_along_grid(values: np.ndarray) -> np.ndarray:
    """
    Upper bound of |values| along axis 0, a grid in one parameter.

    Between neighbouring grid points a smooth curve departs from its chord by at
    most h^2 max|f''| / 8; second differences estimate h^2 f''.
    """
    bound = np.abs(values).max(axis=0)
    if values.shape[0] >= 3:
        curvature = np.abs(np.diff(values, n=2, axis=0)).max(axis=0)
        bound = bound + CURVATURE_ALLOWANCE * curvature / 8.0
    return bound


def error_envelope(
    nominal: ImperfectionParams,
    coin: CoinSpec,
    scheme: str,
    T: int,
    ranges: Optional[ErrorRanges] = None,
    initial: Optional[InitialSpec] = None
) -> ErrorEnvelope:
    """
    Systematic error bars over the parameter box.

    Every point is run through the expected-value forward model and analysed
    with the nominal detector calibration; the envelope at each step is the
    largest absolute deviation from the nominal reference.

    Detector ratio, arm asymmetry and coin angle are taken at their extremes.
    Continual outputs are not monotone in the sink amplitude, so at each of
    those 8 vertices the continual scheme walks a grid in sqrt(tau) and adds a
    curvature allowance between grid points. The reset scheme does not see the
    sink and keeps the 16 corners.

    Returns:
        ErrorEnvelope with reference values and a deviation frame whose columns
        match the reference plus 'distribution' (max over x)
    """
    ranges = ranges or ErrorRanges()
    start = time.time()
    calibration = nominal.detector_efficiencies
    reference = derived_probabilities(nominal, coin, scheme, T, calibration, initial)
    residuals = sink_residual_grid(nominal, ranges, SINK_GRID_POINTS if scheme == "continual" else 2)

    frame_bound = np.zeros(reference.frame.shape)
    distribution_bound = np.zeros(T)
    evaluations = 0
    for update in _vertex_updates(nominal, ranges):
        frames, distributions = [], []
        for residual in residuals:
            params = nominal.model_copy(update={**update, 'sink_residual_transmission': float(residual)})
            derived = derived_probabilities(params, coin, scheme, T, calibration, initial)
            frames.append((derived.frame - reference.frame).to_numpy())
            distributions.append(derived.distributions - reference.distributions)
            evaluations += 1
        frame_bound = np.maximum(frame_bound, _bound_along_grid(np.nan_to_num(np.stack(frames))))
        distribution_bound = np.maximum(distribution_bound, _bound_along_grid(np.stack(distributions)).max(axis=1))

    deviation = pd.DataFrame(frame_bound, index=reference.frame.index, columns=reference.frame.columns)
    deviation['distribution'] = distribution_bound

    logger.info(f"Error envelope ({scheme}, T={T}) over {evaluations} parameter points in {time.time() - start:.2f}s")
    return ErrorEnvelope(scheme=scheme, horizon=T, reference=reference, deviation=deviation, evaluations=evaluations)


def envelope_violations(
    envelope: ErrorEnvelope,
    nominal: ImperfectionParams,
    coin: CoinSpec,
    samples: int = 100,
    seed: int = 0,
    ranges: Optional[ErrorRanges] = None,
    tolerance: float = 1e-12,
    initial: Optional[InitialSpec] = None
) -> List[Tuple[int, str]]:
    """
    Interior parameter draws whose derived values leave the envelope.

    Returns:
        (sample index, column) pairs; empty when the envelope holds
    """
    ranges = ranges or ErrorRanges()
    rng = np.random.Generator(np.random.PCG64(seed))
    calibration = nominal.detector_efficiencies
    violations = []
    for i in range(samples):
        params = sample_interior_params(nominal, ranges, rng)
        derived = derived_probabilities(params, coin, envelope.scheme, envelope.horizon, calibration, initial)
        diff = _deviation(envelope.reference, derived)
        for column in diff.columns:
            if np.any(diff[column].to_numpy() > envelope.deviation[column].to_numpy() + tolerance):
                violations.append((i, column))
    if violations:
        logger.warning(f"{len(violations)} envelope violations over {samples} interior samples")
    return violations


def snr(record: CountRecord, time_bins: Optional[TimeBinMap], t: int) -> float:
    """
    Signal-to-noise ratio of step t.

    Summed signal-window counts divided by summed counts of noise windows of
    the same length. Returns inf when the noise windows are empty.
    """
    time_bins = time_bins or TimeBinMap()
    if abs(time_bins.detection_window_ns - record.detection_window_ns) > 1e-12:
        raise ExperimentModelError(
            f"Record windows are {record.detection_window_ns} ns, map windows {time_bins.detection_window_ns} ns"
        )
    frame = record.step_frame(t)
    column = record.value_column
    signal = float(frame.loc[frame['coin'].isin(SIGNAL_CHANNELS), column].sum())
    noise = float(frame.loc[frame['coin'] == NOISE_CHANNEL, column].sum())
    if noise <= 0.0:
        return math.inf
    return signal / noise


def snr_series(record: CountRecord, time_bins: Optional[TimeBinMap] = None) -> pd.Series:
    values = [snr(record, time_bins, t) for t in range(1, record.horizon + 1)]
    return pd.Series(values, index=pd.Index(np.arange(1, record.horizon + 1), name='t'), name='snr')


def snr_trend(series: pd.Series, threshold: float) -> SnrTrend:
    """First step whose SNR drops below threshold, and whether the SNR never rises"""
    values = series.to_numpy(dtype=float)
    below = np.nonzero(values < threshold)[0]
    finite = values[np.isfinite(values)]
    monotone = bool(finite.size == values.size and np.all(np.diff(values) <= 0))
    return SnrTrend(
        threshold=threshold,
        first_step_below=int(series.index[below[0]]) if below.size else None,
        monotone_decreasing=monotone,
        final_snr=float(values[-1]) if values.size else float('nan'),
    )


def write_count_record(
    record: CountRecord,
    path: Union[str, Path],
    extra_header: Sequence[str] = ()
) -> Path:
    """
    Write a record in the columnar text format.

    Header lines (# scheme=, # seed=, # mode=, # params=, # input=, # integration=,
    # repetition_rate=, # window=, # saturated=) precede t,x,coin,expected,counts rows.
    extra_header lines (key=value) are written first and ignored by the reader.
    """
    header = [f"# {line}" for line in extra_header] + [
        f"# scheme={record.scheme}",
        f"# seed={'' if record.seed is None else record.seed}",
        f"# mode={record.mode}",
        f"# params={record.params.model_dump_json()}",
        f"# input={','.join(format_float(v) for v in record.input_photons)}",
        f"# integration={','.join(format_float(v) for v in record.integration_times_s)}",
        f"# repetition_rate={format_float(record.repetition_rate_hz)}",
        f"# window={format_float(record.detection_window_ns)}",
        f"# saturated={','.join(str(t) for t in record.saturated_steps)}",
    ]
    buffer = io.StringIO()
    record.frame.to_csv(buffer, index=False, float_format="%.17g", lineterminator="\n")
    return atomic_write_text(path, "\n".join(header) + "\n" + buffer.getvalue())


def read_count_record(path: Union[str, Path]) -> CountRecord:
    """Read a record written by write_count_record"""
    path = Path(path)
    meta: Dict[str, str] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value

    required = ("scheme", "seed", "mode", "params", "input", "integration")
    missing = [k for k in required if k not in meta]
    if missing:
        raise ExperimentModelError(f"Record file {path} is missing header keys: {missing}")

    frame = pd.read_csv(
        path,
        comment="#",
        dtype={'t': np.int64, 'x': np.int64, 'coin': str, 'counts': np.int64},
        float_precision="round_trip",
    )

    def floats(text: str) -> np.ndarray:
        return np.array([float(v) for v in text.split(",") if v], dtype=float)

    return CountRecord(
        scheme=meta["scheme"],
        mode=meta["mode"],
        seed=int(meta["seed"]) if meta["seed"] else None,
        params=ImperfectionParams.model_validate_json(meta["params"]),
        horizon=int(frame['t'].max()),
        frame=frame[RECORD_COLUMNS],
        input_photons=floats(meta["input"]),
        integration_times_s=floats(meta["integration"]),
        repetition_rate_hz=float(meta.get("repetition_rate", DEFAULT_REPETITION_RATE_HZ)),
        detection_window_ns=float(meta.get("window", 4.8)),
        saturated_steps=tuple(int(v) for v in meta.get("saturated", "").split(",") if v),
    )
