"""
Time-Bin Arithmetic

Positions of the time-multiplexed walk are encoded as photon arrival times:
step t contributes t loop round trips and position x an offset of x times the
position pitch. Adjacent occupied positions are two pitches apart.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


class TimeBinError(Exception):
    """Custom exception for time-bin mapping errors"""
    pass


class TimeBinMap(BaseModel):
    """
    Arrival-time layout of the fibre loop.

    The default loop time of 1901 ns keeps bins of different steps apart up to
    step 19, interlaces them from step 20 and first brings two bins within 5 ns
    of each other at step 39.
    """

    loop_time_ns: float = Field(default=1901.0, description="Round-trip time of the loop")
    position_pitch_ns: float = Field(default=50.0, description="Arrival-time offset per unit of x")
    detection_window_ns: float = Field(default=4.8, description="Length of one detection window")

    @field_validator('loop_time_ns', 'position_pitch_ns', 'detection_window_ns')
    def validate_positive(cls, v):
        if not np.isfinite(v) or v <= 0:
            raise ValueError("Time-bin durations must be positive and finite")
        return v

    @model_validator(mode='after')
    def validate_no_overlap(self):
        """Loop time must not be an integer multiple of the occupied-bin spacing"""
        ratio = self.loop_time_ns / (2 * self.position_pitch_ns)
        if abs(ratio - round(ratio)) < 1e-9:
            raise ValueError(
                f"Loop time {self.loop_time_ns} ns is an integer multiple of "
                f"{2 * self.position_pitch_ns} ns, so bins of different steps would coincide"
            )
        return self


class BinCollision(BaseModel):
    first: Tuple[int, int]
    second: Tuple[int, int]
    gap_ns: float


class BinUniquenessReport(BaseModel):
    """Interlacing and collision summary for all light-cone bins with t <= horizon"""

    horizon: int
    min_separation_ns: float
    interlaced: bool
    first_interlaced_step: Optional[int] = None
    collision: bool
    first_collision_step: Optional[int] = None
    min_gap_ns: float
    collisions: List[BinCollision] = []

    @property
    def is_unique(self) -> bool:
        return not self.collision


def _check_light_cone(x: int, t: int):
    if t < 0 or abs(x) > t or (x - t) % 2 != 0:
        raise TimeBinError(f"(x={x}, t={t}) is off the light cone")


def arrival_time(x: int, t: int, bins: Optional[TimeBinMap] = None) -> float:
    """
    Arrival time t * loop_time + x * position_pitch in nanoseconds.

    Raises:
        TimeBinError: If (x, t) is not reachable from the origin

    Example:
        >>> arrival_time(-1, 1, TimeBinMap(loop_time_ns=2050))
        2000.0
    """
    bins = bins or TimeBinMap()
    _check_light_cone(x, t)
    return t * bins.loop_time_ns + x * bins.position_pitch_ns


def light_cone_bins(T: int) -> List[Tuple[int, int]]:
    """All (x, t) pairs with t <= T reachable from the origin"""
    return [(x, t) for t in range(T + 1) for x in range(-t, t + 1, 2)]


def first_interlaced_step(bins: TimeBinMap, T: int) -> Optional[int]:
    """Smallest step whose earliest bin precedes the latest bin of an earlier step"""
    latest = -np.inf
    for t in range(T + 1):
        earliest = t * bins.loop_time_ns - t * bins.position_pitch_ns
        if t > 0 and earliest < latest:
            return t
        latest = max(latest, t * bins.loop_time_ns + t * bins.position_pitch_ns)
    return None


def check_bin_uniqueness(bins: Optional[TimeBinMap], T: int, min_separation: float = 5.0) -> BinUniquenessReport:
    """
    Report interlacing and near-collisions of light-cone bins up to step T.

    Two bins collide when their arrival times are closer than min_separation.
    The collision step of a pair is the later of its two steps.
    """
    bins = bins or TimeBinMap()
    if T < 0:
        raise TimeBinError(f"Horizon must be nonnegative, got {T}")

    pairs = light_cone_bins(T)
    times = np.array([arrival_time(x, t, bins) for x, t in pairs])
    order = np.argsort(times, kind='stable')
    sorted_times = times[order]
    gaps = np.diff(sorted_times)

    collisions = []
    first_collision = None
    for i in np.nonzero(gaps < min_separation)[0]:
        a, b = pairs[order[i]], pairs[order[i + 1]]
        collisions.append(BinCollision(first=a, second=b, gap_ns=float(gaps[i])))
        step_of_pair = max(a[1], b[1])
        if first_collision is None or step_of_pair < first_collision:
            first_collision = step_of_pair

    interlaced_at = first_interlaced_step(bins, T)
    report = BinUniquenessReport(
        horizon=T,
        min_separation_ns=min_separation,
        interlaced=interlaced_at is not None,
        first_interlaced_step=interlaced_at,
        collision=bool(collisions),
        first_collision_step=first_collision,
        min_gap_ns=float(gaps.min()) if gaps.size else float('inf'),
        collisions=collisions,
    )
    if report.collision:
        logger.warning(f"Time bins collide from step {first_collision} (min gap {report.min_gap_ns:.2f} ns)")
    return report
