"""
Coined Walk Engine

Exact state-vector representation and unitary evolution of a coined
discrete-time quantum walk on the integer line.

Mathematical Foundation:
- State: amplitudes a_{x,c}(t) for position x and coin c in {R, L}
- Coin: 2x2 unitary applied at every occupied site
- Shift: R amplitudes move to x+1, L amplitudes move to x-1
- One step: U = S C

Storage:
- Amplitudes live in a dense (2t+1, 2) complex array indexed by (x + t, coin)
- Sites off the parity sublattice x = t (mod 2) are never written and stay exactly zero
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

UNITARITY_TOLERANCE = 1e-12
INITIAL_NORM_TOLERANCE = 1e-9

HADAMARD_ANGLE = np.pi / 8


class WalkCoreError(Exception):
    """Custom exception for walk construction and evolution errors"""
    pass


class CoinLabel(str, Enum):
    """Coin basis states: R moves right (horizontal), L moves left (vertical)"""
    R = "R"
    L = "L"

    @property
    def index(self) -> int:
        return 0 if self is CoinLabel.R else 1

    @property
    def basis_vector(self) -> np.ndarray:
        vec = np.zeros(2, dtype=complex)
        vec[self.index] = 1.0
        return vec


@dataclass(frozen=True, eq=False)
class CoinSpec:
    """
    Single-site coin operator.

    Attributes:
        matrix: 2x2 complex unitary
        name: Short label used in logs and output metadata
        hwp_angle: Half-wave plate angle in radians when the coin belongs to that family
    """

    matrix: np.ndarray
    name: str = "custom"
    hwp_angle: Optional[float] = None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=complex)
        if matrix.shape != (2, 2):
            raise WalkCoreError(f"Coin matrix must be 2x2, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise WalkCoreError("Coin matrix contains non-finite entries")

        deviation = np.max(np.abs(matrix.conj().T @ matrix - np.eye(2)))
        if deviation >= UNITARITY_TOLERANCE:
            raise WalkCoreError(f"Coin matrix is not unitary (max deviation {deviation:.3e})")

        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @classmethod
    def from_angle_degrees(cls, degrees: float) -> "CoinSpec":
        """Half-wave plate coin from an angle given in degrees"""
        return hwp_coin(np.deg2rad(degrees))

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(vector, dtype=complex)


@dataclass(frozen=True)
class InitialSpec:
    """
    Coin state |phi> of the walker, started at the origin.

    Normalization is checked by initial_state, so unnormalized specs can be
    constructed and rejected there.
    """

    coin_amplitudes: Tuple[complex, complex]

    def __post_init__(self):
        if len(self.coin_amplitudes) != 2:
            raise WalkCoreError("Initial coin state needs exactly two amplitudes")
        amplitudes = tuple(complex(a) for a in self.coin_amplitudes)
        if not all(np.isfinite(a) for a in amplitudes):
            raise WalkCoreError("Initial coin amplitudes must be finite")
        object.__setattr__(self, 'coin_amplitudes', amplitudes)

    @classmethod
    def right(cls) -> "InitialSpec":
        """|R>, the horizontally polarized input pulse"""
        return cls((1.0, 0.0))

    @classmethod
    def left(cls) -> "InitialSpec":
        return cls((0.0, 1.0))

    @classmethod
    def symmetric(cls) -> "InitialSpec":
        """(|R> + i|L>) / sqrt(2)"""
        return cls((1 / np.sqrt(2), 1j / np.sqrt(2)))

    @property
    def norm_squared(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.coin_amplitudes))

    def is_normalized(self, tolerance: float = INITIAL_NORM_TOLERANCE) -> bool:
        return abs(self.norm_squared - 1.0) <= tolerance


@dataclass(frozen=True, eq=False)
class WalkState:
    """
    Wavefunction |psi(t)> on the light cone.

    Attributes:
        step: Number of steps taken (t)
        amplitudes: (2t+1, 2) complex array, row x + t, column coin index
        norm_squared: Cached total probability; below 1 once sinks have acted
    """

    step: int
    amplitudes: np.ndarray
    norm_squared: float = field(init=False)

    def __post_init__(self):
        if self.step < 0:
            raise WalkCoreError(f"Step index must be nonnegative, got {self.step}")
        amplitudes = np.array(self.amplitudes, dtype=complex)
        expected_shape = (2 * self.step + 1, 2)
        if amplitudes.shape != expected_shape:
            raise WalkCoreError(
                f"Amplitude array for step {self.step} must have shape {expected_shape}, "
                f"got {amplitudes.shape}"
            )
        amplitudes.setflags(write=False)
        object.__setattr__(self, 'amplitudes', amplitudes)
        object.__setattr__(self, 'norm_squared', float(np.sum(np.abs(amplitudes) ** 2)))

    @classmethod
    def from_amplitudes(cls, step: int, mapping: Mapping[int, Tuple[complex, complex]]) -> "WalkState":
        """
        Build a state from a position -> (a_R, a_L) mapping.

        Raises:
            WalkCoreError: If a position lies off the light cone of the given step
        """
        amplitudes = np.zeros((2 * step + 1, 2), dtype=complex)
        for x, pair in mapping.items():
            if abs(x) > step or (x - step) % 2 != 0:
                raise WalkCoreError(f"Position {x} is off the light cone at step {step}")
            amplitudes[x + step] = pair
        return cls(step, amplitudes)

    @property
    def positions(self) -> np.ndarray:
        return np.arange(-self.step, self.step + 1)

    def amplitude(self, x: int, coin: CoinLabel) -> complex:
        if abs(x) > self.step:
            return 0j
        return complex(self.amplitudes[x + self.step, CoinLabel(coin).index])

    def site_probability(self, x: int) -> float:
        """Unnormalized probability at position x, summed over the coin"""
        if abs(x) > self.step:
            return 0.0
        return float(np.sum(np.abs(self.amplitudes[x + self.step]) ** 2))

    def scaled(self, factor: complex) -> "WalkState":
        return WalkState(self.step, self.amplitudes * factor)

    def to_frame(self) -> pd.DataFrame:
        """Parity-sublattice amplitudes as a tidy frame"""
        parity = self.positions[::2]
        rows = self.amplitudes[::2]
        return pd.DataFrame({
            'x': parity,
            'a_R': rows[:, 0],
            'a_L': rows[:, 1],
        })


@dataclass(frozen=True)
class PositionDistribution:
    """Coin-marginalized distribution over occupied positions"""

    step: int
    normalized: Dict[int, float]
    raw: Dict[int, float]
    norm_squared: float

    def to_series(self, normalized: bool = True) -> pd.Series:
        values = self.normalized if normalized else self.raw
        return pd.Series(values, name='probability', dtype=float).sort_index()


def hadamard_coin() -> CoinSpec:
    """
    Balanced Hadamard coin (1/sqrt(2)) [[1, 1], [1, -1]].

    Equal to hwp_coin(pi/8), which is how the experiment realizes it.
    """
    matrix = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2)
    return CoinSpec(matrix, name="hadamard", hwp_angle=HADAMARD_ANGLE)


def hwp_coin(theta: float) -> CoinSpec:
    """
    Half-wave plate coin [[cos 2theta, sin 2theta], [sin 2theta, -cos 2theta]].

    Args:
        theta: Plate angle in radians

    Returns:
        CoinSpec carrying the plate angle for later perturbation

    Raises:
        WalkCoreError: If theta is not finite

    Example:
        >>> np.allclose(hwp_coin(np.pi / 8).matrix, hadamard_coin().matrix)
        True
    """
    if not np.isfinite(theta):
        raise WalkCoreError(f"Half-wave plate angle must be finite, got {theta}")
    c, s = np.cos(2 * theta), np.sin(2 * theta)
    matrix = np.array([[c, s], [s, -c]], dtype=complex)
    return CoinSpec(matrix, name=f"hwp({np.rad2deg(theta):.6g}deg)", hwp_angle=float(theta))


def identity_coin() -> CoinSpec:
    """Trivial coin; the walker moves ballistically"""
    return CoinSpec(np.eye(2, dtype=complex), name="identity")


def initial_state(spec: InitialSpec) -> WalkState:
    """
    Place the walker at the origin with the given coin state.

    Raises:
        WalkCoreError: If the coin amplitudes are not normalized within 1e-9
    """
    if not spec.is_normalized():
        raise WalkCoreError(
            f"Initial coin state is not normalized (norm squared {spec.norm_squared:.12g})"
        )
    amplitudes = np.array([spec.coin_amplitudes], dtype=complex)
    return WalkState(0, amplitudes)


def apply_coin(state: WalkState, coin: CoinSpec) -> WalkState:
    # Row-wise C @ (a_R, a_L)
    return WalkState(state.step, state.amplitudes @ coin.matrix.T)


def apply_shift(state: WalkState) -> WalkState:
    """Move R amplitudes to x+1 and L amplitudes to x-1, advancing the step"""
    old = state.amplitudes
    new = np.zeros((old.shape[0] + 2, 2), dtype=complex)
    new[2:, 0] = old[:, 0]
    new[:-2, 1] = old[:, 1]
    return WalkState(state.step + 1, new)


def step(state: WalkState, coin: CoinSpec) -> WalkState:
    """One walk step U = S C"""
    return apply_shift(apply_coin(state, coin))


def coin_for_step(coin: CoinSpec, coin_schedule: Optional[Mapping[int, CoinSpec]], step_number: int) -> CoinSpec:
    """Coin used for the step that produces the state at step_number"""
    if coin_schedule and step_number in coin_schedule:
        return coin_schedule[step_number]
    return coin


def iterate_walk(
    state: WalkState,
    coin: CoinSpec,
    steps: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> Iterator[WalkState]:
    """
    Yield the state after each of the next `steps` unitary steps.

    Args:
        state: Starting state
        coin: Global coin
        steps: Number of steps to take
        coin_schedule: Optional step number -> coin overrides
    """
    if steps < 0:
        raise WalkCoreError(f"Number of steps must be nonnegative, got {steps}")
    current = state
    for _ in range(steps):
        current = step(current, coin_for_step(coin, coin_schedule, current.step + 1))
        yield current


def evolve(
    state: WalkState,
    coin: CoinSpec,
    steps: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> WalkState:
    """Apply `steps` unitary steps and return the final state"""
    current = state
    for current in iterate_walk(state, coin, steps, coin_schedule):
        pass
    return current


def position_distribution(state: WalkState) -> PositionDistribution:
    """
    Marginalize the coin and return normalized and raw distributions.

    Only positions with nonzero probability are listed. The normalized
    variant divides by norm_squared, which turns a sink-depleted state into
    the conditional distribution.

    Raises:
        WalkCoreError: If the state carries no amplitude at all
    """
    if state.norm_squared <= 0.0:
        raise WalkCoreError("vanished state: no amplitude left to distribute")

    probabilities = np.sum(np.abs(state.amplitudes) ** 2, axis=1)
    occupied = np.nonzero(probabilities > 0.0)[0]

    raw = {int(i - state.step): float(probabilities[i]) for i in occupied}
    normalized = {x: p / state.norm_squared for x, p in raw.items()}
    return PositionDistribution(
        step=state.step,
        normalized=normalized,
        raw=raw,
        norm_squared=state.norm_squared,
    )
