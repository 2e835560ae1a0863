"""
Observation Schemes and Recurrence

Absorbing sinks that emulate the projective measurement 1 - |0><0|, and the
recurrence probabilities of the two observation schemes built on them.

Schemes:
- Reset: a fresh walker per trial, looked for at the origin once at step t.
  P_r(T) = 1 - prod_{t<=T} (1 - p(0,t))
- Continual: one walker, origin monitored after every step.
  P(T) = sum_{t<=T} q(0,t), with q(0,t) = |<0| U (M U)^(t-1) |psi(0)>|^2

Conventions:
- Within step t the unitary acts first, then the sink
- At the examined step the origin is read before any absorption
- The conditional state is kept unnormalized; its norm is the survival probability
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from .walk_core import (
    CoinLabel,
    CoinSpec,
    InitialSpec,
    WalkCoreError,
    WalkState,
    coin_for_step,
    initial_state,
    position_distribution,
    step,
)

logger = logging.getLogger(__name__)

SitePredicate = Callable[[int, int], bool]


class MonitoringError(Exception):
    """Custom exception for sink and recurrence computation errors"""
    pass


@dataclass(frozen=True)
class SinkSchedule:
    """
    Which (position, step) sites absorb, and how well.

    Attributes:
        positions: Absorbing positions (default: the origin)
        steps: Steps at which the sinks are active; None means every step
        predicate: Optional (x, t) -> bool test; replaces positions/steps when given
        residual_transmission: Intensity fraction surviving an absorbing site (0 = ideal)
        coin_selective: Absorbed coin labels; None means both
    """

    positions: FrozenSet[int] = frozenset({0})
    steps: Optional[FrozenSet[int]] = None
    predicate: Optional[SitePredicate] = field(default=None, compare=False)
    residual_transmission: float = 0.0
    coin_selective: Optional[FrozenSet[CoinLabel]] = None

    def __post_init__(self):
        if not 0.0 <= self.residual_transmission <= 1.0:
            raise MonitoringError(
                f"Residual transmission must be in [0, 1], got {self.residual_transmission}"
            )
        object.__setattr__(self, 'positions', frozenset(int(x) for x in self.positions))
        if self.steps is not None:
            object.__setattr__(self, 'steps', frozenset(int(t) for t in self.steps))
        if self.coin_selective is not None:
            coins = frozenset(CoinLabel(c) for c in self.coin_selective)
            if not coins:
                raise MonitoringError("Coin-selective sink must absorb at least one coin label")
            object.__setattr__(self, 'coin_selective', coins)

    @classmethod
    def origin(cls, residual_transmission: float = 0.0) -> "SinkSchedule":
        """Sink at the origin at every step"""
        return cls(residual_transmission=residual_transmission)

    @classmethod
    def at_positions(
        cls,
        positions: Iterable[int],
        steps: Optional[Iterable[int]] = None,
        residual_transmission: float = 0.0,
        coins: Optional[Iterable[CoinLabel]] = None
    ) -> "SinkSchedule":
        return cls(
            positions=frozenset(positions),
            steps=frozenset(steps) if steps is not None else None,
            residual_transmission=residual_transmission,
            coin_selective=frozenset(coins) if coins is not None else None,
        )

    @classmethod
    def from_predicate(
        cls,
        predicate: SitePredicate,
        residual_transmission: float = 0.0,
        coins: Optional[Iterable[CoinLabel]] = None
    ) -> "SinkSchedule":
        return cls(
            positions=frozenset(),
            predicate=predicate,
            residual_transmission=residual_transmission,
            coin_selective=frozenset(coins) if coins is not None else None,
        )

    @property
    def is_ideal_origin(self) -> bool:
        """True for the plain projector 1 - |0><0| applied at every step"""
        return (
            self.predicate is None
            and self.positions == frozenset({0})
            and self.steps is None
            and self.residual_transmission == 0.0
            and self.coin_selective is None
        )

    @property
    def coin_indices(self) -> List[int]:
        if self.coin_selective is None:
            return [0, 1]
        return sorted(c.index for c in self.coin_selective)

    def absorbs(self, x: int, t: int) -> bool:
        if self.predicate is not None:
            return bool(self.predicate(x, t))
        if self.steps is not None and t not in self.steps:
            return False
        return x in self.positions

    def mask(self, step_index: int) -> np.ndarray:
        """Boolean mask over the light-cone rows of a state at step_index"""
        positions = np.arange(-step_index, step_index + 1)
        if self.predicate is not None:
            return np.fromiter((self.absorbs(int(x), step_index) for x in positions), dtype=bool,
                               count=positions.size)
        if self.steps is not None and step_index not in self.steps:
            return np.zeros(positions.size, dtype=bool)
        return np.isin(positions, list(self.positions))


@dataclass(eq=False)
class RecurrenceSeries:
    """
    Per-step recurrence data for t = 1..T.

    Arrays are indexed by t - 1. Series for a scheme that was not computed
    are None.
    """

    horizon: int
    p_origin: Optional[np.ndarray] = None
    q_first_return: Optional[np.ndarray] = None
    survival: Optional[np.ndarray] = None
    P_continual: Optional[np.ndarray] = None
    P_reset: Optional[np.ndarray] = None
    initial_norm: float = 1.0

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    @property
    def final_continual(self) -> float:
        if self.P_continual is None:
            return float('nan')
        return float(self.P_continual[-1])

    @property
    def final_reset(self) -> float:
        if self.P_reset is None:
            return float('nan')
        return float(self.P_reset[-1])

    def survival_before(self, t: int) -> float:
        """s_{t-1}, the survival probability entering step t"""
        if self.survival is None:
            raise MonitoringError("Survival series not computed for this run")
        if not 1 <= t <= self.horizon:
            raise MonitoringError(f"Step {t} outside 1..{self.horizon}")
        return self.initial_norm if t == 1 else float(self.survival[t - 2])

    def merge(self, other: "RecurrenceSeries") -> "RecurrenceSeries":
        """Combine series of two single-scheme runs over the same horizon"""
        if other.horizon != self.horizon:
            raise MonitoringError("Cannot merge recurrence series with different horizons")

        def pick(a, b):
            return a if a is not None else b

        return RecurrenceSeries(
            horizon=self.horizon,
            p_origin=pick(self.p_origin, other.p_origin),
            q_first_return=pick(self.q_first_return, other.q_first_return),
            survival=pick(self.survival, other.survival),
            P_continual=pick(self.P_continual, other.P_continual),
            P_reset=pick(self.P_reset, other.P_reset),
            initial_norm=self.initial_norm,
        )

    def to_frame(self) -> pd.DataFrame:
        columns = {}
        for name in ('p_origin', 'q_first_return', 'survival', 'P_continual', 'P_reset'):
            values = getattr(self, name)
            if values is not None:
                columns[name] = values
        frame = pd.DataFrame(columns, index=pd.Index(self.steps, name='t'))
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "RecurrenceSeries":
        """Inverse of to_frame; missing columns become None"""
        def column(name):
            return frame[name].to_numpy(dtype=float) if name in frame.columns else None

        return cls(
            horizon=len(frame),
            p_origin=column('p_origin'),
            q_first_return=column('q_first_return'),
            survival=column('survival'),
            P_continual=column('P_continual'),
            P_reset=column('P_reset'),
        )

    def validate(self, tolerance: float = 1e-12) -> List[str]:
        """
        Check ranges and monotonicity.

        Returns:
            List of human-readable issues; empty when the series is consistent
        """
        issues = []
        for name in ('p_origin', 'q_first_return', 'survival', 'P_continual', 'P_reset'):
            values = getattr(self, name)
            if values is None:
                continue
            if values.shape != (self.horizon,):
                issues.append(f"{name} has length {values.size}, expected {self.horizon}")
                continue
            if np.any(values < -tolerance) or np.any(values > 1 + tolerance):
                issues.append(f"{name} leaves [0, 1]")

        for name in ('P_continual', 'P_reset'):
            values = getattr(self, name)
            if values is not None and np.any(np.diff(values) < -tolerance):
                issues.append(f"{name} decreases")
        if self.survival is not None and np.any(np.diff(self.survival) > tolerance):
            issues.append("survival increases")
        return issues


def _origin_probability(state: WalkState) -> float:
    return state.site_probability(0)


def apply_sink(state: WalkState, schedule: SinkSchedule, at_step: int) -> Tuple[WalkState, float]:
    """
    Absorb amplitude at the scheduled sites of one step.

    Absorbed amplitudes are scaled by sqrt(residual_transmission). The state is
    not renormalized.

    Args:
        state: State to act on
        schedule: Sink description
        at_step: Step number used to evaluate the schedule

    Returns:
        (surviving state, absorbed probability)
    """
    mask = schedule.mask(at_step) if at_step == state.step else _mask_for(schedule, state, at_step)
    if not np.any(mask):
        return state, 0.0

    amplitudes = np.array(state.amplitudes)
    factor = np.sqrt(schedule.residual_transmission)
    for coin_index in schedule.coin_indices:
        amplitudes[mask, coin_index] *= factor

    surviving = WalkState(state.step, amplitudes)
    absorbed = state.norm_squared - surviving.norm_squared
    return surviving, absorbed


def _mask_for(schedule: SinkSchedule, state: WalkState, at_step: int) -> np.ndarray:
    positions = state.positions
    return np.fromiter((schedule.absorbs(int(x), at_step) for x in positions), dtype=bool,
                       count=positions.size)


def _default_schedule(schedule: Optional[SinkSchedule]) -> SinkSchedule:
    return schedule if schedule is not None else SinkSchedule.origin()


def _require_step(t: int, minimum: int):
    if t < minimum:
        raise MonitoringError(f"Step must be at least {minimum}, got {t}")


def reset_probability(
    initial: InitialSpec,
    coin: CoinSpec,
    t: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> float:
    """
    Probability p(0,t) of finding an unmonitored walker at the origin at step t.

    Both coin components count; the position measurement does not resolve the coin.
    """
    _require_step(t, 1)
    state = initial_state(initial)
    for n in range(1, t + 1):
        state = step(state, coin_for_step(coin, coin_schedule, n))
    return _origin_probability(state)


def _unnormalized_conditional(
    initial: InitialSpec,
    coin: CoinSpec,
    schedule: SinkSchedule,
    t: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> Tuple[WalkState, float]:
    """U (M U)^(t-1) |psi(0)> and the survival s_{t-1} that precedes it"""
    state = initial_state(initial)
    for n in range(1, t):
        state = step(state, coin_for_step(coin, coin_schedule, n))
        state, _ = apply_sink(state, schedule, n)
    survival = state.norm_squared
    state = step(state, coin_for_step(coin, coin_schedule, t))
    return state, survival


def conditional_evolve(
    initial: InitialSpec,
    coin: CoinSpec,
    schedule: Optional[SinkSchedule],
    t: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> Tuple[WalkState, float]:
    """
    Conditional wavefunction at step t, prior to the measurement due at t.

    Args:
        initial: Initial coin state
        coin: Walk coin
        schedule: Sink schedule (None = ideal origin sink)
        t: Examined step, t >= 1

    Returns:
        (state normalized by 1/sqrt(s_{t-1}), s_{t-1})

    Raises:
        MonitoringError: If the walker was fully absorbed before step t
    """
    _require_step(t, 1)
    state, survival = _unnormalized_conditional(
        initial, coin, _default_schedule(schedule), t, coin_schedule
    )
    if survival <= 0.0:
        raise MonitoringError(f"fully absorbed before step {t}: cannot normalize conditional state")
    return state.scaled(1.0 / np.sqrt(survival)), survival


def survival_probability(
    initial: InitialSpec,
    coin: CoinSpec,
    schedule: Optional[SinkSchedule],
    t: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> float:
    """s_t = ||(M U)^t |psi(0)>||^2, with s_0 the initial norm"""
    _require_step(t, 0)
    schedule = _default_schedule(schedule)
    state = initial_state(initial)
    for n in range(1, t + 1):
        state = step(state, coin_for_step(coin, coin_schedule, n))
        state, _ = apply_sink(state, schedule, n)
    return state.norm_squared


def conditional_distribution(
    initial: InitialSpec,
    coin: CoinSpec,
    schedule: Optional[SinkSchedule],
    t: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> Dict[int, float]:
    """Conditional position distribution p_c(x,t); sums to 1"""
    state, _ = conditional_evolve(initial, coin, schedule, t, coin_schedule)
    try:
        return position_distribution(state).normalized
    except WalkCoreError as e:
        raise MonitoringError(f"fully absorbed at step {t}: {e}")


def first_return_probability(
    initial: InitialSpec,
    coin: CoinSpec,
    t: int,
    schedule: Optional[SinkSchedule] = None,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> float:
    """
    First return probability q(0,t) = s_{t-1} p_c(0,t).

    Example:
        >>> first_return_probability(InitialSpec.right(), hadamard_coin(), 4)
        0.125
    """
    _require_step(t, 1)
    state, _ = _unnormalized_conditional(initial, coin, _default_schedule(schedule), t, coin_schedule)
    return _origin_probability(state)


def continual_recurrence(
    initial: InitialSpec,
    coin: CoinSpec,
    T: int,
    schedule: Optional[SinkSchedule] = None,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> RecurrenceSeries:
    """
    First return, survival and P(T) in a single pass.

    The unnormalized conditional state is carried from step to step, so the
    total cost is O(T^2).
    """
    _require_step(T, 1)
    schedule = _default_schedule(schedule)
    start = time.time()

    state = initial_state(initial)
    initial_norm = state.norm_squared
    q = np.zeros(T)
    survival = np.zeros(T)
    for n in range(1, T + 1):
        state = step(state, coin_for_step(coin, coin_schedule, n))
        q[n - 1] = _origin_probability(state)
        state, _ = apply_sink(state, schedule, n)
        survival[n - 1] = state.norm_squared

    series = RecurrenceSeries(
        horizon=T,
        q_first_return=q,
        survival=survival,
        P_continual=np.cumsum(q),
        initial_norm=initial_norm,
    )
    logger.debug(f"Continual recurrence to T={T} in {time.time() - start:.3f}s: P(T)={series.final_continual:.6f}")
    return series


def reset_recurrence(
    initial: InitialSpec,
    coin: CoinSpec,
    T: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> RecurrenceSeries:
    """p(0,t) and P_r(T) from one unitary pass"""
    _require_step(T, 1)
    start = time.time()

    state = initial_state(initial)
    p = np.zeros(T)
    for n in range(1, T + 1):
        state = step(state, coin_for_step(coin, coin_schedule, n))
        p[n - 1] = _origin_probability(state)

    series = RecurrenceSeries(
        horizon=T,
        p_origin=p,
        P_reset=1.0 - np.cumprod(1.0 - p),
        initial_norm=1.0,
    )
    logger.debug(f"Reset recurrence to T={T} in {time.time() - start:.3f}s: P_r(T)={series.final_reset:.6f}")
    return series


def recurrence_series(
    initial: InitialSpec,
    coin: CoinSpec,
    T: int,
    schedule: Optional[SinkSchedule] = None,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> RecurrenceSeries:
    """Both schemes over the same horizon"""
    continual = continual_recurrence(initial, coin, T, schedule, coin_schedule)
    reset = reset_recurrence(initial, coin, T, coin_schedule)
    return continual.merge(reset)


def unconditional_history(
    initial: InitialSpec,
    coin: CoinSpec,
    T: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> pd.DataFrame:
    """
    Position distributions p(x,t) for t = 0..T as a long frame.

    Columns: t, x, probability. Only nonzero entries are listed.
    """
    _require_step(T, 0)
    state = initial_state(initial)
    frames = [_distribution_rows(state, normalized=True)]
    for n in range(1, T + 1):
        state = step(state, coin_for_step(coin, coin_schedule, n))
        frames.append(_distribution_rows(state, normalized=True))
    return pd.concat(frames, ignore_index=True)


def conditional_history(
    initial: InitialSpec,
    coin: CoinSpec,
    schedule: Optional[SinkSchedule],
    T: int,
    coin_schedule: Optional[Mapping[int, CoinSpec]] = None
) -> pd.DataFrame:
    """
    Conditional distributions p_c(x,t) for t = 0..T as a long frame.

    Steps at which the walker is already fully absorbed are left out.
    """
    _require_step(T, 0)
    schedule = _default_schedule(schedule)
    state = initial_state(initial)
    frames = [_distribution_rows(state, normalized=True)]
    for n in range(1, T + 1):
        state = step(state, coin_for_step(coin, coin_schedule, n))
        if state.norm_squared > 0.0:
            frames.append(_distribution_rows(state, normalized=True))
        state, _ = apply_sink(state, schedule, n)
    return pd.concat(frames, ignore_index=True)


def _distribution_rows(state: WalkState, normalized: bool) -> pd.DataFrame:
    distribution = position_distribution(state)
    values = distribution.normalized if normalized else distribution.raw
    positions = sorted(values)
    return pd.DataFrame({
        't': np.full(len(positions), state.step, dtype=int),
        'x': np.array(positions, dtype=int),
        'probability': np.array([values[x] for x in positions], dtype=float),
    })
