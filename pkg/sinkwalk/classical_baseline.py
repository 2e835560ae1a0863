"""
Classical Random-Walk Baseline

Recurrence of unbiased random walks on d-dimensional integer lattices, used
as the reference against which the quantum schemes are compared.

Mathematical Foundation:
- Return probability: p_1(0,2n) = C(2n,n) / 4^n, and for d > 1 each step picks
  an axis uniformly, so p_d(0,t) = sum_k Binom(t,k;1/d) p_1(0,k) p_{d-1}(0,t-k)
- First return: q(0,t) from a lattice DP with an absorbing origin
- Renewal identity: p(0,t) = sum_{k=1..t} q(0,k) p(0,t-k), p(0,0) = 1
- Polya number: P = sum q(0,t) = 1 - 1/sum p(0,t)
- Reset recurrence: P_r = 1 - prod (1 - p(0,t))

Key Features:
- Exact series by dynamic programming, log-space binomial weights
- Truncation flag on the p-based Polya estimate (the series diverges for d <= 2)
- Chunked Monte Carlo oracle with PCG64 streams spawned from one master seed,
  independent of how chunks are scheduled
"""

import asyncio
import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from .config import settings
from .monitoring import recurrence_series
from .walk_core import CoinSpec, InitialSpec, hadamard_coin

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"
MAX_DP_DIMENSION = 3
MAX_STEPS_3D = 200
TRUNCATION_TOLERANCE = 1e-3


class ClassicalBaselineError(Exception):
    """Custom exception for classical baseline computation errors"""
    pass


@dataclass(frozen=True)
class LatticeWalkSpec:
    """
    Unbiased nearest-neighbour walk on Z^d.

    Each step moves to one of the 2d neighbours with probability 1/(2d).
    """

    dimension: int = 1

    def __post_init__(self):
        if not isinstance(self.dimension, (int, np.integer)) or self.dimension < 1:
            raise ClassicalBaselineError(f"Lattice dimension must be a positive integer, got {self.dimension}")

    @property
    def step_probability(self) -> float:
        return 1.0 / (2 * self.dimension)


@dataclass(eq=False)
class ClassicalSeries:
    """Per-step classical return data for t = 1..T plus the three recurrence numbers"""

    dimension: int
    horizon: int
    p_origin: np.ndarray
    q_first_return: np.ndarray
    polya_from_q: float
    polya_from_p: float
    polya_from_p_truncated: bool
    reset_recurrence: float

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    @property
    def cumulative_continual(self) -> np.ndarray:
        return np.cumsum(self.q_first_return)

    @property
    def cumulative_reset(self) -> np.ndarray:
        return 1.0 - np.cumprod(1.0 - self.p_origin)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'p_origin': self.p_origin,
            'q_first_return': self.q_first_return,
            'P_continual': self.cumulative_continual,
            'P_reset': self.cumulative_reset,
        }, index=pd.Index(self.steps, name='t'))


@dataclass(eq=False)
class MonteCarloResult:
    """Empirical first-return estimates with binomial standard errors"""

    dimension: int
    horizon: int
    trials: int
    seed: int
    chunk_size: int
    q_estimate: np.ndarray
    standard_error: np.ndarray
    rng_algorithm: str = RNG_ALGORITHM

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'q_estimate': self.q_estimate,
            'standard_error': self.standard_error,
        }, index=pd.Index(np.arange(1, self.horizon + 1), name='t'))

    def z_scores(self, exact: np.ndarray) -> np.ndarray:
        """Deviation from exact values in units of the standard error (nan where sigma is 0)"""
        exact = np.asarray(exact, dtype=float)
        with np.errstate(divide='ignore', invalid='ignore'):
            z = (self.q_estimate - exact) / self.standard_error
        return np.where(self.standard_error > 0, z, np.where(self.q_estimate == exact, 0.0, np.inf))


class EquivalenceReport(BaseModel):
    """Classical versus quantum behaviour of the two recurrence schemes at one horizon"""

    dimension: int
    horizon: int
    classical_continual: float
    classical_reset: float
    quantum_continual: float
    quantum_reset: float
    threshold: float
    classical_schemes_agree: bool
    quantum_schemes_separate: bool

    @property
    def classical_gap(self) -> float:
        return abs(self.classical_reset - self.classical_continual)

    @property
    def quantum_gap(self) -> float:
        return self.quantum_reset - self.quantum_continual


def _validate_horizon(T: int, minimum: int = 0):
    if T < minimum:
        raise ClassicalBaselineError(f"Horizon must be at least {minimum}, got {T}")


def _one_dimensional_returns(T: int) -> np.ndarray:
    """p_1(0,t) for t = 0..T via p(0,k+2) = p(0,k) (k+1)/(k+2)"""
    p = np.zeros(T + 1)
    p[0] = 1.0
    for k in range(0, T - 1, 2):
        p[k + 2] = p[k] * (k + 1) / (k + 2)
    return p


def _log_factorials(n: int) -> np.ndarray:
    out = np.zeros(n + 1)
    if n > 0:
        out[1:] = np.cumsum(np.log(np.arange(1, n + 1)))
    return out


def origin_series(spec: LatticeWalkSpec, T: int) -> np.ndarray:
    """
    Exact p(0,t) for t = 0..T.

    Args:
        spec: Lattice walk description
        T: Largest step

    Returns:
        Array of length T+1 with p(0,0) = 1
    """
    _validate_horizon(T)
    p1 = _one_dimensional_returns(T)
    series = p1
    log_fact = _log_factorials(T)

    for d in range(2, spec.dimension + 1):
        previous = series
        series = np.zeros(T + 1)
        series[0] = 1.0
        log_axis, log_rest = math.log(1.0 / d), math.log((d - 1) / d)
        for t in range(1, T + 1):
            k = np.arange(0, t + 1)
            log_weight = log_fact[t] - log_fact[k] - log_fact[t - k] + k * log_axis + (t - k) * log_rest
            series[t] = float(np.sum(np.exp(log_weight) * p1[k] * previous[t - k]))
    return series


def first_return_series(spec: LatticeWalkSpec, T: int) -> np.ndarray:
    """
    Exact q(0,t) for t = 1..T by DP with an absorbing origin.

    Mass that moves further than ceil(T/2) from the origin along any axis can
    no longer return within the horizon and is dropped.

    Raises:
        ClassicalBaselineError: For d > 3, for d = 3 beyond 200 steps, or when the
            lattice exceeds the configured cell budget
    """
    _validate_horizon(T, 1)
    d = spec.dimension
    if d > MAX_DP_DIMENSION:
        raise ClassicalBaselineError(f"First-return DP supports d <= {MAX_DP_DIMENSION}, got d={d}")
    if d == 3 and T > MAX_STEPS_3D:
        raise ClassicalBaselineError(f"First-return DP for d=3 is capped at T={MAX_STEPS_3D}, got T={T}")

    half_width = (T + 1) // 2
    side = 2 * half_width + 3  # one dropped layer on each side
    cells = side ** d
    if cells > settings.max_lattice_cells:
        raise ClassicalBaselineError(
            f"Lattice of {cells} cells exceeds max_lattice_cells={settings.max_lattice_cells}"
        )

    centre = (half_width + 1,) * d
    dist = np.zeros((side,) * d)
    dist[centre] = 1.0
    weight = spec.step_probability
    q = np.zeros(T)

    for t in range(1, T + 1):
        new = np.zeros_like(dist)
        for axis in range(d):
            forward = [slice(None)] * d
            backward = [slice(None)] * d
            forward[axis] = slice(1, None)
            backward[axis] = slice(None, -1)
            new[tuple(forward)] += dist[tuple(backward)]
            new[tuple(backward)] += dist[tuple(forward)]
        new *= weight

        q[t - 1] = new[centre]
        new[centre] = 0.0
        for axis in range(d):
            edge = [slice(None)] * d
            edge[axis] = 0
            new[tuple(edge)] = 0.0
            edge[axis] = -1
            new[tuple(edge)] = 0.0
        dist = new
    return q


def classical_origin_probability(spec: LatticeWalkSpec, t: int) -> float:
    """
    Exact probability p(0,t) of being at the origin after t steps.

    Example:
        >>> classical_origin_probability(LatticeWalkSpec(1), 4)
        0.375
    """
    _validate_horizon(t)
    return float(origin_series(spec, t)[t])


def classical_first_return(spec: LatticeWalkSpec, t: int) -> float:
    """Exact probability q(0,t) of returning to the origin for the first time at step t"""
    _validate_horizon(t, 1)
    return float(first_return_series(spec, t)[t - 1])


def polya_number_from_q(spec: LatticeWalkSpec, T: int) -> float:
    """Truncated Polya number sum_{t=1..T} q(0,t)"""
    return float(np.sum(first_return_series(spec, T)))


def polya_number_from_p(spec: LatticeWalkSpec, T: int) -> Tuple[float, bool]:
    """
    Truncated Polya number 1 - 1/sum_{t=1..T} p(0,t).

    The defining series diverges for d <= 2, so the truncated value only
    approaches the limit slowly and may even be negative for small T.

    Args:
        spec: Lattice walk description
        T: Truncation horizon

    Returns:
        (value, is_truncated) where is_truncated flags a value that should not be
        read as the limit

    Raises:
        ClassicalBaselineError: If every p(0,t) up to T vanishes
    """
    _validate_horizon(T, 1)
    p = origin_series(spec, T)[1:]
    total = float(np.sum(p))
    if total <= 0.0:
        raise ClassicalBaselineError(f"Return probabilities vanish up to T={T}: Polya estimate undefined")

    value = 1.0 - 1.0 / total
    if spec.dimension <= 2:
        is_truncated = True
    else:
        # Tail of the even-step terms, p ~ c t^(-d/2)
        last_even = T if T % 2 == 0 else T - 1
        tail = p[last_even - 1] * last_even / (spec.dimension - 2) if last_even >= 2 else math.inf
        is_truncated = tail > TRUNCATION_TOLERANCE * total

    if is_truncated:
        logger.warning(
            f"Polya number from p(0,t) for d={spec.dimension} truncated at T={T}: {value:.6f} is not the limit"
        )
    return value, is_truncated


def classical_reset_recurrence(spec: LatticeWalkSpec, T: int) -> float:
    """Truncated reset-scheme recurrence 1 - prod_{t=1..T} (1 - p(0,t))"""
    _validate_horizon(T, 1)
    p = origin_series(spec, T)[1:]
    return float(1.0 - np.prod(1.0 - p))


def classical_series(spec: LatticeWalkSpec, T: int) -> ClassicalSeries:
    """All classical series and recurrence numbers up to horizon T"""
    _validate_horizon(T, 1)
    start = time.time()

    p = origin_series(spec, T)[1:]
    q = first_return_series(spec, T)
    polya_p, truncated = polya_number_from_p(spec, T)

    series = ClassicalSeries(
        dimension=spec.dimension,
        horizon=T,
        p_origin=p,
        q_first_return=q,
        polya_from_q=float(np.sum(q)),
        polya_from_p=polya_p,
        polya_from_p_truncated=truncated,
        reset_recurrence=float(1.0 - np.prod(1.0 - p)),
    )
    logger.info(f"Classical series d={spec.dimension} T={T} computed in {time.time() - start:.3f}s")
    return series


def renewal_residual(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """
    p(0,t) - sum_{k=1..t} q(0,k) p(0,t-k) for t = 1..len(q).

    Args:
        p: p(0,t) for t = 0..T (p[0] = 1)
        q: q(0,t) for t = 1..T
    """
    T = len(q)
    residual = np.zeros(T)
    for t in range(1, T + 1):
        residual[t - 1] = p[t] - float(np.dot(q[:t], p[t - 1::-1][:t]))
    return residual


def scaling_exponent(spec: LatticeWalkSpec, t_min: int = 100, t_max: int = 1000) -> float:
    """
    Least-squares slope of log p(0,t) against log t over even t in [t_min, t_max].

    Expected to be close to -d/2.
    """
    if t_min < 2 or t_max <= t_min:
        raise ClassicalBaselineError(f"Invalid fit window [{t_min}, {t_max}]")
    p = origin_series(spec, t_max)
    t = np.arange(t_min + (t_min % 2), t_max + 1, 2)
    slope, _ = np.polyfit(np.log(t), np.log(p[t]), 1)
    return float(slope)


def _chunk_sizes(trials: int, chunk_size: int) -> List[int]:
    full, rest = divmod(trials, chunk_size)
    return [chunk_size] * full + ([rest] if rest else [])


def _simulate_chunk(dimension: int, T: int, n: int, seed_sequence: np.random.SeedSequence) -> np.ndarray:
    """First-return counts per step for n independent walkers"""
    rng = np.random.Generator(np.random.PCG64(seed_sequence))
    positions = np.zeros((n, dimension), dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    rows = np.arange(n)
    counts = np.zeros(T, dtype=np.int64)

    for t in range(T):
        axis = rng.integers(0, dimension, size=n)
        sign = rng.integers(0, 2, size=n) * 2 - 1
        positions[rows, axis] += sign
        at_origin = alive & ~np.any(positions, axis=1)
        counts[t] = int(np.count_nonzero(at_origin))
        alive &= ~at_origin
    return counts


def _prepare_monte_carlo(trials: int, T: int, chunk_size: Optional[int]) -> Tuple[int, List[int]]:
    if trials < 1:
        raise ClassicalBaselineError(f"Monte Carlo needs at least one trial, got {trials}")
    _validate_horizon(T, 1)
    chunk = chunk_size or settings.mc_chunk_size
    if chunk < 1:
        raise ClassicalBaselineError(f"Chunk size must be positive, got {chunk}")
    return chunk, _chunk_sizes(trials, chunk)


def _finish_monte_carlo(spec, T, trials, seed, chunk, counts) -> MonteCarloResult:
    total = np.sum(counts, axis=0)
    q_hat = total / trials
    stderr = np.sqrt(q_hat * (1.0 - q_hat) / trials)
    return MonteCarloResult(
        dimension=spec.dimension,
        horizon=T,
        trials=trials,
        seed=seed,
        chunk_size=chunk,
        q_estimate=q_hat,
        standard_error=stderr,
    )


def monte_carlo_first_return(
    spec: LatticeWalkSpec,
    T: int,
    trials: int,
    seed: int,
    chunk_size: Optional[int] = None
) -> MonteCarloResult:
    """
    Monte Carlo estimate of q(0,t) for t = 1..T.

    Trials are split into fixed-size chunks, each with its own PCG64 stream
    spawned from SeedSequence(seed), so results are bit-reproducible and do not
    depend on how many workers run the chunks.
    """
    chunk, sizes = _prepare_monte_carlo(trials, T, chunk_size)
    start = time.time()
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    counts = [_simulate_chunk(spec.dimension, T, n, child) for n, child in zip(sizes, children)]
    result = _finish_monte_carlo(spec, T, trials, seed, chunk, counts)
    logger.info(
        f"Monte Carlo d={spec.dimension} T={T} trials={trials} in {len(sizes)} chunks "
        f"took {time.time() - start:.2f}s"
    )
    return result


async def monte_carlo_first_return_async(
    spec: LatticeWalkSpec,
    T: int,
    trials: int,
    seed: int,
    chunk_size: Optional[int] = None,
    max_workers: Optional[int] = None
) -> MonteCarloResult:
    """Concurrent variant of monte_carlo_first_return; identical output for the same seed"""
    chunk, sizes = _prepare_monte_carlo(trials, T, chunk_size)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    semaphore = asyncio.Semaphore(max_workers or settings.max_workers)
    loop = asyncio.get_running_loop()

    async def run_with_semaphore(n, child):
        async with semaphore:
            return await loop.run_in_executor(None, _simulate_chunk, spec.dimension, T, n, child)

    tasks = [run_with_semaphore(n, child) for n, child in zip(sizes, children)]
    counts = await asyncio.gather(*tasks)
    return _finish_monte_carlo(spec, T, trials, seed, chunk, counts)


def scheme_equivalence_check(
    spec: LatticeWalkSpec,
    T: int,
    coin: Optional[CoinSpec] = None,
    initial: Optional[InitialSpec] = None,
    threshold: float = 0.9
) -> EquivalenceReport:
    """
    Compare both recurrence schemes classically and for the quantum walk.

    Classically the q-sum and the reset product trend to the same limit; for the
    quantum walk the continual value stays below 2/pi while the reset value
    keeps growing.
    """
    _validate_horizon(T, 1)
    classical_continual = polya_number_from_q(spec, T)
    classical_reset = classical_reset_recurrence(spec, T)

    quantum = recurrence_series(initial or InitialSpec.right(), coin or hadamard_coin(), T)
    quantum_continual = quantum.final_continual
    quantum_reset = quantum.final_reset

    classical_agree = (
        (classical_continual >= threshold) == (classical_reset >= threshold)
    )
    quantum_separate = (
        quantum_continual <= 2.0 / np.pi + 1e-9 and quantum_reset > quantum_continual
    )

    report = EquivalenceReport(
        dimension=spec.dimension,
        horizon=T,
        classical_continual=classical_continual,
        classical_reset=classical_reset,
        quantum_continual=quantum_continual,
        quantum_reset=quantum_reset,
        threshold=threshold,
        classical_schemes_agree=classical_agree,
        quantum_schemes_separate=quantum_separate,
    )
    logger.info(
        f"Scheme equivalence T={T}: classical ({classical_continual:.4f}, {classical_reset:.4f}), "
        f"quantum ({quantum_continual:.4f}, {quantum_reset:.4f})"
    )
    return report
