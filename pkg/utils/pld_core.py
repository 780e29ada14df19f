# Privacy Loss Distribution Engine
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import signal

from .errors import GridMismatchError, UnachievableError

logger = logging.getLogger(__name__)

FFT_THRESHOLD = 256
RENORMALIZE_LIMIT = 1e-12
MASS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DiscretePLD:
    """
    Privacy loss distribution on the lattice k * grid_spacing.

    masses[k] is the probability that the rounded loss equals
    (origin_index + k) * grid_spacing; infinity_mass is the probability of
    the distinguishing event.
    """

    grid_spacing: float
    origin_index: int
    masses: np.ndarray
    infinity_mass: float = 0.0

    def __post_init__(self):
        masses = np.array(self.masses, dtype=np.float64)
        if masses.ndim != 1 or masses.size == 0:
            raise ValueError("masses must be a non-empty one-dimensional sequence")
        if not self.grid_spacing > 0:
            raise ValueError(f"grid_spacing must be positive, got {self.grid_spacing}")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise ValueError("masses must be finite and non-negative")
        infinity_mass = float(self.infinity_mass)
        if not 0.0 <= infinity_mass <= 1.0:
            raise ValueError(f"infinity_mass must lie in [0, 1], got {infinity_mass}")
        total = float(masses.sum()) + infinity_mass
        if abs(total - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"PLD mass must sum to 1, got {total!r}")

        masses.setflags(write=False)
        object.__setattr__(self, 'masses', masses)
        object.__setattr__(self, 'origin_index', int(self.origin_index))
        object.__setattr__(self, 'grid_spacing', float(self.grid_spacing))
        object.__setattr__(self, 'infinity_mass', infinity_mass)

    @classmethod
    def point_mass(cls, grid_spacing: float, index: int = 0) -> "DiscretePLD":
        """PLD concentrated on a single grid loss"""
        return cls(grid_spacing, index, np.ones(1), 0.0)

    def losses(self) -> np.ndarray:
        """Grid loss of every finite bucket"""
        return (self.origin_index + np.arange(self.masses.size)) * self.grid_spacing

    def max_loss(self) -> float:
        return (self.origin_index + self.masses.size - 1) * self.grid_spacing

    def total_mass(self) -> float:
        return float(self.masses.sum()) + self.infinity_mass


def delta_for_epsilon(pld: DiscretePLD, epsilon: float) -> float:
    """
    Hockey-stick divergence of the PLD at epsilon

    Args:
        pld (DiscretePLD): Privacy loss distribution
        epsilon (float): Privacy parameter

    Returns:
        float: infinity_mass + sum of masses[k] * max(1 - exp(epsilon - loss_k), 0)
    """
    losses = pld.losses()
    start = int(np.searchsorted(losses, epsilon, side='right'))
    if start >= losses.size:
        return pld.infinity_mass

    # -expm1 keeps precision for losses just above epsilon
    weights = -np.expm1(epsilon - losses[start:])
    delta = pld.infinity_mass + float(np.dot(pld.masses[start:], weights))
    return min(max(delta, pld.infinity_mass), 1.0)


def epsilon_for_delta(pld: DiscretePLD, delta: float, tolerance: float = 1e-6) -> float:
    """
    Smallest epsilon (up to tolerance) at which the PLD is (epsilon, delta)-DP

    Args:
        pld (DiscretePLD): Privacy loss distribution
        delta (float): Target delta in (0, 1)
        tolerance (float): Width of the final binary-search bracket

    Returns:
        float: Upper end of the bracket, so delta_for_epsilon(pld, result) <= delta
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if delta < pld.infinity_mass:
        raise UnachievableError(
            f"delta={delta:g} is below the infinity mass {pld.infinity_mass:g}; no finite epsilon exists"
        )
    if delta_for_epsilon(pld, 0.0) <= delta:
        return 0.0

    lower = 0.0
    upper = max(pld.max_loss() + pld.grid_spacing, 0.0)
    while upper - lower > tolerance:
        middle = 0.5 * (lower + upper)
        if delta_for_epsilon(pld, middle) <= delta:
            upper = middle
        else:
            lower = middle
    return upper


def convolve_masses(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Convolve two mass sequences, directly for short operands and by FFT otherwise

    Args:
        a (np.ndarray): First mass sequence
        b (np.ndarray): Second mass sequence

    Returns:
        np.ndarray: Non-negative convolution of length len(a) + len(b) - 1
    """
    if min(a.size, b.size) < FFT_THRESHOLD:
        return np.convolve(a, b)

    out = signal.fftconvolve(a, b)
    np.clip(out, 0.0, None, out=out)
    drift = float(a.sum()) * float(b.sum()) - float(out.sum())
    if 0.0 < abs(drift) <= RENORMALIZE_LIMIT:
        peak = int(np.argmax(out))
        out[peak] = max(out[peak] + drift, 0.0)
    return out


def truncate_tails(pld: DiscretePLD, tail_mass: float) -> DiscretePLD:
    """
    Pessimistic truncation of both ends of the loss grid

    Leading buckets with cumulative mass <= tail_mass move into the first kept
    bucket; trailing buckets with cumulative mass <= tail_mass become infinity mass.
    """
    if tail_mass <= 0:
        return pld

    masses = pld.masses
    size = masses.size
    head = min(int(np.searchsorted(np.cumsum(masses), tail_mass, side='right')), size - 1)
    tail_count = int(np.searchsorted(np.cumsum(masses[::-1]), tail_mass, side='right'))
    end = max(size - tail_count, head + 1)
    if head == 0 and end == size:
        return pld

    kept = masses[head:end].copy()
    kept[0] += float(masses[:head].sum())
    infinity_mass = min(pld.infinity_mass + float(masses[end:].sum()), 1.0)
    return DiscretePLD(pld.grid_spacing, pld.origin_index + head, kept, infinity_mass)


def _check_grid(a: DiscretePLD, b: DiscretePLD):
    if a.grid_spacing != b.grid_spacing:
        raise GridMismatchError(f"grid spacings differ: {a.grid_spacing!r} vs {b.grid_spacing!r}")


def compose(a: DiscretePLD, b: DiscretePLD, tail_mass: float = 0.0) -> DiscretePLD:
    """
    PLD of the composition of two mechanisms

    Args:
        a (DiscretePLD): First PLD
        b (DiscretePLD): Second PLD on the same grid
        tail_mass (float): Optional pessimistic truncation after convolving

    Returns:
        DiscretePLD: Convolved masses, origins added, infinity masses combined
    """
    _check_grid(a, b)
    masses = convolve_masses(a.masses, b.masses)
    infinity_mass = a.infinity_mass + b.infinity_mass - a.infinity_mass * b.infinity_mass
    composed = DiscretePLD(a.grid_spacing, a.origin_index + b.origin_index, masses, min(infinity_mass, 1.0))
    return truncate_tails(composed, tail_mass)


def self_compose(pld: DiscretePLD, count: int, tail_mass: float = 0.0) -> DiscretePLD:
    """count-fold composition of a PLD with itself by repeated squaring"""
    if count < 1:
        raise ValueError(f"repetition count must be at least 1, got {count}")

    result = None
    base = pld
    while True:
        if count & 1:
            result = base if result is None else compose(result, base, tail_mass)
        count >>= 1
        if not count:
            return result
        base = compose(base, base, tail_mass)


def compose_all(
    plds: Iterable[Tuple[DiscretePLD, int]],
    tail_mass: float = 0.0,
    max_workers: Optional[int] = None,
) -> DiscretePLD:
    """
    Compose a sequence of (PLD, repetition count) pairs in order

    Args:
        plds (Iterable[Tuple[DiscretePLD, int]]): PLDs with their repetition counts
        tail_mass (float): Optional pessimistic truncation after each convolution
        max_workers (Optional[int]): Threads for the independent self-compositions

    Returns:
        DiscretePLD: Left-to-right composition of the expanded sequence
    """
    items = list(plds)
    if not items:
        raise ValueError("compose_all needs at least one PLD")
    first = items[0][0]
    for pld, count in items:
        _check_grid(first, pld)
        if count < 1:
            raise ValueError(f"repetition count must be at least 1, got {count}")

    def power(item):
        return self_compose(item[0], item[1], tail_mass)

    if max_workers and max_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            powers = list(pool.map(power, items))
    else:
        powers = [power(item) for item in items]

    result = powers[0]
    for powered in powers[1:]:
        result = compose(result, powered, tail_mass)

    logger.debug(
        "Composed %d distinct PLDs (%d total) into %d buckets",
        len(items), sum(count for _, count in items), result.masses.size,
    )
    return result
