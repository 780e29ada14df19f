# Brute-Force Reference Computations
"""
Slow, independent references used to pin down engine results in tests.

Nothing here imports the PLD engine or the mixture code. Mixtures are read
through their probabilities, sensitivities and sigma attributes, so engine
containers and ReferenceMixture are interchangeable.
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import integrate, optimize, special

from .errors import TooLargeError

MAX_ENUMERATION_COLUMNS = 20
WINDOW_SIGMAS = 12.0


@dataclass(frozen=True)
class ReferenceMixture:
    """Gaussian mixture: sensitivity sensitivities[i] with probability probabilities[i]"""

    probabilities: np.ndarray
    sensitivities: np.ndarray
    sigma: float


def _log_densities(mog, adjacency: str):
    """Log densities (log P, log Q) of the dominating pair for one orientation"""
    keep = mog.probabilities > 0
    log_p = np.log(mog.probabilities[keep])
    centers = mog.sensitivities[keep]
    sigma = mog.sigma
    log_norm = -0.5 * math.log(2.0 * math.pi) - math.log(sigma)

    def gaussian(x, shift):
        return log_norm - 0.5 * ((x - shift) / sigma) ** 2

    def mixture(x, sign):
        return float(special.logsumexp(log_p + gaussian(x, sign * centers)))

    if adjacency == "remove":
        return (lambda x: mixture(x, -1.0)), (lambda x: gaussian(x, 0.0))
    if adjacency == "add":
        return (lambda x: gaussian(x, 0.0)), (lambda x: mixture(x, 1.0))
    raise ValueError(f"adjacency must be 'remove' or 'add', got {adjacency!r}")


def hockey_stick_numeric(mog, epsilon: float, adjacency: str = "remove") -> float:
    """
    Hockey-stick divergence by adaptive quadrature

    Integrates max(P(x) - e^eps Q(x), 0) up to the point where the decreasing
    loss ln(P/Q) crosses epsilon.

    Args:
        mog: Mixture with at most 16 components
        epsilon (float): Privacy parameter
        adjacency (str): 'remove' or 'add'

    Returns:
        float: Divergence accurate to about 1e-8
    """
    if not np.any(mog.sensitivities[mog.probabilities > 0] > 0):
        return 0.0

    log_p, log_q = _log_densities(mog, adjacency)
    c_max = float(mog.sensitivities.max())
    low = -c_max - WINDOW_SIGMAS * mog.sigma
    high = c_max + WINDOW_SIGMAS * mog.sigma

    def excess_loss(x):
        return log_p(x) - log_q(x) - epsilon

    if excess_loss(low) <= 0:
        return 0.0
    kink = high if excess_loss(high) > 0 else optimize.brentq(excess_loss, low, high, xtol=1e-13)

    def integrand(x):
        return max(math.exp(log_p(x)) - math.exp(epsilon + log_q(x)), 0.0)

    breakpoints = [c for c in np.unique(np.concatenate((mog.sensitivities, -mog.sensitivities))) if low < c < kink]
    value, _ = integrate.quad(
        integrand, low, kink, points=breakpoints or None, epsabs=1e-10, epsrel=1e-10, limit=500
    )
    return float(value)


def hockey_stick_monte_carlo(
    mog, epsilon: float, samples: int = 1_000_000, seed: int = 0, adjacency: str = "remove"
) -> Tuple[float, float]:
    """
    Monte Carlo estimate of E[max(1 - exp(eps - loss), 0)] under P

    Returns:
        Tuple[float, float]: (estimate, standard error)
    """
    rng = np.random.default_rng(seed)
    keep = mog.probabilities > 0
    probabilities = mog.probabilities[keep] / mog.probabilities[keep].sum()
    centers = mog.sensitivities[keep]
    sigma = mog.sigma
    scale = 2.0 * sigma * sigma
    log_p = np.log(probabilities)

    batch = 1_000_000
    total = 0.0
    total_sq = 0.0
    drawn = 0
    while drawn < samples:
        size = min(batch, samples - drawn)
        noise = rng.standard_normal(size) * sigma
        if adjacency == "remove":
            components = rng.choice(centers.size, size=size, p=probabilities)
            x = noise - centers[components]
            loss = special.logsumexp(log_p + (-2.0 * np.outer(x, centers) - centers ** 2) / scale, axis=1)
        else:
            x = noise
            loss = -special.logsumexp(log_p + (2.0 * np.outer(x, centers) - centers ** 2) / scale, axis=1)
        values = np.maximum(-np.expm1(epsilon - loss), 0.0)
        total += float(values.sum())
        total_sq += float((values ** 2).sum())
        drawn += size

    mean = total / samples
    variance = max(total_sq / samples - mean * mean, 0.0)
    return mean, math.sqrt(variance / samples)


def _subset_masks(count: int) -> np.ndarray:
    return ((np.arange(1 << count)[:, None] >> np.arange(count)) & 1).astype(bool)


def brute_force_pmog(pm) -> ReferenceMixture:
    """
    Exact mixture of a product mixture by enumerating every subset of columns

    Args:
        pm: Product mixture with at most 20 columns

    Returns:
        ReferenceMixture: Distinct subset sums with their probabilities, ascending
    """
    count = pm.probabilities.size
    if count > MAX_ENUMERATION_COLUMNS:
        raise TooLargeError(f"{count} columns exceed the enumeration limit of {MAX_ENUMERATION_COLUMNS}")
    if count == 0:
        return ReferenceMixture(np.ones(1), np.zeros(1), float(pm.sigma))

    masks = _subset_masks(count)
    probabilities = np.where(masks, pm.probabilities, 1.0 - pm.probabilities).prod(axis=1)
    sums = np.array([float(sum(pm.sensitivities[row])) for row in masks])
    support, inverse = np.unique(sums, return_inverse=True)
    merged = np.bincount(inverse, weights=probabilities)
    keep = merged > 0
    return ReferenceMixture(merged[keep], support[keep], float(pm.sigma))


def exact_min_s(C, i: int, j: int, p: float, budget: float) -> float:
    """
    Exact smallest s with Pr[sum_j' x_j' <C[:i, j], C[:i, j']> > s] <= budget

    Rows and columns are 0-based; the prefix is rows 0..i-1 and every
    x_j' ~ Bernoulli(p) independently.
    """
    entries = np.asarray(getattr(C, 'entries', C), dtype=np.float64)
    if i > MAX_ENUMERATION_COLUMNS:
        raise TooLargeError(f"row index {i} exceeds the enumeration limit of {MAX_ENUMERATION_COLUMNS}")
    if budget >= 1.0:
        return 0.0

    prefix = entries[:i, :]
    dots = prefix[:, j] @ prefix
    dots = dots[dots > 0]
    if dots.size == 0:
        return 0.0
    if dots.size > MAX_ENUMERATION_COLUMNS:
        raise TooLargeError(f"{dots.size} overlapping columns exceed the enumeration limit")

    masks = _subset_masks(dots.size)
    weights = np.where(masks, p, 1.0 - p).prod(axis=1)
    values = np.array([float(sum(dots[row])) for row in masks])
    support, inverse = np.unique(values, return_inverse=True)
    masses = np.bincount(inverse, weights=weights)

    above = np.concatenate((np.cumsum(masses[::-1])[::-1][1:], [0.0]))
    return float(support[int(np.argmax(above <= budget))])
