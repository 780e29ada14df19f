# Mixture-of-Gaussians Privacy Losses
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special, stats

from config.settings import Adjacency, DiscretizationConfig
from .errors import OutOfRangeError
from .pld_core import DiscretePLD

logger = logging.getLogger(__name__)

# Upper bound on points x components evaluated at once
CHUNK_ELEMENTS = 1 << 22
MAX_BUCKETS = 100_000_000
MAX_DOUBLINGS = 1100
LIGHT_ATOM_FACTOR = 1e-3

ArrayLike = Union[float, np.ndarray]


def _frozen(values, name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must be finite")
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MixtureGaussian:
    """Gaussian mechanism whose sensitivity is c_i with probability p_i"""

    probabilities: np.ndarray
    sensitivities: np.ndarray
    sigma: float

    def __post_init__(self):
        probabilities = _frozen(self.probabilities, "probabilities")
        sensitivities = _frozen(self.sensitivities, "sensitivities")
        if probabilities.size == 0 or probabilities.size != sensitivities.size:
            raise ValueError("probabilities and sensitivities must be non-empty and of equal length")
        if np.any(probabilities < 0) or np.any(probabilities > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(float(probabilities.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {float(probabilities.sum())!r}")
        if np.any(sensitivities < 0):
            raise ValueError("sensitivities must be non-negative")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, 'probabilities', probabilities)
        object.__setattr__(self, 'sensitivities', sensitivities)
        object.__setattr__(self, 'sigma', float(self.sigma))

    def pruned(self) -> "MixtureGaussian":
        """Same mechanism without zero-probability components"""
        keep = self.probabilities > 0
        if np.all(keep):
            return self
        return MixtureGaussian(self.probabilities[keep], self.sensitivities[keep], self.sigma)


@dataclass(frozen=True)
class ProductMixture:
    """Sensitivity sum_j x_j c_j with independent x_j ~ Bernoulli(p_j)"""

    probabilities: np.ndarray
    sensitivities: np.ndarray
    sigma: float

    def __post_init__(self):
        probabilities = _frozen(self.probabilities, "probabilities")
        sensitivities = _frozen(self.sensitivities, "sensitivities")
        if probabilities.size != sensitivities.size:
            raise ValueError("probabilities and sensitivities must have equal length")
        if np.any(probabilities < 0) or np.any(probabilities > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if np.any(sensitivities < 0):
            raise ValueError("sensitivities must be non-negative")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, 'probabilities', probabilities)
        object.__setattr__(self, 'sensitivities', sensitivities)
        object.__setattr__(self, 'sigma', float(self.sigma))


@dataclass(frozen=True)
class SensitivityPMF:
    """Sensitivity distribution on multiples of grid; masses[k] sits at (offset + k) * grid"""

    grid: float
    offset: int
    masses: np.ndarray

    def as_dict(self) -> Dict[int, float]:
        """Support grid indices mapped to their probabilities"""
        support = np.flatnonzero(self.masses)
        return {int(self.offset + k): float(self.masses[k]) for k in support}

    def to_mixture(self, sigma: float) -> MixtureGaussian:
        support = np.flatnonzero(self.masses)
        return MixtureGaussian(self.masses[support], (self.offset + support) * self.grid, sigma)


def privacy_loss(mog: MixtureGaussian, x: ArrayLike) -> ArrayLike:
    """
    Decreasing privacy loss ln(sum_i p_i exp((-2 c_i x - c_i^2) / (2 sigma^2)))

    Args:
        mog (MixtureGaussian): Mechanism
        x (ArrayLike): Evaluation point(s)

    Returns:
        ArrayLike: Loss value(s), same shape as x
    """
    mog = mog.pruned()
    points = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(points).ravel()
    sensitivities = mog.sensitivities
    log_probabilities = np.log(mog.probabilities)
    scale = 2.0 * mog.sigma * mog.sigma

    out = np.empty(flat.size)
    chunk = max(1, CHUNK_ELEMENTS // sensitivities.size)
    for start in range(0, flat.size, chunk):
        block = flat[start:start + chunk, None]
        exponents = (-2.0 * sensitivities * block - sensitivities * sensitivities) / scale + log_probabilities
        out[start:start + chunk] = special.logsumexp(exponents, axis=1)

    if points.ndim == 0:
        return float(out[0])
    return out.reshape(points.shape)


def mixture_cdf(mog: MixtureGaussian, x: ArrayLike) -> ArrayLike:
    """CDF of the shifted mixture sum_i p_i N(-c_i, sigma^2)"""
    return _mixture_tail(mog, x, upper=False)


def mixture_sf(mog: MixtureGaussian, x: ArrayLike) -> ArrayLike:
    """Survival function of the shifted mixture, accurate in the upper tail"""
    return _mixture_tail(mog, x, upper=True)


def _mixture_tail(mog: MixtureGaussian, x: ArrayLike, upper: bool) -> ArrayLike:
    points = np.asarray(x, dtype=np.float64)
    flat = np.atleast_1d(points).ravel()
    out = np.empty(flat.size)
    chunk = max(1, CHUNK_ELEMENTS // mog.sensitivities.size)
    for start in range(0, flat.size, chunk):
        standardized = (flat[start:start + chunk, None] + mog.sensitivities) / mog.sigma
        if upper:
            standardized = -standardized
        out[start:start + chunk] = special.ndtr(standardized) @ mog.probabilities
    np.clip(out, 0.0, 1.0, out=out)
    if points.ndim == 0:
        return float(out[0])
    return out.reshape(points.shape)


def loss_limits(mog: MixtureGaussian) -> Tuple[float, float]:
    """
    Infimum and supremum of the privacy loss over the real line

    Returns:
        Tuple[float, float]: (ln of the zero-sensitivity mass or -inf, +inf or 0)
    """
    mog = mog.pruned()
    positive = mog.sensitivities > 0
    if not np.any(positive):
        return 0.0, 0.0
    zero_mass = float(mog.probabilities[~positive].sum())
    lower = math.log(zero_mass) if zero_mass > 0 else -math.inf
    return lower, math.inf


def inverse_privacy_loss(mog: MixtureGaussian, y: float, delta1_grid: float) -> float:
    """
    Smallest multiple x* of delta1_grid with L(x*) <= y

    Args:
        mog (MixtureGaussian): Mechanism
        y (float): Loss level strictly inside the range of L
        delta1_grid (float): Search grid

    Returns:
        float: x* with L(x*) <= y < L(x* - delta1_grid)
    """
    if not delta1_grid > 0:
        raise ValueError(f"delta1_grid must be positive, got {delta1_grid}")
    lower, upper = loss_limits(mog)
    if not lower < y < upper:
        raise OutOfRangeError(f"loss level {y!r} outside the open range ({lower!r}, {upper!r})")

    def below(m: int) -> bool:
        return privacy_loss(mog, m * delta1_grid) <= y

    # bracket: L(low * grid) > y >= L(high * grid)
    if below(0):
        high, low, step = 0, -1, 1
        while below(low):
            high = low
            step *= 2
            low = -step
            if step.bit_length() > MAX_DOUBLINGS:
                raise OutOfRangeError(f"loss level {y!r} is numerically at the upper limit")
    else:
        low, high, step = 0, 1, 1
        while not below(high):
            low = high
            step *= 2
            high = step
            if step.bit_length() > MAX_DOUBLINGS:
                raise OutOfRangeError(f"loss level {y!r} is numerically at the lower limit")

    while high - low > 1:
        middle = (low + high) // 2
        if below(middle):
            high = middle
        else:
            low = middle
    return high * delta1_grid


def _inverse_on_grid(
    mog: MixtureGaussian, targets: np.ndarray, delta1_grid: float, x_low: float, x_high: float
) -> np.ndarray:
    """Vectorized inverse_privacy_loss for targets whose inverses lie in [x_low, x_high]"""
    low = np.full(targets.size, math.floor(x_low / delta1_grid) - 2, dtype=np.int64)
    high = np.full(targets.size, math.ceil(x_high / delta1_grid) + 2, dtype=np.int64)
    while np.any(high - low > 1):
        middle = (low + high) // 2
        below = privacy_loss(mog, middle * delta1_grid) <= targets
        high = np.where(below, middle, high)
        low = np.where(below, low, middle)
    return high * delta1_grid


def _interval_masses(cdf, sf, edges: np.ndarray) -> np.ndarray:
    """Mass between consecutive edges, taken from whichever tail keeps precision"""
    lower = cdf(edges)
    upper = sf(edges)
    from_left = np.diff(lower)
    from_right = -np.diff(upper)
    masses = np.where(lower[1:] <= 0.5, from_left, from_right)
    return np.clip(masses, 0.0, None)


def _ceil_index(value: float, grid: float) -> int:
    return int(math.ceil(value / grid))


def pld_from_mog(
    mog: MixtureGaussian,
    cfg: Optional[DiscretizationConfig] = None,
    adjacency: Adjacency = Adjacency.REMOVE,
) -> DiscretePLD:
    """
    Pessimistic PLD of the (mixture, single Gaussian) pair

    Under remove adjacency the loss L(x) is sampled with x from the shifted
    mixture; under add adjacency -L(y) is sampled with y ~ N(0, sigma^2).
    Bucket k holds the mass whose loss lies in ((k - 1) * grid, k * grid].

    Args:
        mog (MixtureGaussian): Mechanism
        cfg (Optional[DiscretizationConfig]): Grid settings
        adjacency (Adjacency): REMOVE or ADD

    Returns:
        DiscretePLD: PLD that dominates the exact one
    """
    cfg = cfg or DiscretizationConfig()
    if adjacency is Adjacency.BOTH:
        raise ValueError("pld_from_mog takes a single orientation; evaluate REMOVE and ADD separately")

    mog = mog.pruned()
    grid = cfg.pld_grid
    if not np.any(mog.sensitivities > 0):
        return DiscretePLD.point_mass(grid)

    sigma = mog.sigma
    step = cfg.inverse_tolerance
    z = float(stats.norm.isf(cfg.tail_truncation_mass))

    if adjacency is Adjacency.REMOVE:
        x_low = -float(mog.sensitivities.max()) - z * sigma
        x_high = -float(mog.sensitivities.min()) + z * sigma
        bottom = _ceil_index(privacy_loss(mog, x_high), grid)
        top = _ceil_index(privacy_loss(mog, x_low), grid)
        _check_bucket_count(top - bottom + 1)

        boundaries = _inverse_on_grid(mog, np.arange(bottom, top) * grid, step, x_low, x_high)
        edges = np.concatenate(([x_low], boundaries[::-1], [np.inf]))
        edges = np.maximum.accumulate(edges)
        masses = _interval_masses(
            lambda e: mixture_cdf(mog, e), lambda e: mixture_sf(mog, e), edges
        )[::-1]
        infinity_mass = mixture_cdf(mog, x_low)
    else:
        x_low, x_high = -z * sigma, z * sigma
        bottom = _ceil_index(-privacy_loss(mog, x_low), grid)
        top = _ceil_index(-privacy_loss(mog, x_high), grid)
        _check_bucket_count(top - bottom + 1)

        # one inversion step left keeps every boundary at or below the exact one
        boundaries = _inverse_on_grid(mog, -np.arange(bottom, top) * grid, step, x_low, x_high) - step
        edges = np.concatenate(([-np.inf], boundaries, [x_high]))
        edges = np.maximum.accumulate(edges)
        masses = _interval_masses(
            lambda e: special.ndtr(e / sigma), lambda e: special.ndtr(-e / sigma), edges
        )
        infinity_mass = float(special.ndtr(-x_high / sigma))

    logger.debug(
        "Built %s PLD with %d buckets for %d components", adjacency.value, masses.size, mog.sensitivities.size
    )
    return DiscretePLD(grid, bottom, masses, infinity_mass)


def _check_bucket_count(count: int):
    if count > MAX_BUCKETS:
        raise ValueError(f"loss grid needs {count} buckets; use a coarser pld_grid")


def round_up_to_grid(values: np.ndarray, grid: float) -> np.ndarray:
    """Smallest integers k with k * grid >= value, elementwise"""
    values = np.asarray(values, dtype=np.float64)
    k = np.ceil(values / grid)
    # division can land one ulp above an exact multiple
    k = np.where((k - 1) * grid >= values, k - 1, k)
    return k.astype(np.int64)


def _add_two_point(support: np.ndarray, masses: np.ndarray, k: int, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """Convolve a sparse PMF with {(0, 1 - p), (k, p)} over its nonzero support"""
    merged, inverse = np.unique(np.concatenate((support, support + k)), return_inverse=True)
    summed = np.bincount(inverse, weights=np.concatenate((masses * (1.0 - p), masses * p)), minlength=merged.size)
    return merged, summed


def _fold_upward(masses: np.ndarray, tail_mass: float) -> np.ndarray:
    """Move the upper tail of total mass at most tail_mass onto the largest sensitivity"""
    if tail_mass <= 0 or masses.size <= 1:
        return masses
    masses = masses.copy()
    top = masses.size - 1

    below_top = np.cumsum(masses[:top][::-1])[::-1]
    cut = int(np.searchsorted(-below_top, -tail_mass, side='left'))
    masses[top] += float(masses[cut:top].sum())
    masses[cut:top] = 0.0
    return masses


def sensitivity_pmf(pm: ProductMixture, cfg: Optional[DiscretizationConfig] = None) -> SensitivityPMF:
    """
    Distribution of the rounded-up sensitivity of a product mixture

    Columns are convolved one at a time over the nonzero support. Atoms
    lighter than sensitivity_tail_mass * LIGHT_ATOM_FACTOR are moved to the
    largest reachable sensitivity as they appear, then the light upper tail
    is folded onto the top.

    Args:
        pm (ProductMixture): Independent inclusion probabilities and sensitivities
        cfg (Optional[DiscretizationConfig]): Sensitivity grid and tail folding

    Returns:
        SensitivityPMF: Convolution of the two-point PMFs {(0, 1 - p_j), (round(c_j), p_j)}
    """
    cfg = cfg or DiscretizationConfig()
    grid = cfg.sensitivity_grid
    active = (pm.probabilities > 0) & (pm.sensitivities > 0)
    indices = round_up_to_grid(pm.sensitivities[active], grid)
    light = cfg.sensitivity_tail_mass * LIGHT_ATOM_FACTOR

    offset = 0
    reach = 0
    moved = 0.0
    support = np.zeros(1, dtype=np.int64)
    masses = np.ones(1)
    for k, p in zip(indices, pm.probabilities[active]):
        if p >= 1.0:
            offset += int(k)
            continue
        reach += int(k)
        support, masses = _add_two_point(support, masses, int(k), float(p))
        drop = masses < light
        if np.any(drop):
            moved += float(masses[drop].sum())
            support, masses = support[~drop], masses[~drop]

    dense = np.zeros(reach + 1)
    dense[support] = masses
    dense[reach] += moved
    logger.debug("Sensitivity PMF: %d atoms over %d grid points", int(np.count_nonzero(dense)), dense.size)
    return SensitivityPMF(grid, offset, _fold_upward(dense, cfg.sensitivity_tail_mass))


def discretize_pmog(pm: ProductMixture, cfg: Optional[DiscretizationConfig] = None) -> MixtureGaussian:
    """
    Mixture of Gaussians dominating a product mixture

    Args:
        pm (ProductMixture): Row of (probability, sensitivity) pairs
        cfg (Optional[DiscretizationConfig]): Sensitivity grid

    Returns:
        MixtureGaussian: Support and masses of the rounded sensitivity PMF
    """
    return sensitivity_pmf(pm, cfg).to_mixture(pm.sigma)


def mog_from_binomial(trials: int, prob: float, unit_sensitivity: float, sigma: float) -> MixtureGaussian:
    """
    Gaussian mechanism with sensitivity unit_sensitivity * Binom(trials, prob)

    Args:
        trials (int): Number of Bernoulli trials
        prob (float): Success probability
        unit_sensitivity (float): Sensitivity per success
        sigma (float): Noise standard deviation

    Returns:
        MixtureGaussian: Components k * unit_sensitivity, k = 0..trials
    """
    if trials < 0:
        raise ValueError(f"trials must be non-negative, got {trials}")
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must lie in [0, 1], got {prob}")
    k = np.arange(trials + 1, dtype=np.float64)
    log_pmf = (
        special.gammaln(trials + 1)
        - special.gammaln(k + 1)
        - special.gammaln(trials - k + 1)
        + special.xlogy(k, prob)
        + special.xlog1py(trials - k, -prob)
    )
    return MixtureGaussian(np.exp(log_pmf), k * unit_sensitivity, sigma)


def mog_from_hypergeometric(
    population: int, group_size: int, batch_size: int, unit_sensitivity: float, sigma: float
) -> MixtureGaussian:
    """Sensitivity PMF when fixed-size batches are drawn without replacement"""
    if not 0 <= group_size <= population or not 0 <= batch_size <= population:
        raise ValueError("group_size and batch_size must lie in [0, population]")
    k = np.arange(min(group_size, batch_size) + 1)
    probabilities = stats.hypergeom.pmf(k, population, group_size, batch_size)
    return MixtureGaussian(probabilities, k * unit_sensitivity, sigma)


def gaussian_delta(epsilon: float, sensitivity: float, sigma: float) -> float:
    """Exact hockey-stick divergence of the Gaussian mechanism"""
    if sensitivity <= 0:
        return 0.0
    a = sensitivity / (2.0 * sigma)
    b = epsilon * sigma / sensitivity
    return float(special.ndtr(a - b) - math.exp(epsilon + special.log_ndtr(-a - b)))


def gaussian_epsilon(delta: float, sensitivity: float, sigma: float) -> float:
    """
    Smallest epsilon for which the Gaussian mechanism is (epsilon, delta)-DP

    Args:
        delta (float): Target delta in (0, 1)
        sensitivity (float): L2 sensitivity
        sigma (float): Noise standard deviation

    Returns:
        float: Root of gaussian_delta(epsilon) = delta, or 0 when already satisfied
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if gaussian_delta(0.0, sensitivity, sigma) <= delta:
        return 0.0
    upper = 1.0
    while gaussian_delta(upper, sensitivity, sigma) > delta:
        upper *= 2.0
    return float(optimize.brentq(
        lambda eps: gaussian_delta(eps, sensitivity, sigma) - delta, 0.0, upper, xtol=1e-12
    ))
