# DP-SGD Applications of the Mixture Accountant
import logging
import math
from typing import Callable, Optional

from config.settings import Adjacency, DiscretizationConfig
from utils.mog import MixtureGaussian, mog_from_binomial, mog_from_hypergeometric, pld_from_mog
from utils.pld_core import compose_all, epsilon_for_delta

logger = logging.getLogger(__name__)


def _composed_epsilon(
    mog: MixtureGaussian, rounds: int, delta: float, cfg: DiscretizationConfig, adjacency: Adjacency
) -> float:
    """Epsilon of the rounds-fold composition of one mixture, max over orientations"""
    epsilon = 0.0
    for orientation in adjacency.orientations():
        pld = pld_from_mog(mog, cfg, orientation)
        composed = compose_all([(pld, rounds)], cfg.tail_truncation_mass)
        epsilon = max(epsilon, epsilon_for_delta(composed, delta, cfg.inverse_tolerance))
    return epsilon


def _check_common(rounds: int, p: float, sigma: float, delta: float):
    if rounds < 1:
        raise ValueError(f"number of rounds must be at least 1, got {rounds}")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def dpsgd_epsilon(
    n: int,
    p: float,
    sigma: float,
    delta: float,
    cfg: Optional[DiscretizationConfig] = None,
    adjacency: Adjacency = Adjacency.BOTH,
) -> float:
    """
    Per-round accounting of n rounds of the subsampled Gaussian mechanism

    Args:
        n (int): Number of rounds
        p (float): Poisson sampling probability
        sigma (float): Noise multiplier for unit sensitivity
        delta (float): Target delta

    Returns:
        float: Epsilon of the n-fold composition
    """
    _check_common(n, p, sigma, delta)
    cfg = cfg or DiscretizationConfig()
    return _composed_epsilon(mog_from_binomial(1, p, 1.0, sigma), n, delta, cfg, adjacency)


def last_iterate_linear_epsilon(
    n: int,
    p: float,
    sigma: float,
    delta: float,
    cfg: Optional[DiscretizationConfig] = None,
    adjacency: Adjacency = Adjacency.ADD,
) -> float:
    """
    Epsilon of releasing only the last iterate of DP-SGD on linear losses

    The sum of n noisy subsampled gradients is a single Gaussian mechanism
    with sensitivity Binom(n, p) and noise sigma * sqrt(n). Accounting
    defaults to the add orientation; Adjacency.BOTH gives the max over both.

    Args:
        n (int): Number of rounds
        p (float): Poisson sampling probability
        sigma (float): Per-round noise multiplier
        delta (float): Target delta
        adjacency (Adjacency): Orientation(s) to account

    Returns:
        float: Epsilon of the single mixture mechanism
    """
    _check_common(n, p, sigma, delta)
    cfg = cfg or DiscretizationConfig()
    mog = mog_from_binomial(n, p, 1.0, sigma * n ** 0.5)
    epsilon = _composed_epsilon(mog, 1, delta, cfg, adjacency)
    logger.debug("Last-iterate epsilon for n=%d, p=%g, sigma=%g: %.6f", n, p, sigma, epsilon)
    return epsilon


def group_privacy_dpsgd_epsilon(
    group_size: int,
    p: float,
    sigma: float,
    rounds: int,
    delta: float,
    cfg: Optional[DiscretizationConfig] = None,
    dataset_size: Optional[int] = None,
    batch_size: Optional[int] = None,
    adjacency: Adjacency = Adjacency.BOTH,
) -> float:
    """
    Group-level epsilon of DP-SGD

    Each round's sensitivity is the number of sampled group members:
    Binom(group_size, p) under Poisson sampling, or hypergeometric when
    fixed batches of batch_size are drawn from dataset_size records.

    Args:
        group_size (int): Number of records in the group
        p (float): Poisson sampling probability, ignored for fixed batches
        sigma (float): Noise multiplier
        rounds (int): Number of rounds
        delta (float): Target delta
        dataset_size (Optional[int]): Records in the dataset, for fixed batches
        batch_size (Optional[int]): Records per batch, for fixed batches

    Returns:
        float: Epsilon of the rounds-fold composition
    """
    if group_size < 1:
        raise ValueError(f"group_size must be at least 1, got {group_size}")
    if (dataset_size is None) != (batch_size is None):
        raise ValueError("dataset_size and batch_size must be given together")
    cfg = cfg or DiscretizationConfig()

    if dataset_size is None:
        _check_common(rounds, p, sigma, delta)
        mog = mog_from_binomial(group_size, p, 1.0, sigma)
    else:
        _check_common(rounds, batch_size / dataset_size, sigma, delta)
        mog = mog_from_hypergeometric(dataset_size, group_size, batch_size, 1.0, sigma)
    return _composed_epsilon(mog, rounds, delta, cfg, adjacency)


def black_box_group_epsilon(group_size: int, epsilon_at: Callable[[float], float], delta: float) -> float:
    """
    Smallest group epsilon obtainable from the generic (k eps, k e^(k eps) delta) conversion

    Args:
        group_size (int): k
        epsilon_at (Callable[[float], float]): Single-record epsilon as a function of delta
        delta (float): Target group delta

    Returns:
        float: k * eps(delta') with delta' = delta / (k e^(k eps(delta'))), by fixed-point iteration
    """
    epsilon = epsilon_at(delta)
    for _ in range(50):
        inner = delta / (group_size * math.exp(group_size * epsilon))
        updated = epsilon_at(inner)
        if abs(updated - epsilon) < 1e-9:
            break
        epsilon = updated
    return group_size * epsilon
