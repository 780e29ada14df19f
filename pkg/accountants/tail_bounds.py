# Conditional Participation Tail Bounds
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy import special, stats

from utils.matrices import EncoderMatrix

logger = logging.getLogger(__name__)

MatrixLike = Union[EncoderMatrix, np.ndarray]


@dataclass(frozen=True)
class TailBoundTable:
    """
    High-probability bounds on the conditional participation probability.

    values[i, j] bounds the probability that the example took part in round j
    given the outputs of rows 0..i-1; it is 1 where C[i, j] = 0 and p at the
    first nonzero entry of each column.
    """

    values: np.ndarray
    base_probability: float
    failure_budget: float
    per_event_budget: Optional[float] = None
    normal_quantile: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def trivial(self) -> bool:
        """True when no entry needed a tail bound, so the failure budget is unused"""
        return self.per_event_budget is None

    def max_ptilde(self, matrix: MatrixLike) -> float:
        entries = _entries(matrix)
        mask = entries > 0
        if not np.any(mask):
            return self.base_probability
        return float(self.values[mask].max())


def _entries(matrix: MatrixLike) -> np.ndarray:
    if isinstance(matrix, EncoderMatrix):
        return matrix.entries
    return EncoderMatrix(matrix).entries


@lru_cache(maxsize=4096)
def binomial_tail_count(trials: int, prob: float, budget: float) -> int:
    """
    Smallest t with Pr[Binom(trials, prob) > t] <= budget

    Args:
        trials (int): Number of Bernoulli trials
        prob (float): Success probability
        budget (float): Allowed tail probability in (0, 1)

    Returns:
        int: Tail count from exact PMF summation
    """
    if trials < 0:
        raise ValueError(f"trials must be non-negative, got {trials}")
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must lie in [0, 1], got {prob}")
    if not 0.0 < budget < 1.0:
        raise ValueError(f"budget must lie in (0, 1), got {budget}")
    if trials == 0 or prob == 0.0:
        return 0
    if prob == 1.0:
        return trials

    pmf = np.exp(stats.binom.logpmf(np.arange(trials + 1), trials, prob))
    # above[t] = Pr[X > t], summed from the small upper tail down
    above = np.concatenate((np.cumsum(pmf[::-1])[::-1][1:], [0.0]))
    return int(np.argmax(above <= budget))


def _top_sums(values: np.ndarray, count: int) -> np.ndarray:
    """Sum of the count largest entries of each row"""
    width = values.shape[-1]
    if count <= 0:
        return np.zeros(values.shape[:-1])
    if count >= width:
        return values.sum(axis=-1)
    return np.partition(values, width - count, axis=-1)[..., width - count:].sum(axis=-1)


def _trial_count(row: int, overlapping_columns: int) -> int:
    # columns 0..row, plus any other column whose prefix is nonzero
    return max(row + 1, overlapping_columns)


def s_upper_bound(C: MatrixLike, i: int, j: int, prob: float, budget: float) -> float:
    """
    Over-estimate of the smallest s with Pr[sum_j' x_j' <C[:i, j], C[:i, j']> > s] <= budget

    Rows and columns are 0-based; the prefix is rows 0..i-1.

    Args:
        C (MatrixLike): Encoder matrix
        i (int): Row index, at least 1
        j (int): Column index with C[i, j] > 0
        prob (float): Participation probability of each column
        budget (float): Allowed failure probability

    Returns:
        float: Sum of the t largest prefix dot products, t from the binomial tail
    """
    entries = _entries(C)
    prefix = entries[:i]
    dots = prefix[:, j] @ prefix
    overlapping = int(np.count_nonzero(np.any(prefix > 0, axis=0)))
    count = binomial_tail_count(_trial_count(i, overlapping), prob, budget)
    return float(_top_sums(dots, count))


def ptilde_from_epsilon(epsilon, p: float):
    """p e^eps / (p e^eps + 1 - p), evaluated as a logistic of eps + logit(p)"""
    if p >= 1.0:
        return np.ones_like(np.asarray(epsilon, dtype=np.float64)) if np.ndim(epsilon) else 1.0
    value = special.expit(np.asarray(epsilon, dtype=np.float64) + math.log(p) - math.log1p(-p))
    return value if np.ndim(value) else float(value)


def probability_tail_bounds(C: MatrixLike, p: float, sigma: float, delta1: float) -> TailBoundTable:
    """
    Conditional participation bounds for every entry of C

    Args:
        C (MatrixLike): Non-negative encoder, any shape
        p (float): Sampling probability in (0, 1]
        sigma (float): Noise standard deviation
        delta1 (float): Failure budget spread over the non-trivial entries

    Returns:
        TailBoundTable: Table of p-tilde values with the budgets used
    """
    entries = _entries(C)
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0.0 <= delta1 < 1.0:
        raise ValueError(f"delta1 must lie in [0, 1), got {delta1}")

    rows, cols = entries.shape
    nonzero = entries > 0
    has_nonzero = nonzero.any(axis=0)
    head = np.zeros_like(nonzero)
    head_rows = np.argmax(nonzero, axis=0)
    head[head_rows[has_nonzero], np.flatnonzero(has_nonzero)] = True

    values = np.ones((rows, cols))
    values[head] = p
    nontrivial = int(nonzero.sum()) - int(has_nonzero.sum())

    if nontrivial == 0 or p >= 1.0:
        return TailBoundTable(values, p, delta1)

    per_event = delta1 / (2.0 * nontrivial)
    if per_event == 0.0:
        # no failure budget: every non-trivial entry keeps the bound 1
        return TailBoundTable(values, p, delta1, per_event, math.inf)

    z = float(stats.norm.isf(per_event))
    gram = np.zeros((cols, cols))
    prefix_sq = np.zeros(cols)
    for i in range(rows):
        row = entries[i]
        targets = np.flatnonzero(nonzero[i] & ~head[i])
        if targets.size:
            overlapping = int(np.count_nonzero(prefix_sq > 0))
            count = binomial_tail_count(_trial_count(i, overlapping), p, per_event)
            s = _top_sums(gram[targets], count)
            norm_sq = prefix_sq[targets]
            epsilon = z * np.sqrt(norm_sq) / sigma + (2.0 * s - norm_sq) / (2.0 * sigma * sigma)
            values[i, targets] = np.maximum(ptilde_from_epsilon(np.maximum(epsilon, 0.0), p), p)

        support = np.flatnonzero(nonzero[i])
        gram[np.ix_(support, support)] += np.outer(row[support], row[support])
        prefix_sq += row * row

    logger.debug(
        "Tail bounds for %dx%d matrix: %d non-trivial entries, z=%.4f, max ratio %.4f",
        rows, cols, nontrivial, z, float(values[nonzero].max()) / p,
    )
    return TailBoundTable(values, p, delta1, per_event, z)
