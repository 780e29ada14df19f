# MMCC Privacy Accountant
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from config.settings import AccountingParams, Adjacency, DiscretizationConfig, resolve_thread_count
from utils.matrices import EncoderMatrix
from utils.mog import ProductMixture, discretize_pmog, pld_from_mog, round_up_to_grid
from utils.pld_core import DiscretePLD, compose_all, epsilon_for_delta
from .tail_bounds import probability_tail_bounds

logger = logging.getLogger(__name__)

MatrixLike = Union[EncoderMatrix, np.ndarray]
RowSignature = Tuple[Tuple[int, ...], Tuple[float, ...]]


@dataclass(frozen=True)
class AccountingResult:
    """An (epsilon, delta_total) guarantee with diagnostics"""

    epsilon: float
    delta_total: float
    delta1: float
    delta2: float
    max_ptilde: float
    max_ptilde_over_p: float
    unique_row_count: int
    row_count: int
    runtime_ms: int
    non_adaptive_only: bool = False
    lower_bound_only: bool = False
    group: int = 1

    def to_dict(self) -> Dict[str, Any]:
        """JSON report fields"""
        return {
            'epsilon': self.epsilon,
            'delta_total': self.delta_total,
            'delta1': self.delta1,
            'delta2': self.delta2,
            'max_ptilde': self.max_ptilde,
            'max_ptilde_over_p': self.max_ptilde_over_p,
            'unique_rows': self.unique_row_count,
            'rows': self.row_count,
            'runtime_ms': self.runtime_ms,
            'non_adaptive_only': self.non_adaptive_only,
        }


def _as_matrix(C: MatrixLike) -> EncoderMatrix:
    return C if isinstance(C, EncoderMatrix) else EncoderMatrix(C)


class MMCCAccountant:
    """
    Amplified privacy accounting for matrix mechanisms

    With dedup=False a PLD is built for every row instead of once per
    distinct row. Composition always groups identical rows in canonical
    order, so the flag changes the work done but never the result.
    """

    def __init__(self, threads: Optional[int] = None, dedup: bool = True):
        self.threads = threads
        self.dedup = dedup

    def compose_with_failure(
        self,
        row_plds: Iterable[Tuple[DiscretePLD, int]],
        delta1: float,
        delta2: float,
        cfg: Optional[DiscretizationConfig] = None,
    ) -> Tuple[float, float]:
        """
        Compose per-row PLDs that dominate except on bad events of total probability delta1

        Args:
            row_plds (Iterable[Tuple[DiscretePLD, int]]): PLDs with repetition counts
            delta1 (float): Probability of the bad events
            delta2 (float): Delta queried on the composed PLD
            cfg (Optional[DiscretizationConfig]): Truncation and search tolerance

        Returns:
            Tuple[float, float]: (epsilon at delta2, delta1 + delta2)
        """
        cfg = cfg or DiscretizationConfig()
        items = list(row_plds)
        if not items:
            return 0.0, delta1 + delta2
        composed = compose_all(items, cfg.tail_truncation_mass, resolve_thread_count(self.threads))
        return epsilon_for_delta(composed, delta2, cfg.inverse_tolerance), delta1 + delta2

    def mmcc(self, C: MatrixLike, params: AccountingParams) -> AccountingResult:
        """
        Amplified epsilon of C x + z under i.i.d. sampling with probability p

        Args:
            C (MatrixLike): Non-negative encoder matrix
            params (AccountingParams): Sampling, noise and budget settings with b = 1

        Returns:
            AccountingResult: Guarantee (epsilon, delta1 + delta2), an unused delta1 moves to delta2
        """
        if params.b != 1:
            raise ValueError(f"mmcc handles i.i.d. sampling (b = 1), got b={params.b}; use generalized_mmcc")
        started = time.perf_counter()
        matrix = _as_matrix(C)
        table = probability_tail_bounds(matrix, params.p, params.sigma, params.delta1)
        delta1, delta2 = _split_budget(params, table.trivial)
        return self._account(
            matrix.entries, table.values, params, params.p, delta1, delta2, started, matrix.non_adaptive_only
        )

    def mmcc_independent_lower(self, C: MatrixLike, params: AccountingParams) -> AccountingResult:
        """Same pipeline with every p-tilde replaced by p; a diagnostic, not a guarantee"""
        started = time.perf_counter()
        matrix = _as_matrix(C)
        ptilde = np.where(matrix.entries > 0, params.p, 1.0)
        result = self._account(
            matrix.entries, ptilde, params, params.p, 0.0, params.delta2, started, matrix.non_adaptive_only
        )
        return replace(result, lower_bound_only=True)

    def generalized_mmcc(self, C: MatrixLike, params: AccountingParams) -> AccountingResult:
        """
        Amplified epsilon for the first group under b-min-sep sampling

        Args:
            C (MatrixLike): Non-negative encoder matrix
            params (AccountingParams): Settings; params.b is the min-sep

        Returns:
            AccountingResult: Guarantee for examples eligible in rounds 0, b, 2b, ...
        """
        started = time.perf_counter()
        matrix = _as_matrix(C)
        b = params.b
        probability = b * params.p
        budget = b * params.delta1
        if probability > 1.0:
            raise ValueError(f"b * p must not exceed 1, got {probability}")
        if budget >= 1.0:
            raise ValueError(f"b * delta1 must be below 1, got {budget}")

        reduced = matrix.entries[:, ::b]
        table = probability_tail_bounds(reduced, probability, params.sigma, budget)
        if b == 1:
            blocked, ptilde = reduced, table.values
        else:
            blocks = math.ceil(reduced.shape[0] / b)
            blocked = np.vstack([
                np.linalg.norm(reduced[index * b:(index + 1) * b], axis=0) for index in range(blocks)
            ])
            ptilde = table.values[::b]

        delta1, delta2 = _split_budget(params, table.trivial)
        return self._account(
            blocked, ptilde, params, probability, delta1, delta2, started, matrix.non_adaptive_only
        )

    def generalized_mmcc_all_groups(self, C: MatrixLike, params: AccountingParams) -> AccountingResult:
        """Worst generalized_mmcc result over the b groups"""
        started = time.perf_counter()
        entries = _as_matrix(C).entries
        results = []
        for offset in range(params.b):
            trimmed = entries[offset:, offset:]
            if 0 in trimmed.shape or not np.any(trimmed):
                continue
            result = self.generalized_mmcc(trimmed, params)
            results.append(replace(result, group=offset + 1))
            logger.debug("Group %d: epsilon=%.6f", offset + 1, result.epsilon)

        if not results:
            raise ValueError("encoder matrix has no nonzero entries")
        worst = max(results, key=lambda result: result.epsilon)
        return replace(worst, runtime_ms=_elapsed_ms(started))

    def _account(
        self,
        entries: np.ndarray,
        ptilde: np.ndarray,
        params: AccountingParams,
        base_probability: float,
        delta1: float,
        delta2: float,
        started: float,
        non_adaptive_only: bool,
    ) -> AccountingResult:
        """Row mixtures -> deduplicated PLDs -> composition -> result record"""
        cfg = params.discretization
        signatures = [
            _row_signature(entries[i], ptilde[i], cfg.sensitivity_grid) for i in range(entries.shape[0])
        ]
        groups: Dict[RowSignature, int] = {}
        for signature in signatures:
            if signature is not None:
                groups[signature] = groups.get(signature, 0) + 1

        row_plds = self._row_plds(signatures, groups, params)
        epsilon = 0.0
        delta_total = delta1 + delta2
        for orientation in params.adjacency.orientations():
            sequence = [(row_plds[signature][orientation], count) for signature, count in groups.items()]
            value, delta_total = self.compose_with_failure(sequence, delta1, delta2, cfg)
            epsilon = max(epsilon, value)

        mask = entries > 0
        max_ptilde = float(ptilde[mask].max()) if np.any(mask) else base_probability
        logger.debug("Accounted %d rows (%d unique): epsilon=%.6f", len(signatures), len(groups), epsilon)
        return AccountingResult(
            epsilon=epsilon,
            delta_total=delta_total,
            delta1=delta1,
            delta2=delta2,
            max_ptilde=max_ptilde,
            max_ptilde_over_p=max_ptilde / base_probability,
            unique_row_count=len(groups),
            row_count=len(signatures),
            runtime_ms=_elapsed_ms(started),
            non_adaptive_only=non_adaptive_only,
        )

    def _row_plds(
        self, signatures: List[Optional[RowSignature]], groups: Dict[RowSignature, int], params: AccountingParams
    ) -> Dict[RowSignature, Dict[Adjacency, DiscretePLD]]:
        """PLDs per distinct row, computed once each or once per row when dedup is off"""
        work = list(groups) if self.dedup else [signature for signature in signatures if signature is not None]

        def build(signature: RowSignature) -> Dict[Adjacency, DiscretePLD]:
            return _signature_plds(signature, params)

        threads = resolve_thread_count(self.threads)
        if threads > 1 and len(work) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                built = list(pool.map(build, work))
        else:
            built = [build(signature) for signature in work]

        plds: Dict[RowSignature, Dict[Adjacency, DiscretePLD]] = {}
        for signature, value in zip(work, built):
            plds.setdefault(signature, value)
        return plds


def _split_budget(params: AccountingParams, trivial: bool) -> Tuple[float, float]:
    """(delta1, delta2) to charge; with no tail bound in use the whole budget goes to the PLD query"""
    if trivial:
        return 0.0, params.delta1 + params.delta2
    return params.delta1, params.delta2


def _row_signature(row: np.ndarray, ptilde_row: np.ndarray, grid: float) -> Optional[RowSignature]:
    """Rounded sensitivities and p-tilde of a row's nonzero entries, in canonical order"""
    support = np.flatnonzero(row > 0)
    if not support.size:
        return None
    indices = round_up_to_grid(row[support], grid)
    probabilities = ptilde_row[support]
    order = np.lexsort((probabilities, indices))
    return (
        tuple(int(k) for k in indices[order]),
        tuple(float(q) for q in probabilities[order]),
    )


def _signature_plds(signature: RowSignature, params: AccountingParams) -> Dict[Adjacency, DiscretePLD]:
    cfg = params.discretization
    indices, probabilities = signature
    mixture = ProductMixture(
        np.array(probabilities), np.array(indices, dtype=np.float64) * cfg.sensitivity_grid, params.sigma
    )
    mog = discretize_pmog(mixture, cfg)
    return {orientation: pld_from_mog(mog, cfg, orientation) for orientation in params.adjacency.orientations()}


def _elapsed_ms(started: float) -> int:
    return int(round((time.perf_counter() - started) * 1000))


_default_accountant = MMCCAccountant()


def compose_with_failure(row_plds, delta1: float, delta2: float, cfg: Optional[DiscretizationConfig] = None):
    return _default_accountant.compose_with_failure(row_plds, delta1, delta2, cfg)


def mmcc(C: MatrixLike, params: AccountingParams) -> AccountingResult:
    return _default_accountant.mmcc(C, params)


def mmcc_independent_lower(C: MatrixLike, params: AccountingParams) -> AccountingResult:
    return _default_accountant.mmcc_independent_lower(C, params)


def generalized_mmcc(C: MatrixLike, params: AccountingParams) -> AccountingResult:
    return _default_accountant.generalized_mmcc(C, params)


def generalized_mmcc_all_groups(C: MatrixLike, params: AccountingParams) -> AccountingResult:
    return _default_accountant.generalized_mmcc_all_groups(C, params)
