# Experiment Harness Coordinator
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence

import pandas as pd

from config.settings import AccountingParams, DiscretizationConfig, resolve_thread_count
from utils.errors import AccountingError, UnachievableError
from utils.matrices import EncoderMatrix, binary_tree, prefix_opt, tree_restart
from utils.mog import gaussian_epsilon
from .mmcc_accountant import AccountingResult, MMCCAccountant

TREE_COLUMNS = ['c', 'n', 'sigma', 'eps_unamplified', 'eps_amplified', 'ratio']
PREFIX_OPT_COLUMNS = ['c', 'n', 'column_norm', 'sigma', 'eps_unamplified', 'eps_amplified', 'ratio']
TREE_RESTART_COLUMNS = ['sigma', 'eps_mmcc_iid', 'eps_banded_minsep']


def _status(message: str):
    """Progress line on stderr; stdout carries only the report"""
    print(message, file=sys.stderr)


def _ratio(unamplified: float, amplified: float) -> float:
    return unamplified / amplified if amplified > 0 else math.inf


class ExperimentOrchestrator:
    """Coordinates single accountings and the amplification experiment grids"""

    def __init__(self, cfg: Optional[DiscretizationConfig] = None, threads: Optional[int] = None, dedup: bool = True):
        self.cfg = cfg or DiscretizationConfig()
        self.threads = resolve_thread_count(threads)
        self.accountant = MMCCAccountant(threads=self.threads, dedup=dedup)
        # grid points already run in parallel, so each point accounts on one thread
        self.grid_accountant = MMCCAccountant(threads=1, dedup=dedup)

    def account(
        self,
        matrix: EncoderMatrix,
        params: AccountingParams,
        independent: bool = False,
        all_groups: bool = False,
    ) -> AccountingResult:
        """
        Run the accounting variant selected by the flags

        Args:
            matrix (EncoderMatrix): Encoder matrix
            params (AccountingParams): Accounting parameters
            independent (bool): Independent-rows lower-bound diagnostic instead of a guarantee
            all_groups (bool): Worst case over all b-min-sep groups

        Returns:
            AccountingResult: Accounting result
        """
        if independent and (params.b > 1 or all_groups):
            raise ValueError("the independent-rows diagnostic is only defined for b = 1")

        _status(f"🎯 Accounting {matrix.rows}x{matrix.cols} encoder: p={params.p:g}, sigma={params.sigma:g}, b={params.b}")
        if matrix.non_adaptive_only:
            _status("⚠️ Encoder is not square lower-triangular; guarantee covers non-adaptive inputs only")

        if all_groups:
            result = self.accountant.generalized_mmcc_all_groups(matrix, params)
        elif params.b > 1:
            result = self.accountant.generalized_mmcc(matrix, params)
        elif independent:
            result = self.accountant.mmcc_independent_lower(matrix, params)
        else:
            result = self.accountant.mmcc(matrix, params)

        _status(f"✅ Accounting completed in {result.runtime_ms} ms ({result.unique_row_count} unique rows)")
        return result

    def run_tree_experiment(self, c_list: Sequence[float], log_n_max: int, delta: float = 1e-6) -> pd.DataFrame:
        """
        Binary tree amplification grid with sigma = c * sqrt(log2(n) + 1) and p = 1/n

        Args:
            c_list (Sequence[float]): Noise multipliers per unit column norm
            log_n_max (int): Largest n is 2^log_n_max
            delta (float): Total delta, split evenly for the amplified run

        Returns:
            pd.DataFrame: One row per (c, n)
        """
        _check_grid(c_list, log_n_max)

        def run(point):
            c, n = point
            norm = math.sqrt(math.log2(n) + 1)
            sigma = c * norm
            params = AccountingParams.from_total_delta(1.0 / n, sigma, delta, discretization=self.cfg)
            unamplified = gaussian_epsilon(delta, norm, sigma)
            amplified = self.grid_accountant.mmcc(binary_tree(n), params).epsilon
            return [c, n, sigma, unamplified, amplified, _ratio(unamplified, amplified)]

        points = [(c, 2 ** i) for c in c_list for i in range(1, log_n_max + 1)]
        return pd.DataFrame(self._run_grid("binary tree", points, run), columns=TREE_COLUMNS)

    def run_prefix_opt_experiment(self, c_list: Sequence[float], log_n_max: int, delta: float = 1e-6) -> pd.DataFrame:
        """Optimal continual counting grid with sigma = c * ||C e_1|| and p = 1/n"""
        _check_grid(c_list, log_n_max)

        def run(point):
            c, n = point
            matrix = prefix_opt(n)
            norm = float(matrix.column_norms()[0])
            sigma = c * norm
            params = AccountingParams.from_total_delta(1.0 / n, sigma, delta, discretization=self.cfg)
            unamplified = gaussian_epsilon(delta, norm, sigma)
            amplified = self.grid_accountant.mmcc(matrix, params).epsilon
            return [c, n, norm, sigma, unamplified, amplified, _ratio(unamplified, amplified)]

        points = [(c, 2 ** i) for c in c_list for i in range(1, log_n_max + 1)]
        return pd.DataFrame(self._run_grid("prefix-opt", points, run), columns=PREFIX_OPT_COLUMNS)

    def run_tree_restart_experiment(
        self, n: int, height: int, p: float, sigma_list: Sequence[float], delta: float = 1e-6
    ) -> pd.DataFrame:
        """
        Restarted binary trees under i.i.d. sampling versus b-min-sep sampling

        Args:
            n (int): Number of steps
            height (int): Tree height; trees restart every 2^(height-1) steps
            p (float): Per-round sampling probability
            sigma_list (Sequence[float]): Noise levels to sweep
            delta (float): Total delta, split evenly

        Returns:
            pd.DataFrame: Columns sigma, eps_mmcc_iid, eps_banded_minsep
        """
        if not sigma_list:
            raise ValueError("sigma list must not be empty")
        matrix = tree_restart(n, height)
        b = 2 ** (height - 1)

        def run(sigma):
            iid = AccountingParams.from_total_delta(p, sigma, delta, discretization=self.cfg)
            banded = AccountingParams.from_total_delta(p, sigma, delta, b=b, discretization=self.cfg)
            return [
                sigma,
                self.grid_accountant.mmcc(matrix, iid).epsilon,
                self.grid_accountant.generalized_mmcc(matrix, banded).epsilon,
            ]

        return pd.DataFrame(self._run_grid("tree restart", list(sigma_list), run), columns=TREE_RESTART_COLUMNS)

    def _run_grid(self, name: str, points: List[Any], run: Callable[[Any], List[float]]) -> List[List[float]]:
        """Evaluate grid points in parallel, keeping their order"""
        _status(f"🎯 Starting {name} experiment over {len(points)} grid points")

        def guarded(point):
            try:
                row = run(point)
            except UnachievableError:
                raise
            except Exception as e:
                raise AccountingError(f"{name} experiment failed at {point}: {str(e)}") from e
            _status(f"📊 {name} {point}: done")
            return row

        if self.threads > 1 and len(points) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                rows = list(pool.map(guarded, points))
        else:
            rows = [guarded(point) for point in points]

        _status(f"✅ {name} experiment completed!")
        return rows


def _check_grid(c_list: Sequence[float], log_n_max: int):
    if not c_list:
        raise ValueError("c list must not be empty")
    if log_n_max < 1:
        raise ValueError(f"log-n-max must be at least 1, got {log_n_max}")


def format_report(result: AccountingResult, title: str = "MMCC Accounting") -> str:
    """Human-readable summary of an accounting result"""
    output = []
    output.append(f"## 🔐 {title}")
    output.append("")
    output.append(f"**ε:** {result.epsilon:.6f}")
    output.append(f"**δ total:** {result.delta_total:.3g} (δ₁ = {result.delta1:.3g}, δ₂ = {result.delta2:.3g})")
    output.append(f"**Max p̃:** {result.max_ptilde:.6g} ({result.max_ptilde_over_p:.4f} × p)")
    output.append(f"**Rows:** {result.row_count} ({result.unique_row_count} unique)")
    output.append(f"**Runtime:** {result.runtime_ms} ms")
    if result.group > 1:
        output.append(f"**Worst group:** {result.group}")
    if result.non_adaptive_only:
        output.append("⚠️ Valid for non-adaptive inputs only (encoder is not square lower-triangular)")
    if result.lower_bound_only:
        output.append("⚠️ Independent-rows diagnostic: a heuristic lower bound, not a privacy guarantee")
    return "\n".join(output)
