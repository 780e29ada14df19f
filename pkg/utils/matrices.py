# Encoder Matrix Construction and Parsing
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd

from .errors import DivisibilityError, MatrixParseError, NegativeEntryError, NotPowerOfTwoError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class EncoderMatrix:
    """Non-negative encoder C of the mechanism C x + z"""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=np.float64)
        if entries.ndim != 2 or 0 in entries.shape:
            raise ValueError(f"encoder matrix must be a non-empty 2-D array, got shape {entries.shape}")
        if not np.all(np.isfinite(entries)):
            raise ValueError("encoder matrix entries must be finite")
        negative = np.argwhere(entries < 0)
        if negative.size:
            row, column = negative[0]
            raise NegativeEntryError(
                f"entry ({row + 1}, {column + 1}) is negative: {entries[row, column]!r}"
            )
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.entries))

    @property
    def lower_triangular(self) -> bool:
        """True iff square with nothing above the diagonal"""
        return self.rows == self.cols and not np.any(np.triu(self.entries, k=1))

    @property
    def non_adaptive_only(self) -> bool:
        """Guarantees hold for non-adaptive inputs only unless C is square lower-triangular"""
        return not self.lower_triangular

    def column_norms(self) -> np.ndarray:
        return np.linalg.norm(self.entries, axis=0)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def binary_tree(n: int) -> EncoderMatrix:
    """
    Binary tree encoder with one row per dyadic interval

    Args:
        n (int): Number of leaves, a power of two

    Returns:
        EncoderMatrix: (2n - 1) x n matrix; singletons first, then each coarser level, root last
    """
    if not isinstance(n, (int, np.integer)) or not _is_power_of_two(int(n)):
        raise NotPowerOfTwoError(f"binary tree size must be a power of two, got {n}")

    rows = []
    width = 1
    while width <= n:
        for start in range(0, n, width):
            row = np.zeros(n)
            row[start:start + width] = 1.0
            rows.append(row)
        width *= 2
    return EncoderMatrix(np.vstack(rows))


def prefix_opt_coefficients(n: int) -> np.ndarray:
    """f(0) = 1, f(k) = f(k - 1) (1 - 1 / (2k))"""
    coefficients = np.ones(n)
    for k in range(1, n):
        coefficients[k] = coefficients[k - 1] * (1.0 - 1.0 / (2.0 * k))
    return coefficients


def banded_toeplitz(coefficients: Sequence[float], n: int) -> EncoderMatrix:
    """
    Lower-triangular Toeplitz encoder with C[i, j] = coefficients[i - j]

    Args:
        coefficients (Sequence[float]): Diagonal values, main diagonal first
        n (int): Matrix size

    Returns:
        EncoderMatrix: n x n matrix, zero beyond len(coefficients) - 1 sub-diagonals
    """
    if n < 1:
        raise ValueError(f"matrix size must be positive, got {n}")
    coefficients = np.asarray(coefficients, dtype=np.float64)
    entries = np.zeros((n, n))
    for offset, value in enumerate(coefficients[:n]):
        entries += np.diag(np.full(n - offset, value), k=-offset)
    return EncoderMatrix(entries)


def prefix_opt(n: int) -> EncoderMatrix:
    """Optimal continual-counting Toeplitz encoder"""
    if n < 1:
        raise ValueError(f"matrix size must be positive, got {n}")
    return banded_toeplitz(prefix_opt_coefficients(n), n)


def tree_restart(n: int, h: int) -> EncoderMatrix:
    """
    Block-diagonal stack of height-h binary trees restarted every 2^(h-1) steps

    Args:
        n (int): Number of steps, divisible by 2^(h-1)
        h (int): Tree height, at least 1

    Returns:
        EncoderMatrix: n / 2^(h-1) diagonal blocks of binary_tree(2^(h-1))
    """
    if h < 1:
        raise ValueError(f"tree height must be at least 1, got {h}")
    leaves = 2 ** (h - 1)
    if n < 1 or n % leaves:
        raise DivisibilityError(f"{leaves} leaves per tree do not divide n={n}")

    block = binary_tree(leaves).entries
    blocks = n // leaves
    entries = np.zeros((blocks * block.shape[0], n))
    for index in range(blocks):
        entries[index * block.shape[0]:(index + 1) * block.shape[0], index * leaves:(index + 1) * leaves] = block
    return EncoderMatrix(entries)


def identity(n: int) -> EncoderMatrix:
    if n < 1:
        raise ValueError(f"matrix size must be positive, got {n}")
    return EncoderMatrix(np.eye(n))


def load_csv(path: PathLike) -> EncoderMatrix:
    """
    Read a header-less, comma-separated matrix

    Args:
        path (PathLike): CSV file, one matrix row per line

    Returns:
        EncoderMatrix: Parsed matrix
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    except pd.errors.EmptyDataError:
        raise MatrixParseError(f"{path}: no matrix rows found")
    except pd.errors.ParserError as e:
        match = re.search(r"Expected (\d+) fields in line (\d+), saw (\d+)", str(e))
        if not match:
            raise MatrixParseError(f"{path}: {str(e)}")
        expected, line_number, found = (int(group) for group in match.groups())
        raise MatrixParseError(
            f"{path}: expected {expected} columns, found {found}", line_number, expected + 1
        )

    raw = frame.apply(lambda column: column.str.strip())
    values = raw.apply(pd.to_numeric, errors='coerce')
    bad = values.isna().to_numpy()
    if bad.any():
        row, column = (int(index) for index in np.argwhere(bad)[0])
        cell = raw.iat[row, column]
        if pd.isna(cell) or cell == "":
            found = int(raw.iloc[row].notna().sum())
            raise MatrixParseError(f"{path}: expected {frame.shape[1]} columns, found {found}", row + 1, column + 1)
        raise MatrixParseError(f"{path}: not a number: {cell!r}", row + 1, column + 1)

    entries = values.to_numpy(dtype=np.float64)
    negative = np.argwhere(entries < 0)
    if negative.size:
        row, column = (int(index) for index in negative[0])
        raise NegativeEntryError(
            f"{path}: negative entry {entries[row, column]!r} at row {row + 1}, column {column + 1}"
        )

    logger.debug("Loaded %dx%d matrix from %s", entries.shape[0], entries.shape[1], path)
    return EncoderMatrix(entries)


def save_csv(matrix: EncoderMatrix, path: PathLike):
    """Write the matrix with round-trip float formatting"""
    with Path(path).open('w', newline='') as handle:
        write_csv(matrix, handle)


def write_csv(matrix: EncoderMatrix, handle):
    pd.DataFrame(matrix.entries).to_csv(handle, header=False, index=False, float_format='%.17g', lineterminator='\n')
