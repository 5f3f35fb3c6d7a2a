"""Dense matrices, block partitions of the inner dimension, norms, and I/O.

Matrices are plain float64 NumPy arrays in row-major (C) order, validated
once at construction time by :func:`as_matrix`.  Block views are NumPy
slices, i.e. (offset, stride) windows into the parent buffer -- building a
sampling plan never copies the factor matrices.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_BINARY_HEADER = struct.Struct("<QQ")  # rows, cols as little-endian uint64


def as_matrix(values) -> np.ndarray:
    """Validate and return a 2-D float64 C-order matrix.

    Rejects non-2-D input and any NaN/Inf entry: probability normalization
    downstream would silently corrupt otherwise.
    """
    a = np.ascontiguousarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if not np.isfinite(a).all():
        raise ValueError("matrix contains NaN or Inf entries")
    return a


@dataclass(frozen=True)
class BlockPartition:
    """Split of the shared inner dimension n into K contiguous blocks."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.sizes) < 1:
            raise ValueError("partition needs at least one block")
        sizes = tuple(int(s) for s in self.sizes)
        if any(s < 1 for s in sizes):
            raise ValueError(f"every block size must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def equal(cls, n: int, num_blocks: int) -> "BlockPartition":
        """Equal-sized partition; requires n divisible by num_blocks."""
        if num_blocks < 1 or n % num_blocks != 0:
            raise ValueError(f"n={n} is not divisible into {num_blocks} equal blocks")
        return cls((n // num_blocks,) * num_blocks)

    @property
    def num_blocks(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        """Prefix sums: offsets[k] is where block k starts, offsets[K] == n."""
        return np.concatenate(([0], np.cumsum(self.sizes)))

    def block_slice(self, k: int) -> slice:
        if not 0 <= k < self.num_blocks:
            raise IndexError(f"block index {k} out of range for K={self.num_blocks}")
        off = self.offsets
        return slice(int(off[k]), int(off[k + 1]))

    def check_length(self, length: int, what: str = "axis") -> None:
        if self.total != length:
            raise ValueError(
                f"partition covers {self.total} indices but {what} has length {length}"
            )


def block_view(M: np.ndarray, part: BlockPartition, k: int, axis: str = "columns") -> np.ndarray:
    """Return block k of M as a NumPy view (no copy).

    axis="columns" slices columns (left factor); axis="rows" slices rows
    (right factor).  Concatenating all K views reconstructs M.
    """
    sl = part.block_slice(k)
    if axis == "columns":
        part.check_length(M.shape[1], "column axis")
        return M[:, sl]
    if axis == "rows":
        part.check_length(M.shape[0], "row axis")
        return M[sl, :]
    raise ValueError(f"axis must be 'columns' or 'rows', got {axis!r}")


def multiply_exact(M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Exact product MN (ground-truth oracle for the randomized estimators)."""
    if M.ndim != 2 or N.ndim != 2:
        raise ValueError("both factors must be 2-D")
    if M.shape[1] != N.shape[0]:
        raise ValueError(f"inner dimensions differ: {M.shape} x {N.shape}")
    return M @ N


def column_norms(M: np.ndarray) -> np.ndarray:
    """Euclidean norm of each column."""
    return np.linalg.norm(M, axis=0)


def row_norms(N: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row."""
    return np.linalg.norm(N, axis=1)


def frobenius_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M))


def save_matrix(path, M: np.ndarray) -> None:
    """Write a matrix in the binary layout: uint64-LE rows, cols, then
    row-major float64-LE payload."""
    a = as_matrix(M)
    with open(path, "wb") as f:
        f.write(_BINARY_HEADER.pack(a.shape[0], a.shape[1]))
        f.write(a.astype("<f8", copy=False).tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _BINARY_HEADER.size:
        raise ValueError(f"{path}: truncated header")
    rows, cols = _BINARY_HEADER.unpack_from(raw)
    expected = _BINARY_HEADER.size + rows * cols * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f8", offset=_BINARY_HEADER.size)
    return as_matrix(payload.reshape(rows, cols))


def save_matrix_csv(path, M: np.ndarray) -> None:
    """CSV writer for small fixtures; one row per line, repr-precision floats."""
    a = as_matrix(M)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in a:
            writer.writerow(f"{x:.17g}" for x in row)


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as f:
        rows = [[float(x) for x in line] for line in csv.reader(f) if line]
    if not rows:
        raise ValueError(f"{path}: empty CSV matrix")
    return as_matrix(np.array(rows))
