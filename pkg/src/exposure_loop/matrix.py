"""行压缩的用户 × 曲目播放次数矩阵"""
from __future__ import annotations

import struct
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.sparse as sp

from exposure_loop.errors import MatrixError, SnapshotError
from exposure_loop.snapshot import SnapshotReader, header

MATRIX_MAGIC = b"EXLM"

ListenWeight = Literal["binary", "plays"]


@dataclass
class SparseInteractionMatrix:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def row(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        """第 u 行的 (列下标, 计数) 视图"""
        start, end = self.row_offsets[u], self.row_offsets[u + 1]
        return self.col_indices[start:end], self.values[start:end]

    def total(self) -> int:
        return int(self.values.sum())

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.n_rows, self.n_cols),
        )

    @classmethod
    def from_scipy(cls, csr: sp.spmatrix) -> SparseInteractionMatrix:
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.sort_indices()
        n_rows, n_cols = csr.shape
        return cls(
            n_rows=int(n_rows),
            n_cols=int(n_cols),
            row_offsets=np.asarray(csr.indptr, dtype=np.int64),
            col_indices=np.asarray(csr.indices, dtype=np.int64),
            values=np.asarray(csr.data, dtype=np.int64),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparseInteractionMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )


def _as_pair_array(pairs: Sequence[tuple[int, int]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise MatrixError(f"pairs must have shape (n, 2), got {arr.shape}")
    return arr


def _check_range(rows: np.ndarray, cols: np.ndarray, n_rows: int, n_cols: int) -> None:
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise MatrixError(
            f"pair ({int(rows[k])}, {int(cols[k])}) out of range for {n_rows}x{n_cols} matrix"
        )


def _check_unique(rows: np.ndarray, cols: np.ndarray, n_cols: int) -> None:
    linear = rows * max(n_cols, 1) + cols
    uniq, counts = np.unique(linear, return_counts=True)
    if (counts > 1).any():
        dup = int(uniq[np.flatnonzero(counts > 1)[0]])
        raise MatrixError(f"duplicate pair ({dup // max(n_cols, 1)}, {dup % max(n_cols, 1)})")


def from_triplets(
    triplets: Sequence[tuple[int, int, int]] | np.ndarray,
    n_rows: int,
    n_cols: int,
) -> SparseInteractionMatrix:
    if n_rows < 0 or n_cols < 0:
        raise MatrixError(f"negative dimensions {n_rows}x{n_cols}")
    arr = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    rows, cols, vals = arr[:, 0], arr[:, 1], arr[:, 2]
    _check_range(rows, cols, n_rows, n_cols)
    _check_unique(rows, cols, n_cols)
    if (vals < 1).any():
        raise MatrixError("counts must be >= 1")
    coo = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols), dtype=np.int64)
    return SparseInteractionMatrix.from_scipy(coo.tocsr())


def to_triplets(m: SparseInteractionMatrix) -> np.ndarray:
    """(row, col, count) 数组，按行再按列排序"""
    rows = np.repeat(np.arange(m.n_rows, dtype=np.int64), np.diff(m.row_offsets))
    return np.column_stack([rows, m.col_indices, m.values])


def to_dense(m: SparseInteractionMatrix) -> np.ndarray:
    return m.to_scipy().toarray()


def transpose(m: SparseInteractionMatrix) -> SparseInteractionMatrix:
    return SparseInteractionMatrix.from_scipy(m.to_scipy().transpose().tocsr())


def increment(
    m: SparseInteractionMatrix,
    pairs: Sequence[tuple[int, int]] | np.ndarray,
    delta: int = 1,
) -> SparseInteractionMatrix:
    """给每个 (row, col) 加 delta；不在稀疏结构里的位置插入新元素

    整批插入，每次调用只重建一次行结构。
    """
    if delta < 1:
        raise MatrixError(f"delta must be >= 1, got {delta}")
    arr = _as_pair_array(pairs)
    if len(arr) == 0:
        return SparseInteractionMatrix.from_scipy(m.to_scipy().copy())
    rows, cols = arr[:, 0], arr[:, 1]
    _check_range(rows, cols, m.n_rows, m.n_cols)
    _check_unique(rows, cols, m.n_cols)
    bump = sp.coo_matrix(
        (np.full(len(arr), delta, dtype=np.int64), (rows, cols)),
        shape=m.shape,
        dtype=np.int64,
    ).tocsr()
    return SparseInteractionMatrix.from_scipy(m.to_scipy() + bump)


def validate(m: SparseInteractionMatrix) -> None:
    """检查结构不变量，不满足时抛 MatrixError"""
    offsets = m.row_offsets
    if len(offsets) != m.n_rows + 1:
        raise MatrixError(f"row_offsets has length {len(offsets)}, expected {m.n_rows + 1}")
    if offsets[0] != 0:
        raise MatrixError("row_offsets[0] must be 0")
    if (np.diff(offsets) < 0).any():
        raise MatrixError("row_offsets must be non-decreasing")
    nnz = int(offsets[-1])
    if len(m.col_indices) != nnz or len(m.values) != nnz:
        raise MatrixError(f"array lengths do not match nnz={nnz}")
    if nnz and ((m.col_indices < 0).any() or (m.col_indices >= m.n_cols).any()):
        raise MatrixError("column index out of range")
    if (m.values < 1).any():
        raise MatrixError("all stored values must be >= 1")
    rows = np.repeat(np.arange(m.n_rows), np.diff(offsets))
    same_row = rows[1:] == rows[:-1]
    bad = same_row & (np.diff(m.col_indices) <= 0)
    if bad.any():
        raise MatrixError(f"row {int(rows[np.flatnonzero(bad)[0]])}: column indices not strictly increasing")


def item_popularity(m: SparseInteractionMatrix, weight: ListenWeight = "binary") -> np.ndarray:
    """每首曲目的收听量：binary 计不同用户数，plays 计播放次数"""
    if weight == "binary":
        return np.bincount(m.col_indices, minlength=m.n_cols).astype(np.int64)
    if weight == "plays":
        return np.bincount(m.col_indices, weights=m.values, minlength=m.n_cols).astype(np.int64)
    raise MatrixError(f"unknown weight mode {weight!r}")


def save_matrix(m: SparseInteractionMatrix, path: str | Path) -> None:
    blob = b"".join([
        header(MATRIX_MAGIC),
        struct.pack("<qqq", m.n_rows, m.n_cols, m.nnz),
        m.row_offsets.astype("<i8").tobytes(),
        m.col_indices.astype("<i8").tobytes(),
        m.values.astype("<i8").tobytes(),
    ])
    Path(path).write_bytes(blob)


def load_matrix(path: str | Path) -> SparseInteractionMatrix:
    reader = SnapshotReader(Path(path).read_bytes(), MATRIX_MAGIC, str(path))
    n_rows, n_cols, nnz = reader.unpack("<qqq")
    offsets = reader.array("<i8", n_rows + 1)
    cols = reader.array("<i8", nnz)
    vals = reader.array("<i8", nnz)
    reader.finish()
    m = SparseInteractionMatrix(
        n_rows, n_cols,
        offsets.astype(np.int64), cols.astype(np.int64), vals.astype(np.int64),
    )
    try:
        validate(m)
    except MatrixError as e:
        raise SnapshotError(f"{path}: {e}") from e
    return m
