"""Compressed-row sparse matrices.

Storage follows the usual CSR layout; products are delegated to
:mod:`scipy.sparse`, which is built once per matrix and cached.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.sparse as sp


class CsrMatrix:
    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.asarray(row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(col_indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        if len(self.row_offsets) != self.n_rows + 1:
            raise ValueError("row_offsets must have n_rows + 1 entries")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be monotone")

    @classmethod
    def from_coo(cls, rows, cols, values, shape, drop_below=None) -> "CsrMatrix":
        """Compress coordinate triplets, summing duplicates.

        Structural zeros are kept unless ``drop_below`` is given, in which
        case entries with ``|v| <= drop_below`` are removed.
        """
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        if drop_below is not None:
            m.data[np.abs(m.data) <= drop_below] = 0.0
            m.eliminate_zeros()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_scipy(cls, m) -> "CsrMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n)
        return cls(n, n, np.arange(n + 1), idx, np.ones(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    @cached_property
    def scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )

    @cached_property
    def T(self) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self.scipy.T.tocsr())

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), self.row_nnz())

    def toarray(self) -> np.ndarray:
        return self.scipy.toarray()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``A @ x`` for ``x`` of shape ``(n,)`` or ``(n, c)``; use
        :meth:`apply_batched` for ``(batch, n, c)`` stacks."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.n_cols:
            raise ValueError(f"dimension mismatch: matrix has {self.n_cols} columns, vector {x.shape[0]} rows")
        return self.scipy @ x

    def apply_batched(self, x: np.ndarray) -> np.ndarray:
        """Apply to every sample of a ``(batch, n, channels)`` array."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.n_cols:
            raise ValueError(
                f"expected (batch, {self.n_cols}, channels), got {x.shape}"
            )
        b, n, c = x.shape
        flat = np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(n, b * c)
        out = self.scipy @ flat
        return np.ascontiguousarray(out.reshape(self.n_rows, b, c).transpose(1, 0, 2))

    def __matmul__(self, other):
        if isinstance(other, CsrMatrix):
            return CsrMatrix.from_scipy(self.scipy @ other.scipy)
        return self.matvec(other)

    def __repr__(self) -> str:
        return f"CsrMatrix(shape={self.shape}, nnz={self.nnz})"
