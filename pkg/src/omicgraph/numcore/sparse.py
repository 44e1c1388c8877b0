"""Compressed-sparse-row matrix used for graph propagation operators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionError, NumericalError


@dataclass(eq=False)
class SparseMatrix:
    """CSR matrix with sorted, duplicate-free column indices per row.

    ``values`` may be replaced per call of :func:`~omicgraph.numcore.ops.spmm`
    (e.g. attention coefficients) as long as the sparsity pattern is reused.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _scipy: sp.csr_matrix | None = field(default=None, repr=False)
    _rows: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.validate()

    def validate(self) -> None:
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.n_rows + 1,) or ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise DimensionError("row_offsets must be nondecreasing with length n_rows + 1")
        if ro[-1] != ci.size or ci.size != self.values.size:
            raise DimensionError("col_indices/values length must equal row_offsets[-1]")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise DimensionError("column index out of range")
        if ci.size > 1:
            same_row = np.diff(self.rows) == 0
            if np.any(np.diff(ci)[same_row] <= 0):
                raise DimensionError("column indices must be strictly increasing within a row")
        if not np.isfinite(self.values).all():
            raise NumericalError("sparse values must be finite")

    @property
    def nnz(self) -> int:
        return int(self.col_indices.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def rows(self) -> np.ndarray:
        """Row index of every stored entry, aligned with ``col_indices``."""
        if self._rows is None:
            self._rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        return self._rows

    @classmethod
    def from_coo(cls, rows, cols, values, shape) -> "SparseMatrix":
        """Build from triplets; duplicate coordinates are summed."""
        m = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        ).tocsr()
        m.sum_duplicates()
        m.sort_indices()
        return cls(shape[0], shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=np.float64)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    def with_values(self, values) -> "SparseMatrix":
        """Same pattern, new values."""
        out = SparseMatrix.__new__(SparseMatrix)
        out.n_rows, out.n_cols = self.n_rows, self.n_cols
        out.row_offsets, out.col_indices = self.row_offsets, self.col_indices
        out.values = np.asarray(values, dtype=np.float64)
        if out.values.shape != self.values.shape:
            raise DimensionError("replacement values must match the sparsity pattern")
        out._scipy = None
        out._rows = self._rows
        return out

    def to_scipy(self) -> sp.csr_matrix:
        if self._scipy is None:
            self._scipy = sp.csr_matrix(
                (self.values, self.col_indices, self.row_offsets), shape=self.shape
            )
        return self._scipy

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.col_indices] = self.values
        return out

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_coo(self.col_indices, self.rows, self.values, (self.n_cols, self.n_rows))


def densify(s: SparseMatrix) -> np.ndarray:
    return s.to_dense()
