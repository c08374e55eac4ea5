"""Minimal CSR sparse kernel: construction, products, symmetric normalization.

All values are 64-bit floats and all operations are pure functions returning
new matrices. The sparse-dense product dispatches to a compiled extension
when it was built, and to a pure-numpy fallback otherwise; both accumulate
row contributions in storage order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _csr_fallback
from .errors import StructuralError

try:
    from . import _csr_kernel
except ImportError:
    _csr_kernel = None

HAVE_COMPILED_KERNEL = _csr_kernel is not None

_active_spmm = _csr_kernel.csr_spmm if HAVE_COMPILED_KERNEL else _csr_fallback.csr_spmm


def set_backend(name: str) -> None:
    """Select the spmm kernel: "auto", "compiled" or "python".

    Intended for tests and benchmarks; the default ("auto") prefers the
    compiled kernel when present.
    """
    global _active_spmm
    if name == "python":
        _active_spmm = _csr_fallback.csr_spmm
    elif name == "compiled":
        if not HAVE_COMPILED_KERNEL:
            raise StructuralError("compiled CSR kernel is not available")
        _active_spmm = _csr_kernel.csr_spmm
    elif name == "auto":
        _active_spmm = _csr_kernel.csr_spmm if HAVE_COMPILED_KERNEL else _csr_fallback.csr_spmm
    else:
        raise StructuralError(f"unknown kernel backend {name!r}")


def active_backend() -> str:
    return "compiled" if HAVE_COMPILED_KERNEL and _active_spmm is _csr_kernel.csr_spmm else "python"


@dataclass(frozen=True)
class CsrMatrix:
    """Canonical CSR matrix: strictly increasing column indices per row."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray  # int64, length n_rows + 1
    col_indices: np.ndarray  # int64, length nnz
    values: np.ndarray       # float64, length nnz

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(
            np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets)
        )

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols))
        if self.nnz:
            dense[self.row_ids(), self.col_indices] = self.values
        return dense

    def check_canonical(self) -> None:
        """Raise StructuralError if any CSR invariant is violated."""
        off = self.row_offsets
        if off.shape != (self.n_rows + 1,) or off[0] != 0 or off[-1] != len(self.col_indices):
            raise StructuralError("row_offsets inconsistent with stored entries")
        if np.any(np.diff(off) < 0):
            raise StructuralError("row_offsets must be nondecreasing")
        if len(self.values) != len(self.col_indices):
            raise StructuralError("values and col_indices length mismatch")
        if self.nnz:
            if self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols:
                raise StructuralError("column index out of range")
            # strictly increasing columns within each row: check consecutive
            # entry pairs, ignoring pairs that straddle a row boundary
            d = np.diff(self.col_indices)
            if d.size:
                same_row = np.ones(d.size, dtype=bool)
                ends = off[1:-1] - 1
                same_row[ends[(ends >= 0) & (ends < d.size)]] = False
                if np.any(d[same_row] <= 0):
                    raise StructuralError("columns not strictly increasing within a row")


def from_arrays(n_rows, n_cols, rows, cols, vals) -> CsrMatrix:
    """Build a canonical CSR matrix from unordered COO arrays.

    Same contract as from_coo; array form avoids per-entry Python objects on
    large graphs.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if not (rows.shape == cols.shape == vals.shape) or rows.ndim != 1:
        raise StructuralError("COO arrays must be 1-D and of equal length")
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows:
            raise StructuralError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise StructuralError("column index out of range")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size > 1:
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if np.any(dup):
            k = int(np.flatnonzero(dup)[0])
            raise StructuralError(f"duplicate entry at ({rows[k]}, {cols[k]})")
    offsets = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
    return CsrMatrix(int(n_rows), int(n_cols), offsets, cols, vals)


def from_coo(n_rows, n_cols, entries) -> CsrMatrix:
    """Build a canonical CSR matrix from (row, col, value) triples.

    Duplicate coordinates are rejected: in interaction data they indicate an
    upstream dedup bug, not something to sum away.
    """
    if n_rows < 0 or n_cols < 0:
        raise StructuralError("matrix dimensions must be nonnegative")
    entries = list(entries)
    if not entries:
        return CsrMatrix(
            int(n_rows),
            int(n_cols),
            np.zeros(n_rows + 1, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
        )
    rows, cols, vals = zip(*entries)
    return from_arrays(n_rows, n_cols, rows, cols, vals)


def spmm(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse-dense product a @ x with exact dense-equivalent semantics."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise StructuralError("spmm expects a 2-D dense operand")
    if x.shape[0] != a.n_cols:
        raise StructuralError(
            f"dimension mismatch: CSR has {a.n_cols} columns, dense has {x.shape[0]} rows"
        )
    out = np.zeros((a.n_rows, x.shape[1]))
    _active_spmm(a.row_offsets, a.col_indices, a.values, x, out)
    return out


def transpose(a: CsrMatrix) -> CsrMatrix:
    """Transpose with canonical output ordering."""
    if a.nnz == 0:
        return CsrMatrix(
            a.n_cols, a.n_rows,
            np.zeros(a.n_cols + 1, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0),
        )
    row_ids = a.row_ids()
    # stable sort by column groups entries per output row, ordered by old row
    order = np.argsort(a.col_indices, kind="stable")
    offsets = np.zeros(a.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(a.col_indices, minlength=a.n_cols), out=offsets[1:])
    return CsrMatrix(a.n_cols, a.n_rows, offsets, row_ids[order], a.values[order])


def normalize_sym(a: CsrMatrix) -> CsrMatrix:
    """Symmetric degree normalization D^(-1/2) A D^(-1/2).

    Degrees are row sums. Zero-degree rows and columns yield zero entries
    instead of raising: edge-dropped views can isolate nodes transiently.
    """
    if a.n_rows != a.n_cols:
        raise StructuralError("normalize_sym requires a square matrix")
    if a.nnz and a.values.min() < 0:
        raise StructuralError("normalize_sym requires nonnegative values")
    deg = np.bincount(a.row_ids(), weights=a.values, minlength=a.n_rows)
    inv_sqrt = np.zeros(a.n_rows)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    # scale factor computed first keeps the output exactly symmetric:
    # inv[i]*inv[j] is commutative, so entries (i,j) and (j,i) match bitwise
    scale = inv_sqrt[a.row_ids()] * inv_sqrt[a.col_indices]
    return CsrMatrix(a.n_rows, a.n_cols, a.row_offsets.copy(), a.col_indices.copy(), a.values * scale)
