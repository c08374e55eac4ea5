"""Pure-numpy CSR kernel, used when the compiled extension is unavailable.

Row contributions are reduced with np.add.reduceat, whose blocked summation
can differ from the compiled kernel's sequential order by rounding (~1 ulp);
each backend is individually deterministic.
"""

import numpy as np


def csr_spmm(row_offsets, col_indices, values, x, out):
    """Accumulate a CSR(n_rows x n_cols) times dense(n_cols x d) product into out."""
    if col_indices.size == 0:
        return
    contrib = values[:, None] * x[col_indices]
    nonempty = np.flatnonzero(np.diff(row_offsets) > 0)
    out[nonempty] += np.add.reduceat(contrib, row_offsets[nonempty], axis=0)
