import numpy as np
import pytest

from graphcf import sparse
from graphcf.errors import StructuralError
from graphcf.sparse import from_arrays, from_coo, normalize_sym, spmm, transpose


def random_csr(n_rows, n_cols, density, rng):
    dense = rng.random((n_rows, n_cols)) * (rng.random((n_rows, n_cols)) < density)
    entries = [(r, c, dense[r, c]) for r in range(n_rows) for c in range(n_cols) if dense[r, c]]
    return from_coo(n_rows, n_cols, entries), dense


class TestFromCoo:
    def test_empty(self):
        a = from_coo(2, 2, [])
        assert a.nnz == 0
        assert np.array_equal(a.to_dense(), np.zeros((2, 2)))
        a.check_canonical()

    def test_permutation(self):
        a = from_coo(2, 2, [(0, 1, 1.0), (1, 0, 1.0)])
        assert np.array_equal(a.to_dense(), [[0, 1], [1, 0]])

    def test_matches_dense_construction(self):
        a = from_coo(2, 3, [(0, 0, 2.0), (0, 2, 3.0), (1, 1, 1.0)])
        assert np.array_equal(a.to_dense(), [[2, 0, 3], [0, 1, 0]])
        a.check_canonical()

    def test_unsorted_input_is_canonicalized(self):
        a = from_coo(2, 3, [(1, 1, 1.0), (0, 2, 3.0), (0, 0, 2.0)])
        assert np.array_equal(a.to_dense(), [[2, 0, 3], [0, 1, 0]])
        a.check_canonical()

    def test_duplicate_entry_rejected(self):
        with pytest.raises(StructuralError, match="duplicate"):
            from_coo(2, 2, [(0, 1, 1.0), (0, 1, 2.0)])

    @pytest.mark.parametrize("entry", [(2, 0, 1.0), (0, 2, 1.0), (-1, 0, 1.0), (0, -1, 1.0)])
    def test_out_of_range_rejected(self, entry):
        with pytest.raises(StructuralError, match="out of range"):
            from_coo(2, 2, [entry])


class TestSpmm:
    def test_identity(self):
        eye = from_coo(3, 3, [(i, i, 1.0) for i in range(3)])
        x = np.random.default_rng(0).random((3, 5))
        assert np.array_equal(spmm(eye, x), x)

    def test_zero_matrix(self):
        a = from_coo(3, 4, [])
        x = np.ones((4, 2))
        assert np.array_equal(spmm(a, x), np.zeros((3, 2)))

    def test_dense_oracle_example(self):
        rng = np.random.default_rng(42)
        a, dense = random_csr(6, 6, 0.3, rng)
        x = rng.random((6, 4))
        assert np.abs(spmm(a, x) - dense @ x).max() <= 1e-12

    def test_dense_oracle_random_sizes(self):
        rng = np.random.default_rng(7)
        for trial in range(25):
            n = int(rng.integers(1, 51))
            m = int(rng.integers(1, 51))
            d = int(rng.integers(1, 6))
            a, dense = random_csr(n, m, float(rng.uniform(0.05, 0.5)), rng)
            x = rng.standard_normal((m, d))
            assert np.abs(spmm(a, x) - dense @ x).max() <= 1e-12

    def test_dimension_mismatch(self):
        a = from_coo(2, 3, [(0, 0, 1.0)])
        with pytest.raises(StructuralError, match="mismatch"):
            spmm(a, np.ones((2, 2)))

    def test_backends_agree_to_rounding(self):
        # accumulation order differs between the kernels, so agreement is to
        # rounding, not bitwise; each backend is deterministic on its own
        if not sparse.HAVE_COMPILED_KERNEL:
            pytest.skip("compiled kernel not built")
        rng = np.random.default_rng(3)
        a, _ = random_csr(40, 30, 0.2, rng)
        x = rng.standard_normal((30, 8))
        try:
            sparse.set_backend("python")
            y_py = spmm(a, x)
            y_py_again = spmm(a, x)
            sparse.set_backend("compiled")
            y_cy = spmm(a, x)
        finally:
            sparse.set_backend("auto")
        assert np.array_equal(y_py, y_py_again)
        assert np.allclose(y_py, y_cy, rtol=1e-12, atol=1e-14)

    def test_python_fallback_matches_dense(self):
        rng = np.random.default_rng(11)
        a, dense = random_csr(20, 20, 0.3, rng)
        x = rng.standard_normal((20, 3))
        try:
            sparse.set_backend("python")
            y = spmm(a, x)
        finally:
            sparse.set_backend("auto")
        assert np.abs(y - dense @ x).max() <= 1e-12


class TestNormalizeSym:
    def test_single_edge_unit_degrees(self):
        a = from_coo(2, 2, [(0, 1, 1.0), (1, 0, 1.0)])
        out = normalize_sym(a)
        assert np.array_equal(out.to_dense(), [[0, 1], [1, 0]])

    def test_star(self):
        # u0 linked to i0 and i1: user degree 2, item degrees 1
        a = from_coo(3, 3, [(0, 1, 1.0), (0, 2, 1.0), (1, 0, 1.0), (2, 0, 1.0)])
        out = normalize_sym(a).to_dense()
        w = 1.0 / np.sqrt(2.0)
        assert out[0, 1] == pytest.approx(w, abs=1e-15)
        assert out[0, 2] == pytest.approx(w, abs=1e-15)
        assert np.allclose(out, out.T)

    def test_isolated_node_yields_zero_row_and_col(self):
        a = from_coo(3, 3, [(0, 1, 1.0), (1, 0, 1.0)])
        out = normalize_sym(a).to_dense()
        assert np.array_equal(out[2], np.zeros(3))
        assert np.array_equal(out[:, 2], np.zeros(3))

    def test_symmetry_exact(self):
        rng = np.random.default_rng(5)
        n = 12
        upper = [(r, c, float(rng.uniform(0.5, 2.0)))
                 for r in range(n) for c in range(r + 1, n) if rng.random() < 0.3]
        entries = upper + [(c, r, v) for r, c, v in upper]
        out = normalize_sym(from_coo(n, n, entries)).to_dense()
        assert np.array_equal(out, out.T)

    def test_pattern_preserved_for_positive_values(self):
        rng = np.random.default_rng(6)
        n = 10
        upper = [(r, c, float(rng.uniform(0.5, 2.0)))
                 for r in range(n) for c in range(r + 1, n) if rng.random() < 0.4]
        a = from_coo(n, n, upper + [(c, r, v) for r, c, v in upper])
        out = normalize_sym(a)
        assert np.array_equal(out.to_dense() != 0, a.to_dense() != 0)
        out.check_canonical()

    def test_negative_value_rejected(self):
        a = from_coo(2, 2, [(0, 1, -1.0), (1, 0, -1.0)])
        with pytest.raises(StructuralError, match="nonnegative"):
            normalize_sym(a)

    def test_non_square_rejected(self):
        with pytest.raises(StructuralError, match="square"):
            normalize_sym(from_coo(2, 3, []))


class TestTranspose:
    def test_symmetric_fixed_point(self):
        a = from_coo(3, 3, [(0, 1, 2.0), (1, 0, 2.0), (2, 2, 1.0)])
        t = transpose(a)
        assert np.array_equal(t.to_dense(), a.to_dense())

    def test_rectangular_example(self):
        a = from_coo(2, 3, [(0, 0, 2.0), (0, 2, 3.0), (1, 1, 1.0)])
        t = transpose(a)
        assert t.shape == (3, 2)
        assert np.array_equal(t.to_dense(), [[2, 0], [0, 1], [3, 0]])
        t.check_canonical()

    def test_empty(self):
        t = transpose(from_coo(2, 5, []))
        assert t.shape == (5, 2)
        assert t.nnz == 0

    def test_involution(self):
        rng = np.random.default_rng(9)
        a, dense = random_csr(7, 11, 0.3, rng)
        tt = transpose(transpose(a))
        assert np.array_equal(tt.to_dense(), dense)
        assert np.array_equal(tt.row_offsets, a.row_offsets)
        assert np.array_equal(tt.col_indices, a.col_indices)
        assert np.array_equal(tt.values, a.values)


def test_canonical_invariants_after_every_operation():
    rng = np.random.default_rng(13)
    a, _ = random_csr(9, 9, 0.25, rng)
    sym_entries = [(r, c, 1.0) for r in range(9) for c in range(9) if r != c and rng.random() < 0.2]
    sym_entries = list({(min(r, c), max(r, c)) for r, c, _ in sym_entries})
    sym = from_coo(9, 9, [(r, c, 1.0) for r, c in sym_entries] + [(c, r, 1.0) for r, c in sym_entries])
    for mat in (a, transpose(a), sym, normalize_sym(sym)):
        mat.check_canonical()


def test_from_arrays_matches_from_coo():
    rows = [0, 1, 0]
    cols = [2, 1, 0]
    vals = [3.0, 1.0, 2.0]
    a = from_arrays(2, 3, rows, cols, vals)
    b = from_coo(2, 3, list(zip(rows, cols, vals)))
    assert np.array_equal(a.to_dense(), b.to_dense())
