import numpy as np
import pytest

from sponet.sparse import CsrMatrix


def test_from_coo_sums_duplicates_and_sorts():
    m = CsrMatrix.from_coo([0, 0, 1, 0], [2, 0, 1, 2], [1.0, 2.0, 3.0, 4.0], (2, 3))
    assert np.array_equal(m.toarray(), [[2, 0, 5], [0, 3, 0]])
    assert np.array_equal(m.row_offsets, [0, 2, 3])
    assert np.array_equal(m.col_indices, [0, 2, 1])


def test_matvec_against_dense(rng):
    d = rng.standard_normal((5, 5)) * (rng.random((5, 5)) < 0.4)
    r, c = np.nonzero(d)
    m = CsrMatrix.from_coo(r, c, d[r, c], (5, 5))
    x = rng.standard_normal(5)
    assert np.abs(m.matvec(x) - d @ x).max() <= 1e-14
    xb = rng.standard_normal((3, 5, 2))
    assert np.abs(m.apply_batched(xb) - np.einsum("ij,bjc->bic", d, xb)).max() <= 1e-14
    assert np.allclose(m.T.toarray(), d.T)
    with pytest.raises(ValueError):
        m.matvec(np.ones(4))


def test_identity():
    x = np.arange(4.0)
    assert np.array_equal(CsrMatrix.identity(4).matvec(x), x)
    assert np.array_equal(CsrMatrix.identity(4).matvec(np.zeros(4)), np.zeros(4))
