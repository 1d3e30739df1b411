import math

import numpy as np
import pytest
import scipy.sparse as sps
from hypothesis import given
from hypothesis import strategies as st

from psketch.errors import DomainError, ParseError
from psketch.numcore import (
    PNorm,
    RngStream,
    SparseMatrix,
    as_dense,
    derive_seed,
    io_matrix,
    lp_norm,
    norm_sandwich_check,
    read_matrix,
    spmm_apply,
    uniform_open,
    write_matrix,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
ps = st.floats(1.0, 2.0)


def random_sparse(rng, rows, cols, density):
    M = sps.random(rows, cols, density=density, random_state=rng, format="csc")
    return SparseMatrix.from_scipy(M)


# -- lp_norm -----------------------------------------------------------------

def test_lp_norm_examples():
    assert lp_norm([3, 4], 2) == 5.0
    assert lp_norm([1, -1, 1], 1) == 3.0
    assert lp_norm([2, 2], 1.5) == pytest.approx((2 * 2**1.5) ** (2 / 3), rel=1e-14)
    assert lp_norm([2, 2], 1.5) == pytest.approx(3.1748021, abs=1e-7)
    assert lp_norm(np.zeros(5), 1.3) == 0.0
    assert lp_norm([1, -7, 2], math.inf) == 7.0


def test_lp_norm_accepts_pnorm_and_axis():
    A = np.array([[3.0, 1.0], [4.0, -1.0]])
    np.testing.assert_allclose(lp_norm(A, PNorm(2.0), axis=0), [5.0, math.sqrt(2)])
    np.testing.assert_allclose(lp_norm(A, 1, axis=1), [4.0, 5.0])


def test_lp_norm_rejects_non_finite():
    with pytest.raises(DomainError):
        lp_norm([1.0, np.nan], 1)
    with pytest.raises(DomainError):
        lp_norm([np.inf], 2)


def test_lp_norm_no_overflow():
    assert lp_norm([1e300, 1e300], 1.5) == pytest.approx(1e300 * 2 ** (1 / 1.5))


@given(st.lists(finite, min_size=1, max_size=30), finite, ps)
def test_lp_norm_homogeneous(v, c, p):
    assert lp_norm(np.multiply(c, v), p) == pytest.approx(abs(c) * lp_norm(v, p), rel=1e-12, abs=1e-300)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30), ps)
def test_lp_norm_triangle(pairs, p):
    x, y = np.array(pairs).T
    assert lp_norm(x + y, p) <= (lp_norm(x, p) + lp_norm(y, p)) * (1 + 1e-12) + 1e-300


def test_pnorm_dual():
    assert PNorm(1).q == math.inf
    assert PNorm(2).q == 2.0
    assert PNorm(1.5).q == pytest.approx(3.0)
    for bad in (0.5, 2.5):
        with pytest.raises(ValueError):
            PNorm(bad)


# -- norm_sandwich_check -----------------------------------------------------

def test_sandwich_examples(rng):
    assert norm_sandwich_check([1, 1, 1, 1], 1, 2)
    assert norm_sandwich_check([1, 0, 0], 1, 2)
    assert norm_sandwich_check(rng.standard_normal(100), 1.3, 1.9)
    with pytest.raises(ValueError):
        norm_sandwich_check([1, 2], 1.9, 1.3)


@given(st.lists(finite, min_size=1, max_size=40), ps, ps)
def test_sandwich_always_holds(v, a, b):
    p, q = min(a, b), max(a, b)
    assert norm_sandwich_check(v, p, q)


# -- spmm_apply --------------------------------------------------------------

def test_spmm_examples(rng):
    A = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(spmm_apply(SparseMatrix.identity(3), A), A)
    np.testing.assert_array_equal(spmm_apply(SparseMatrix.zeros((4, 3)), A), np.zeros((4, 2)))
    S = random_sparse(rng, 50, 100, 0.1)
    B = rng.standard_normal((100, 7))
    np.testing.assert_allclose(spmm_apply(S, B), S.toarray() @ B, rtol=1e-12, atol=1e-13)


def test_spmm_dimension_mismatch():
    with pytest.raises(ValueError):
        spmm_apply(SparseMatrix.identity(3), np.ones((4, 2)))


@given(st.integers(1, 200), st.integers(1, 200), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_spmm_matches_dense(rows, cols, k, seed):
    rng = np.random.default_rng(seed)
    S = random_sparse(rng, rows, cols, 0.05)
    A = rng.standard_normal((cols, k))
    got = spmm_apply(S, A)
    want = S.toarray() @ A
    scale = np.abs(S.toarray()) @ np.abs(A)
    assert np.all(np.abs(got - want) <= 1e-12 * scale + 1e-300)


# -- SparseMatrix ------------------------------------------------------------

def test_sparse_matrix_invariants():
    with pytest.raises(ValueError):
        SparseMatrix((3, 1), [0, 2], [1, 0], [1.0, 2.0])  # unsorted rows
    with pytest.raises(ValueError):
        SparseMatrix((3, 1), [0, 1], [0], [0.0])  # stored zero
    with pytest.raises(ValueError):
        SparseMatrix((3, 1), [0, 1], [3], [1.0])  # row out of range
    with pytest.raises(ValueError):
        SparseMatrix.from_coo([0, 0], [0, 0], [1.0, 2.0], (2, 2))
    M = SparseMatrix.from_coo([1, 0, 2], [0, 0, 1], [2.0, 0.0, 5.0], (3, 2))
    assert M.nnz == 2
    assert list(M.column_nnz()) == [1, 1]
    assert M == SparseMatrix.from_dense(M.toarray())


def test_as_dense():
    assert as_dense([1.0, 2.0]).shape == (2, 1)
    with pytest.raises(DomainError):
        as_dense([[np.nan]])
    with pytest.raises(ValueError):
        as_dense(np.zeros((2, 2, 2)))


# -- randomness --------------------------------------------------------------

def test_stream_determinism():
    a = RngStream(7, "x").generator().random(10_000)
    b = RngStream(7, "x").generator().random(10_000)
    np.testing.assert_array_equal(a, b)


def test_stream_labels_independent():
    a = RngStream(7, "x").generator().random(1000)
    b = RngStream(7, "y").generator().random(1000)
    c = RngStream(8, "x").generator().random(1000)
    assert not np.any(a == b) and not np.any(a == c)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
    assert RngStream(7).child("a").child("b") == RngStream(7, "a/b")


def test_derive_seed_stable():
    assert derive_seed(1, "trial0") == derive_seed(1, "trial0")
    assert derive_seed(1, "trial0") != derive_seed(1, "trial1")
    assert 0 <= derive_seed(2**64 - 1, "z") < 2**64


def test_uniform_open_excludes_endpoints():
    u = uniform_open(RngStream(0).generator(), 100_000)
    assert u.min() > 0 and u.max() < 1


# -- I/O ---------------------------------------------------------------------

def test_identity_round_trip(tmp_path):
    path = tmp_path / "I.mtx"
    io_matrix(path, "write", SparseMatrix.identity(2))
    assert io_matrix(path, "read") == SparseMatrix.identity(2)


def test_sparse_round_trip_bit_exact(tmp_path, rng):
    rows = rng.choice(300 * 300, 1000, replace=False)
    M = SparseMatrix.from_coo(rows // 300, rows % 300, rng.standard_normal(1000) * 10.0 ** rng.integers(-30, 30, 1000), (300, 300))
    write_matrix(tmp_path / "m.mtx", M)
    back = read_matrix(tmp_path / "m.mtx")
    assert back.nnz == 1000
    np.testing.assert_array_equal(back.indices, M.indices)
    np.testing.assert_array_equal(back.indptr, M.indptr)
    np.testing.assert_array_equal(back.data, M.data)


def test_dense_round_trip(tmp_path, rng):
    A = rng.standard_normal((7, 3)) * 1e-200
    write_matrix(tmp_path / "a.txt", A)
    np.testing.assert_array_equal(read_matrix(tmp_path / "a.txt"), A)


def _mm(tmp_path, body):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket matrix coordinate real general\n" + body)
    return path


@pytest.mark.parametrize(
    "body, line",
    [
        ("2 2 1\n0 1 1.0\n", 3),  # 0 is out of range in 1-based files
        ("2 2 1\n3 1 1.0\n", 3),
        ("2 2 2\n1 1 1.0\n1 1 2.0\n", 4),
        ("2 2 2\n1 1 1.0\n", 3),
        ("2 2 1\n1 1 abc\n", 3),
        ("2 2 1\n1 1 nan\n", 3),
        ("2 x 1\n", 2),
    ],
)
def test_parse_errors_carry_line(tmp_path, body, line):
    with pytest.raises(ParseError) as info:
        read_matrix(_mm(tmp_path, body))
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


def test_bad_header(tmp_path):
    path = tmp_path / "h.mtx"
    path.write_text("%%MatrixMarket matrix array real general\n1 1\n1.0\n")
    with pytest.raises(ParseError) as info:
        read_matrix(path)
    assert info.value.line == 1


def test_io_matrix_mode():
    with pytest.raises(ValueError):
        io_matrix("x", "append")
