import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_sparse_dense
from stimenc.sparse import (CooTriplet, CsrMatrix, SparseFormatError, build_from_triplets,
                            mass_weighted_histogram, parse_spmx, read_spmx, sparsity_stats,
                            spmv, spmv_transpose, truncate, write_spmx)


def test_empty_matrix():
    A = build_from_triplets([], 2, 2)
    assert A.nnz == 0
    assert list(A.indptr) == [0, 0, 0]


def test_duplicates_summed():
    A = build_from_triplets([(0, 0, 1.0), (0, 0, 2.0)], 1, 1)
    assert A.nnz == 1
    assert A.values[0] == 3.0


def test_canonical_layout():
    A = build_from_triplets([(1, 0, 0.5), (0, 1, 0.25)], 2, 2)
    assert list(A.indptr) == [0, 1, 2]
    assert list(A.indices) == [1, 0]
    assert list(A.values) == [0.25, 0.5]


def test_zero_entries_dropped():
    A = build_from_triplets([(0, 0, 0.0), (1, 1, 2.0)], 2, 2)
    assert A.triplets() == [CooTriplet(1, 1, 2.0)]


@pytest.mark.parametrize("trip", [(2, 0, 1.0), (0, 3, 1.0), (-1, 0, 1.0)])
def test_out_of_bounds_triplet(trip):
    with pytest.raises(SparseFormatError):
        build_from_triplets([trip], 2, 3)


def test_rejects_bad_arrays():
    with pytest.raises(SparseFormatError):
        CsrMatrix.from_arrays(2, 2, [0, 2, 1], [0, 1], [1.0, 1.0])
    with pytest.raises(SparseFormatError):
        CsrMatrix.from_arrays(1, 3, [0, 2], [1, 1], [1.0, 1.0])
    with pytest.raises(SparseFormatError):
        CsrMatrix.from_arrays(1, 2, [0, 1], [0], [-1.0])
    with pytest.raises(SparseFormatError):
        CsrMatrix.from_arrays(1, 2, [0, 1], [0], [np.nan])


def test_immutable():
    A = CsrMatrix.identity(3)
    with pytest.raises(ValueError):
        A.values[0] = 2.0


def test_spmv_identity_and_zero(rng):
    s = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(spmv(CsrMatrix.identity(3), s), s)
    A = CsrMatrix.from_dense(random_sparse_dense(rng, 5, 3))
    assert np.array_equal(spmv(A, np.zeros(3)), np.zeros(5))


def test_spmv_matches_dense(rng):
    D = random_sparse_dense(rng, 10, 8)
    A = CsrMatrix.from_dense(D)
    s = rng.normal(size=8)
    np.testing.assert_allclose(spmv(A, s), D @ s, rtol=1e-12, atol=0)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(CsrMatrix.identity(3), np.ones(4))
    with pytest.raises(ValueError):
        spmv_transpose(CsrMatrix.identity(3), np.ones(2))


def test_transpose_small_cases():
    r = np.array([0.5, 2.0, -1.0])
    assert np.array_equal(spmv_transpose(CsrMatrix.identity(3), r), r)
    A = build_from_triplets([(0, 1, 2.0)], 1, 2)
    assert list(spmv_transpose(A, np.array([3.0]))) == [0.0, 6.0]


def test_transpose_matches_dense_and_cache_is_bitwise(rng):
    D = random_sparse_dense(rng, 10, 8)
    A = CsrMatrix.from_dense(D)
    r = rng.normal(size=10)
    np.testing.assert_allclose(spmv_transpose(A, r), D.T @ r, rtol=1e-12, atol=0)
    big = CsrMatrix.from_dense(random_sparse_dense(rng, 300, 200, 0.2))
    r = rng.normal(size=300)
    assert np.array_equal(spmv_transpose(big, r, cached=True), spmv_transpose(big, r, cached=False))


def test_truncate_examples():
    A = build_from_triplets([(0, 0, 1.0), (0, 1, 0.04), (1, 0, 0.5)], 2, 2)
    T = truncate(A, 0.05)
    assert T.nnz == 2
    assert 0.04 not in T.values
    assert truncate(A, 0.0).equals(A)
    E = build_from_triplets([(0, 0, 0.3), (1, 1, 0.3), (1, 0, 0.3)], 2, 2)
    assert truncate(E, 1.0).nnz == 3


@pytest.mark.parametrize("tau", [-0.1, 1.5])
def test_truncate_rejects_bad_tau(tau):
    with pytest.raises(ValueError):
        truncate(CsrMatrix.identity(2), tau)


def test_sparsity_stats():
    A = build_from_triplets([(3, 4, 1.0)], 10, 10)
    st_ = sparsity_stats(A)
    assert st_["nnz"] == 1
    assert st_["density_percent"] == pytest.approx(1.0)
    E = build_from_triplets([], 4, 6)
    se = sparsity_stats(E)
    assert se["density_percent"] == 0.0
    # magic + version + three u64 dims, then (rows + 1) u64 offsets
    assert se["bytes_estimate"] == 4 + 4 + 24 + 8 * 5


def test_mass_histogram():
    A = build_from_triplets([(0, 0, 0.7)], 1, 1)
    mass, _ = mass_weighted_histogram(A, 5)
    assert list(mass) == [0, 0, 0, 0, 0.7]
    B = build_from_triplets([(0, 0, 0.25), (1, 0, 0.75)], 2, 1)
    mass, edges = mass_weighted_histogram(B, 2)
    assert list(mass) == [0.25, 0.75]
    assert list(edges) == [0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        mass_weighted_histogram(build_from_triplets([], 1, 1), 3)


def test_spmx_roundtrip(tmp_path, rng):
    D = random_sparse_dense(rng, 17, 9).astype(np.float32).astype(np.float64)
    A = CsrMatrix.from_dense(D)
    f = tmp_path / "a.spmx"
    write_spmx(A, f)
    assert f.stat().st_size == sparsity_stats(A)["bytes_estimate"]
    B = read_spmx(f)
    assert B.equals(A)
    g = tmp_path / "b.spmx"
    write_spmx(B, g)
    assert f.read_bytes() == g.read_bytes()


def test_spmx_header_bytes(tmp_path):
    f = tmp_path / "e.spmx"
    write_spmx(build_from_triplets([(0, 1, 1.0)], 1, 2), f)
    raw = f.read_bytes()
    assert raw[:4] == bytes([0x53, 0x50, 0x4D, 0x58])
    assert raw[4:8] == (1).to_bytes(4, "little")


def test_spmx_rejects_corruption(tmp_path):
    f = tmp_path / "a.spmx"
    write_spmx(build_from_triplets([(0, 1, 1.0), (1, 0, 2.0)], 2, 2), f)
    raw = bytearray(f.read_bytes())
    for i in range(4):
        bad = bytearray(raw)
        bad[i] ^= 0xFF
        with pytest.raises(SparseFormatError):
            parse_spmx(bytes(bad))
    bad = bytearray(raw)
    bad[4] = 2
    with pytest.raises(SparseFormatError, match="version"):
        parse_spmx(bytes(bad))
    # column index 1 -> 7, beyond cols
    idx_off = 32 + 8 * 3
    bad = bytearray(raw)
    bad[idx_off] = 7
    with pytest.raises(SparseFormatError):
        parse_spmx(bytes(bad))
    # indptr decreasing
    bad = bytearray(raw)
    bad[32 + 8] = 5
    with pytest.raises(SparseFormatError):
        parse_spmx(bytes(bad))
    with pytest.raises(SparseFormatError):
        parse_spmx(bytes(raw[:-1]))


triplet_lists = st.lists(
    st.tuples(st.integers(0, 5), st.integers(0, 4),
              st.floats(0.0, 10.0, allow_nan=False).filter(lambda v: v == 0 or v > 1e-3)),
    max_size=40)


@given(triplet_lists)
@settings(max_examples=100, deadline=None)
def test_roundtrip_triplets(trips):
    A = build_from_triplets(trips, 6, 5)
    expected = {}
    for r, c, v in trips:
        expected[(r, c)] = expected.get((r, c), 0.0) + v
    expected = {k: v for k, v in expected.items() if v != 0}
    got = {(t.row, t.col): t.value for t in A.triplets()}
    assert got.keys() == expected.keys()
    for k in got:
        assert got[k] == pytest.approx(expected[k], rel=1e-12)


@given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_kernels_match_dense(m, n, seed):
    rng = np.random.default_rng(seed)
    D = random_sparse_dense(rng, m, n, rng.uniform(0.05, 0.6))
    A = CsrMatrix.from_dense(D)
    s = rng.normal(size=n)
    r = rng.normal(size=m)
    ref = D @ s
    np.testing.assert_allclose(spmv(A, s), ref, rtol=1e-12, atol=1e-12 * np.abs(D).sum())
    np.testing.assert_allclose(spmv_transpose(A, r), D.T @ r, rtol=1e-12,
                               atol=1e-12 * np.abs(D).sum())


@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_truncate_monotone_and_idempotent(seed, t1, t2):
    rng = np.random.default_rng(seed)
    A = CsrMatrix.from_dense(random_sparse_dense(rng, 12, 9, 0.5))
    lo, hi = sorted((t1, t2))
    assert truncate(A, lo).nnz >= truncate(A, hi).nnz
    T = truncate(A, hi)
    assert truncate(T, hi).equals(T)
