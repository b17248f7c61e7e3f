"""Compressed sparse row storage for perception matrices.

The in-memory matrix keeps 64-bit values; the SPMX file format stores
32-bit values and 32-bit column indices.  Matrix products are delegated to
``scipy.sparse`` views that share the validated arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

SPMX_MAGIC = b"SPMX"
SPMX_VERSION = 1
_HEADER = struct.Struct("<4sIQQQ")


class SparseFormatError(ValueError):
    """Raised for malformed CSR arrays or SPMX files."""


class CooTriplet(NamedTuple):
    row: int
    col: int
    value: float


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Immutable CSR matrix with non-negative finite values.

    ``indptr`` has ``rows + 1`` offsets, ``indices`` are strictly increasing
    within a row, ``values`` hold the nonzeros.  Use :func:`build_from_triplets`
    or :meth:`from_arrays` rather than the raw constructor when the arrays
    have not been checked.
    """

    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("indptr", "indices", "values"):
            getattr(self, name).setflags(write=False)

    @classmethod
    def from_arrays(cls, rows, cols, indptr, indices, values) -> "CsrMatrix":
        indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        values = np.ascontiguousarray(values, dtype=np.float64)
        _validate(int(rows), int(cols), indptr, indices, values)
        return cls(int(rows), int(cols), indptr.copy(), indices.copy(), values.copy())

    @classmethod
    def identity(cls, n: int, scale: float = 1.0) -> "CsrMatrix":
        idx = np.arange(n, dtype=np.int64)
        vals = np.full(n, float(scale))
        keep = vals != 0
        return cls.from_arrays(n, n, np.concatenate([[0], np.cumsum(keep)]), idx[keep], vals[keep])

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise ValueError("expected a 2-D array")
        m = sp.csr_matrix(dense)
        m.sort_indices()
        return cls.from_arrays(dense.shape[0], dense.shape[1], m.indptr, m.indices, m.data)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row_ids(self) -> np.ndarray:
        """Row index of every stored entry."""
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.indptr))

    def triplets(self) -> list[CooTriplet]:
        return [CooTriplet(int(r), int(c), float(v))
                for r, c, v in zip(self.row_ids(), self.indices, self.values)]

    def column(self, n: int) -> np.ndarray:
        """Dense copy of column ``n``."""
        return self.scipy()[:, [n]].toarray().ravel()

    def to_dense(self) -> np.ndarray:
        return self.scipy().toarray()

    def max(self) -> float:
        return float(self.values.max()) if self.nnz else 0.0

    def scipy(self) -> sp.csr_matrix:
        """Shared-memory scipy view used for the products."""
        m = self._cache.get("csr")
        if m is None:
            m = sp.csr_matrix((self.values, self.indices, self.indptr), shape=self.shape)
            m.has_sorted_indices = True
            self._cache["csr"] = m
        return m

    def transpose_csr(self) -> sp.csr_matrix:
        """Explicit CSR copy of the transpose, built once and cached."""
        m = self._cache.get("csr_t")
        if m is None:
            m = self.scipy().T.tocsr()
            m.sort_indices()
            self._cache["csr_t"] = m
        return m

    def equals(self, other: "CsrMatrix") -> bool:
        return (self.shape == other.shape
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.values, other.values))

    def __matmul__(self, x):
        return spmv(self, x)


def _validate(rows, cols, indptr, indices, values):
    if rows < 0 or cols < 0:
        raise SparseFormatError("negative dimensions")
    if indptr.shape != (rows + 1,):
        raise SparseFormatError(f"indptr must have length rows+1={rows + 1}")
    if indptr[0] != 0:
        raise SparseFormatError("indptr[0] must be 0")
    if np.any(np.diff(indptr) < 0):
        raise SparseFormatError("indptr must be non-decreasing")
    nnz = int(indptr[-1])
    if indices.shape != (nnz,) or values.shape != (nnz,):
        raise SparseFormatError("indices/values length must equal indptr[-1]")
    if nnz:
        if indices.min() < 0 or indices.max() >= cols:
            raise SparseFormatError("column index out of range")
        # strictly increasing inside each row; row starts are allowed to drop
        step = np.diff(indices)
        row_start = np.zeros(nnz, dtype=bool)
        row_start[indptr[:-1][np.diff(indptr) > 0]] = True
        if np.any((step <= 0) & ~row_start[1:]):
            raise SparseFormatError("column indices must be strictly increasing within a row")
        if not np.all(np.isfinite(values)):
            raise SparseFormatError("values must be finite")
        if np.any(values < 0):
            raise SparseFormatError("values must be non-negative")


def build_from_triplets(triplets: Iterable, rows: int, cols: int) -> CsrMatrix:
    """Assemble a canonical CSR matrix, summing duplicates and dropping zeros."""
    trip = list(triplets)
    if trip:
        r, c, v = (np.asarray(a) for a in zip(*trip))
        r = r.astype(np.int64)
        c = c.astype(np.int64)
        v = v.astype(np.float64)
    else:
        r = c = np.empty(0, np.int64)
        v = np.empty(0)
    return build_from_coo(r, c, v, rows, cols)


def build_from_coo(r, c, v, rows: int, cols: int) -> CsrMatrix:
    """Array form of :func:`build_from_triplets`."""
    r = np.asarray(r, dtype=np.int64)
    c = np.asarray(c, dtype=np.int64)
    v = np.asarray(v, dtype=np.float64)
    if r.size and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
        raise SparseFormatError("triplet out of bounds")
    if not np.all(np.isfinite(v)):
        raise SparseFormatError("triplet value not finite")
    order = np.lexsort((c, r))
    r, c, v = r[order], c[order], v[order]
    if r.size:
        new = np.ones(r.size, dtype=bool)
        new[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
        starts = np.flatnonzero(new)
        v = np.add.reduceat(v, starts)
        r, c = r[starts], c[starts]
        keep = v != 0
        r, c, v = r[keep], c[keep], v[keep]
    indptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=rows), out=indptr[1:])
    return CsrMatrix.from_arrays(rows, cols, indptr, c, v)


def _as_vector(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != n:
        raise ValueError(f"{what}: expected leading dimension {n}, got {x.shape[0]}")
    return x


def spmv(A: CsrMatrix, s) -> np.ndarray:
    """``A @ s`` for a vector or a column-stacked block of vectors."""
    s = _as_vector(s, A.cols, "spmv")
    return A.scipy() @ s


def spmv_transpose(A: CsrMatrix, r, cached: bool = True) -> np.ndarray:
    """``A.T @ r``.

    With ``cached=True`` an explicit transposed CSR copy is used.  Both paths
    accumulate each output entry in increasing row order, so they agree bit
    for bit.
    """
    r = _as_vector(r, A.rows, "spmv_transpose")
    if cached:
        return A.transpose_csr() @ r
    return A.scipy().T @ r


def truncate(A: CsrMatrix, tau: float) -> CsrMatrix:
    """Drop entries strictly below ``tau * max(A)``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if tau == 0.0 or A.nnz == 0:
        return CsrMatrix.from_arrays(A.rows, A.cols, A.indptr, A.indices, A.values)
    keep = A.values >= tau * A.max()
    rows = A.row_ids()[keep]
    indptr = np.zeros(A.rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=A.rows), out=indptr[1:])
    return CsrMatrix.from_arrays(A.rows, A.cols, indptr, A.indices[keep], A.values[keep])


def spmx_nbytes(rows: int, nnz: int) -> int:
    """Exact SPMX file size: header, u64 offsets, u32 indices, f32 values."""
    return _HEADER.size + 8 * (rows + 1) + 4 * nnz + 4 * nnz


def sparsity_stats(A: CsrMatrix) -> dict:
    cells = A.rows * A.cols
    return {
        "nnz": A.nnz,
        "density_percent": 100.0 * A.nnz / cells if cells else 0.0,
        "bytes_estimate": spmx_nbytes(A.rows, A.nnz),
    }


def mass_weighted_histogram(A: CsrMatrix, bins: int = 20):
    """Histogram of ``value / max`` where each entry contributes its value.

    Returns ``(mass, edges)``; the last bin is closed so the maximum entry
    lands in it.
    """
    if A.nnz == 0:
        raise ValueError("matrix has no nonzeros")
    if bins < 1:
        raise ValueError("bins must be positive")
    rel = A.values / A.max()
    b = np.minimum((rel * bins).astype(np.int64), bins - 1)
    mass = np.bincount(b, weights=A.values, minlength=bins)
    return mass, np.linspace(0.0, 1.0, bins + 1)


def write_spmx(A: CsrMatrix, path) -> None:
    if A.cols > np.iinfo(np.uint32).max:
        raise SparseFormatError("too many columns for u32 indices")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SPMX_MAGIC, SPMX_VERSION, A.rows, A.cols, A.nnz))
        fh.write(A.indptr.astype("<u8").tobytes())
        fh.write(A.indices.astype("<u4").tobytes())
        fh.write(A.values.astype("<f4").tobytes())


def read_spmx(path) -> CsrMatrix:
    data = Path(path).read_bytes()
    return parse_spmx(data)


def parse_spmx(data: bytes) -> CsrMatrix:
    if len(data) < _HEADER.size:
        raise SparseFormatError("truncated SPMX header")
    magic, version, rows, cols, nnz = _HEADER.unpack_from(data, 0)
    if magic != SPMX_MAGIC:
        raise SparseFormatError(f"bad magic {magic!r}")
    if version != SPMX_VERSION:
        raise SparseFormatError(f"unsupported SPMX version {version}")
    if len(data) != spmx_nbytes(rows, nnz):
        raise SparseFormatError("SPMX payload size does not match header")
    off = _HEADER.size
    indptr = np.frombuffer(data, "<u8", rows + 1, off)
    off += 8 * (rows + 1)
    indices = np.frombuffer(data, "<u4", nnz, off)
    off += 4 * nnz
    values = np.frombuffer(data, "<f4", nnz, off)
    if indptr.size and indptr.max() > np.iinfo(np.int64).max:
        raise SparseFormatError("indptr overflow")
    return CsrMatrix.from_arrays(rows, cols, indptr.astype(np.int64),
                                 indices.astype(np.int64), values.astype(np.float64))
