"""Matrix containers, lp norms, seeded random streams and matrix file I/O.

Dense matrices are plain ``numpy.ndarray`` objects (float64, row-major);
:func:`as_dense` is the validating constructor.  Sparse matrices are stored
column-compressed in :class:`SparseMatrix`.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .errors import DomainError, ParseError

MM_HEADER = "%%MatrixMarket matrix coordinate real general"


# ---------------------------------------------------------------------------
# dense / sparse containers
# ---------------------------------------------------------------------------

def as_dense(A, name="matrix"):
    """Return ``A`` as a finite, C-contiguous float64 2-D array."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError(f"{name} contains non-finite entries")
    return A


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Column-compressed sparse matrix with exact nnz accounting.

    Row indices are strictly increasing within each column and no explicit
    zeros are stored.
    """

    shape: tuple
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        rows, cols = (int(s) for s in self.shape)
        object.__setattr__(self, "shape", (rows, cols))
        indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        for name, arr in (("indptr", indptr), ("indices", indices), ("data", data)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if rows < 0 or cols < 0:
            raise ValueError("negative shape")
        if indptr.shape != (cols + 1,) or indptr[0] != 0 or np.any(np.diff(indptr) < 0):
            raise ValueError("malformed indptr")
        if indptr[-1] != len(indices) or len(indices) != len(data):
            raise ValueError("indptr/indices/data length mismatch")
        if len(indices):
            if indices.min() < 0 or indices.max() >= rows:
                raise ValueError("row index out of range")
            # strictly increasing inside a column: every step that is not a
            # column boundary must be positive
            steps = np.diff(indices)
            inner = np.ones(len(steps), dtype=bool)
            starts = indptr[1:-1]
            inner[starts[(starts > 0) & (starts < len(indices))] - 1] = False
            if np.any(steps[inner] <= 0):
                raise ValueError("row indices must be strictly increasing within a column")
        if np.any(data == 0.0):
            raise ValueError("explicit zeros are not allowed")
        if not np.all(np.isfinite(data)):
            raise DomainError("sparse matrix contains non-finite values")

    @property
    def rows(self):
        return self.shape[0]

    @property
    def cols(self):
        return self.shape[1]

    @property
    def nnz(self):
        return int(self.indptr[-1])

    def column_nnz(self):
        return np.diff(self.indptr)

    def column(self, j):
        lo, hi = self.indptr[j], self.indptr[j + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def to_scipy(self):
        return sps.csc_matrix(
            (self.data, self.indices, self.indptr), shape=self.shape, copy=True
        )

    def toarray(self):
        out = np.zeros(self.shape)
        col = np.repeat(np.arange(self.cols), self.column_nnz())
        out[self.indices, col] = self.data
        return out

    @classmethod
    def from_scipy(cls, M):
        M = sps.csc_matrix(M, dtype=np.float64, copy=True)
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
        return cls(M.shape, M.indptr, M.indices, M.data)

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        """Build from coordinate triples; duplicates are an error, zeros are dropped."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        order = np.lexsort((rows, cols))
        rows, cols, values = rows[order], cols[order], values[order]
        if len(rows) > 1:
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                k = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate coordinate ({rows[k]}, {cols[k]})")
        keep = values != 0.0
        rows, cols, values = rows[keep], cols[keep], values[keep]
        if len(cols) and (cols.min() < 0 or cols.max() >= shape[1]):
            raise ValueError("column index out of range")
        indptr = np.zeros(shape[1] + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=shape[1]), out=indptr[1:])
        return cls(shape, indptr, rows, values)

    @classmethod
    def from_dense(cls, A):
        A = np.asarray(A, dtype=np.float64)
        r, c = np.nonzero(A)
        return cls.from_coo(r, c, A[r, c], A.shape)

    @classmethod
    def identity(cls, n):
        return cls((n, n), np.arange(n + 1), np.arange(n), np.ones(n))

    @classmethod
    def zeros(cls, shape):
        return cls(shape, np.zeros(shape[1] + 1, dtype=np.int64), [], [])

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


def spmm_apply(S, A):
    """Exact product ``S @ A`` for a sparse ``S`` and a dense ``A``.

    Runs in time proportional to ``S.nnz * A.shape[1]``.
    """
    A = as_dense(A)
    if S.cols != A.shape[0]:
        raise ValueError(f"dimension mismatch: S is {S.shape}, A is {A.shape}")
    return np.asarray(S.to_scipy() @ A)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PNorm:
    """An exponent ``p`` in [1, 2] together with its dual exponent."""

    p: float

    def __post_init__(self):
        p = float(self.p)
        if not 1.0 <= p <= 2.0:
            raise ValueError(f"p must lie in [1, 2], got {p}")
        object.__setattr__(self, "p", p)

    @property
    def q(self):
        return math.inf if self.p == 1.0 else self.p / (self.p - 1.0)

    def __float__(self):
        return self.p


def _exponent(p):
    p = float(p)
    if not (p >= 1.0):
        raise ValueError(f"norm exponent must be >= 1, got {p}")
    return p


def lp_norm(v, p, axis=None):
    """(sum |v_i|^p)^(1/p), computed with max-scaling to avoid overflow.

    ``p`` may be a :class:`PNorm`, a float >= 1, or ``inf``.  With ``axis``
    the norm is taken along that axis of an array.
    """
    p = _exponent(p)
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("lp_norm of a non-finite vector")
    a = np.abs(v)
    if axis is None:
        a = a.ravel()
        axis = 0
    if a.shape[axis] == 0:
        return np.zeros(np.delete(a.shape, axis)) if a.ndim > 1 else 0.0
    m = a.max(axis=axis, keepdims=True)
    if math.isinf(p):
        out = np.squeeze(m, axis=axis)
    elif p == 1.0:
        out = a.sum(axis=axis)
    elif p == 2.0:
        safe = np.where(m > 0, m, 1.0)
        out = np.squeeze(safe, axis=axis) * np.sqrt(np.sum((a / safe) ** 2, axis=axis))
    else:
        safe = np.where(m > 0, m, 1.0)
        out = np.squeeze(safe, axis=axis) * np.sum((a / safe) ** p, axis=axis) ** (1.0 / p)
    return float(out) if np.ndim(out) == 0 else out


def norm_sandwich_check(v, p, q, rtol=1e-12):
    """Check ||v||_q <= ||v||_p <= n^(1/p - 1/q) ||v||_q for 1 <= p <= q <= 2."""
    p, q = float(p), float(q)
    if p > q:
        raise ValueError(f"need p <= q, got p={p}, q={q}")
    if not (1.0 <= p and q <= 2.0):
        raise ValueError("exponents must lie in [1, 2]")
    v = np.asarray(v, dtype=np.float64).ravel()
    n = len(v)
    np_ = lp_norm(v, p)
    nq = lp_norm(v, q)
    upper = n ** (1.0 / p - 1.0 / q) * nq if n else 0.0
    slack = rtol * max(np_, nq, upper)
    return bool(nq <= np_ + slack and np_ <= upper + slack)


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def derive_seed(seed, label):
    """Hash ``(seed, label)`` to a new 64-bit seed."""
    h = hashlib.blake2b(f"{int(seed)}/{label}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream.

    The stream is keyed by ``hash(seed, label)`` and backed by the
    counter-based Philox generator, so equal ``(seed, label)`` pairs always
    produce equal sequences and differently labelled streams are unrelated.
    """

    seed: int
    label: str = ""

    def __post_init__(self):
        seed = int(self.seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned value")
        object.__setattr__(self, "seed", seed)

    def child(self, label):
        return RngStream(self.seed, f"{self.label}/{label}" if self.label else label)

    def generator(self):
        digest = hashlib.blake2b(
            f"{self.seed}:{self.label}".encode(), digest_size=16
        ).digest()
        key = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def uniform_open(gen, size):
    """Uniform draws on the open interval (0, 1); endpoints are never returned."""
    k = gen.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) * 2.0**-53


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_matrix(path, M):
    """Write a SparseMatrix as MatrixMarket or a dense array as text."""
    if isinstance(M, SparseMatrix):
        lines = [MM_HEADER, f"{M.rows} {M.cols} {M.nnz}"]
        for j in range(M.cols):
            idx, val = M.column(j)
            lines.extend(f"{i + 1} {j + 1} {_fmt(v)}" for i, v in zip(idx, val))
    else:
        A = as_dense(M)
        lines = [f"{A.shape[0]} {A.shape[1]}"]
        lines.extend(" ".join(_fmt(x) for x in row) for row in A)
    atomic_write(path, "\n".join(lines) + "\n")


def _parse_float(tok, lineno):
    try:
        x = float(tok)
    except ValueError:
        raise ParseError(f"bad number {tok!r}", lineno) from None
    if not math.isfinite(x):
        raise ParseError(f"non-finite value {tok!r}", lineno)
    return x


def _parse_dims(tokens, count, lineno):
    if len(tokens) != count:
        raise ParseError(f"expected {count} integers in size line", lineno)
    try:
        dims = [int(t) for t in tokens]
    except ValueError:
        raise ParseError("non-integer size field", lineno) from None
    if any(x < 0 for x in dims):
        raise ParseError("negative size field", lineno)
    return dims


def _read_mm(lines):
    header = lines[0].strip().split()
    if [h.lower() for h in header] != MM_HEADER.lower().split():
        raise ParseError(f"unsupported MatrixMarket header {lines[0].strip()!r}", 1)
    body = [(k + 1, ln) for k, ln in enumerate(lines) if k > 0 and ln.strip() and not ln.startswith("%")]
    if not body:
        raise ParseError("missing size line", len(lines))
    lineno, size = body[0]
    rows, cols, nnz = _parse_dims(size.split(), 3, lineno)
    entries = body[1:]
    if len(entries) != nnz:
        ln = entries[-1][0] if entries else lineno
        raise ParseError(f"expected {nnz} entries, found {len(entries)}", ln)
    r = np.empty(nnz, dtype=np.int64)
    c = np.empty(nnz, dtype=np.int64)
    v = np.empty(nnz)
    seen = {}
    for k, (lineno, text) in enumerate(entries):
        tok = text.split()
        if len(tok) != 3:
            raise ParseError("expected 'row col value'", lineno)
        try:
            i, j = int(tok[0]), int(tok[1])
        except ValueError:
            raise ParseError("non-integer index", lineno) from None
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise ParseError(f"index ({i}, {j}) out of range for {rows}x{cols} (indices are 1-based)", lineno)
        if (i, j) in seen:
            raise ParseError(f"duplicate coordinate ({i}, {j}), first at line {seen[(i, j)]}", lineno)
        seen[(i, j)] = lineno
        r[k], c[k], v[k] = i - 1, j - 1, _parse_float(tok[2], lineno)
    return SparseMatrix.from_coo(r, c, v, (rows, cols))


def _read_dense(lines):
    body = [(k + 1, ln) for k, ln in enumerate(lines) if ln.strip()]
    if not body:
        raise ParseError("empty file", 1)
    lineno, size = body[0]
    rows, cols = _parse_dims(size.split(), 2, lineno)
    vals = []
    last = lineno
    for lineno, text in body[1:]:
        vals.extend(_parse_float(t, lineno) for t in text.split())
        last = lineno
    if len(vals) != rows * cols:
        raise ParseError(f"expected {rows * cols} values, found {len(vals)}", last)
    return np.array(vals, dtype=np.float64).reshape(rows, cols)


def read_matrix(path):
    """Read a MatrixMarket (sparse) or 'rows cols' text (dense) matrix file."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty file", 1)
    if lines[0].startswith("%%MatrixMarket"):
        return _read_mm(lines)
    return _read_dense(lines)


def io_matrix(path, mode, matrix=None):
    """Read (``mode='read'``) or write (``mode='write'``) a matrix file."""
    if mode == "read":
        return read_matrix(path)
    if mode == "write":
        if matrix is None:
            raise ValueError("write mode needs a matrix")
        write_matrix(path, matrix)
        return matrix
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
