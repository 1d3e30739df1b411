"""Oblivious subspace embedding families as structured sparse operators.

Every family is described by an :class:`EmbeddingSpec` and realised as an
:class:`Embedding`: a vertical stack of blocks.  Hash blocks store, for each
input coordinate ``i``, ``s`` (row, value) pairs, which is enough to apply the
operator in ``O(nnz(A) * s)`` time.  Dense blocks hold an explicit matrix.

Randomness is drawn from labelled sub-streams of the spec seed: the l2 part of
every family uses ``"pi1"`` and the stable part uses ``"pi2"``.  A composed
embedding is therefore bit-for-bit the scaled l2 sketch stacked on top of the
sparse stable sketch built from the same seed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import ResourceError
from .numcore import RngStream, SparseMatrix, as_dense
from .stabledist import StableParams, TruncationParams, sample_pstable, truncate

FAMILIES = (
    "countsketch",
    "osnap",
    "sparse_stable",
    "composed_cs",
    "composed_osnap",
    "sampled_composed",
    "truncated",
    "dense_stable",
    "identity",
)
MAX_DENSE_ROWS = 2**32
DEFAULT_MAX_CELLS = 10**10
DENSE_CELL_GUARD = 5 * 10**8


def ceil_int(x):
    """Ceiling that ignores floating-point fuzz (0.1 * 900 -> 90, not 91)."""
    return int(math.ceil(x - 1e-9 * max(1.0, abs(x))))


def countsketch_rows(d, row_const):
    return max(1, ceil_int(row_const * d * d))


def osnap_rows(d, B, row_const):
    return max(1, ceil_int(row_const * B * d * math.log(d)))


def osnap_sparsity(d, B):
    if d <= 1:
        return 1
    return max(1, ceil_int(math.log(d) / math.log(B)))


def stable_rows(R1, d):
    return min(R1, ceil_int(d**1.1))


def truncated_rows(d, row_const):
    return max(1, ceil_int(row_const * d**4 * math.log(d) ** 5))


def composed_scale(p, d, variant, B=None):
    if p == 1.0:
        return d * math.log(B) if variant == "osnap" else d * math.log(d)
    return d ** (2.0 / p - 1.0)


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------

_NEEDS_B = {"osnap", "composed_osnap"}
_NEEDS_ROWS = {"sparse_stable", "dense_stable"}
_PSTABLE = {"sparse_stable", "composed_cs", "composed_osnap", "sampled_composed", "truncated", "dense_stable"}


@dataclass(frozen=True)
class EmbeddingSpec:
    """Which construction to build.

    ``B`` is required exactly for the OSNAP-based families, ``eps`` for
    ``sampled_composed``, ``alpha`` for ``truncated`` and ``rows`` (an explicit
    row count) for ``sparse_stable`` and ``dense_stable``.
    """

    family: str
    n: int
    d: int
    p: float = 1.0
    B: float | None = None
    eps: float | None = None
    alpha: float | None = None
    row_const: float = 1.0
    seed: int = 0
    rows: int | None = None

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid EmbeddingSpec: " + "; ".join(problems))

    def problems(self):
        out = []
        f = self.family
        if f not in FAMILIES:
            return [f"unknown family {f!r}; expected one of {FAMILIES}"]
        if not (isinstance(self.n, (int, np.integer)) and isinstance(self.d, (int, np.integer))):
            out.append("n and d must be integers")
        elif not self.n >= self.d >= 1:
            out.append(f"need n >= d >= 1, got n={self.n}, d={self.d}")
        if not 1.0 <= self.p <= 2.0:
            out.append(f"p must lie in [1, 2], got {self.p}")
        elif f in _PSTABLE and self.p >= 2.0:
            out.append(f"{f} needs 1 <= p < 2; use an l2 family for p = 2")
        if (self.B is not None) != (f in _NEEDS_B):
            out.append(f"B must be {'set' if f in _NEEDS_B else 'omitted'} for {f}")
        elif self.B is not None and not self.B > 2:
            out.append(f"B must exceed 2, got {self.B}")
        if (self.eps is not None) != (f == "sampled_composed"):
            out.append(f"eps must be {'set' if f == 'sampled_composed' else 'omitted'} for {f}")
        elif self.eps is not None and not 0 < self.eps < 1:
            out.append(f"eps must lie in (0, 1), got {self.eps}")
        if (self.alpha is not None) != (f == "truncated"):
            out.append(f"alpha must be {'set' if f == 'truncated' else 'omitted'} for {f}")
        elif self.alpha is not None and not 0 < self.alpha < 0.25:
            out.append(f"alpha must lie in (0, 1/4), got {self.alpha}")
        if (self.rows is not None) != (f in _NEEDS_ROWS):
            out.append(f"rows must be {'set' if f in _NEEDS_ROWS else 'omitted'} for {f}")
        elif self.rows is not None and self.rows < (2 if f == "dense_stable" else 1):
            out.append(f"rows too small for {f}: {self.rows}")
        if not self.row_const > 0:
            out.append("row_const must be positive")
        if not 0 <= int(self.seed) < 2**64:
            out.append("seed must be a 64-bit unsigned value")
        if f in ("composed_cs", "sampled_composed") and self.p == 1.0 and self.d < 2:
            out.append("p = 1 CountSketch composition needs d >= 2 (scale d log d)")
        return out

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown EmbeddingSpec fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return EmbeddingSpec(**d)


# ---------------------------------------------------------------------------
# realised operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HashBlock:
    """``s`` entries per input coordinate: ``index[k, i]`` is a row, ``values[k, i]`` its value.

    A zero value means the entry is absent (Bernoulli-dropped).
    """

    rows: int
    index: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        index = np.atleast_2d(np.asarray(self.index, dtype=np.int64))
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if index.shape != values.shape:
            raise ValueError("index/values shape mismatch")
        if index.size and (index.min() < 0 or index.max() >= self.rows):
            raise ValueError("hash row out of range")
        index.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "values", values)

    @property
    def cols(self):
        return self.index.shape[1]

    def column_nnz(self):
        return np.count_nonzero(self.values, axis=0)

    def scaled(self, c):
        return HashBlock(self.rows, self.index, self.values * c)

    def apply(self, A):
        if isinstance(A, SparseMatrix):
            d = A.cols
            col = np.repeat(np.arange(d), A.column_nnz())
            src = A.indices
            vals = A.data
        else:
            d = A.shape[1]
            src = None
        out = np.zeros(self.rows * d)
        for idx, val in zip(self.index, self.values):
            if src is None:
                flat = (idx[:, None] * d + np.arange(d)).ravel()
                w = (val[:, None] * A).ravel()
            else:
                flat = idx[src] * d + col
                w = val[src] * vals
            out += np.bincount(flat, weights=w, minlength=self.rows * d)
        return out.reshape(self.rows, d)

    def coo(self):
        rows, cols, vals = [], [], []
        ar = np.arange(self.cols)
        for idx, val in zip(self.index, self.values):
            keep = val != 0.0
            rows.append(idx[keep])
            cols.append(ar[keep])
            vals.append(val[keep])
        return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@dataclass(frozen=True, eq=False)
class DenseBlock:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_dense(self.matrix)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    def column_nnz(self):
        return np.count_nonzero(self.matrix, axis=0)

    def apply(self, A):
        if isinstance(A, SparseMatrix):
            return np.asarray((A.to_scipy().T @ self.matrix.T).T)
        return self.matrix @ A

    def coo(self):
        r, c = np.nonzero(self.matrix)
        return r, c, self.matrix[r, c]


@dataclass(frozen=True, eq=False)
class Embedding:
    """A realised sketching operator: blocks stacked vertically."""

    spec: EmbeddingSpec
    blocks: tuple

    @property
    def rows(self):
        return sum(b.rows for b in self.blocks)

    @property
    def n(self):
        return self.spec.n

    @property
    def block_boundary(self):
        """Row index where the second block starts (0 for single-block families)."""
        return self.blocks[0].rows if len(self.blocks) > 1 else 0

    def column_nnz(self):
        return sum(b.column_nnz() for b in self.blocks)

    def max_column_nnz(self):
        return int(self.column_nnz().max())

    def apply(self, A):
        return apply(self, A)

    def materialize(self, max_cells=DEFAULT_MAX_CELLS):
        return materialize(self, max_cells=max_cells)


def apply(e, A):
    """Compute ``Pi @ A`` for a dense array or a :class:`SparseMatrix` ``A``."""
    if not isinstance(A, SparseMatrix):
        A = as_dense(A)
    n_in = A.rows if isinstance(A, SparseMatrix) else A.shape[0]
    if n_in != e.spec.n:
        raise ValueError(f"dimension mismatch: embedding expects {e.spec.n} rows, got {n_in}")
    return np.vstack([b.apply(A) for b in e.blocks])


def materialize(e, max_cells=DEFAULT_MAX_CELLS):
    """Explicit :class:`SparseMatrix` equal to the operator."""
    if e.rows * e.n > max_cells:
        raise ResourceError(f"materializing {e.rows}x{e.n} exceeds the guard of {max_cells} cells")
    rows, cols, vals = [], [], []
    offset = 0
    for b in e.blocks:
        r, c, v = b.coo()
        rows.append(r + offset)
        cols.append(c)
        vals.append(v)
        offset += b.rows
    return SparseMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (e.rows, e.n)
    )


# ---------------------------------------------------------------------------
# block samplers
# ---------------------------------------------------------------------------

def _signs(gen, size):
    return 2.0 * gen.integers(0, 2, size=size) - 1.0


def countsketch_block(n, r, stream):
    gen = stream.generator()
    h = gen.integers(0, r, size=n)
    return HashBlock(r, h[None, :], _signs(gen, n)[None, :])


def osnap_block(n, r, s, stream):
    """``s`` distinct uniformly random rows per column, values +-1/sqrt(s)."""
    if s > r:
        raise ValueError(f"OSNAP needs at least s={s} rows, got {r}")
    gen = stream.generator()
    idx = gen.integers(0, r, size=(n, s))
    if s > 1:
        while True:
            srt = np.sort(idx, axis=1)
            bad = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
            if not len(bad):
                break
            idx[bad] = gen.integers(0, r, size=(len(bad), s))
    vals = _signs(gen, (s, n)) / math.sqrt(s)
    return HashBlock(r, idx.T.copy(), vals)


def stable_block(n, r, p, stream, alpha=None, keep_prob=None):
    """One entry per column at a uniform row, value drawn from the p-stable law."""
    h = stream.child("hash").generator().integers(0, r, size=n)
    vals = sample_pstable(StableParams(p), stream.child("values"), n)
    if alpha is not None:
        vals = truncate(vals, TruncationParams(alpha))
    if keep_prob is not None:
        keep = stream.child("keep").generator().random(n) < keep_prob
        vals = np.where(keep, vals, 0.0)
    return HashBlock(r, h[None, :], vals[None, :])


def _stream(seed, label):
    return RngStream(int(seed)).child(label)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def build_countsketch(n, d, row_const=1.0, seed=0):
    spec = EmbeddingSpec("countsketch", n=n, d=d, row_const=row_const, seed=seed)
    r = countsketch_rows(d, row_const)
    if r > n:
        warnings.warn(f"CountSketch with r={r} rows exceeds n={n}", stacklevel=2)
    return Embedding(spec, (countsketch_block(n, r, _stream(seed, "pi1")),))


def build_osnap(n, d, B, row_const=1.0, seed=0):
    spec = EmbeddingSpec("osnap", n=n, d=d, B=B, row_const=row_const, seed=seed)
    r = osnap_rows(d, B, row_const)
    s = osnap_sparsity(d, B)
    return Embedding(spec, (osnap_block(n, r, s, _stream(seed, "pi1")),))


def build_sparse_stable(n, d, p, rows, seed=0):
    spec = EmbeddingSpec("sparse_stable", n=n, d=d, p=p, rows=rows, seed=seed)
    return Embedding(spec, (stable_block(n, rows, p, _stream(seed, "pi2")),))


def _l2_part(n, d, variant, B, row_const, seed):
    if variant == "cs":
        return build_countsketch(n, d, row_const, seed).blocks[0]
    if variant == "osnap":
        return build_osnap(n, d, B, row_const, seed).blocks[0]
    raise ValueError(f"variant must be 'cs' or 'osnap', got {variant!r}")


def build_composed(n, d, p, variant="cs", B=None, row_const=1.0, seed=0):
    """Scaled l2 sketch stacked on a sparse p-stable sketch with min(R1, ceil(d^1.1)) rows."""
    family = {"cs": "composed_cs", "osnap": "composed_osnap"}.get(variant)
    if family is None:
        raise ValueError(f"variant must be 'cs' or 'osnap', got {variant!r}")
    if p >= 2.0:
        raise ValueError("composed embeddings need 1 <= p < 2; use countsketch/osnap for p = 2")
    spec = EmbeddingSpec(family, n=n, d=d, p=p, B=B if variant == "osnap" else None,
                         row_const=row_const, seed=seed)
    top = _l2_part(n, d, variant, B, row_const, seed)
    top = top.scaled(composed_scale(p, d, variant, B))
    R2 = stable_rows(top.rows, d)
    bottom = stable_block(n, R2, p, _stream(seed, "pi2"))
    return Embedding(spec, (top, bottom))


def build_sampled_composed(n, d, p, eps, row_const=1.0, seed=0):
    """Composed CountSketch embedding whose stable entries are each kept with probability eps."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in the open interval (0, 1), got {eps}")
    spec = EmbeddingSpec("sampled_composed", n=n, d=d, p=p, eps=eps, row_const=row_const, seed=seed)
    top = _l2_part(n, d, "cs", None, row_const, seed).scaled(composed_scale(p, d, "cs"))
    R2 = stable_rows(top.rows, d)
    bottom = stable_block(n, R2, p, _stream(seed, "pi2"), keep_prob=eps)
    return Embedding(spec, (top, bottom))


def build_truncated(n, d, p, alpha, row_const=1.0, seed=0):
    """One truncated stable entry per column, ceil(row_const d^4 log^5 d) rows."""
    if not 0 < alpha < 0.25:
        raise ValueError(f"alpha must lie in (0, 1/4), got {alpha}")
    spec = EmbeddingSpec("truncated", n=n, d=d, p=p, alpha=alpha, row_const=row_const, seed=seed)
    R = truncated_rows(d, row_const)
    return Embedding(spec, (stable_block(n, R, p, _stream(seed, "pi2"), alpha=alpha),))


def build_dense_stable(n, d, p, r, seed=0):
    """Dense r x n matrix of i.i.d. (r log r)^(-1/p) p-stable entries."""
    if not r >= 2:
        raise ValueError(f"dense stable embedding needs r >= 2, got {r}")
    if r > MAX_DENSE_ROWS:
        raise ResourceError(f"astronomical r={r:.3g} exceeds 2^32 rows")
    r = int(r)
    if r * n > DENSE_CELL_GUARD:
        raise ResourceError(f"dense {r}x{n} embedding exceeds {DENSE_CELL_GUARD} cells")
    spec = EmbeddingSpec("dense_stable", n=n, d=d, p=p, rows=r, seed=seed)
    scale = (r * math.log(r)) ** (-1.0 / p)
    vals = sample_pstable(StableParams(p), _stream(seed, "dense"), r * n)
    return Embedding(spec, (DenseBlock(scale * vals.reshape(r, n)),))


def build_identity(n, d=1, seed=0):
    spec = EmbeddingSpec("identity", n=n, d=d, seed=seed)
    return Embedding(spec, (HashBlock(n, np.arange(n)[None, :], np.ones((1, n))),))


def theorem_rows_log(p, d, U_p, L_p):
    """Natural log of the constant-distortion row count exp(4e4 (24 (U/L)^(1/p))^(2d))."""
    return 4e4 * (24.0 * (U_p / L_p) ** (1.0 / p)) ** (2 * d)


def build(spec):
    """Realise an :class:`EmbeddingSpec`."""
    if isinstance(spec, dict):
        spec = EmbeddingSpec.from_dict(spec)
    f = spec.family
    if f == "countsketch":
        return build_countsketch(spec.n, spec.d, spec.row_const, spec.seed)
    if f == "osnap":
        return build_osnap(spec.n, spec.d, spec.B, spec.row_const, spec.seed)
    if f == "sparse_stable":
        return build_sparse_stable(spec.n, spec.d, spec.p, spec.rows, spec.seed)
    if f == "composed_cs":
        return build_composed(spec.n, spec.d, spec.p, "cs", None, spec.row_const, spec.seed)
    if f == "composed_osnap":
        return build_composed(spec.n, spec.d, spec.p, "osnap", spec.B, spec.row_const, spec.seed)
    if f == "sampled_composed":
        return build_sampled_composed(spec.n, spec.d, spec.p, spec.eps, spec.row_const, spec.seed)
    if f == "truncated":
        return build_truncated(spec.n, spec.d, spec.p, spec.alpha, spec.row_const, spec.seed)
    if f == "dense_stable":
        return build_dense_stable(spec.n, spec.d, spec.p, spec.rows, spec.seed)
    return build_identity(spec.n, spec.d, spec.seed)


def expected_rows(spec):
    """Row count implied by the spec, without building anything."""
    f, d = spec.family, spec.d
    if f == "countsketch":
        return countsketch_rows(d, spec.row_const)
    if f == "osnap":
        return osnap_rows(d, spec.B, spec.row_const)
    if f in ("sparse_stable", "dense_stable"):
        return spec.rows
    if f in ("composed_cs", "sampled_composed"):
        R1 = countsketch_rows(d, spec.row_const)
        return R1 + stable_rows(R1, d)
    if f == "composed_osnap":
        R1 = osnap_rows(d, spec.B, spec.row_const)
        return R1 + stable_rows(R1, d)
    if f == "truncated":
        return truncated_rows(d, spec.row_const)
    return spec.n
