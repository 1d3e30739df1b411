"""Sampler for the lower-bound hard distribution of D-, M- and S-columns.

Column 0 is the dense D-column.  The next d/4 columns are M-columns with 4n/d
nonzeros on consecutive row ranges.  The next d/2 columns are S-columns split
into log2(n/d) blocks; block i columns have 2^(i+1) nonzeros on rows drawn
without replacement within the block.  The remaining columns are zero.  All
nonzeros are i.i.d. standard Gaussian.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .numcore import RngStream, SparseMatrix, atomic_write, write_matrix

LAYOUTS = ("strict", "spread")


def _is_pow2(k):
    return k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class HardInstanceSpec:
    """``layout="strict"`` requires d/2 to be divisible by the block count.

    ``layout="spread"`` drops that requirement and assigns S-column k to block
    floor(k L / (d/2)), spreading the columns as evenly as possible over the L
    blocks (a block may hold none).  With divisible sizes both layouts agree.
    """

    n: int
    d: int
    seed: int = 0
    layout: str = "strict"

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid HardInstanceSpec: " + "; ".join(problems))

    def problems(self):
        out = []
        n, d = self.n, self.d
        if self.layout not in LAYOUTS:
            out.append(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if not (isinstance(n, (int, np.integer)) and isinstance(d, (int, np.integer))) or d < 1:
            return out + ["n and d must be positive integers"]
        if d % 4:
            out.append(f"d must be divisible by 4, got d={d}")
        if n % d or not _is_pow2(n // d) or n // d < 2:
            out.append(f"n/d must be a power of two >= 2, got n={n}, d={d}")
        elif self.layout == "strict" and d % 4 == 0 and (d // 2) % self.blocks:
            out.append(f"d/2 = {d // 2} must be divisible by log2(n/d) = {self.blocks} (or use layout='spread')")
        if not 0 <= int(self.seed) < 2**64:
            out.append("seed must be a 64-bit unsigned value")
        return out

    @property
    def blocks(self):
        return int(round(math.log2(self.n // self.d)))

    def s_blocks(self):
        """Block index of each of the d/2 S-columns."""
        half = self.d // 2
        return (np.arange(half) * self.blocks // half).tolist()

    def roles(self):
        d = self.d
        out = [{"role": "D"}]
        out += [{"role": "M", "index": j} for j in range(d // 4)]
        out += [{"role": "S", "block": b} for b in self.s_blocks()]
        out += [{"role": "zero"}] * (d - len(out))
        return out

    def column_nnz(self):
        """Closed-form nonzero count per column."""
        n, d = self.n, self.d
        s_nnz = np.left_shift(2, np.asarray(self.s_blocks(), dtype=np.int64)).tolist()
        return [n] + [4 * n // d] * (d // 4) + s_nnz + [0] * (d - 1 - d // 4 - len(s_nnz))


@dataclass(frozen=True)
class HardInstance:
    spec: HardInstanceSpec
    matrix: SparseMatrix

    @property
    def blocks(self):
        return self.spec.blocks

    @cached_property
    def roles(self):
        return tuple(self.spec.roles())

    def columns_with(self, role):
        return [j for j, r in enumerate(self.roles) if r["role"] == role]


def generate_hard(spec):
    """Draw one instance.  D, M and each S-block use independent sub-streams."""
    if isinstance(spec, dict):
        spec = HardInstanceSpec(**spec)
    n, d = spec.n, spec.d
    root = RngStream(int(spec.seed)).child("hard")
    # columns are emitted in order with sorted rows, so the CSC arrays are built directly
    indices = [np.arange(n), np.arange(n)]
    data = [root.child("D").generator().standard_normal(n)]
    # the M-columns tile rows 0..n-1 in order, one draw covers all of them
    data.append(root.child("M").generator().standard_normal(n))

    counts = np.bincount(spec.s_blocks(), minlength=spec.blocks)
    for b in np.flatnonzero(counts).tolist():
        g = root.child(f"S{b}").generator()
        k, m = 2 ** (b + 1), int(counts[b])
        support = g.choice(n, size=k * m, replace=False)
        indices.append(np.sort(support.reshape(m, k), axis=1).ravel())
        data.append(g.standard_normal(k * m))

    indptr = np.zeros(d + 1, dtype=np.int64)
    np.cumsum(spec.column_nnz(), out=indptr[1:])
    M = SparseMatrix((n, d), indptr, np.concatenate(indices), np.concatenate(data))
    return HardInstance(spec, M)


def abs_moment(p):
    """E|g|^p for a standard Gaussian g."""
    return 2.0 ** (p / 2.0) * math.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)


def expected_column_norms(spec, p, constants=None, C=None):
    """Per-role nnz, the bracket [k^(1/p)/C_p, C_p k^(1/p)] and the mean-based typical norm.

    ``C`` overrides the calibrated C_p.  Keys are ``"D"``, ``"M"`` and ``"S<i>"``
    for every block that holds at least one column.
    """
    if C is None:
        if constants is None:
            from .calibration import load_constants
            constants = load_constants()
        C = constants.for_p(p).C_p
    out = {}
    for role, k in zip(spec.roles(), spec.column_nnz()):
        if role["role"] == "zero":
            continue
        key = role["role"] if role["role"] != "S" else f"S{role['block']}"
        base = k ** (1.0 / p)
        out[key] = {
            "nnz": k,
            "lo": base / C,
            "hi": base * C,
            "typical": base * abs_moment(p) ** (1.0 / p),
        }
    return out


def save_hard(instance, path):
    """MatrixMarket file at ``path`` plus ``<path>.roles.json``."""
    path = Path(path)
    write_matrix(path, instance.matrix)
    sidecar = {"spec": asdict(instance.spec), "blocks": instance.blocks, "roles": list(instance.roles)}
    atomic_write(Path(str(path) + ".roles.json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path
