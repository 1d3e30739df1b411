"""Distortion measurement for subspace embeddings.

For p = 2 the distortion of ``Pi`` on ``col(A)`` is exact: the extreme
singular values of ``Pi Q`` for an orthonormal basis ``Q``.  For other p the
harness evaluates ``||Pi A x||_p / ||A x||_p`` over a deterministic sequence of
witness directions and reports the extremes, which bound the true distortion
from below.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .embeddings import Embedding
from .errors import ConditioningError, ResourceError
from .numcore import RngStream, SparseMatrix, as_dense, lp_norm, spmm_apply

GENERATORS = ("coordinate", "sparse", "net", "gaussian", "climb")
SPARSE_PAIR_CAP = 256
GAUSSIAN_BATCH = 256
CLIMB_SEEDS = 5
CLIMB_ITERS = 100
CLIMB_STEP = 1.5
NET_EPS = 0.25
NET_MAX_POINTS = 10**7


@dataclass
class DistortionReport:
    p: float
    min_ratio: float
    max_ratio: float
    method: str
    contraction_witness: np.ndarray
    dilation_witness: np.ndarray
    witness_counts: dict = field(default_factory=dict)
    skipped: int = 0
    top_contraction: list = field(default_factory=list)
    top_dilation: list = field(default_factory=list)

    @property
    def kappa_hat(self):
        return self.max_ratio / self.min_ratio

    @property
    def label(self):
        return "exact" if self.method == "exact_l2" else "empirical lower bound"

    def to_dict(self):
        return {
            "p": self.p,
            "method": self.method,
            "label": self.label,
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "kappa_hat": self.kappa_hat,
            "witness_counts": dict(self.witness_counts),
            "skipped": self.skipped,
            "contraction_witness": [float(v) for v in self.contraction_witness],
            "dilation_witness": [float(v) for v in self.dilation_witness],
        }


def sketch_of(Pi, A):
    """``Pi @ A`` for an Embedding, SparseMatrix, dense array, or None (identity)."""
    if Pi is None:
        return as_dense(A) if not isinstance(A, SparseMatrix) else A.toarray()
    if isinstance(Pi, Embedding):
        return Pi.apply(A)
    if isinstance(Pi, SparseMatrix):
        return spmm_apply(Pi, A.toarray() if isinstance(A, SparseMatrix) else A)
    Pi = as_dense(Pi, "Pi")
    if isinstance(A, SparseMatrix):
        return np.asarray((A.to_scipy().T @ Pi.T).T)
    return Pi @ A


def _matvec(A, X):
    if isinstance(A, SparseMatrix):
        return np.asarray(A.to_scipy() @ X)
    return A @ X


def ratio_of(Pi, A, x, p):
    """Recompute one witness ratio from scratch."""
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    num = lp_norm(sketch_of(Pi, A) @ x, p)
    den = lp_norm(_matvec(A, x), p)
    return num / den


# ---------------------------------------------------------------------------
# exact l2
# ---------------------------------------------------------------------------

def exact_l2_distortion(Pi, A):
    """Extreme singular values of ``Pi Q`` with ``Q`` an orthonormal basis of col(A)."""
    A = A.toarray() if isinstance(A, SparseMatrix) else as_dense(A)
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise ConditioningError("A is rank deficient; distortion is undefined")
    s = sketch_of(Pi, Q)
    if s.shape == Q.shape and np.array_equal(s, Q):
        # Pi fixes col(A), so every ratio is exactly 1
        sv, Vt = np.ones(Q.shape[1]), np.eye(Q.shape[1])
    else:
        _, sv, Vt = np.linalg.svd(s, full_matrices=False)
    # witnesses in A's coefficient space: A x = Q v  =>  x = R^-1 v
    x_max = la.solve_triangular(R, Vt[0])
    x_min = la.solve_triangular(R, Vt[-1])
    d = A.shape[1]
    return DistortionReport(
        p=2.0,
        min_ratio=float(sv[-1]),
        max_ratio=float(sv[0]),
        method="exact_l2",
        contraction_witness=x_min,
        dilation_witness=x_max,
        witness_counts={"singular": d},
    )


# ---------------------------------------------------------------------------
# epsilon nets
# ---------------------------------------------------------------------------

def _orthonormal_coords(U):
    Q, R = np.linalg.qr(U)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise ConditioningError("basis is rank deficient")
    return R


def net_directions(U, p, eps):
    """Coefficient vectors ``x`` whose images ``U x`` form an eps-net of the unit lp sphere.

    Directions are laid on a uniform grid (the circle for d = 2, the six faces
    of the cube for d = 3) in orthonormal coordinates of col(U), refined by
    doubling until neighbouring images are within eps/2 of each other, and
    normalised so that ``||U x||_p = 1``.
    """
    U = U.toarray() if isinstance(U, SparseMatrix) else as_dense(U)
    d = U.shape[1]
    if d > 3:
        raise ResourceError(f"net_directions supports d <= 3, got d={d}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if (3.0 / eps) ** d > NET_MAX_POINTS:
        raise ResourceError(f"(3/eps)^d = {(3.0 / eps) ** d:.3g} net points exceeds the guard")
    R = _orthonormal_coords(U)

    def images(Z):
        X = la.solve_triangular(R, Z.T).T
        Y = U @ X.T
        nrm = lp_norm(Y, p, axis=0)
        return X / nrm[:, None], Y / nrm

    if d == 1:
        X, _ = images(np.array([[1.0], [-1.0]]))
        return X

    m = 8
    while True:
        if d == 2:
            th = 2 * np.pi * np.arange(m) / m
            Z = np.column_stack([np.cos(th), np.sin(th)])
            X, Y = images(Z)
            gaps = lp_norm(Y - np.roll(Y, -1, axis=1), p, axis=0)
        else:
            g = np.linspace(-1.0, 1.0, m + 1)
            uu, vv = np.meshgrid(g, g, indexing="ij")
            faces = []
            for axis in range(3):
                for sign in (1.0, -1.0):
                    F = np.empty((m + 1, m + 1, 3))
                    others = [a for a in range(3) if a != axis]
                    F[..., axis] = sign
                    F[..., others[0]] = uu
                    F[..., others[1]] = vv
                    faces.append(F)
            F = np.stack(faces)  # (6, m+1, m+1, 3)
            Z = F.reshape(-1, 3)
            X, Y = images(Z)
            Yg = Y.T.reshape(6, m + 1, m + 1, -1)
            gaps = np.concatenate([
                lp_norm(Yg[:, 1:, :, :] - Yg[:, :-1, :, :], p, axis=-1).ravel(),
                lp_norm(Yg[:, :, 1:, :] - Yg[:, :, :-1, :], p, axis=-1).ravel(),
                lp_norm(Yg[:, 1:, 1:, :] - Yg[:, :-1, :-1, :], p, axis=-1).ravel(),
            ])
        if gaps.max() <= eps / 2:
            return X
        m *= 2
        if m ** (d - 1) * 6 > NET_MAX_POINTS:
            raise ResourceError("net refinement exceeded the point guard")


# ---------------------------------------------------------------------------
# witness search
# ---------------------------------------------------------------------------

class _Budget(Exception):
    pass


class WitnessSearch:
    """Evaluate ``num(X) / den(X)`` over a budget-independent witness sequence.

    Extremes over a budget are therefore extremes over a prefix of one fixed
    sequence, which makes them monotone in the budget.
    """

    def __init__(self, num, den, d, budget, den_floor):
        self.num, self.den, self.d = num, den, d
        self.budget = budget
        self.den_floor = den_floor
        self.X = []
        self.ratios = []
        self.kinds = []
        self.counts = {}
        self.skipped = 0
        self.used = 0

    def evaluate(self, X, kind):
        """Evaluate rows of X (k x d); returns ratios (nan where skipped)."""
        X = np.atleast_2d(X)
        room = self.budget - self.used
        if room <= 0:
            raise _Budget
        truncated = len(X) > room
        X = X[:room]
        num = self.num(X.T)
        den = self.den(X.T)
        floor = self.den_floor(X.T)
        ok = den > floor
        r = np.full(len(X), np.nan)
        r[ok] = num[ok] / den[ok]
        self.used += len(X)
        self.skipped += int(np.count_nonzero(~ok))
        self.counts[kind] = self.counts.get(kind, 0) + int(np.count_nonzero(ok))
        self.X.extend(X[ok])
        self.ratios.extend(r[ok])
        self.kinds.extend([kind] * int(np.count_nonzero(ok)))
        if truncated:
            raise _Budget
        return r

    def best(self, k, largest):
        r = np.asarray(self.ratios)
        if not len(r):
            return []
        order = np.argsort(-r if largest else r, kind="stable")
        return [int(i) for i in order[:k]]

    def climb(self, sides=(True, False), seeds=CLIMB_SEEDS, iters=CLIMB_ITERS, step=CLIMB_STEP):
        """Coordinate-wise ascent from the best witnesses of each requested side.

        ``sides`` holds True for the largest ratio and False for the smallest;
        both sides advance together, one coordinate per iteration.  Per climber
        the moves on coordinate i are x_i*step, x_i/step and
        x_i +- (step-1)*||x||_inf; when all four fail, that coordinate's step
        excess is halved.  An incumbent is only replaced by a strictly better
        witness.
        """
        climbers = []
        for largest in sides:
            sgn = 1.0 if largest else -1.0
            for k in self.best(seeds, largest):
                climbers.append([np.array(self.X[k]), self.ratios[k], sgn, np.full(self.d, step - 1.0)])
        if not climbers:
            return
        for it in range(iters):
            i = it % self.d
            cands = []
            for x, _, _, delta in climbers:
                scale = np.max(np.abs(x))
                moves = np.repeat(x[None, :], 4, axis=0)
                moves[0, i] *= 1.0 + delta[i]
                moves[1, i] /= 1.0 + delta[i]
                moves[2, i] += delta[i] * scale
                moves[3, i] -= delta[i] * scale
                cands.append(moves)
            cands = np.concatenate(cands)
            r = self.evaluate(cands, "climb")
            for c, cl in enumerate(climbers):
                rc = r[4 * c:4 * c + 4]
                good = np.where(np.isnan(rc), -np.inf, cl[2] * rc)
                j = int(np.argmax(good))
                if good[j] > cl[2] * cl[1]:
                    cl[0], cl[1] = cands[4 * c + j], rc[j]
                else:
                    cl[3][i] *= 0.5


def _sparse_pairs(d, gen):
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    out = []
    for i, j in pairs:
        for s in (1.0, -1.0):
            x = np.zeros(d)
            x[i], x[j] = 1.0, s
            out.append(x)
    out = np.array(out) if out else np.zeros((0, d))
    if len(out) > SPARSE_PAIR_CAP:
        out = out[np.sort(gen.choice(len(out), SPARSE_PAIR_CAP, replace=False))]
    return out


def run_search(search, gen, generators, climb_sides, net_source=None, p=None):
    d = search.d
    try:
        if "coordinate" in generators:
            search.evaluate(np.eye(d), "coordinate")
        if "sparse" in generators and d > 1:
            pairs = _sparse_pairs(d, gen)
            if len(pairs):
                search.evaluate(pairs, "sparse")
        if "net" in generators and d <= 3 and net_source is not None:
            search.evaluate(net_directions(net_source, p, NET_EPS), "net")
        if "gaussian" in generators:
            search.evaluate(gen.standard_normal((GAUSSIAN_BATCH, d)), "gaussian")
        if "climb" in generators:
            search.climb(climb_sides)
        if "gaussian" in generators:
            while True:
                search.evaluate(gen.standard_normal((GAUSSIAN_BATCH, d)), "gaussian")
    except _Budget:
        pass


def empirical_lp_distortion(Pi, A, p, generators=GENERATORS, budget=1000, seed=0, top_k=3):
    """Extreme ratios ||Pi A x||_p / ||A x||_p over witness directions.

    ``kappa_hat`` of the result is a lower bound on the true distortion.
    Witnesses with ``A x = 0`` (relative to the column scale) are skipped and
    counted in ``skipped``.
    """
    if isinstance(A, SparseMatrix):
        d = A.cols
        col_norms = np.array([lp_norm(A.column(j)[1], p) for j in range(d)])
    else:
        A = as_dense(A)
        d = A.shape[1]
        col_norms = lp_norm(A, p, axis=0)
    if budget < 2 * d:
        raise ValueError(f"budget must be at least 2d = {2 * d}")
    unknown = set(generators) - set(GENERATORS)
    if unknown:
        raise ValueError(f"unknown witness generators {sorted(unknown)}")
    PA = sketch_of(Pi, A)
    search = WitnessSearch(
        num=lambda X: lp_norm(PA @ X, p, axis=0),
        den=lambda X: lp_norm(_matvec(A, X), p, axis=0),
        d=d,
        budget=budget,
        den_floor=lambda X: 1e-12 * (col_norms @ np.abs(X)),
    )
    gen = RngStream(int(seed)).child("witness").generator()
    net_src = None
    if "net" in generators and d <= 3:
        net_src = A.toarray() if isinstance(A, SparseMatrix) else A
        try:
            _orthonormal_coords(net_src)
        except ConditioningError:
            net_src = None
    run_search(search, gen, generators, (True, False), net_src, p)
    if not search.ratios:
        raise ConditioningError("every witness had A x = 0")
    r = np.asarray(search.ratios)
    imax, imin = int(np.argmax(r)), int(np.argmin(r))
    top_dil = [(float(r[i]), np.array(search.X[i]), search.kinds[i]) for i in search.best(top_k, True)]
    top_con = [(float(r[i]), np.array(search.X[i]), search.kinds[i]) for i in search.best(top_k, False)]
    return DistortionReport(
        p=float(p),
        min_ratio=float(r[imin]),
        max_ratio=float(r[imax]),
        method="empirical",
        contraction_witness=np.array(search.X[imin]),
        dilation_witness=np.array(search.X[imax]),
        witness_counts=dict(search.counts),
        skipped=search.skipped,
        top_contraction=top_con,
        top_dilation=top_dil,
    )
