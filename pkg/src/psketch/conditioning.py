"""Well-conditioned bases via sketch-and-factor, and their empirical conditioning.

A basis ``U`` of col(A) is (alpha, beta, p)-well-conditioned when the
entrywise norm ``||U||_p`` is at most alpha and ``||x||_q <= beta ||U x||_p``
for every x, with q the dual exponent.  ``measure_conditioning`` reports the
exact alpha and an empirical lower bound on beta from a witness search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .distortion import _Budget, WitnessSearch
from .embeddings import EmbeddingSpec, build
from .errors import ConditioningError, DomainError
from .numcore import PNorm, RngStream, as_dense, lp_norm

GAUSSIAN_BATCH = 256


@dataclass(frozen=True)
class ConditioningReport:
    alpha_hat: float
    beta_hat: float
    p: float
    witnesses: int

    @property
    def product(self):
        return self.alpha_hat * self.beta_hat

    def to_dict(self):
        return {
            "p": self.p,
            "alpha_hat": self.alpha_hat,
            "beta_hat": self.beta_hat,
            "beta_label": "empirical lower bound",
            "witnesses": self.witnesses,
        }


def _positive_qr(M):
    """Householder QR with the signs fixed so that diag(R) > 0."""
    Q, R = la.qr(M, mode="economic")
    sign = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * sign, R * sign[:, None]


def well_conditioned_basis(A, p, spec, seed=None):
    """``U = A R^-1`` where ``Pi A = Q R`` for a sketch ``Pi`` drawn from ``spec``.

    ``seed`` overrides ``spec.seed`` when given.  ``p`` must be admissible for
    the spec's family.  Raises ConditioningError when ``Pi A`` loses rank.
    """
    A = as_dense(A, "A")
    if not isinstance(spec, EmbeddingSpec):
        spec = EmbeddingSpec.from_dict(spec)
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed)
    if spec.p != float(p):
        changes["p"] = float(p)
    if changes:
        spec = spec.replace(**changes)
    if (spec.n, spec.d) != A.shape:
        raise ValueError(f"spec is for a {spec.n}x{spec.d} input but A is {A.shape[0]}x{A.shape[1]}")
    SA = build(spec).apply(A)
    if SA.shape[0] < SA.shape[1]:
        raise ConditioningError(
            f"sketch has {SA.shape[0]} rows for d={SA.shape[1]}; increase the row count"
        )
    _, R = _positive_qr(SA)
    diag = np.diag(R)
    if diag.min() <= 1e-12 * diag.max() or not np.all(np.isfinite(R)):
        raise ConditioningError(
            f"sketched matrix is rank deficient (seed {spec.seed}); re-run with a different seed"
        )
    # A R^-1 computed as the transpose of R^-T A^T
    return la.solve_triangular(R, A.T, trans="T").T


def measure_conditioning(U, p, witnesses=1000, seed=0):
    """Entrywise ``||U||_p`` and the largest ``||x||_q / ||U x||_p`` over witnesses.

    Witnesses are coordinate vectors, then Gaussian directions, with a
    hill-climb refinement after the first Gaussian batch.  The sequence does
    not depend on ``witnesses``, so ``beta_hat`` is nondecreasing in it.
    """
    U = as_dense(U, "U")
    q = PNorm(p).q
    d = U.shape[1]
    if witnesses < d:
        raise ValueError(f"witnesses must be at least d = {d}")
    col = lp_norm(U, p, axis=0)
    if np.any(col == 0):
        raise DomainError(f"U has a zero column (index {int(np.argmin(col))})")
    search = WitnessSearch(
        num=lambda X: lp_norm(X, q, axis=0),
        den=lambda X: lp_norm(U @ X, p, axis=0),
        d=d,
        budget=int(witnesses),
        den_floor=lambda X: np.zeros(X.shape[1]),
    )
    gen = RngStream(int(seed)).child("conditioning").generator()
    try:
        search.evaluate(np.eye(d), "coordinate")
        search.evaluate(gen.standard_normal((GAUSSIAN_BATCH, d)), "gaussian")
        search.climb(sides=(True,))
        while True:
            search.evaluate(gen.standard_normal((GAUSSIAN_BATCH, d)), "gaussian")
    except _Budget:
        pass
    return ConditioningReport(
        alpha_hat=float(lp_norm(U, p)),
        beta_hat=float(np.max(search.ratios)),
        p=float(p),
        witnesses=int(search.used),
    )
