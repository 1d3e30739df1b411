"""Desk-scale lp regression: IRLS, sketch-and-solve, and sketch-precondition-sample.

The small-instance solver is iteratively reweighted least squares on the
smoothed objective ``sum_i rho(r_i)`` with
``rho(a) = int_0^|a| s (s + gamma)^(p-2) ds``.  Its IRLS weights
``(|r| + gamma)^(p-2)`` make every step a majorize-minimize step, so the
smoothed cost never increases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conditioning import well_conditioned_basis
from .embeddings import EmbeddingSpec, build
from .errors import ConditioningError
from .numcore import RngStream, as_dense, lp_norm

GAMMA = 1e-8
T_CONST = 40.0
MONOTONE_SLACK = 1e-9


def default_sample_size(d, const=T_CONST):
    """t = const * d * log d (natural log), at least d."""
    return max(float(d), const * d * math.log(d))


def _full_rank(A):
    if A.shape[0] < A.shape[1]:
        return False
    R = np.linalg.qr(A, mode="r")
    diag = np.abs(np.diag(R))
    return diag.size == 0 or diag.min() > 1e-12 * max(diag.max(), 1e-300)


@dataclass(frozen=True)
class RegressionProblem:
    A: np.ndarray
    b: np.ndarray
    p: float

    def __post_init__(self):
        A = as_dense(self.A, "A")
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if b.shape[0] != A.shape[0]:
            raise ValueError(f"b has length {b.shape[0]} but A has {A.shape[0]} rows")
        if not np.all(np.isfinite(b)):
            raise ValueError("b must be finite")
        if not 1.0 <= float(self.p) <= 2.0:
            raise ValueError(f"p must lie in [1, 2], got {self.p}")
        if not _full_rank(A):
            raise ConditioningError("A must have full column rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "p", float(self.p))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def d(self):
        return self.A.shape[1]

    def cost(self, x):
        return float(lp_norm(self.A @ np.asarray(x, dtype=np.float64) - self.b, self.p))


@dataclass
class RegressionResult:
    x_hat: np.ndarray
    cost: float
    method: str
    iterations: int
    seed: int | None = None
    converged: bool = True
    history: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "x_hat": [float(v) for v in self.x_hat],
            "cost": self.cost,
            "method": self.method,
            "iterations": self.iterations,
            "seed": self.seed,
            "converged": self.converged,
            **self.extra,
        }


def smoothed_cost(r, p, gamma=GAMMA):
    """``sum_i rho(r_i)`` with ``rho(a) = int_0^|a| s (s + gamma)^(p-2) ds``."""
    a = np.abs(r)
    if p == 2.0:
        return float(np.sum(a * a) / 2.0)
    if p == 1.0:
        return float(np.sum(a - gamma * np.log1p(a / gamma)))
    g = gamma
    term1 = ((a + g) ** p - g**p) / p
    term2 = g * ((a + g) ** (p - 1.0) - g ** (p - 1.0)) / (p - 1.0)
    return float(np.sum(term1 - term2))


def _wls(A, b, w):
    sw = np.sqrt(w)
    x, *_ = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)
    return x


def irls_solve(prob, weights=None, tol=1e-10, max_iter=500, gamma=GAMMA):
    """Minimise ``||diag(weights) (A x - b)||_p`` by smoothed IRLS.

    ``weights`` are nonnegative row multipliers (default all ones).  Iteration
    stops when the relative change of the smoothed cost drops below ``tol``;
    hitting ``max_iter`` first sets ``converged=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    p = prob.p
    A, b = prob.A, prob.b
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != prob.n or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be a finite nonnegative vector with one entry per row")
        A = A * weights[:, None]
        b = b * weights
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    f = smoothed_cost(A @ x - b, p, gamma)
    # cost of residuals at rounding level, below which increases are noise
    noise = 64 * np.finfo(float).eps * max(np.abs(b).max(initial=0.0), 1e-300)
    floor = smoothed_cost(np.full(b.shape[0], noise), p, gamma)
    history = [f]
    converged = p == 2.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        r = A @ x - b
        x_new = _wls(A, b, (np.abs(r) + gamma) ** (p - 2.0))
        f_new = smoothed_cost(A @ x_new - b, p, gamma)
        if f_new > f * (1.0 + MONOTONE_SLACK) + floor:
            raise RuntimeError(f"IRLS smoothed cost increased at iteration {it}: {f} -> {f_new}")
        if f_new > f:
            # rounding-level uptick: the iterate is already optimal to working precision
            converged = True
            break
        change = (f - f_new) / max(f, 1e-300)
        x, f = x_new, f_new
        history.append(f)
        if change < tol:
            converged = True
    cost = float(lp_norm(A @ x - b, p))
    return RegressionResult(x, cost, "irls", it, None, converged, history)


def _spec_for(prob, spec, seed):
    if not isinstance(spec, EmbeddingSpec):
        spec = EmbeddingSpec.from_dict(spec)
    changes = {}
    if seed is not None:
        changes["seed"] = int(seed)
    if spec.p != prob.p:
        changes["p"] = prob.p
    if changes:
        spec = spec.replace(**changes)
    if (spec.n, spec.d) != (prob.n, prob.d):
        raise ValueError(f"spec is for {spec.n}x{spec.d} but the problem is {prob.n}x{prob.d}")
    return spec


def sketch_solve(prob, spec, seed=None, **irls_kw):
    """Solve ``min ||Pi A x - Pi b||_p`` and report the original-space cost."""
    spec = _spec_for(prob, spec, seed)
    Pi = build(spec)
    SAb = Pi.apply(np.column_stack([prob.A, prob.b]))
    SA, Sb = SAb[:, :-1], SAb[:, -1]
    if not _full_rank(SA):
        raise ConditioningError(f"sketched matrix is rank deficient (seed {spec.seed}); re-seed")
    inner = irls_solve(RegressionProblem(SA, Sb, prob.p), **irls_kw)
    return RegressionResult(
        inner.x_hat, prob.cost(inner.x_hat), f"sketch:{spec.family}", inner.iterations,
        spec.seed, inner.converged, inner.history, {"sketch_rows": Pi.rows},
    )


def sampling_probabilities(U, p, t):
    """q_i = min(1, t ||U_i||_p^p / sum_j ||U_j||_p^p)."""
    mass = np.sum(np.abs(U) ** p, axis=1)
    return np.minimum(1.0, t * mass / np.sum(mass))


def precondition_sample_solve(prob, spec, t=None, seed=None, **irls_kw):
    """Sketch to a well-conditioned basis, Poisson-sample rows, solve the reweighted sample.

    Row i is kept with probability q_i and reweighted by q_i^(-1/p).  ``t``
    defaults to 40 d log d.
    """
    if t is None:
        t = default_sample_size(prob.d)
    if t < prob.d:
        raise ValueError(f"sample size t={t} must be at least d={prob.d}")
    spec = _spec_for(prob, spec, seed)
    U = well_conditioned_basis(prob.A, prob.p, spec)
    q = sampling_probabilities(U, prob.p, t)
    gen = RngStream(int(spec.seed)).child("sample").generator()
    keep = gen.random(prob.n) < q
    idx = np.flatnonzero(keep)
    if not _full_rank(prob.A[idx]):
        raise ConditioningError(
            f"sampled rows are rank deficient (seed {spec.seed}, {idx.size} rows); re-seed"
        )
    sub = RegressionProblem(prob.A[idx], prob.b[idx], prob.p)
    inner = irls_solve(sub, weights=q[idx] ** (-1.0 / prob.p), **irls_kw)
    return RegressionResult(
        inner.x_hat, prob.cost(inner.x_hat), f"precondition_sample:{spec.family}", inner.iterations,
        spec.seed, inner.converged, inner.history, {"sampled_rows": int(idx.size), "t": float(t)},
    )


def regression_instance(n, d, p=1.0, seed=0, noise="laplace"):
    """Gaussian design with a planted solution and Laplace (or Gaussian) noise."""
    gen = RngStream(int(seed)).child("regression").generator()
    A = gen.standard_normal((n, d))
    x_star = gen.standard_normal(d)
    if noise == "laplace":
        e = gen.laplace(size=n)
    elif noise == "gaussian":
        e = gen.standard_normal(n)
    else:
        raise ValueError(f"noise must be 'laplace' or 'gaussian', got {noise!r}")
    return RegressionProblem(A, A @ x_star + e, p)
