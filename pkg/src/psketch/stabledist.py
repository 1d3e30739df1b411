"""Symmetric p-stable, Cauchy, Gaussian and truncated samplers, plus Monte-Carlo
estimators for tail events of sums of stable variables."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numcore import RngStream, uniform_open

TAIL_KINDS = ("cauchy_sum_upper", "pstable_sum_lower", "weighted_gaussian")


@dataclass(frozen=True)
class StableParams:
    """Exponent ``p`` in [1, 2] and a positive scale.

    The parametrisation is the one produced by the Chambers-Mallows-Stuck
    transform: characteristic function ``exp(-|scale*t|^p)``.  At p = 1 this
    is the standard Cauchy law, at p = 2 it is N(0, 2 scale^2).
    """

    p: float
    scale: float = 1.0

    def __post_init__(self):
        if not 1.0 <= float(self.p) <= 2.0:
            raise ValueError(f"p must lie in [1, 2], got {self.p}")
        if not float(self.scale) > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "scale", float(self.scale))


@dataclass(frozen=True)
class TruncationParams:
    alpha: float

    def __post_init__(self):
        if not float(self.alpha) > 0:
            raise ValueError("truncation threshold alpha must be positive")
        object.__setattr__(self, "alpha", float(self.alpha))


@dataclass(frozen=True)
class TailReport:
    kind: str
    n: int
    p: float
    trials: int
    probability: float
    stderr: float
    bound: float
    target: float

    @property
    def meets_target(self):
        """Whether the frequency reaches the target within two standard errors."""
        return self.probability >= self.target - 2.0 * max(self.stderr, 1e-12)


def _gen(stream):
    return stream.generator() if isinstance(stream, RngStream) else stream


def cauchy_icdf(u):
    return np.tan(np.pi * (np.asarray(u) - 0.5))


def sample_cauchy(stream, count):
    """i.i.d. standard Cauchy draws by inverse CDF."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return cauchy_icdf(uniform_open(_gen(stream), count))


def sample_gaussian(stream, count):
    if count < 1:
        raise ValueError("count must be >= 1")
    return _gen(stream).standard_normal(count)


def cms_transform(p, u, w):
    """Symmetric Chambers-Mallows-Stuck map from (uniform, Exp(1)) pairs."""
    phi = np.pi * (u - 0.5)
    if p == 1.0:
        return np.tan(phi)
    if p == 2.0:
        return 2.0 * np.sqrt(w) * np.sin(phi)
    return (
        np.sin(p * phi) / np.cos(phi) ** (1.0 / p)
        * (np.cos((1.0 - p) * phi) / w) ** ((1.0 - p) / p)
    )


def sample_pstable(params, stream, count):
    """i.i.d. symmetric p-stable draws.

    p = 1 follows exactly the same code path as :func:`sample_cauchy`, so the
    two agree draw-for-draw on equal streams.
    """
    if not isinstance(params, StableParams):
        params = StableParams(params)
    if count < 1:
        raise ValueError("count must be >= 1")
    gen = _gen(stream)
    if params.p == 1.0:
        return params.scale * sample_cauchy(gen, count)
    u = uniform_open(gen, count)
    w = -np.log(uniform_open(gen, count))
    return params.scale * cms_transform(params.p, u, w)


def truncate(x, t):
    """Push values in [-alpha, alpha] out to +-alpha, keeping the sign (0 -> +alpha)."""
    alpha = t.alpha if isinstance(t, TruncationParams) else TruncationParams(t).alpha
    x = np.asarray(x, dtype=np.float64)
    out = np.where((x >= 0) & (x <= alpha), alpha, x)
    out = np.where((x < 0) & (x >= -alpha), -alpha, out)
    return float(out) if out.ndim == 0 else out


def sample_truncated(p, alpha, stream, count):
    return truncate(sample_pstable(StableParams(p), stream, count), TruncationParams(alpha))


def ks_distance(x, y):
    """Two-sample Kolmogorov-Smirnov statistic."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / len(x)
    fy = np.searchsorted(y, grid, side="right") / len(y)
    return float(np.max(np.abs(fx - fy)))


def tail_exponent_constant(p):
    """Closed-form lim t^p Pr[X > t] for the symmetric CMS parametrisation."""
    if p == 2.0:
        return 0.0
    return math.gamma(p) * math.sin(math.pi * p / 2.0) / math.pi


# ---------------------------------------------------------------------------
# Monte-Carlo tail estimators
# ---------------------------------------------------------------------------

def _chunked_sums(p, n, trials, gen, power, chunk_elems=2_000_000):
    """Row sums of |X|^power for a (trials x n) block of p-stable draws."""
    out = np.empty(trials)
    per = max(1, chunk_elems // n)
    params = StableParams(p)
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        x = sample_pstable(params, gen, (hi - lo) * n).reshape(hi - lo, n)
        out[lo:hi] = np.sum(np.abs(x) ** power, axis=1)
    return out


def cauchy_upper_target(n):
    return 1.0 - math.log(math.log(n)) / math.log(n)


def sum_upper_statistics(p, n, trials, stream):
    """Samples of sum |X_i|^p / (n log n) over independent trials."""
    return _chunked_sums(p, n, trials, _gen(stream), p) / (n * math.log(n))


def sum_lower_statistics(p, n, T, trials, stream):
    """Samples of sum |X_i|^p / (n log(n / log T)) over independent trials."""
    denom = n * math.log(n / math.log(T))
    return _chunked_sums(p, n, trials, _gen(stream), p) / denom


def weighted_gaussian_statistics(a, p, trials, stream):
    """Samples of (sum |a_i X_i|^p)^(1/p) / ||a||_p with X standard Gaussian."""
    a = np.asarray(a, dtype=np.float64)
    gen = _gen(stream)
    norm = np.sum(np.abs(a) ** p) ** (1.0 / p)
    out = np.empty(trials)
    per = max(1, 2_000_000 // len(a))
    for lo in range(0, trials, per):
        hi = min(trials, lo + per)
        x = gen.standard_normal((hi - lo, len(a)))
        out[lo:hi] = np.sum(np.abs(a * x) ** p, axis=1) ** (1.0 / p)
    return out / norm


def mc_tail_report(kind, n, p, trials, stream, constants=None, T=100.0, a=None, C=None):
    """Empirical frequency of a tail event at the calibrated constant.

    ``cauchy_sum_upper``: sum |X_i|^p <= U_p n log n, target 1 - log log n / log n.
    ``pstable_sum_lower``: sum |X_i|^p >= L_p n log(n / log T), target 1 - 1/T.
    ``weighted_gaussian``: (sum |a_i g_i|^p)^(1/p) within a factor C_p of ||a||_p,
    target 0.99.  ``a`` defaults to e_1 of length n.
    """
    if kind not in TAIL_KINDS:
        raise ValueError(f"unknown tail kind {kind!r}; expected one of {TAIL_KINDS}")
    if n < 3:
        raise ValueError("n must be >= 3")
    if trials < 100:
        raise ValueError("trials must be >= 100")
    if constants is None:
        from .calibration import load_constants
        constants = load_constants()
    entry = constants.for_p(p)
    if kind == "cauchy_sum_upper":
        bound = entry.U_p
        stats = sum_upper_statistics(p, n, trials, stream)
        hits = stats <= bound
        target = cauchy_upper_target(n)
    elif kind == "pstable_sum_lower":
        bound = entry.L_p
        stats = sum_lower_statistics(p, n, T, trials, stream)
        hits = stats >= bound
        target = 1.0 - 1.0 / T
    else:
        bound = entry.C_p if C is None else float(C)
        if a is None:
            a = np.zeros(n)
            a[0] = 1.0
        stats = weighted_gaussian_statistics(a, p, trials, stream)
        hits = (stats >= 1.0 / bound) & (stats <= bound)
        target = 0.99
    prob = float(np.mean(hits))
    stderr = math.sqrt(max(prob * (1.0 - prob), target * (1.0 - target)) / trials)
    return TailReport(kind, int(n), float(p), int(trials), prob, stderr, float(bound), float(target))
