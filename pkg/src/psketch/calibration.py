"""Monte-Carlo calibration of the distribution constants used as thresholds.

Every constant is estimated from an empirical quantile (or tail frequency)
and stored together with a distribution-free 95% confidence interval.  The
``value`` field holds the conservative end of the interval for constants that
are used as bounds (upper end for U, C, alpha and omega; lower end for L).

The constants file is a JSON map ``{p: {C_p, U_p, L_p, alpha_p, c_p, omega,
trials, seed, ...}}``; a ``"meta"`` key records the calibration settings.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .numcore import RngStream
from .stabledist import (
    StableParams,
    cauchy_upper_target,
    sample_cauchy,
    sample_pstable,
    sum_lower_statistics,
    sum_upper_statistics,
    tail_exponent_constant,
    weighted_gaussian_statistics,
)

SCHEMA_VERSION = 1
CALIBRATED_PS = (1.0, 1.25, 1.5, 1.75)
DEFAULT_PATH = "constants.json"
Z95 = 1.959963984540054


@dataclass(frozen=True)
class Estimate:
    value: float
    lo: float
    hi: float

    def __post_init__(self):
        if not (self.lo <= self.hi):
            raise ValueError("empty confidence interval")


@dataclass(frozen=True)
class PConstants:
    p: float
    C_p: float
    U_p: float
    L_p: float
    alpha_p: float
    c_p: float
    omega: float
    trials: int
    seed: int
    intervals: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("C_p", "U_p", "L_p", "alpha_p", "c_p", "omega"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.C_p > 1:
            raise ValueError("C_p must exceed 1")


@dataclass(frozen=True)
class CalibrationConstants:
    entries: dict
    meta: dict = field(default_factory=dict)

    def for_p(self, p):
        p = float(p)
        for key, entry in self.entries.items():
            if abs(float(key) - p) < 1e-12:
                return entry
        raise KeyError(f"no calibrated constants for p={p}; available: {sorted(self.entries)}")

    def to_json(self):
        out = {"meta": self.meta}
        for p, e in sorted(self.entries.items()):
            d = asdict(e)
            out[repr(float(p))] = d
        return json.dumps(out, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        meta = raw.pop("meta", {})
        entries = {float(k): PConstants(**v) for k, v in raw.items()}
        return cls(entries, meta)


def load_constants(path=None):
    if path is None:
        text = resources.files("psketch.data").joinpath(DEFAULT_PATH).read_text()
    else:
        text = Path(path).read_text()
    return CalibrationConstants.from_json(text)


def save_constants(constants, path):
    Path(path).write_text(constants.to_json() + "\n")


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def quantile_ci(samples, level):
    """Empirical quantile with an order-statistic 95% confidence interval."""
    s = np.sort(np.asarray(samples))
    N = len(s)
    k = level * N
    half = Z95 * math.sqrt(N * level * (1.0 - level))
    idx = lambda x: int(min(N - 1, max(0, math.floor(x))))
    return Estimate(float(s[idx(k)]), float(s[idx(k - half)]), float(s[idx(k + half)]))


def calibrate_upper(p, stream, ns=(10, 100, 1000, 10_000), trials=10_000):
    """U_p: worst quantile over n of sum|X|^p / (n log n) at level 1 - loglog n / log n."""
    worst = None
    per_n = {}
    for n in ns:
        stats = sum_upper_statistics(p, n, trials, stream.child(f"upper/{n}"))
        est = quantile_ci(stats, cauchy_upper_target(n))
        per_n[n] = est
        if worst is None or est.hi > worst.hi:
            worst = est
    return Estimate(worst.hi, worst.lo, worst.hi), per_n


def calibrate_lower(p, stream, ns=(1000, 10_000), T=100.0, trials=10_000):
    """L_p: smallest 1/T quantile over n of sum|X|^p / (n log(n / log T))."""
    worst = None
    per_n = {}
    for n in ns:
        stats = sum_lower_statistics(p, n, T, trials, stream.child(f"lower/{n}"))
        est = quantile_ci(stats, 1.0 / T)
        per_n[n] = est
        if worst is None or est.lo < worst.lo:
            worst = est
    return Estimate(worst.lo, worst.lo, worst.hi), per_n


def _two_sided_factor(ratios, mass=0.01):
    """Smallest C with Pr[ratio < 1/C] + Pr[ratio > C] <= mass."""
    r = np.sort(ratios)
    N = len(r)

    def outside(C):
        return (np.searchsorted(r, 1.0 / C, side="left") + N - np.searchsorted(r, C, side="right")) / N

    lo, hi = 1.0, 2.0
    while outside(hi) > mass:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if outside(mid) > mass:
            lo = mid
        else:
            hi = mid
    return hi


def calibrate_gaussian_factor(p, stream, trials=200_000, replicates=5):
    """C_p over a family of weight vectors; the single-coordinate vector is the worst case."""
    gen = stream.child("weights").generator()
    weights = {
        "e1": np.array([1.0]),
        "pair": np.array([1.0, 1.0]),
        "flat16": np.ones(16),
        "geometric16": 2.0 ** -np.arange(16),
        "random16": np.abs(gen.standard_normal(16)),
    }
    reps = []
    for k in range(replicates):
        worst = 1.0
        for name, a in weights.items():
            ratios = weighted_gaussian_statistics(a, p, trials // replicates, stream.child(f"gauss/{name}/{k}"))
            worst = max(worst, _two_sided_factor(ratios))
        reps.append(worst)
    reps = np.array(reps)
    mean = float(reps.mean())
    half = Z95 * float(reps.std(ddof=1)) / math.sqrt(replicates)
    return Estimate(mean + half, mean - half, mean + half)


def calibrate_dominance(p, stream, draws=1_000_000, grid=2000):
    """alpha_p: sup over quantile levels of Q_{|X_p|^p}(u) / Q_{|C|}(u), conservative."""
    xp = np.sort(np.abs(sample_pstable(StableParams(p), stream.child("dom/x"), draws)) ** p)
    c = np.sort(np.abs(sample_cauchy(stream.child("dom/c"), draws)))
    levels = np.linspace(0.0005, 0.9995, grid)
    half = Z95 * np.sqrt(draws * levels * (1 - levels))
    k = np.floor(levels * draws).astype(int)
    hi = np.minimum(draws - 1, np.floor(k + half).astype(int))
    lo = np.maximum(0, np.floor(k - half).astype(int))
    upper = float(np.max(xp[hi] / c[lo]))
    lower = float(np.max(xp[lo] / c[hi]))
    return Estimate(upper, lower, upper)


def calibrate_tail_constant(p, stream, draws=20_000_000, ts=(30.0, 100.0)):
    """c_p from two-sided tail frequencies at large t (symmetry doubles the sample)."""
    if p == 2.0:
        return Estimate(0.0, 0.0, 0.0)
    gen = stream.child("tail").generator()
    hits = np.zeros(len(ts))
    chunk = 2_000_000
    for lo in range(0, draws, chunk):
        x = np.abs(sample_pstable(StableParams(p), gen, min(chunk, draws - lo)))
        hits += [np.count_nonzero(x > t) for t in ts]
    freq = hits / (2.0 * draws)
    est = freq * np.asarray(ts) ** p
    se = np.sqrt(freq * (1 - freq) / (2.0 * draws)) * np.asarray(ts) ** p
    w = 1.0 / se**2
    value = float(np.sum(w * est) / np.sum(w))
    half = Z95 / math.sqrt(float(np.sum(w)))
    return Estimate(value, value - half, value + half)


def omega_statistics(p, d, n, trials, stream):
    """||Pi_2 U||_p / (d log d)^(1/p) for the block-indicator well-conditioned basis U."""
    gen = stream.generator()
    R2 = int(math.ceil(d**1.1))
    block = n // d
    col = np.repeat(np.arange(d), block)
    scale = block ** (-1.0 / p)
    out = np.empty(trials)
    params = StableParams(p)
    for t in range(trials):
        h = gen.integers(0, R2, size=d * block)
        D = sample_pstable(params, gen, d * block)
        M = np.bincount(h * d + col, weights=D * scale, minlength=R2 * d)
        out[t] = np.sum(np.abs(M) ** p) ** (1.0 / p)
    return out / (d * math.log(d)) ** (1.0 / p)


def calibrate_omega(p, stream, dims=(8, 16), n=4096, trials=4000):
    worst = None
    for d in dims:
        est = quantile_ci(omega_statistics(p, d, n, trials, stream.child(f"omega/{d}")), 0.999)
        if worst is None or est.hi > worst.hi:
            worst = est
    return Estimate(worst.hi, worst.lo, worst.hi)


def calibrate_p(p, seed, trials=10_000, quick=False):
    stream = RngStream(seed, f"calibrate/p={p!r}")
    scale = 10 if quick else 1
    U, U_per_n = calibrate_upper(p, stream, trials=trials // scale)
    L, L_per_n = calibrate_lower(p, stream, trials=trials // scale)
    C = calibrate_gaussian_factor(p, stream, trials=200_000 // scale)
    alpha = calibrate_dominance(p, stream, draws=1_000_000 // scale)
    c = calibrate_tail_constant(p, stream, draws=20_000_000 // scale)
    omega = calibrate_omega(p, stream, trials=4000 // scale)
    intervals = {name: [est.lo, est.hi] for name, est in
                 (("C_p", C), ("U_p", U), ("L_p", L), ("alpha_p", alpha), ("c_p", c), ("omega", omega))}
    intervals["U_p_per_n"] = {str(n): [e.value, e.lo, e.hi] for n, e in U_per_n.items()}
    intervals["L_p_per_n"] = {str(n): [e.value, e.lo, e.hi] for n, e in L_per_n.items()}
    intervals["c_p_closed_form"] = tail_exponent_constant(p)
    return PConstants(
        p=float(p), C_p=C.value, U_p=U.value, L_p=L.value, alpha_p=alpha.value,
        c_p=c.value, omega=omega.value, trials=int(trials // scale), seed=int(seed),
        intervals=intervals,
    )


def calibrate_constants(ps=CALIBRATED_PS, seed=20240601, trials=10_000, quick=False, meta=None):
    entries = {float(p): calibrate_p(float(p), seed, trials=trials, quick=quick) for p in ps}
    info = {"schema_version": SCHEMA_VERSION, "seed": seed, "trials": trials, "quick": quick}
    info.update(meta or {})
    return CalibrationConstants(entries, info)
