"""Experiment configs, per-trial execution and CSV reports.

Every trial draws its randomness from ``derive_seed(config.seed, "trial<k>")``;
the instance and the embedding use further labeled children of that seed.
Rows therefore replay from (config, trial seed) alone, independently of the
thread count and of which other trials ran.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embeddings import FAMILIES, EmbeddingSpec, build
from .errors import ResourceError
from .numcore import SparseMatrix, atomic_write, derive_seed, read_matrix

SCHEMA_VERSION = 1
KINDS = ("distort", "tails", "hardstress", "rankdrop", "regress", "sweep")
INSTANCE_TYPES = ("gaussian", "hard", "file")
SWEEP_GUARD = 10**6
HARDSTRESS_COEF = 0.05

# measured columns per kind, in CSV order
COLUMNS = {
    "distort": ["family", "n", "d", "p", "rows", "max_col_nnz", "method", "min_ratio", "max_ratio",
                "kappa_hat", "witnesses", "skipped"],
    "tails": ["tail", "n", "p", "mc_trials", "probability", "stderr", "bound", "target", "meets_target"],
    "hardstress": ["family", "n", "d", "p", "rows", "row_const", "kappa_hat", "threshold",
                   "above_threshold", "dcol_top3"],
    "rankdrop": ["family", "n", "d", "rows", "rank", "dropped"],
    "regress": ["n", "d", "p", "family", "method", "cost", "optimum", "ratio", "iterations", "converged"],
}
KIND_PARAMS = {
    "distort": {"p": 1.0, "budget": 1000, "method": "auto"},
    "tails": {"tail": "cauchy_sum_upper", "n": 10_000, "p": 1.0, "mc_trials": 10_000, "T": 100.0},
    "hardstress": {"p": 1.0, "budget": 1000, "coef": HARDSTRESS_COEF},
    "rankdrop": {"slack": 3},
    "regress": {"p": 1.0, "method": "precondition", "t_const": 40.0, "noise": "laplace"},
}


@dataclass
class ExperimentConfig:
    """One experiment.  See ``docs/config.md`` for the JSON schema."""

    kind: str
    trials: int = 1
    seed: int = 0
    out: str | None = None
    threads: int | None = None
    spec: dict = field(default_factory=dict)
    instance: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    base_kind: str | None = None
    grid: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**copy.deepcopy(data))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    @property
    def run_kind(self):
        return self.base_kind if self.kind == "sweep" else self.kind

    def resolved_params(self):
        out = dict(KIND_PARAMS.get(self.run_kind, {}))
        out.update(self.params)
        return out

    def problems(self):
        """Every validation failure, not just the first."""
        out = []
        if self.kind not in KINDS:
            return [f"unknown kind {self.kind!r}; expected one of {KINDS}"]
        if not isinstance(self.trials, int) or self.trials < 1:
            out.append("trials must be an integer >= 1")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            out.append("seed must be a 64-bit unsigned integer")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            out.append("threads must be a positive integer")
        if self.kind == "sweep":
            if self.base_kind not in COLUMNS:
                out.append(f"sweep needs base_kind in {tuple(COLUMNS)}, got {self.base_kind!r}")
                return out
            if not self.grid:
                out.append("sweep needs a non-empty grid")
            for key, values in self.grid.items():
                if key.split(".")[0] not in ("spec", "instance", "params"):
                    out.append(f"grid key {key!r} must start with spec., instance. or params.")
                if not isinstance(values, list) or not values:
                    out.append(f"grid values for {key!r} must be a non-empty list")
            if out:
                return out
            size = grid_size(self.grid)
            if size > SWEEP_GUARD:
                return out
            for point in grid_points(self.grid):
                sub = apply_point(self, point)
                out.extend(f"{_fmt_point(point)}: {m}" for m in sub.problems())
            return sorted(set(out), key=out.index)
        elif self.grid or self.base_kind:
            out.append("grid and base_kind are only valid for kind 'sweep'")
        params = self.resolved_params()
        unknown = set(params) - set(KIND_PARAMS[self.kind])
        if unknown:
            out.append(f"unknown params for {self.kind}: {sorted(unknown)}")
        out.extend(_kind_problems(self, params))
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise ValueError("invalid experiment config:\n  " + "\n  ".join(problems))
        if self.kind == "sweep" and grid_size(self.grid) > SWEEP_GUARD:
            raise ResourceError(f"sweep grid has {grid_size(self.grid)} points, above the {SWEEP_GUARD} guard")
        return self


def _instance_problems(inst):
    out = []
    t = inst.get("type", "gaussian")
    if t not in INSTANCE_TYPES:
        return [f"instance.type must be one of {INSTANCE_TYPES}, got {t!r}"]
    if t == "file":
        if "path" not in inst:
            out.append("file instance needs a path")
        return out
    for key in ("n", "d"):
        if not isinstance(inst.get(key), int) or inst[key] < 1:
            out.append(f"instance.{key} must be a positive integer")
    if out:
        return out
    if inst["n"] < inst["d"]:
        out.append("instance needs n >= d")
    if t == "hard":
        from .hardgen import HardInstanceSpec
        try:
            HardInstanceSpec(inst["n"], inst["d"], 0, inst.get("layout", "strict"))
        except ValueError as e:
            out.append(str(e))
    return out


def _spec_problems(cfg, n, d, p):
    spec = dict(cfg.spec)
    if "family" not in spec:
        return ["spec.family is required"]
    spec["n"], spec["d"] = n, d
    if spec["family"] not in ("countsketch", "osnap", "identity"):
        spec.setdefault("p", p)
    spec.setdefault("seed", 0)
    try:
        EmbeddingSpec.from_dict(spec)
    except (TypeError, ValueError) as e:
        return [str(e)]
    return []


def _kind_problems(cfg, params):
    kind = cfg.kind
    inst = cfg.instance
    if kind == "tails":
        from .stabledist import TAIL_KINDS
        out = []
        if params["tail"] not in TAIL_KINDS:
            out.append(f"params.tail must be one of {TAIL_KINDS}")
        if not isinstance(params["n"], int) or params["n"] < 3:
            out.append("params.n must be an integer >= 3")
        if not isinstance(params["mc_trials"], int) or params["mc_trials"] < 100:
            out.append("params.mc_trials must be an integer >= 100")
        return out
    if kind == "regress":
        out = _instance_problems(inst)
        if inst.get("type", "gaussian") != "gaussian":
            out.append("regress only supports gaussian instances")
        if params["method"] not in ("sketch", "precondition"):
            out.append("params.method must be 'sketch' or 'precondition'")
        if not out:
            out.extend(_spec_problems(cfg, inst["n"], inst["d"], params["p"]))
        elif cfg.spec.get("family") not in FAMILIES:
            out.append(f"unknown spec.family {cfg.spec.get('family')!r}")
        return out
    out = _instance_problems(inst)
    if kind == "hardstress" and inst.get("type") != "hard":
        out.append("hardstress needs instance.type = 'hard'")
    if kind == "rankdrop" and inst.get("type", "gaussian") != "gaussian":
        out.append("rankdrop needs a gaussian instance")
    if kind == "distort" and params["method"] not in ("auto", "exact", "empirical"):
        out.append("params.method must be 'auto', 'exact' or 'empirical'")
    if kind in ("distort", "hardstress") and not (isinstance(params["budget"], int) and params["budget"] >= 1):
        out.append("params.budget must be a positive integer")
    if not out and inst.get("type") != "file":
        n = inst["n"] + (params["slack"] if kind == "rankdrop" else 0)
        out.extend(_spec_problems(cfg, n, inst["d"], params.get("p", 1.0)))
    elif cfg.spec.get("family") not in FAMILIES:
        out.append(f"unknown spec.family {cfg.spec.get('family')!r}")
    return out


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def grid_size(grid):
    return math.prod(len(v) for v in grid.values())


def grid_points(grid):
    keys = list(grid)
    for values in itertools.product(*(grid[k] for k in keys)):
        yield dict(zip(keys, values))


def _fmt_point(point):
    return ",".join(f"{k}={v}" for k, v in point.items())


def apply_point(cfg, point):
    """The single-kind config for one grid point."""
    base = cfg.to_dict()
    base.update(kind=cfg.base_kind, base_kind=None, grid={})
    for key, value in point.items():
        section, name = key.split(".", 1)
        base[section][name] = value
    return ExperimentConfig.from_dict(base)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

def trial_seed(base, trial):
    return derive_seed(base, f"trial{trial}")


def _make_instance(inst, seed, extra_rows=0):
    t = inst.get("type", "gaussian")
    if t == "file":
        return read_matrix(inst["path"]), None
    n, d = inst["n"] + extra_rows, inst["d"]
    if t == "hard":
        from .hardgen import HardInstanceSpec, generate_hard
        h = generate_hard(HardInstanceSpec(n, d, derive_seed(seed, "instance"), inst.get("layout", "strict")))
        return h.matrix, h
    from .numcore import RngStream
    return RngStream(seed).child("instance").generator().standard_normal((n, d)), None


def _embedding_spec(cfg, n, d, p, seed):
    spec = dict(cfg.spec)
    spec["n"], spec["d"] = n, d
    if spec["family"] not in ("countsketch", "osnap", "identity"):
        spec.setdefault("p", p)
    spec["seed"] = derive_seed(seed, "embedding")
    return EmbeddingSpec.from_dict(spec)


def _shape(M):
    return (M.rows, M.cols) if isinstance(M, SparseMatrix) else M.shape


def run_trial(cfg, trial, seed=None):
    """Measurements for one trial as a dict of the kind's columns."""
    from .distortion import empirical_lp_distortion, exact_l2_distortion

    kind = cfg.kind
    params = cfg.resolved_params()
    seed = trial_seed(cfg.seed, trial) if seed is None else seed

    if kind == "tails":
        from .numcore import RngStream
        from .stabledist import mc_tail_report
        rep = mc_tail_report(params["tail"], params["n"], params["p"], params["mc_trials"],
                             RngStream(seed).child("tails"), T=params["T"])
        return {"tail": rep.kind, "n": rep.n, "p": rep.p, "mc_trials": rep.trials,
                "probability": rep.probability, "stderr": rep.stderr, "bound": rep.bound,
                "target": rep.target, "meets_target": rep.meets_target}

    if kind == "regress":
        from .regress import (default_sample_size, irls_solve, precondition_sample_solve,
                              regression_instance, sketch_solve)
        n, d, p = cfg.instance["n"], cfg.instance["d"], params["p"]
        prob = regression_instance(n, d, p, derive_seed(seed, "instance"), params["noise"])
        spec = _embedding_spec(cfg, n, d, p, seed)
        opt = irls_solve(prob)
        if params["method"] == "sketch":
            res = sketch_solve(prob, spec)
        else:
            res = precondition_sample_solve(prob, spec, default_sample_size(d, params["t_const"]))
        return {"n": n, "d": d, "p": p, "family": spec.family, "method": params["method"],
                "cost": res.cost, "optimum": opt.cost, "ratio": res.cost / opt.cost,
                "iterations": res.iterations, "converged": res.converged}

    extra = params["slack"] if kind == "rankdrop" else 0
    A, hard = _make_instance(cfg.instance, seed, extra)
    n, d = _shape(A)
    p = params.get("p", 1.0)
    spec = _embedding_spec(cfg, n, d, p, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        Pi = build(spec)

    if kind == "rankdrop":
        SA = Pi.apply(A)  # r > n is the point of the r = 10 d^2 arm
        rank = int(np.linalg.matrix_rank(SA))
        return {"family": spec.family, "n": n, "d": d, "rows": Pi.rows, "rank": rank, "dropped": rank < d}

    if kind == "distort":
        method = params["method"]
        if method == "exact" or (method == "auto" and p == 2.0):
            rep = exact_l2_distortion(Pi, A)
        else:
            rep = empirical_lp_distortion(Pi, A, p, budget=params["budget"], seed=derive_seed(seed, "witness"))
        return {"family": spec.family, "n": n, "d": d, "p": p, "rows": Pi.rows,
                "max_col_nnz": Pi.max_column_nnz(), "method": rep.method, "min_ratio": rep.min_ratio,
                "max_ratio": rep.max_ratio, "kappa_hat": rep.kappa_hat,
                "witnesses": sum(rep.witness_counts.values()), "skipped": rep.skipped}

    # hardstress
    rep = empirical_lp_distortion(Pi, A, p, budget=params["budget"], seed=derive_seed(seed, "witness"))
    threshold = params["coef"] * d / math.log(Pi.rows) ** 2
    top = rep.top_dilation + rep.top_contraction
    dcol = any(int(np.argmax(np.abs(x))) == 0 for _, x, _ in top)
    return {"family": spec.family, "n": n, "d": d, "p": p, "rows": Pi.rows, "row_const": spec.row_const,
            "kappa_hat": rep.kappa_hat, "threshold": threshold,
            "above_threshold": rep.kappa_hat > threshold, "dcol_top3": dcol}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class CsvReport:
    header: list
    rows: list

    @property
    def errors(self):
        return sum(1 for r in self.rows if r[-1])

    def text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows(self.rows)
        return buf.getvalue()

    def write(self, path):
        atomic_write(path, self.text())

    def records(self):
        return [dict(zip(self.header, r)) for r in self.rows]


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def resolve_threads(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("PSKETCH_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _safe_trial(cfg, trial, seed=None):
    try:
        return run_trial(cfg, trial, seed), ""
    except Exception as e:  # a failed trial becomes an error row
        return None, f"{type(e).__name__}: {e}"


def run_experiment(cfg, threads=None):
    """Run all trials (all grid points for a sweep) and return the report.

    Trials run on a thread pool; rows are emitted in (grid point, trial)
    order, so the report does not depend on the thread count.
    """
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    cfg.validate()
    if cfg.kind == "sweep":
        points = list(grid_points(cfg.grid))
        configs = [apply_point(cfg, pt) for pt in points]
        extra = [f"grid.{k}" for k in cfg.grid]
    else:
        points, configs, extra = [{}], [cfg], []
    kind = cfg.run_kind
    header = ["schema_version", "kind", "config_index", *extra, "trial", "seed", *COLUMNS[kind], "error"]
    jobs = [(ci, t) for ci in range(len(configs)) for t in range(configs[ci].trials)]
    workers = resolve_threads(threads if threads is not None else cfg.threads)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: _safe_trial(configs[j[0]], j[1]), jobs))
    else:
        results = [_safe_trial(configs[ci], t) for ci, t in jobs]
    rows = []
    for (ci, t), (meas, err) in zip(jobs, results):
        meas = meas or {}
        row = [SCHEMA_VERSION, kind, ci, *(points[ci][k] for k in cfg.grid), t,
               trial_seed(configs[ci].seed, t), *(meas.get(c) for c in COLUMNS[kind]), err]
        rows.append([_cell(v) for v in row])
    report = CsvReport(header, rows)
    if cfg.out:
        report.write(cfg.out)
    return report


def sweep(cfg, threads=None):
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    if cfg.kind != "sweep":
        raise ValueError("sweep needs a config of kind 'sweep'")
    return run_experiment(cfg, threads)


def replay_row(cfg, record):
    """Recompute one CSV record from its config index, trial and seed; True if identical."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    sub = cfg
    if cfg.kind == "sweep":
        sub = apply_point(cfg, list(grid_points(cfg.grid))[int(record["config_index"])])
    meas, err = _safe_trial(sub, int(record["trial"]), int(record["seed"]))
    meas = meas or {}
    return all(_cell(meas.get(c)) == record[c] for c in COLUMNS[sub.kind]) and err == record["error"]

