"""Command-line driver: ``psketch <subcommand> [--config file.json] [overrides]``.

Exit codes: 0 success, 2 validation error, 3 resource guard, 4 some trials failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .embeddings import EmbeddingSpec, build
from .errors import ResourceError
from .experiments import ExperimentConfig, run_experiment
from .numcore import read_matrix, write_matrix

EXIT_OK, EXIT_VALIDATION, EXIT_RESOURCE, EXIT_PARTIAL = 0, 2, 3, 4
EXPERIMENT_COMMANDS = ("distort", "tails", "hardstress", "rankdrop", "regress", "sweep")
SPEC_FLAGS = ("family", "n", "d", "p", "B", "eps", "alpha", "row_const", "rows")


def _load_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: invalid JSON ({e})") from None


def _common(sp):
    sp.add_argument("--config", help="JSON config file")
    sp.add_argument("--seed", type=int, help="base seed (overrides config)")
    sp.add_argument("--out", help="output path (overrides config)")
    sp.add_argument("--threads", type=int, help="worker threads (default: $PSKETCH_THREADS or all cores)")
    sp.add_argument("--trials", type=int, help="number of trials (overrides config)")


def _spec_flags(sp):
    sp.add_argument("--family")
    sp.add_argument("--n", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--p", type=float)
    sp.add_argument("--B", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--row-const", dest="row_const", type=float)
    sp.add_argument("--rows", type=int)


def make_parser():
    ap = argparse.ArgumentParser(prog="psketch", description="lp subspace embedding experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("build", help="build an embedding and write it as MatrixMarket")
    _common(sp)
    _spec_flags(sp)

    sp = sub.add_parser("apply", help="apply an embedding to a matrix file")
    _common(sp)
    _spec_flags(sp)
    sp.add_argument("--input", required=True, help="matrix file (MatrixMarket or dense text)")

    for name in EXPERIMENT_COMMANDS:
        sp = sub.add_parser(name, help=f"run a {name} experiment and write a CSV report")
        _common(sp)

    sp = sub.add_parser("hardgen", help="sample a hard instance (MatrixMarket + roles JSON)")
    _common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--layout", choices=("strict", "spread"))

    sp = sub.add_parser("calibrate", help="re-run the Monte-Carlo calibration of the constants")
    _common(sp)
    sp.add_argument("--quick", action="store_true", help="10x fewer samples")
    return ap


def _spec_from(args):
    data = _load_json(args.config)
    for key in SPEC_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if args.seed is not None:
        data["seed"] = args.seed
    return EmbeddingSpec.from_dict(data)


def cmd_build(args):
    spec = _spec_from(args)
    emb = build(spec)
    M = emb.materialize()
    if args.out:
        write_matrix(args.out, M)
    print(json.dumps({"spec": spec.to_dict(), "rows": emb.rows, "nnz": M.nnz,
                      "max_col_nnz": emb.max_column_nnz()}, sort_keys=True))
    return EXIT_OK


def cmd_apply(args):
    A = read_matrix(args.input)
    emb = build(_spec_from(args))
    SA = emb.apply(A)
    if args.out:
        write_matrix(args.out, SA)
    else:
        sys.stdout.write("\n".join(" ".join(repr(float(v)) for v in row) for row in SA) + "\n")
    return EXIT_OK


def cmd_hardgen(args):
    from .hardgen import HardInstanceSpec, generate_hard, save_hard
    data = _load_json(args.config)
    for key in ("n", "d", "layout", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    inst = generate_hard(HardInstanceSpec(**data))
    if args.out:
        save_hard(inst, args.out)
    print(json.dumps({"n": inst.spec.n, "d": inst.spec.d, "blocks": inst.blocks,
                      "nnz": inst.matrix.nnz}, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args):
    from .calibration import calibrate_constants, save_constants
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.trials is not None:
        kw["trials"] = args.trials
    consts = calibrate_constants(quick=args.quick, **kw)
    if args.out:
        save_constants(consts, args.out)
    else:
        print(consts.to_json())
    return EXIT_OK


def experiment_config(args):
    data = _load_json(args.config)
    if args.command != "sweep" or "kind" not in data:
        data["kind"] = args.command
    elif data["kind"] != "sweep":
        raise ValueError("the sweep subcommand needs a config of kind 'sweep'")
    for key in ("seed", "out", "threads", "trials"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def cmd_experiment(args):
    cfg = experiment_config(args)
    report = run_experiment(cfg)
    if not cfg.out:
        sys.stdout.write(report.text())
    if report.errors:
        print(f"{report.errors} of {len(report.rows)} trials failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


COMMANDS = {"build": cmd_build, "apply": cmd_apply, "hardgen": cmd_hardgen, "calibrate": cmd_calibrate}


def main(argv=None):
    args = make_parser().parse_args(argv)
    handler = COMMANDS.get(args.command, cmd_experiment)
    try:
        return handler(args)
    except ResourceError as e:
        print(f"resource error: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, TypeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
