"""Regenerate src/psketch/data/constants.json.

Usage: python3 scripts/calibrate.py [--quick] [--seed N] [--out PATH]

The full run takes about two minutes on one core.
"""

import argparse
import time
from pathlib import Path

from psketch.calibration import calibrate_constants, save_constants
from psketch.experiments import HARDSTRESS_COEF
from psketch.regress import T_CONST

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "psketch" / "data" / "constants.json"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", default=str(DEFAULT_OUT))
    args = ap.parse_args()
    t0 = time.time()
    consts = calibrate_constants(
        seed=args.seed,
        quick=args.quick,
        meta={"hardstress_coef": HARDSTRESS_COEF, "regression_t_const": T_CONST},
    )
    consts.meta["runtime_seconds"] = round(time.time() - t0, 1)
    save_constants(consts, args.out)
    for p, e in sorted(consts.entries.items()):
        print(f"p={p}: C={e.C_p:.4g} U={e.U_p:.4g} L={e.L_p:.4g} alpha={e.alpha_p:.4g} "
              f"c={e.c_p:.4g} omega={e.omega:.4g}")
    print(f"wrote {args.out} in {consts.meta['runtime_seconds']} s")


if __name__ == "__main__":
    main()
