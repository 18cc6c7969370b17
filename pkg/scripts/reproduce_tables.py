#!/usr/bin/env python3
"""Desk-scale reproduction of the experiment tables.

Runs every experiment's refinement sweep at reduced resolution, prints the
error/order tables, and drops CSVs plus snapshots under --out for the plot
renderer.  Expect a few minutes for the 1D problems and around ten for the
full set including 2D.
"""

import argparse
import sys
import time

from gradflow.harness import RunConfig, converge, emit_table

SWEEPS = [
    # problem, scheme, step exponents, oracle
    ("heat_wass", "si2", (3, 7), "exact"),
    ("heat_wass", "si3", (3, 7), "reference"),
    ("pme_wass", "fi2", (4, 8), "reference"),
    ("pme_wass", "fi3", (4, 8), "reference"),
    ("pme_hm1", "fi2", (4, 8), "reference"),
    ("pme_hm1", "fi3", (3, 7), "reference"),
    ("ac1d_tw", "si2", (7, 10), "reference"),
    ("ac1d_tw", "si3", (7, 10), "reference"),
    ("ch_mob", "si2", (6, 9), "reference"),
    ("ch_mob", "si3", (6, 9), "reference"),
    ("ac2d", "si2", (6, 9), "reference"),
    ("ac2d", "si3", (6, 9), "reference"),
    ("ch2d", "si2", (6, 9), "reference"),
    ("ch2d", "si3", (6, 9), "reference"),
]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results", help="output directory")
    ap.add_argument("--only", default=None, help="comma list of problem names")
    ap.add_argument("--skip-2d", action="store_true")
    ns = ap.parse_args(argv)

    chosen = None if ns.only is None else set(ns.only.split(","))
    for problem, scheme, (lo, hi), oracle in SWEEPS:
        if chosen is not None and problem not in chosen:
            continue
        if ns.skip_2d and problem in ("ac2d", "ch2d"):
            continue
        cfg = RunConfig(
            problem=problem,
            scheme=scheme,
            steps=[2**p for p in range(lo, hi + 1)],
            oracle=oracle,
            ref_multiplier=16 if problem == "ac1d_tw" else 64,
            out=ns.out,
        )
        t0 = time.perf_counter()
        report = converge(cfg)
        print(emit_table(report))
        print(f"  ({time.perf_counter() - t0:.1f}s)\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
