#!/usr/bin/env python3
"""Render harness outputs into figures.

Reads only the flat CSV files the run driver writes (convergence tables,
1D/2D solution snapshots, energy traces) and never recomputes numerics.

    render.py --kind convergence --in run/table.csv --out fig.png
    render.py --kind snapshot1d --in initial.csv --in final.csv --out fig.png
    render.py --kind snapshot2d --in final_grid.csv --out fig.png
    render.py --kind energy-trace --in trace.csv --out fig.png
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("convergence", "snapshot1d", "snapshot2d", "energy-trace")

CONVERGENCE_COLUMNS = [
    "steps",
    "k",
    "l2_error",
    "observed_order",
    "energy_violations",
    "wallclock_s",
]


class SchemaError(ValueError):
    """Input file does not match the harness CSV schema."""


@dataclass
class PlotSpec:
    kind: str
    inputs: list[Path]
    output: Path

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"kind must be one of {KINDS}")
        if not self.inputs:
            raise SchemaError("need at least one input file")
        for p in self.inputs:
            if not Path(p).exists():
                raise SchemaError(f"input file {p} does not exist")


def read_convergence(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CONVERGENCE_COLUMNS:
        raise SchemaError(f"{path}: expected header {','.join(CONVERGENCE_COLUMNS)}")
    ks, errs = [], []
    for row in rows[1:]:
        if len(row) != len(CONVERGENCE_COLUMNS):
            raise SchemaError(f"{path}: ragged row {row}")
        k, err = float(row[1]), float(row[2])
        if np.isfinite(err) and err > 0:
            ks.append(k)
            errs.append(err)
    return np.array(ks), np.array(errs)


def read_xy(path: Path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    names = data.dtype.names
    if names is None or len(names) != 2:
        raise SchemaError(f"{path}: expected a two-column CSV with a header")
    return data[names[0]], data[names[1]]


def plot_convergence(spec: PlotSpec, ax):
    any_points = False
    for path in spec.inputs:
        ks, errs = read_convergence(path)
        if ks.size:
            any_points = True
            ax.loglog(ks, errs, "o-", label=Path(path).stem)
    ax.set_xlabel("time step k")
    ax.set_ylabel("L2 error")
    if any_points:
        lo, hi = ax.get_xlim()
        kk = np.array([lo, hi])
        e0 = ax.get_ylim()[0]
        for slope, style in ((2, "--"), (3, ":")):
            ax.loglog(kk, e0 * (kk / kk[0]) ** slope, "k" + style, lw=0.8,
                      label=f"slope {slope}")
        ax.legend(fontsize=8)


def plot_snapshot1d(spec: PlotSpec, ax):
    colors = ["black", "0.6", "tab:blue", "tab:orange"]
    for i, path in enumerate(spec.inputs):
        x, u = read_xy(path)
        ax.plot(x, u, color=colors[i % len(colors)], label=Path(path).stem)
    ax.set_xlabel("x")
    ax.set_ylabel("u")
    ax.legend(fontsize=8)


def plot_snapshot2d(spec: PlotSpec, ax):
    grid = np.loadtxt(spec.inputs[0], delimiter=",")
    if grid.ndim != 2:
        raise SchemaError(f"{spec.inputs[0]}: expected a 2D CSV matrix")
    im = ax.imshow(grid.T, origin="lower", cmap="gray")
    plt.colorbar(im, ax=ax, shrink=0.8)


def plot_energy_trace(spec: PlotSpec, ax):
    for path in spec.inputs:
        step, energy = read_xy(path)
        ax.plot(step, energy, label=Path(path).stem)
    ax.set_xlabel("step")
    ax.set_ylabel("energy")
    ax.legend(fontsize=8)


def plot(spec: PlotSpec) -> Path:
    fig, ax = plt.subplots(figsize=(5.0, 3.8), dpi=130)
    {
        "convergence": plot_convergence,
        "snapshot1d": plot_snapshot1d,
        "snapshot2d": plot_snapshot2d,
        "energy-trace": plot_energy_trace,
    }[spec.kind](spec, ax)
    fig.tight_layout()
    Path(spec.output).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.output)
    plt.close(fig)
    return Path(spec.output)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kind", required=True, choices=KINDS)
    ap.add_argument(
        "--in", dest="inputs", action="append", required=True, metavar="PATH"
    )
    ap.add_argument("--out", required=True)
    ns = ap.parse_args(argv)
    spec = PlotSpec(
        kind=ns.kind, inputs=[Path(p) for p in ns.inputs], output=Path(ns.out)
    )
    out = plot(spec)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
