"""Command line driver: convergence runs and tableau verification."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import RunConfig, converge, emit_csv, emit_table, verify_all, verify_tableau
from .problems import PROBLEM_NAMES
from .tableau import BUILTIN_NAMES, builtin, load

__all__ = ["main"]


def parse_steps(text: str) -> list[int]:
    """'2^3..2^7' or a comma list of integers."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)

        def as_int(s):
            s = s.strip()
            if s.startswith("2^"):
                return 2 ** int(s[2:])
            return int(s)

        a, b = as_int(lo), as_int(hi)
        steps = []
        n = a
        while n <= b:
            steps.append(n)
            n *= 2
        return steps
    return [int(v) for v in text.split(",")]


def _apply_config_file(path: str, ns: argparse.Namespace) -> None:
    """Flat key=value lines; keys mirror the run options."""
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SystemExit(f"config line without '=': {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "steps":
            ns.steps = parse_steps(val)
        elif key in ("problem", "scheme", "out", "oracle"):
            setattr(ns, key, val)
        elif key == "grid":
            ns.grid = int(val)
        elif key == "ref_multiplier":
            ns.ref_multiplier = int(val)
        elif key == "polish":
            ns.polish = val.lower() in ("1", "true", "yes", "on")
        elif key == "monitor":
            ns.monitor = val.lower() in ("1", "true", "yes", "on")
        else:
            raise SystemExit(f"unknown config key {key!r}")


def _cmd_run(ns) -> int:
    if ns.config:
        _apply_config_file(ns.config, ns)
    if ns.problem is None or ns.steps is None:
        raise SystemExit("run needs --problem and --steps (or a --config file)")
    if ns.problem not in PROBLEM_NAMES:
        raise SystemExit(
            f"unknown problem {ns.problem!r}; know {', '.join(PROBLEM_NAMES)}"
        )
    cfg = RunConfig(
        problem=ns.problem,
        scheme=ns.scheme,
        steps=ns.steps,
        grid=ns.grid,
        out=ns.out,
        polish=ns.polish,
        monitor=ns.monitor,
        oracle=ns.oracle,
        ref_multiplier=ns.ref_multiplier,
    )
    report = converge(cfg)
    print(emit_table(report))
    if ns.out:
        print(f"wrote CSV and snapshots under {ns.out}")
    elif ns.csv:
        emit_csv(report, ns.csv)
        print(f"wrote {ns.csv}")
    return 1 if any(r.failed for r in report.rows) else 0


def _cmd_verify(ns) -> int:
    if ns.name is None:
        text, ok = verify_all()
        print(text)
        return 0 if ok else 1
    if ns.name in BUILTIN_NAMES:
        t = builtin(ns.name)
    else:
        t = load(ns.name)
    text, kv, ok = verify_tableau(t, polish_order=ns.polish, scan_max=ns.scan_max)
    print(text)
    if ns.kv:
        for key, val in kv.items():
            print(f"{key}={val}")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gradflow",
        description="Energy-stable multistage integrators for gradient flows",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="time-refinement convergence sweep")
    p_run.add_argument("--problem", choices=PROBLEM_NAMES, default=None)
    p_run.add_argument("--scheme", default="si2")
    p_run.add_argument(
        "--steps", type=parse_steps, default=None, help="e.g. 2^3..2^7"
    )
    p_run.add_argument("--grid", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--csv", default=None, help="write only the CSV here")
    p_run.add_argument("--polish", action="store_true", default=False)
    p_run.add_argument("--no-monitor", dest="monitor", action="store_false")
    p_run.add_argument(
        "--oracle", choices=("auto", "exact", "reference"), default="auto"
    )
    p_run.add_argument("--ref-multiplier", dest="ref_multiplier", type=int, default=64)
    p_run.add_argument("--config", default=None, help="flat key=value file")
    p_run.set_defaults(func=_cmd_run, monitor=True)

    p_ver = sub.add_parser("verify", help="verify a tableau or all builtins")
    p_ver.add_argument("name", nargs="?", default=None, help="builtin name or file")
    p_ver.add_argument("--polish", type=int, default=None, metavar="ORDER")
    p_ver.add_argument("--scan-max", dest="scan_max", type=float, default=0.05)
    p_ver.add_argument("--kv", action="store_true", help="machine-readable lines")
    p_ver.set_defaults(func=_cmd_verify)

    ns = parser.parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
