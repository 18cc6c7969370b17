"""Coefficient tables for the multistage semi-implicit schemes.

A scheme is identified by a pair of lower-triangular matrices (gamma, theta):
row m (1-based, m = 1..M) holds the weights gamma[m, i], theta[m, i] attached
to the earlier states U_0..U_{m-1} in stage m.  Fully implicit schemes carry
no theta (the explicit energy part is identically zero).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Tableau",
    "TableauError",
    "TableauFormatError",
    "TableauInvariantError",
    "UnknownTableauError",
    "BUILTIN_NAMES",
    "builtin",
    "load",
    "save",
]

# Printed coefficients are rounded to >= 3 decimals; row sums and
# monotonicity are only required up to this slack.
PRINT_TOL = 2e-3


class TableauError(Exception):
    """Base class for tableau construction and I/O failures."""


class TableauFormatError(TableauError):
    """Malformed tableau text (bad header, wrong row lengths, bad numbers)."""


class TableauInvariantError(TableauError):
    """Structurally valid data violating a scheme invariant."""


class UnknownTableauError(TableauError):
    """Requested builtin scheme name does not exist."""


def _as_lower_triangular(rows: list[list[float]], what: str) -> np.ndarray:
    m_stages = len(rows)
    out = np.zeros((m_stages, m_stages))
    for m, row in enumerate(rows):
        if len(row) != m + 1:
            raise TableauFormatError(
                f"{what} row {m + 1} has {len(row)} entries, expected {m + 1}"
            )
        out[m, : m + 1] = row
    return out


@dataclass(frozen=True)
class Tableau:
    """Immutable coefficient set of an M-stage scheme."""

    stages: int
    gamma: np.ndarray
    theta: np.ndarray | None
    label: str
    claimed_order: int
    claimed_threshold: float | None = None

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if self.theta is not None:
            t = np.array(self.theta, dtype=float)
            t.setflags(write=False)
            object.__setattr__(self, "theta", t)
        self.validate()

    @property
    def row_sums(self) -> np.ndarray:
        """S_m = sum_i gamma[m, i], the stage scaling factors."""
        return self.gamma.sum(axis=1)

    def gamma_rows(self) -> list[np.ndarray]:
        return [self.gamma[m, : m + 1] for m in range(self.stages)]

    def theta_rows(self) -> list[np.ndarray]:
        if self.theta is None:
            raise TableauInvariantError(f"{self.label}: theta absent")
        return [self.theta[m, : m + 1] for m in range(self.stages)]

    def validate(self, tol: float = PRINT_TOL) -> None:
        m_stages = self.stages
        if m_stages < 1:
            raise TableauInvariantError("stage count must be >= 1")
        if self.gamma.shape != (m_stages, m_stages):
            raise TableauFormatError("gamma shape does not match stage count")
        for m in range(m_stages):
            if np.any(self.gamma[m, m + 1 :] != 0.0):
                raise TableauFormatError("gamma is not lower triangular")
        sums = self.row_sums
        if np.any(sums <= 0.0):
            bad = int(np.argmax(sums <= 0.0)) + 1
            raise TableauInvariantError(
                f"nonpositive stage row sum S_{bad} = {sums[bad - 1]:g}"
            )
        th = self.theta
        if th is None:
            return
        if th.shape != (m_stages, m_stages):
            raise TableauFormatError("theta shape does not match stage count")
        for m in range(m_stages):
            if np.any(th[m, m + 1 :] != 0.0):
                raise TableauFormatError("theta is not lower triangular")
            row = th[m, : m + 1]
            if np.any(row < -tol):
                raise TableauInvariantError(
                    f"negative theta entry in row {m + 1}"
                )
            s = row.sum()
            if abs(s - 1.0) > tol:
                raise TableauInvariantError(
                    f"theta row sum {s:.6f} in row {m + 1} is not 1"
                )
        for m in range(1, m_stages):
            prev, cur = th[m - 1, :m], th[m, :m]
            if np.any(cur - prev > tol):
                raise TableauInvariantError(
                    f"theta not monotone between rows {m} and {m + 1}"
                )


def _tab(label, order, gamma, theta, threshold=None) -> Tableau:
    g = _as_lower_triangular(gamma, "gamma")
    t = _as_lower_triangular(theta, "theta") if theta is not None else None
    return Tableau(
        stages=len(gamma),
        gamma=g,
        theta=t,
        label=label,
        claimed_order=order,
        claimed_threshold=threshold,
    )


def _rows(text: str) -> list[list[float]]:
    return [[float(v) for v in line.split()] for line in text.strip().splitlines()]


# -- printed coefficient sets ------------------------------------------------

_SI2_THETA = _rows("""
1.
0.009 0.991
0.009 0.991 0.
0. 0. 0. 1.
0. 0. 0. 1. 0.
""")
_SI2_GAMMA = _rows("""
8.841
-0.925 5.360
-4.443 6.041 0.950
-3.288 5.895 -0.351 0.172
-3.895 -0.335 4.964 -1.722 7.684
""")

_SI3_THETA = _rows("""
1.
0.049 0.951
0.024 0.075 0.901
0.017 0.042 0.113 0.829
0.012 0.029 0.071 0.386 0.501
0.01 0.023 0.06 0.366 0.457 0.085
0.007 0.018 0.05 0.351 0.437 0.06 0.076
0.003 0.005 0.006 0.008 0.009 0.011 0.028 0.929
0.002 0.002 0.002 0.002 0.003 0.004 0.009 0.029 0.948
0. 0.001 0.001 0.001 0.001 0.002 0.004 0.007 0.011 0.971
0. 0. 0.001 0.001 0.001 0.001 0.003 0.005 0.008 0.912 0.069
0. 0. 0. 0. 0. 0.001 0.002 0.003 0.005 0.107 0.025 0.857
0. 0. 0. 0. 0. 0. 0.001 0.001 0.002 0.013 0.007 0.018 0.958
""")
_SI3_GAMMA = _rows("""
11.
2.1 15.5
1.4 1.6 17.
0.2 1.6 -2.4 18.1
0.3 -8.5 3. 9.6 7.8
-1.4 -5.9 -0.1 2. 8. 4.1
-4. -0.5 -0.4 -1.8 5.1 6.8 0.9
-9.2 4.8 2.7 -3.2 2.5 6.2 2.5 4.6
-1.7 -3.6 -0.1 1.3 5.7 3.4 -0.8 -0.8 0.4
-2.7 -3.5 0.6 1.4 6.1 3.5 -0.7 -0.2 -0.4 0.5
5.9 -4.8 -5.1 -3.1 3.4 6.6 -0.7 -5.2 4.9 -0.8 8.2
7.1 0.9 -3.1 -2.7 -5.8 -1.9 0.6 -3.4 4.3 -1.3 9.2 9.1
3.8 1.9 2.7 2.1 -7.5 -10.6 -1.2 2. 0.7 -0.2 -0.2 9.5 12.8
""")

# Predictor tableau with the target expansion u - (k)L∇E + (k^2)L D2E(L∇E);
# the printed source flips the sign of theta[2, 0], which breaks the row-sum
# normalization, so the positive value is used here.
_SI1C_THETA = _rows("""
1.
0.667 0.333
0. 0. 1.000
""")
_SI1C_GAMMA = _rows("""
1.833
0.556 0.667
1.030 -0.026 0.159
""")

_SI1125C_THETA = _rows("""
1.
0.708 0.292
0.013 0.018 0.969
0.008 0.012 0.867 0.113
0.006 0.009 0.206 0.056 0.724
0. 0.005 0.05 0.025 0.053 0.867
0. 0. 0.015 0.009 0.015 0.04 0.920
""")
_SI1125C_GAMMA = _rows("""
7.727
0.594 2.241
3.056 -0.455 0.636
-1.571 5.091 -1.063 2.786
-3.714 3.1 -1.267 1.545 9.655
-6.923 5.1 -2.056 3.471 4.571 4.033
-2.467 -2.1 0.009 -0.182 0.660 7.224 9.428
""")

_FI2_GAMMA = _rows("""
5.0
-2.0 6.0
-2.0 0.22 6.29
""")
_FI3_GAMMA = _rows("""
11.17
-7.5 19.43
-1.05 -4.75 13.98
1.8 0.05 -7.83 13.8
6.2 -7.17 -1.33 1.63 11.52
-2.83 4.69 2.46 -11.55 6.68 11.95
""")
_FI1125_GAMMA = _rows("""
6.17
-0.5 6.0
-3.0 2.0 7.0
-3.1 0.0 2.23 7.40
""")


def _make_builtins() -> dict[str, Tableau]:
    return {
        "be": _tab("be", 1, [[1.0]], [[1.0]]),
        "be_fi": _tab("be_fi", 1, [[1.0]], None),
        "si2": _tab("si2", 2, _SI2_GAMMA, _SI2_THETA, threshold=3 / 872),
        "si3": _tab("si3", 3, _SI3_GAMMA, _SI3_THETA, threshold=18 / 28567),
        "si1c": _tab("si1c", 1, _SI1C_GAMMA, _SI1C_THETA),
        "si1125c": _tab("si1125c", 1, _SI1125C_GAMMA, _SI1125C_THETA),
        "fi2": _tab("fi2", 2, _FI2_GAMMA, None),
        "fi3": _tab("fi3", 3, _FI3_GAMMA, None),
        "fi1125": _tab("fi1125", 1, _FI1125_GAMMA, None),
    }


_BUILTINS = _make_builtins()
BUILTIN_NAMES = tuple(sorted(_BUILTINS))


def builtin(name: str) -> Tableau:
    """Return a builtin scheme by name (printed-precision coefficients)."""
    try:
        return _BUILTINS[name]
    except KeyError:
        raise UnknownTableauError(
            f"unknown builtin tableau {name!r}; know {', '.join(BUILTIN_NAMES)}"
        ) from None


# -- text format ---------------------------------------------------------
#
#   # optional comments
#   M <stages>
#   theta <present|absent>
#   <M gamma rows, space separated>
#   <M theta rows if present>


def save(t: Tableau, path: str | Path) -> None:
    # metadata rides in comment lines so load(save(t)) is the identity
    lines = [f"# label {t.label}", f"# order {t.claimed_order}"]
    if t.claimed_threshold is not None:
        lines.append(f"# threshold {t.claimed_threshold:.17g}")
    lines.append(f"M {t.stages}")
    lines.append("theta " + ("present" if t.theta is not None else "absent"))
    for row in t.gamma_rows():
        lines.append(" ".join(f"{v:.17g}" for v in row))
    if t.theta is not None:
        for row in t.theta_rows():
            lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load(path: str | Path, label: str | None = None) -> Tableau:
    raw = Path(path).read_text()
    meta: dict[str, str] = {}
    for ln in raw.splitlines():
        s = ln.strip()
        if s.startswith("#"):
            parts = s[1:].split(None, 1)
            if len(parts) == 2 and parts[0] in ("label", "order", "threshold"):
                meta[parts[0]] = parts[1].strip()
    lines = [
        ln.strip() for ln in raw.splitlines()
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if len(lines) < 2:
        raise TableauFormatError(f"{path}: missing header lines")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "M":
        raise TableauFormatError(f"{path}: first line must be 'M <stages>'")
    try:
        m_stages = int(head[1])
    except ValueError:
        raise TableauFormatError(f"{path}: bad stage count {head[1]!r}") from None
    th_head = lines[1].split()
    if len(th_head) != 2 or th_head[0] != "theta" or th_head[1] not in (
        "present",
        "absent",
    ):
        raise TableauFormatError(
            f"{path}: second line must be 'theta <present|absent>'"
        )
    has_theta = th_head[1] == "present"
    need = 2 + m_stages * (2 if has_theta else 1)
    if len(lines) != need:
        raise TableauFormatError(
            f"{path}: expected {need} non-comment lines, found {len(lines)}"
        )

    def parse_rows(block: list[str], what: str) -> list[list[float]]:
        rows = []
        for m, ln in enumerate(block):
            try:
                row = [float(v) for v in ln.split()]
            except ValueError:
                raise TableauFormatError(
                    f"{path}: bad number in {what} row {m + 1}"
                ) from None
            rows.append(row)
        return rows

    gamma = parse_rows(lines[2 : 2 + m_stages], "gamma")
    theta = (
        parse_rows(lines[2 + m_stages : 2 + 2 * m_stages], "theta")
        if has_theta
        else None
    )
    name = label if label is not None else meta.get("label", Path(path).stem)
    g = _as_lower_triangular(gamma, "gamma")
    t = _as_lower_triangular(theta, "theta") if theta is not None else None
    try:
        order = int(meta.get("order", "1"))
    except ValueError:
        raise TableauFormatError(f"{path}: bad order comment") from None
    thr = float(meta["threshold"]) if "threshold" in meta else None
    return Tableau(
        stages=m_stages,
        gamma=g,
        theta=t,
        label=name,
        claimed_order=order,
        claimed_threshold=thr,
    )
