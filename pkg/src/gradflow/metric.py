"""Schemes for gradient flows whose inner product depends on the solution.

The second-order method predicts a midpoint-like state u*, freezes the
metric there, and runs one 5-stage semi-implicit step.  The third-order
method composes five frozen-metric multistage solves; the two outer solves
use the operator corrected by -(k^2/72) D2L(u*)(w, w) with
w = L(u*) grad E(u*).  Fully implicit variants do the same with the whole
energy treated implicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grids import Grid, divergence_of_flux
from .integrator import FrozenMetric, GradientFlowProblem, ms_step
from .verify import polished_builtin

__all__ = [
    "MetricPositivityError",
    "PositiveStateError",
    "FluxMetric",
    "ScalarMetric",
    "Step3Record",
    "step2",
    "step3",
    "step2_fi",
    "step3_fi",
    "dsqL_check",
]

CORRECTION_FACTOR = 1.0 / 72.0


class MetricPositivityError(RuntimeError):
    """The corrected metric operator lost positive definiteness."""


class PositiveStateError(ValueError):
    """A Wasserstein-type metric was frozen at a non-positive state."""


@dataclass
class FluxMetric:
    """L(u) = -div(mu(u) grad .) on a grid.

    `d2mu` is the second derivative of the mobility; None declares the
    operator linear in u (d2mu == 0), e.g. the linearized Wasserstein
    mobility mu(u) = u and the constant H^-1 mobility mu(u) = 1.
    """

    grid: Grid
    mu: Callable[[np.ndarray], np.ndarray]
    d2mu: Callable[[np.ndarray], np.ndarray] | None = None
    require_positive_state: bool = False
    label: str = "flux"

    @property
    def is_linear_in_u(self) -> bool:
        return self.d2mu is None

    def _check_state(self, u_frozen):
        if self.require_positive_state and np.any(u_frozen <= 0.0):
            raise PositiveStateError(
                f"{self.label}: metric frozen at a state with min "
                f"{np.min(u_frozen):g} <= 0"
            )

    def coefficient(self, u_frozen) -> np.ndarray:
        self._check_state(u_frozen)
        return self.mu(u_frozen) * np.ones_like(u_frozen)

    def corrected_coefficient(self, u_frozen, k, w) -> np.ndarray:
        a = self.coefficient(u_frozen)
        if self.d2mu is None:
            return a
        return a - CORRECTION_FACTOR * k**2 * self.d2mu(u_frozen) * w * w

    def apply(self, u_frozen, v) -> np.ndarray:
        return -divergence_of_flux(self.grid, self.coefficient(u_frozen), v)

    def second_derivative_action(self, u_frozen, w, v) -> np.ndarray:
        if self.d2mu is None:
            return np.zeros_like(v)
        return -divergence_of_flux(self.grid, self.d2mu(u_frozen) * w * w, v)

    def frozen(self, u_frozen, k=None, w=None) -> FrozenMetric:
        if k is None or w is None or self.d2mu is None:
            a = self.coefficient(u_frozen)
        else:
            a = self.corrected_coefficient(u_frozen, k, w)
        grid = self.grid
        return FrozenMetric(
            apply=lambda v: -divergence_of_flux(grid, a, v),
            kind="flux",
            coefficient=a,
        )

    def positivity_check(
        self, u_frozen, k, w, n_probes: int = 20, seed: int = 0
    ) -> bool:
        """Smallest Rayleigh quotient of the corrected operator over probes."""
        a = self.corrected_coefficient(u_frozen, k, w)
        rng = np.random.default_rng(seed)
        op = lambda v: -divergence_of_flux(self.grid, a, v)
        for _ in range(n_probes):
            v = rng.standard_normal(self.grid.shape)
            v -= v.mean()  # stay clear of the zero-flux kernel
            q = float(np.sum(v * op(v)))
            if q <= 0.0:
                return False
        return True


@dataclass
class ScalarMetric:
    """Pointwise metric L(u) v = m(u) v; used by the ODE oracles."""

    m: Callable[[np.ndarray], np.ndarray] = lambda u: u
    d2m: Callable[[np.ndarray], np.ndarray] | None = None
    require_positive_state: bool = True
    label: str = "scalar"

    @property
    def is_linear_in_u(self) -> bool:
        return self.d2m is None

    def _check_state(self, u_frozen):
        if self.require_positive_state and np.any(self.m(u_frozen) <= 0.0):
            raise PositiveStateError(f"{self.label}: nonpositive multiplier")

    def apply(self, u_frozen, v):
        self._check_state(u_frozen)
        return self.m(u_frozen) * v

    def second_derivative_action(self, u_frozen, w, v):
        if self.d2m is None:
            return np.zeros_like(v)
        return self.d2m(u_frozen) * w * w * v

    def corrected_multiplier(self, u_frozen, k, w):
        m = self.m(u_frozen)
        if self.d2m is None:
            return m
        return m - CORRECTION_FACTOR * k**2 * self.d2m(u_frozen) * w * w

    def frozen(self, u_frozen, k=None, w=None) -> FrozenMetric:
        self._check_state(u_frozen)
        if k is None or w is None:
            m = self.m(u_frozen)
        else:
            m = self.corrected_multiplier(u_frozen, k, w)
        return FrozenMetric(apply=lambda v: m * v, kind="diag", diag=m)

    def positivity_check(self, u_frozen, k, w, **_) -> bool:
        return bool(np.all(self.corrected_multiplier(u_frozen, k, w) > 0.0))


def _default_tableaus(fully_implicit: bool) -> dict:
    if fully_implicit:
        return {
            "be": polished_builtin("be_fi"),
            "o2": polished_builtin("fi2"),
            "o3": polished_builtin("fi3"),
            "pre1125": polished_builtin("fi1125"),
            "pre16": polished_builtin("be_fi"),
        }
    return {
        "be": polished_builtin("be"),
        "o2": polished_builtin("si2"),
        "o3": polished_builtin("si3"),
        "pre1125": polished_builtin("si1125c"),
        "pre16": polished_builtin("si1c"),
    }


def _corrected_frozen(L, problem, u_star, k) -> FrozenMetric:
    g = problem.grad(u_star)
    w = L.frozen(u_star).apply(g)
    if not L.positivity_check(u_star, k, w):
        raise MetricPositivityError(
            "corrected metric operator L(u) - (k^2/72) D2L(u)(w, w) is not "
            f"positive definite at k = {k:g}"
        )
    return L.frozen(u_star, k=k, w=w)


def step2(
    problem: GradientFlowProblem, L, u_n, k, tableaus=None
) -> np.ndarray:
    """Second-order step: backward-Euler predictor at k/2, then one
    5-stage step with the metric frozen at the predictor."""
    tabs = tableaus or _default_tableaus(fully_implicit=False)
    ln = L.frozen(u_n)
    u_star = ms_step(tabs["be"], problem, u_n, 0.5 * k, metric=ln).u_next
    return ms_step(tabs["o2"], problem, u_n, k, metric=L.frozen(u_star)).u_next


def step2_fi(problem, L, u_n, k, tableaus=None) -> np.ndarray:
    tabs = tableaus or _default_tableaus(fully_implicit=True)
    ln = L.frozen(u_n)
    u_star = ms_step(tabs["be"], problem, u_n, 0.5 * k, metric=ln).u_next
    return ms_step(tabs["o2"], problem, u_n, k, metric=L.frozen(u_star)).u_next


@dataclass
class Step3Record:
    u_next: np.ndarray
    u_bar: np.ndarray


def _step3_impl(problem, L, u_n, k, tabs, full):
    ln = L.frozen(u_n)
    u_s1 = ms_step(tabs["pre16"], problem, u_n, k / 6.0, metric=ln).u_next
    m1 = _corrected_frozen(L, problem, u_s1, k)
    u_bar = ms_step(tabs["o3"], problem, u_n, 0.5 * k, metric=m1).u_next
    u_s21 = ms_step(tabs["be"], problem, u_n, 0.4 * k, metric=ln).u_next
    u_s22 = ms_step(
        tabs["pre1125"], problem, u_n, 5.0 * k / 6.0, metric=L.frozen(u_s21)
    ).u_next
    m2 = _corrected_frozen(L, problem, u_s22, k)
    u_next = ms_step(tabs["o3"], problem, u_bar, 0.5 * k, metric=m2).u_next
    if full:
        return Step3Record(u_next=u_next, u_bar=u_bar)
    return u_next


def step3(problem, L, u_n, k, tableaus=None, full: bool = False):
    """Third-order step (five frozen-metric multistage solves)."""
    tabs = tableaus or _default_tableaus(fully_implicit=False)
    return _step3_impl(problem, L, u_n, k, tabs, full)


def step3_fi(problem, L, u_n, k, tableaus=None, full: bool = False):
    tabs = tableaus or _default_tableaus(fully_implicit=True)
    return _step3_impl(problem, L, u_n, k, tabs, full)


def dsqL_check(L, u, w, h: float = 1e-3, probe=None, seed: int = 1234) -> float:
    """Relative gap between the analytic second-derivative action and its
    centered second difference at spacing h; O(h^2) for smooth mobilities,
    exactly zero for operators linear in u."""
    if probe is None:
        rng = np.random.default_rng(seed)
        probe = rng.standard_normal(np.shape(u))
    exact = L.second_derivative_action(u, w, probe)
    fd = (
        L.apply(u + h * w, probe) - 2.0 * L.apply(u, probe) + L.apply(u - h * w, probe)
    ) / h**2
    num = float(np.linalg.norm(fd - exact))
    den = float(np.linalg.norm(L.apply(u, probe))) + float(np.linalg.norm(exact))
    return num / max(den, 1e-30)
