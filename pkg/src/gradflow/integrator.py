"""One step of the multistage variational scheme for a fixed inner product.

Each stage solves the Euler-Lagrange system

    S_m U_m + k M grad_E1(U_m) = sum_i gamma[m,i] U_i
                                  - k M sum_i theta[m,i] grad_E2(U_i)

by Newton iteration; M is the frozen metric operator (identity when absent).
The variational (argmin) form is exercised by the equivalence checks in
`verify`, not solved directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .solvers import cg
from .tableau import Tableau

__all__ = [
    "GradientFlowProblem",
    "FrozenMetric",
    "StageOperator",
    "StepRecord",
    "NewtonError",
    "ms_step",
    "linearized_energy",
    "run",
    "RunResult",
]

NEWTON_RTOL = 1e-12
NEWTON_ATOL = 1e-14
# stiff stage operators amplify roundoff by k/h^2; a residual that has
# stopped improving below this level is the float64 evaluation floor
NEWTON_STALL_RTOL = 1e-8
NEWTON_MAXITER = 50
ENERGY_SLACK = 1e-12


class NewtonError(RuntimeError):
    def __init__(self, msg, residual_history=None):
        super().__init__(msg)
        self.residual_history = residual_history or []


def _zero_grad(u):
    return np.zeros_like(u)


@dataclass
class GradientFlowProblem:
    """Energy pair with the evaluators the stage solver needs.

    `linear_solve(op, rhs)` solves the SPD stage system op.apply(x) = rhs;
    when None a matrix-free CG in the problem inner product is used.
    """

    grad_E1: Callable[[np.ndarray], np.ndarray]
    energy1: Callable[[np.ndarray], float]
    energy2: Callable[[np.ndarray], float]
    hess_E1_action: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lambda_bound: float
    inner: Callable[[np.ndarray, np.ndarray], float]
    grad_E2: Callable[[np.ndarray], np.ndarray] | None = None
    linear_solve: Callable | None = None
    grad_total: Callable[[np.ndarray], np.ndarray] | None = None

    def energy(self, u) -> float:
        return self.energy1(u) + self.energy2(u)

    def grad_E2_or_zero(self, u):
        return self.grad_E2(u) if self.grad_E2 is not None else _zero_grad(u)

    def grad(self, u):
        if self.grad_total is not None:
            return self.grad_total(u)
        return self.grad_E1(u) + self.grad_E2_or_zero(u)

    def norm(self, u) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))


@dataclass
class FrozenMetric:
    """A fixed SPD operator applied during one multistage step.

    `coefficient` (flux metrics) or `diag` (pointwise metrics) expose the
    structure that direct stage solvers exploit;  `correction` holds the
    pointwise field subtracted from a flux coefficient by the third-order
    metric algorithms.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"  # identity | flux | diag | custom
    coefficient: np.ndarray | None = None
    diag: np.ndarray | None = None

    @staticmethod
    def identity() -> "FrozenMetric":
        return FrozenMetric(apply=lambda v: v, kind="identity")


def _metric_apply(metric, v):
    if metric is None:
        return v
    if isinstance(metric, FrozenMetric):
        return metric.apply(v)
    return metric(v)


@dataclass
class StageOperator:
    """Matrix-free Jacobian of one stage: v -> S v + k M hess_E1(u_lin) v."""

    scale: float
    k: float
    metric: FrozenMetric | None
    problem: GradientFlowProblem
    u_lin: np.ndarray

    def apply(self, v):
        w = self.problem.hess_E1_action(self.u_lin, v)
        w = _metric_apply(self.metric, w)
        return self.scale * v + self.k * w


@dataclass
class StepRecord:
    u_next: np.ndarray
    stages: list[np.ndarray]
    energy_before: float
    energy_after: float
    newton_iters: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not (np.isfinite(self.energy_before) and np.isfinite(self.energy_after)):
            raise FloatingPointError("non-finite energy in step record")


def _solve_stage(problem, t, m, states, k, metric) -> tuple[np.ndarray, int]:
    gamma = t.gamma[m - 1, :m]
    s_m = float(gamma.sum())
    drift = sum(g * u for g, u in zip(gamma, states[:m]))
    if t.theta is not None and problem.grad_E2 is not None:
        expl = sum(
            th * problem.grad_E2(states[i])
            for i, th in enumerate(t.theta[m - 1, :m])
            if th != 0.0
        )
        if not np.isscalar(expl) or expl != 0.0:
            drift = drift - k * _metric_apply(metric, expl)
    u = drift / s_m  # k -> 0 limit of the stage map

    def residual(u):
        return s_m * u + k * _metric_apply(metric, problem.grad_E1(u)) - drift

    solve = problem.linear_solve
    history = []
    r = residual(u)
    best_rn = math.inf
    best_u = u
    stalled = 0
    for it in range(NEWTON_MAXITER):
        rn = problem.norm(r)
        scale = problem.norm(drift) + abs(s_m) * problem.norm(u) + 1.0
        history.append(rn)
        if rn <= NEWTON_RTOL * scale or rn <= NEWTON_ATOL:
            return u, it
        if rn < 0.5 * best_rn:
            stalled = 0
        else:
            stalled += 1
            if stalled >= 2 and best_rn <= NEWTON_STALL_RTOL * scale:
                return best_u, it  # roundoff floor of the residual evaluation
        if rn < best_rn:
            best_rn, best_u = rn, u
        op = StageOperator(scale=s_m, k=k, metric=metric, problem=problem, u_lin=u)
        if solve is not None:
            delta = solve(op, -r)
        else:
            delta = cg(op.apply, -r, problem.inner)
        u = u + delta
        r = residual(u)
    raise NewtonError(
        f"stage {m} Newton stalled after {NEWTON_MAXITER} iterations "
        f"(relative residual {history[-1] / scale:.3e})",
        residual_history=history,
    )


def ms_step(
    t: Tableau,
    problem: GradientFlowProblem,
    u_n: np.ndarray,
    k: float,
    metric: FrozenMetric | Callable | None = None,
) -> StepRecord:
    """Advance u_n by one multistage step of size k under a frozen metric."""
    if k <= 0:
        raise ValueError("time step must be positive")
    states = [np.asarray(u_n, dtype=float)]
    iters = []
    e0 = problem.energy(u_n)
    for m in range(1, t.stages + 1):
        u_m, it = _solve_stage(problem, t, m, states, k, metric)
        states.append(u_m)
        iters.append(it)
    return StepRecord(
        u_next=states[-1],
        stages=states,
        energy_before=e0,
        energy_after=problem.energy(states[-1]),
        newton_iters=iters,
    )


def stage_residual(t, problem, states, k, m, metric=None) -> float:
    """Relative Euler-Lagrange residual of stage m, recomputed from scratch."""
    gamma = t.gamma[m - 1, :m]
    s_m = float(gamma.sum())
    drift = sum(g * u for g, u in zip(gamma, states[:m]))
    if t.theta is not None and problem.grad_E2 is not None:
        expl = sum(
            th * problem.grad_E2(states[i])
            for i, th in enumerate(t.theta[m - 1, :m])
        )
        drift = drift - k * _metric_apply(metric, expl)
    u = states[m]
    r = s_m * u + k * _metric_apply(metric, problem.grad_E1(u)) - drift
    scale = problem.norm(drift) + abs(s_m) * problem.norm(u) + 1.0
    return problem.norm(r) / scale


def linearized_energy(problem: GradientFlowProblem, u, q) -> float:
    """First-order model of the explicit energy around q, evaluated at u."""
    e2 = problem.energy2(q)
    if problem.grad_E2 is None:
        return e2
    return e2 + problem.inner(problem.grad_E2(q), u - q)


@dataclass
class RunResult:
    trajectory: list[np.ndarray]
    energies: np.ndarray
    violations: list[int]
    final: np.ndarray

    @property
    def n_violations(self) -> int:
        return len(self.violations)


def run(
    t: Tableau,
    problem: GradientFlowProblem,
    u_0: np.ndarray,
    k: float,
    n_steps: int,
    metric=None,
    keep_trajectory: bool = True,
    step_fn=None,
) -> RunResult:
    """Iterate steps, recording the energy trace and dissipation failures.

    A violation is any step with E(u_{n+1}) > E(u_n) + 1e-12 (1 + |E(u_n)|).
    `step_fn(u, k) -> u_next` overrides the plain multistage step (used by
    the solution-dependent-metric algorithms).
    """
    u = np.asarray(u_0, dtype=float)
    energies = [problem.energy(u)]
    traj = [u.copy()] if keep_trajectory else [u.copy()]
    violations = []
    for n in range(n_steps):
        try:
            if step_fn is not None:
                u = step_fn(u, k)
            else:
                u = ms_step(t, problem, u, k, metric=metric).u_next
        except NewtonError as exc:
            raise NewtonError(
                f"step {n + 1}/{n_steps}: {exc}", exc.residual_history
            ) from exc
        e = problem.energy(u)
        if e > energies[-1] + ENERGY_SLACK * (1.0 + abs(energies[-1])):
            violations.append(n)
        energies.append(e)
        if keep_trajectory:
            traj.append(u.copy())
    if not keep_trajectory:
        traj = [traj[0], u.copy()]
    if n_steps == 0:
        traj = [u.copy()]
    return RunResult(
        trajectory=traj,
        energies=np.array(energies),
        violations=violations,
        final=u,
    )
