import math

import numpy as np
import pytest

from gradflow.integrator import (
    GradientFlowProblem,
    NewtonError,
    linearized_energy,
    ms_step,
    run,
    stage_residual,
)
from gradflow.tableau import builtin
from gradflow.verify import polished_builtin


def quadratic_problem():
    """E = u^2/2 treated implicitly; flow u' = -u."""
    return GradientFlowProblem(
        grad_E1=lambda u: u,
        grad_E2=None,
        energy1=lambda u: 0.5 * float(u @ u),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: v,
        lambda_bound=0.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )


def cubic_split_problem():
    """E1 = u^2/2 + u^4/4 implicit, E2 = -u^2/4 explicit (concave)."""
    return GradientFlowProblem(
        grad_E1=lambda u: u + u**3,
        grad_E2=lambda u: -0.5 * u,
        energy1=lambda u: float(0.5 * u @ u + 0.25 * np.sum(u**4)),
        energy2=lambda u: float(-0.25 * u @ u),
        hess_E1_action=lambda u, v: v + 3 * u**2 * v,
        lambda_bound=0.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )


def test_be_step_closed_form():
    # (1 + k) u1 = u0 for the linear problem
    p = quadratic_problem()
    rec = ms_step(builtin("be"), p, np.array([1.0]), 0.5)
    assert rec.u_next[0] == pytest.approx(2 / 3, rel=1e-14)
    assert rec.energy_after <= rec.energy_before


def test_basic_semi_implicit_fixed_point():
    # one be step solves u1 + k grad_E1(u1) = u0 - k grad_E2(u0)
    p = cubic_split_problem()
    u0 = np.array([0.7])
    k = 0.2
    u1 = ms_step(builtin("be"), p, u0, k).u_next
    res = u1 + k * p.grad_E1(u1) - (u0 - k * p.grad_E2(u0))
    assert abs(res[0]) <= 1e-12


@pytest.mark.parametrize("name,ratio", [("si2", 8.0), ("si3", 16.0)])
def test_local_error_scaling_exponential(name, ratio):
    p = quadratic_problem()
    t = polished_builtin(name)
    u0 = np.array([1.0])
    errs = []
    for k in (0.1, 0.05):
        u1 = ms_step(t, p, u0, k).u_next
        errs.append(abs(u1[0] - math.exp(-k)))
    assert errs[0] / errs[1] == pytest.approx(ratio, rel=0.2)


def test_stage_states_recorded():
    p = quadratic_problem()
    rec = ms_step(polished_builtin("si2"), p, np.array([1.0]), 0.05)
    assert len(rec.stages) == 6  # U_0 .. U_5
    assert rec.stages[-1] is rec.u_next or np.array_equal(
        rec.stages[-1], rec.u_next
    )


def test_stage_residuals_reevaluated():
    p = cubic_split_problem()
    t = polished_builtin("si3")
    rec = ms_step(t, p, np.array([0.9]), 0.07)
    for m in range(1, t.stages + 1):
        assert stage_residual(t, p, rec.stages, 0.07, m) <= 1e-12


def test_newton_failure_reports_history():
    # a gradient evaluator that never satisfies its own equation
    p = GradientFlowProblem(
        grad_E1=lambda u: np.sign(u) * 1e6,
        grad_E2=None,
        energy1=lambda u: float(1e6 * np.sum(np.abs(u))),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: 0.0 * v,
        lambda_bound=0.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )
    with pytest.raises(NewtonError) as err:
        ms_step(builtin("be"), p, np.array([1.0]), 1.0)
    assert len(err.value.residual_history) > 0


def test_linearized_energy_identities():
    p = cubic_split_problem()
    u = np.array([0.4])
    q = np.array([-0.3])
    # at u == q the model equals the energy
    assert linearized_energy(p, q, q) == pytest.approx(p.energy2(q))
    # concave E2: the linearization overestimates everywhere
    assert linearized_energy(p, u, q) >= p.energy2(u) - 1e-14


def test_linearized_energy_quadratic_tight():
    lam = 2.0
    p = GradientFlowProblem(
        grad_E1=lambda u: u,
        grad_E2=lambda u: lam * u,
        energy1=lambda u: 0.5 * float(u @ u),
        energy2=lambda u: 0.5 * lam * float(u @ u),
        hess_E1_action=lambda u, v: v,
        lambda_bound=lam,
        inner=lambda a, b: float(np.dot(a, b)),
    )
    rng = np.random.default_rng(0)
    for _ in range(20):
        u, q = rng.standard_normal(3), rng.standard_normal(3)
        lhs = p.energy2(u)
        rhs = linearized_energy(p, u, q) + 0.5 * lam * float((u - q) @ (u - q))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_run_zero_steps_identity():
    p = quadratic_problem()
    out = run(builtin("be"), p, np.array([1.5]), 0.1, 0)
    assert len(out.trajectory) == 1
    np.testing.assert_array_equal(out.trajectory[0], [1.5])


def test_run_monotone_energy_concave_explicit():
    # Lambda = 0 case: dissipation at any step size
    p = cubic_split_problem()
    for k in (0.05, 0.5, 5.0):
        out = run(polished_builtin("si2"), p, np.array([1.3]), k, 40)
        assert out.n_violations == 0
        assert np.all(np.diff(out.energies) <= 1e-12 * (1 + np.abs(out.energies[:-1])))


def test_run_energy_trace_length():
    p = quadratic_problem()
    out = run(builtin("be"), p, np.array([1.0]), 0.1, 7)
    assert out.energies.size == 8
    assert len(out.trajectory) == 8


def test_gradient_consistency_centered_difference():
    p = cubic_split_problem()
    rng = np.random.default_rng(1)
    u = rng.standard_normal(5)
    v = rng.standard_normal(5)

    def energy(w):
        return p.energy1(w) + p.energy2(w)

    g = p.grad_E1(u) + p.grad_E2(u)
    errs = []
    for h in (1e-3, 1e-4):
        fd = (energy(u + h * v) - energy(u - h * v)) / (2 * h)
        errs.append(abs(fd - float(g @ v)))
    assert errs[0] / errs[1] == pytest.approx(100.0, rel=0.3)
