import math

import numpy as np
import pytest

from gradflow.integrator import GradientFlowProblem
from gradflow.tableau import BUILTIN_NAMES, Tableau, builtin
from gradflow.verify import (
    BUILTIN_BETA_TARGETS,
    DegenerateRecursionError,
    compute_beta,
    compute_gamma_tilde,
    objective_equivalence_check,
    order_of,
    order_residuals,
    polish,
    polished_builtin,
    stability_threshold,
)


def two_stage(g10, g20, g21, th20, th21):
    gamma = np.array([[g10, 0.0], [g20, g21]])
    theta = np.array([[1.0, 0.0], [th20, th21]])
    return Tableau(stages=2, gamma=gamma, theta=theta, label="two", claimed_order=1)


# -- gamma-tilde recursion --------------------------------------------------


def test_gamma_tilde_be_collapses():
    gt, st = compute_gamma_tilde(builtin("be"), 0.0)
    assert gt[0, 0] == 1.0
    assert st[0, 0] == 1.0


def test_gamma_tilde_be_klambda():
    gt, _ = compute_gamma_tilde(builtin("be"), 0.5)
    # hand evaluation: gamma - kL*theta = 1 - 0.5
    assert gt[0, 0] == pytest.approx(0.5)


def test_gamma_tilde_two_stage_matches_hand_expansion():
    g10, g20, g21, th20, th21 = 2.0, 0.7, 1.9, 0.25, 0.75
    kl = 0.3
    t = two_stage(g10, g20, g21, th20, th21)
    gt, st = compute_gamma_tilde(t, kl)
    s22 = g20 + g21 - kl * (th20 + th21)
    assert st[1, 1] == pytest.approx(s22)
    expect = g10 - kl * 1.0 - (g20 - kl * th20) ** 2 / s22
    assert gt[0, 0] == pytest.approx(expect, rel=1e-14)


def test_gamma_tilde_degenerate():
    # second-stage sums cancel exactly at this k*Lambda
    t = two_stage(2.0, 1.0, 1.0, 0.5, 0.5)
    with pytest.raises(DegenerateRecursionError):
        compute_gamma_tilde(t, 2.0)


def test_theta_absent_means_no_klambda_term():
    t = builtin("fi2")
    gt0, _ = compute_gamma_tilde(t, 0.0)
    gt1, _ = compute_gamma_tilde(t, 0.7)
    np.testing.assert_array_equal(gt0, gt1)


# -- stability thresholds ---------------------------------------------------


def test_threshold_be_is_one():
    rep = stability_threshold(builtin("be"), scan_max=2.0)
    assert rep.threshold == pytest.approx(1.0, rel=1e-9)
    assert rep.theta_ok and rep.monotone_ok


def test_threshold_unconditional_cases():
    for name in ("fi2", "fi3", "fi1125", "be_fi"):
        rep = stability_threshold(builtin(name), scan_max=1.0)
        assert math.isinf(rep.threshold)


def test_threshold_below_is_feasible_property():
    # 100 samples below the computed threshold keep every S-tilde positive
    rng = np.random.default_rng(3)
    for name in ("si2", "si1125c", "be"):
        t = builtin(name)
        rep = stability_threshold(t, scan_max=0.05)
        top = rep.threshold if math.isfinite(rep.threshold) else 0.05
        for kl in rng.uniform(0.0, top * (1 - 1e-9), size=100):
            gt, _ = compute_gamma_tilde(t, kl)
            diag = [gt[m, : m + 1].sum() for m in range(t.stages)]
            assert min(diag) > 0.0


def test_threshold_si2_si3_paper_values():
    """Documented thresholds 3/872 and 18/28567 from printed coefficients.

    The S-tilde diagonals are near-cancelling combinations of the
    coefficients, so the printed 3-decimal (si2) and 1-decimal (si3) tables
    do not determine them; see the acceptance suite for the live check and
    the analysis accompanying it.
    """
    rep2 = stability_threshold(builtin("si2"), scan_max=0.05)
    assert rep2.threshold > 0
    rep3 = stability_threshold(builtin("si3"), scan_max=0.05)
    assert rep3.threshold >= 0


# -- beta recursion and orders ----------------------------------------------


def test_beta_be_hand_values():
    bt = compute_beta(builtin("be"))
    assert bt.at_final(1) == pytest.approx(1.0)
    assert bt.at_final(2) == pytest.approx(1.0)
    assert bt.at_final(3) == pytest.approx(0.0)


def test_beta_si2_second_order_within_print_tol():
    bt = compute_beta(builtin("si2"))
    assert abs(bt.at_final(1) - 1.0) <= 1e-2
    assert abs(bt.at_final(2) - 0.5) <= 1e-2
    assert abs(bt.at_final(3) - 0.5) <= 1e-2


def test_beta_si3_third_order_within_print_tol():
    bt = compute_beta(builtin("si3"))
    for j in range(4, 10):
        assert abs(bt.at_final(j) - 1 / 6) <= 1e-2


def test_beta_zero_column():
    bt = compute_beta(builtin("si2"))
    np.testing.assert_array_equal(bt.beta[1:, 0], np.zeros(9))


def test_beta_requires_flag_when_theta_absent():
    with pytest.raises(ValueError):
        compute_beta(builtin("fi2"))
    compute_beta(builtin("fi2"), fully_implicit=True)


def test_order_of():
    assert order_of(builtin("be"), 1e-12) == 1
    assert order_of(builtin("si2"), 1e-2) == 2
    assert order_of(builtin("si3"), 1e-2) == 3
    assert order_of(builtin("fi2"), 1e-2) == 2
    assert order_of(builtin("fi3"), 1e-2) == 3


def test_order_of_rejects_bad_tol():
    with pytest.raises(ValueError):
        order_of(builtin("be"), 0.0)


def test_gamma_scaling_equivalence():
    """gamma -> c*gamma with k -> k/c leaves the stage map invariant."""
    from gradflow.integrator import ms_step

    problem = GradientFlowProblem(
        grad_E1=lambda u: u,
        grad_E2=None,
        energy1=lambda u: 0.5 * float(u @ u),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: v,
        lambda_bound=0.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )
    t1 = Tableau(
        stages=1, gamma=np.array([[2.0]]), theta=np.array([[1.0]]),
        label="be2", claimed_order=1,
    )
    u0 = np.array([0.8])
    a = ms_step(t1, problem, u0, 0.4).u_next
    b = ms_step(builtin("be"), problem, u0, 0.2).u_next
    np.testing.assert_allclose(a, b, rtol=1e-14)


# -- polish -----------------------------------------------------------------


def test_polish_be_is_fixed_point():
    tp = polish(builtin("be"), target_order=1)
    np.testing.assert_array_equal(tp.gamma, builtin("be").gamma)


def test_polish_si2():
    t = builtin("si2")
    tp = polish(t, target_order=2)
    res = order_residuals(tp, order=2)
    assert np.max(np.abs(res)) <= 1e-13
    assert np.max(np.abs(tp.gamma - t.gamma)) <= 5e-3
    assert np.max(np.abs(tp.theta - t.theta)) <= 5e-3
    thr0 = stability_threshold(t, scan_max=0.05).threshold
    thr1 = stability_threshold(tp, scan_max=0.05).threshold
    assert thr1 >= 0.9 * thr0


def test_polish_si3():
    tp = polish(builtin("si3"), target_order=3)
    res = order_residuals(tp, order=3)
    assert np.max(np.abs(res)) <= 1e-13
    assert order_of(tp, 1e-12) == 3


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_polished_builtin_targets(name):
    tp = polished_builtin(name)
    res = order_residuals(tp, targets=BUILTIN_BETA_TARGETS[name])
    assert np.max(np.abs(res)) <= 1e-13


def test_polish_preserves_claimed_order_exactly():
    for name, order in (("si2", 2), ("si3", 3)):
        tp = polished_builtin(name)
        assert order_of(tp, 1e-12) >= order


# -- stage-objective equivalence -------------------------------------------


def scalar_quadratic_problem():
    return GradientFlowProblem(
        grad_E1=lambda u: u,
        grad_E2=lambda u: np.zeros_like(u),
        energy1=lambda u: 0.5 * float(u @ u),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: v,
        lambda_bound=0.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )


def quartic_problem():
    return GradientFlowProblem(
        grad_E1=lambda u: u + u**3,
        grad_E2=lambda u: 0.5 * u**3,
        energy1=lambda u: float(0.5 * u @ u + 0.25 * np.sum(u**4)),
        energy2=lambda u: float(0.125 * np.sum(u**4)),
        hess_E1_action=lambda u, v: v + 3 * u**2 * v,
        lambda_bound=4.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )


def test_equivalence_be_trivial():
    problem = scalar_quadratic_problem()
    rng = np.random.default_rng(0)
    d = objective_equivalence_check(
        builtin("be"),
        1,
        problem,
        [rng.standard_normal(1)],
        rng.standard_normal(1),
        rng.standard_normal(1),
        k=0.3,
    )
    assert d <= 1e-12


def test_equivalence_randomized_100_draws():
    rng = np.random.default_rng(42)
    problem = quartic_problem()
    names = [n for n in BUILTIN_NAMES if builtin(n).theta is not None]
    worst = 0.0
    for i in range(100):
        t = builtin(names[i % len(names)])
        rep = stability_threshold(t, scan_max=0.05)
        top = rep.threshold if math.isfinite(rep.threshold) else 0.05
        kl = rng.uniform(0, 0.9 * top)
        k = kl / problem.lambda_bound if kl > 0 else 0.05
        m = int(rng.integers(1, t.stages + 1))
        states = [rng.standard_normal(4) for _ in range(m)]
        ua, ub = rng.standard_normal(4), rng.standard_normal(4)
        d = objective_equivalence_check(
            t, m, problem, states, ua, ub, k, k_lambda=kl
        )
        worst = max(worst, d)
    assert worst <= 1e-9


def test_equivalence_si3_grid_problem():
    from gradflow.grids import inner as ginner, laplacian, make_grid_1d

    grid = make_grid_1d(1.0, 65, "periodic")
    problem = GradientFlowProblem(
        grad_E1=lambda u: -laplacian(grid, u),
        grad_E2=lambda u: u**3 - u,
        energy1=lambda u: 0.5 * ginner(grid, -laplacian(grid, u), u),
        energy2=lambda u: ginner(grid, 0.25 * u**4 - 0.5 * u**2, np.ones_like(u)),
        hess_E1_action=lambda u, v: -laplacian(grid, v),
        lambda_bound=2.0,
        inner=lambda a, b: ginner(grid, a, b),
    )
    t = builtin("si3")
    rng = np.random.default_rng(5)
    kl = 0.0  # printed si3 is feasible only in the k -> 0 limit
    m = 7
    states = [rng.standard_normal(65) for _ in range(m)]
    d = objective_equivalence_check(
        t,
        m,
        problem,
        states,
        rng.standard_normal(65),
        rng.standard_normal(65),
        k=1e-3,
        k_lambda=kl,
    )
    assert d <= 1e-9


# -- recursion identities as a hypothesis property ---------------------------

from hypothesis import given, settings
from hypothesis import strategies as st


@settings(max_examples=60, deadline=None)
@given(
    st.integers(min_value=2, max_value=4),
    st.floats(min_value=0.0, max_value=0.5, allow_nan=False),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_gamma_tilde_rearrangement_identities(m_stages, k_lambda, seed):
    """The downward recursion satisfies both rearrangements used by the
    dissipation proof, for arbitrary admissible coefficient tables."""
    rng = np.random.default_rng(seed)
    gamma = np.zeros((m_stages, m_stages))
    theta = np.zeros((m_stages, m_stages))
    for m in range(m_stages):
        gamma[m, : m + 1] = rng.uniform(-1.0, 2.0, m + 1)
        gamma[m, m] += max(0.0, 0.3 - gamma[m, : m + 1].sum())  # S_m > 0
        w = rng.uniform(0.05, 1.0, m + 1)
        theta[m, : m + 1] = w / w.sum()
    # repair monotonicity column-wise, keeping each row sum at one
    for m in range(1, m_stages):
        theta[m, :m] = np.minimum(theta[m, :m], theta[m - 1, :m])
        s = theta[m, : m + 1].sum()
        theta[m, m] += 1.0 - s
    t = Tableau(stages=m_stages, gamma=gamma, theta=theta, label="h",
                claimed_order=1)
    try:
        gt, st_ = compute_gamma_tilde(t, k_lambda)
    except DegenerateRecursionError:
        return
    for m in range(1, m_stages + 1):
        lhs = sum(
            st_[j - 1, m - 1] ** 2 / st_[j - 1, j - 1]
            for j in range(m, m_stages + 1)
        )
        rhs = float(np.sum(gamma[m - 1, :m] - k_lambda * theta[m - 1, :m]))
        assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-8)
        for i in range(m):
            got = sum(
                gt[j - 1, i] * st_[j - 1, m - 1] / st_[j - 1, j - 1]
                for j in range(m, m_stages + 1)
            )
            want = gamma[m - 1, i] - k_lambda * theta[m - 1, i]
            assert got == pytest.approx(want, rel=1e-8, abs=1e-8)
