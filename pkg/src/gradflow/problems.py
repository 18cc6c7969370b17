"""The concrete gradient-flow experiments and their spatial discretizations.

Each experiment bundles an energy split, its curvature bound, the metric
(identity, fixed H^-1, or a solution-dependent mobility), desk-scale grid
defaults, an initial state, and a direct stage solver tuned to the operator
structure (banded in 1D, Fourier on periodic constant-coefficient 2D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grids import (
    Grid,
    divergence_of_flux,
    grad_sq_energy,
    inner as grid_inner,
    laplacian,
    make_grid_1d,
    make_grid_2d,
)
from .integrator import GradientFlowProblem
from .metric import FluxMetric, ScalarMetric
from .solvers import (
    flux_bands_1d,
    fourier_symbol_laplacian,
    solve_banded_system,
)

__all__ = ["ProblemSpec", "PROBLEM_NAMES", "make_problem", "scalar_ode"]

PROBLEM_NAMES = (
    "ac1d_tw",
    "ac2d",
    "ch2d",
    "pme_hm1",
    "heat_wass",
    "pme_wass",
    "ch_mob",
)

DEFAULT_POINTS = {
    "ac1d_tw": 4097,
    "ac2d": 128,
    "ch2d": 128,
    "pme_hm1": 2049,
    "heat_wass": 2049,
    "pme_wass": 2049,
    "ch_mob": 2049,
}


@dataclass
class ProblemSpec:
    name: str
    grid: Grid
    x: np.ndarray
    problem: GradientFlowProblem
    u0: np.ndarray
    final_time: float
    metric: object | None            # None means the identity inner product
    solution_dependent: bool
    fully_implicit: bool             # experiment's mode in the source tables
    exact: Callable[[float], np.ndarray] | None
    reference: str                   # bdf2_ab_ac | bdf2_ab_ch | tr_bdf2 | bdf_ab_mob
    rhs: Callable[[np.ndarray], np.ndarray]
    state_range: tuple[float, float]
    # (m, m', g, g') when rhs has the flux form div(m(u) grad g(u));
    # lets the reference solver assemble its Jacobian analytically
    flux_form: tuple | None = None

    def frozen_fixed_metric(self):
        """FrozenMetric for experiments whose operator never changes."""
        if self.metric is None or self.solution_dependent:
            return None
        return self.metric.frozen(self.u0)


def _face_average(a: np.ndarray, bc: str) -> np.ndarray:
    if bc == "periodic":
        return 0.5 * (a + np.roll(a, -1))
    return 0.5 * (a[:-1] + a[1:])


def _scale_bands_by_columns(sub, diag, sup, d):
    sub = sub.copy()
    diag = diag * d
    sup = sup.copy()
    sub[1:] = sub[1:] * d[:-1]
    sup[:-1] = sup[:-1] * d[1:]
    return sub, diag, sup


def _banded_solver_metric_times_diag(grid, hess_diag_fn):
    """Stage solver for J = S I + k * (flux metric) * diag(hess)."""

    def solve(op, rhs):
        a = op.metric.coefficient
        a_face = _face_average(a, grid.bc)
        sub, diag, sup = flux_bands_1d(a_face, grid.h[0], grid.bc)
        d = hess_diag_fn(op.u_lin)
        sub, diag, sup = _scale_bands_by_columns(sub, diag, sup, d)
        diag = op.scale + op.k * diag
        return solve_banded_system(op.k * sub, diag, op.k * sup, rhs)

    return solve


def _banded_solver_identity_metric(grid, hess="laplacian"):
    """Stage solver for J = S I + k * (-laplacian) with identity metric."""
    n = grid.npts[0]
    h = grid.h[0]
    ones_face = np.ones(n - 1 if grid.bc != "periodic" else n)
    sub0, diag0, sup0 = flux_bands_1d(ones_face, h, "neumann")
    if grid.bc == "dirichlet":
        # fixed boundary rows: hessian rows vanish there
        diag0 = diag0.copy()
        sub0 = sub0.copy()
        sup0 = sup0.copy()
        diag0[0] = diag0[-1] = 0.0
        sup0[0] = 0.0
        sub0[-1] = 0.0

    def solve(op, rhs):
        return solve_banded_system(
            op.k * sub0, op.scale + op.k * diag0, op.k * sup0, rhs
        )

    return solve


def _fft_solver_2d(grid, power: int):
    """Stage solver for J = S I + k * (-lap)^power on a periodic 2D grid."""
    sym = fourier_symbol_laplacian(grid.npts, grid.h)
    pos = (-sym) ** power

    def solve(op, rhs):
        return np.fft.irfft2(np.fft.rfft2(rhs) / (op.scale + op.k * pos), s=grid.shape)

    return solve


def _sparse_solver_flux_times_laplacian(grid, eps2: float):
    """Stage solver for J = S I + k eps^2 (flux metric)(-laplacian), periodic 1D."""
    n = grid.npts[0]
    h = grid.h[0]
    lap = flux_bands_1d(np.ones(n), h, "periodic")  # -laplacian, sparse

    def solve(op, rhs):
        cache = getattr(op.metric, "_stage_lu", None)
        if cache is None:
            cache = {}
            object.__setattr__(op.metric, "_stage_lu", cache)
        key = (op.scale, op.k)
        if key not in cache:
            a_face = _face_average(op.metric.coefficient, "periodic")
            lmat = flux_bands_1d(a_face, h, "periodic")
            jmat = sp.identity(n, format="csc") * op.scale + (
                op.k * eps2
            ) * (lmat @ lap)
            cache[key] = spla.splu(jmat.tocsc())
        return cache[key].solve(rhs)

    return solve


def _trapz_integral(grid, f: np.ndarray) -> float:
    return float(np.sum(grid.weights * f) * grid.cell_volume)


# -- Allen-Cahn, 1D traveling wave ----------------------------------------


def _ac1d(points: int) -> ProblemSpec:
    grid = make_grid_1d(20.0, points, "dirichlet")
    x = grid.axis(0, origin=-10.0)
    mask = grid.interior_mask().astype(float)

    def w(u):
        return 8 * u - 16 * u**2 - (8 / 3) * u**3 + 8 * u**4

    def wp(u):
        return 8 - 32 * u - 8 * u**2 + 32 * u**3

    def wpp(u):
        return -32 - 16 * u + 96 * u**2

    lam = max(wpp(-1.2), wpp(1.2))

    problem = GradientFlowProblem(
        grad_E1=lambda u: -laplacian(grid, u),
        grad_E2=lambda u: wp(u) * mask,
        energy1=lambda u: grad_sq_energy(grid, u),
        energy2=lambda u: _trapz_integral(grid, w(u)),
        hess_E1_action=lambda u, v: -laplacian(grid, v),
        lambda_bound=lam,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_banded_solver_identity_metric(grid),
    )
    u0 = np.tanh(4 * x + 20)

    def exact(t):
        return np.tanh(4 * x + 20 - 8 * t)

    return ProblemSpec(
        name="ac1d_tw",
        grid=grid,
        x=x,
        problem=problem,
        u0=u0,
        final_time=5.0,
        metric=None,
        solution_dependent=False,
        fully_implicit=False,
        exact=exact,
        reference="bdf2_ab_ac",
        rhs=lambda u: (laplacian(grid, u) - wp(u)) * mask,
        state_range=(-1.2, 1.2),
    )


# -- Allen-Cahn / Cahn-Hilliard, 2D ----------------------------------------


def _w_equal(u):
    return u**2 * (1 - u) ** 2


def _wp_equal(u):
    return 2 * u - 6 * u**2 + 4 * u**3


def _wpp_equal(u):
    return 2 - 12 * u + 12 * u**2


_LAM_EQUAL = max(_wpp_equal(-0.2), _wpp_equal(1.2))


def _radial_sigmoid(grid, radius, origin):
    xs = [grid.axis(d, origin=origin) for d in range(2)]
    xx, yy = np.meshgrid(xs[0], xs[1], indexing="ij")
    r = np.sqrt(xx**2 + yy**2)
    return 1.0 / (1.0 + np.exp(-(radius - r)))


def _ac2d(points: int) -> ProblemSpec:
    grid = make_grid_2d(20.0, points, "periodic")
    problem = GradientFlowProblem(
        grad_E1=lambda u: -laplacian(grid, u),
        grad_E2=_wp_equal,
        energy1=lambda u: grad_sq_energy(grid, u),
        energy2=lambda u: _trapz_integral(grid, _w_equal(u)),
        hess_E1_action=lambda u, v: -laplacian(grid, v),
        lambda_bound=_LAM_EQUAL,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_fft_solver_2d(grid, power=1),
    )
    u0 = _radial_sigmoid(grid, 7.5, -10.0)
    # the interface needs a few time units of curvature-driven motion for the
    # coarse rows of the desk-scale sweep to sit in the pre-asymptotic regime
    return ProblemSpec(
        name="ac2d",
        grid=grid,
        x=grid.axis(0, -10.0),
        problem=problem,
        u0=u0,
        final_time=4.0,
        metric=None,
        solution_dependent=False,
        fully_implicit=False,
        exact=None,
        reference="bdf2_ab_ac",
        rhs=lambda u: laplacian(grid, u) - _wp_equal(u),
        state_range=(-0.2, 1.2),
    )


def _ch2d(points: int) -> ProblemSpec:
    grid = make_grid_2d(20.0, points, "periodic")
    metric = FluxMetric(grid=grid, mu=lambda u: 1.0, label="hminus1")
    problem = GradientFlowProblem(
        grad_E1=lambda u: -laplacian(grid, u),
        grad_E2=_wp_equal,
        energy1=lambda u: grad_sq_energy(grid, u),
        energy2=lambda u: _trapz_integral(grid, _w_equal(u)),
        hess_E1_action=lambda u, v: -laplacian(grid, v),
        lambda_bound=_LAM_EQUAL,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_fft_solver_2d(grid, power=2),
    )
    u0 = _radial_sigmoid(grid, 5.0, -10.0)

    def rhs(u):
        return laplacian(grid, laplacian(grid, u) - _wp_equal(u)) * -1.0

    return ProblemSpec(
        name="ch2d",
        grid=grid,
        x=grid.axis(0, -10.0),
        problem=problem,
        u0=u0,
        final_time=4.0,
        metric=metric,
        solution_dependent=False,
        fully_implicit=False,
        exact=None,
        reference="bdf2_ab_ch",
        rhs=rhs,
        state_range=(-0.2, 1.2),
    )


# -- porous medium under H^-1 ----------------------------------------------


def _pme_phi(u):
    return np.sign(u) * np.abs(u) ** (5 / 3)


def _pme_phi_prime(u):
    return (5 / 3) * np.abs(u) ** (2 / 3)


def _pme_init(x):
    return 1.5 / np.sqrt(2 * np.pi) * np.exp(-9 * x**2 / 8)


def _pme_hm1(points: int) -> ProblemSpec:
    grid = make_grid_1d(6.0, points, "neumann")
    x = grid.axis(0, origin=-3.0)
    metric = FluxMetric(grid=grid, mu=lambda u: 1.0, label="hminus1")

    problem = GradientFlowProblem(
        grad_E1=_pme_phi,
        grad_E2=None,
        energy1=lambda u: _trapz_integral(grid, 3 / 8 * np.abs(u) ** (8 / 3)),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: _pme_phi_prime(u) * v,
        lambda_bound=0.0,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_banded_solver_metric_times_diag(grid, _pme_phi_prime),
    )
    return ProblemSpec(
        name="pme_hm1",
        grid=grid,
        x=x,
        problem=problem,
        u0=_pme_init(x),
        final_time=1.0,
        metric=metric,
        solution_dependent=False,
        fully_implicit=True,
        exact=None,
        reference="tr_bdf2",
        rhs=lambda u: laplacian(grid, _pme_phi(u)),
        state_range=(-0.05, 0.7),
        flux_form=(
            lambda u: np.ones_like(u),
            lambda u: np.zeros_like(u),
            _pme_phi,
            _pme_phi_prime,
        ),
    )


# -- heat equation under the linearized Wasserstein metric -----------------


def _heat_wass(points: int) -> ProblemSpec:
    grid = make_grid_1d(1.0, points, "neumann")
    x = grid.axis(0, origin=0.0)
    metric = FluxMetric(
        grid=grid, mu=lambda u: u, require_positive_state=True, label="wasserstein"
    )

    def grad_e2(u):
        return np.log(u) + 1.0 - u

    problem = GradientFlowProblem(
        grad_E1=lambda u: u,
        grad_E2=grad_e2,
        energy1=lambda u: 0.5 * _trapz_integral(grid, u * u),
        energy2=lambda u: _trapz_integral(grid, u * np.log(u) - 0.5 * u * u),
        hess_E1_action=lambda u, v: v,
        lambda_bound=0.0,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_banded_solver_metric_times_diag(grid, lambda u: np.ones_like(u)),
    )
    u0 = np.cos(np.pi * x) + 2.0

    def exact(t):
        return np.cos(np.pi * x) * math.exp(-t * np.pi**2) + 2.0

    return ProblemSpec(
        name="heat_wass",
        grid=grid,
        x=x,
        problem=problem,
        u0=u0,
        final_time=0.1,
        metric=metric,
        solution_dependent=True,
        fully_implicit=False,
        exact=exact,
        reference="tr_bdf2",
        rhs=lambda u: divergence_of_flux(grid, u, np.log(u) + 1.0),
        state_range=(0.9, 3.1),
        flux_form=(
            lambda u: u,
            lambda u: np.ones_like(u),
            lambda u: np.log(u) + 1.0,
            lambda u: 1.0 / u,
        ),
    )


# -- porous medium under the linearized Wasserstein metric -----------------


def _pme_wass(points: int) -> ProblemSpec:
    grid = make_grid_1d(6.0, points, "neumann")
    x = grid.axis(0, origin=-3.0)
    metric = FluxMetric(
        grid=grid, mu=lambda u: u, require_positive_state=True, label="wasserstein"
    )

    def grad_e1(u):
        return 2.5 * np.sign(u) * np.abs(u) ** (2 / 3)

    def hess_diag(u):
        return (5 / 3) * np.maximum(np.abs(u), 1e-300) ** (-1 / 3)

    problem = GradientFlowProblem(
        grad_E1=grad_e1,
        grad_E2=None,
        energy1=lambda u: _trapz_integral(grid, 1.5 * np.abs(u) ** (5 / 3)),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: hess_diag(u) * v,
        lambda_bound=0.0,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_banded_solver_metric_times_diag(grid, hess_diag),
    )
    return ProblemSpec(
        name="pme_wass",
        grid=grid,
        x=x,
        problem=problem,
        u0=_pme_init(x),
        final_time=1.0,
        metric=metric,
        solution_dependent=True,
        fully_implicit=True,
        exact=None,
        reference="tr_bdf2",
        rhs=lambda u: divergence_of_flux(grid, u, grad_e1(u)),
        state_range=(0.0, 0.7),
        flux_form=(
            lambda u: u,
            lambda u: np.ones_like(u),
            grad_e1,
            hess_diag,
        ),
    )


# -- Cahn-Hilliard with variable mobility and forcing ----------------------


def _ch_mob(points: int) -> ProblemSpec:
    eps = 0.05
    grid = make_grid_1d(1.0, points, "periodic")
    x = grid.axis(0, origin=-0.5)
    forcing = np.tanh(np.cos(2 * np.pi * x) / (10 * eps))

    def w(u):
        return (1 - u**2) ** 2

    def wp(u):
        return 4 * u**3 - 4 * u

    def wpp(u):
        return 12 * u**2 - 4

    def mu(u):
        return (1 - eps) * (1 - u**2) ** 2 + eps

    def d2mu(u):
        return (1 - eps) * (12 * u**2 - 4)

    lam = wpp(1.2)
    metric = FluxMetric(grid=grid, mu=mu, d2mu=d2mu, label="mobility")

    problem = GradientFlowProblem(
        grad_E1=lambda u: -(eps**2) * laplacian(grid, u),
        grad_E2=lambda u: wp(u) + forcing,
        energy1=lambda u: eps**2 * grad_sq_energy(grid, u),
        energy2=lambda u: _trapz_integral(grid, w(u) + u * forcing),
        hess_E1_action=lambda u, v: -(eps**2) * laplacian(grid, v),
        lambda_bound=lam,
        inner=lambda a, b: grid_inner(grid, a, b),
        linear_solve=_sparse_solver_flux_times_laplacian(grid, eps**2),
    )

    def rhs(u):
        grad_e = -(eps**2) * laplacian(grid, u) + wp(u) + forcing
        return divergence_of_flux(grid, mu(u), grad_e)

    return ProblemSpec(
        name="ch_mob",
        grid=grid,
        x=x,
        problem=problem,
        u0=forcing.copy(),
        final_time=0.125,
        metric=metric,
        solution_dependent=True,
        fully_implicit=False,
        exact=None,
        reference="bdf_ab_mob",
        rhs=rhs,
        state_range=(-1.2, 1.2),
    )


_BUILDERS = {
    "ac1d_tw": _ac1d,
    "ac2d": _ac2d,
    "ch2d": _ch2d,
    "pme_hm1": _pme_hm1,
    "heat_wass": _heat_wass,
    "pme_wass": _pme_wass,
    "ch_mob": _ch_mob,
}


def make_problem(name: str, grid_points: int | None = None) -> ProblemSpec:
    """Build one of the named experiments at desk-scale defaults."""
    if name not in _BUILDERS:
        raise KeyError(
            f"unknown problem {name!r}; know {', '.join(PROBLEM_NAMES)}"
        )
    pts = grid_points if grid_points is not None else DEFAULT_POINTS[name]
    return _BUILDERS[name](pts)


def scalar_ode() -> tuple[GradientFlowProblem, ScalarMetric, Callable]:
    """u' = -u^2 as gradient flow of u^2/2 under the metric L(u) = u.

    Exact solution 1/(1+t) from u(0) = 1; the oracle behind the metric
    algorithm order tests.
    """
    problem = GradientFlowProblem(
        grad_E1=lambda u: u,
        grad_E2=None,
        energy1=lambda u: 0.5 * float(u @ u),
        energy2=lambda u: 0.0,
        hess_E1_action=lambda u, v: v,
        lambda_bound=0.0,
        inner=lambda a, b: float(np.dot(a, b)),
    )
    metric = ScalarMetric(m=lambda u: u, d2m=None)
    exact = lambda t: np.array([1.0 / (1.0 + t)])
    return problem, metric, exact
