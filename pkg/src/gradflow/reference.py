"""Reference time steppers used as error oracles for the experiments.

Three families, matching the comparison schemes of the source experiments:

* a two-step BDF with extrapolated explicit terms for the Allen-Cahn and
  Cahn-Hilliard flows (first step bootstrapped by four backward-Euler
  substeps of size k/4);
* the same BDF/AB idea with a constant-coefficient biharmonic stabilizer
  for the variable-mobility Cahn-Hilliard flow;
* TR-BDF2 (L-stable, not energy stable) for the porous-medium and
  Wasserstein-metric flows, with a tridiagonal finite-difference Jacobian.
"""

from __future__ import annotations



import math

import numpy as np

from .grids import laplacian
from .problems import ProblemSpec, make_problem
from .solvers import flux_bands_1d, fourier_symbol_laplacian, solve_banded_system

__all__ = ["reference_run", "reference_solution"]

_TRBDF2_GAMMA = 2.0 - math.sqrt(2.0)


def _fft_solve(grid, symbol, rhs):
    if grid.dim == 1:
        return np.fft.irfft(np.fft.rfft(rhs) / symbol, n=grid.npts[0])
    return np.fft.irfft2(np.fft.rfft2(rhs) / symbol, s=grid.shape)


def _banded_fd_jacobian(f, u, scale_floor=1e-8):
    """Tridiagonal Jacobian of f by colored central differences."""
    n = u.size
    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)
    eps = np.cbrt(np.finfo(float).eps)
    delta = eps * (np.abs(u) + scale_floor)
    for c in range(3):
        idx = np.arange(c, n, 3)
        e = np.zeros(n)
        e[idx] = delta[idx]
        fp = f(u + e)
        fm = f(u - e)
        col = (fp - fm) / 2.0
        for j in idx:
            dj = delta[j]
            if j > 0:
                sup[j - 1] = col[j - 1] / dj
            diag[j] = col[j] / dj
            if j + 1 < n:
                sub[j + 1] = col[j + 1] / dj
    return sub, diag, sup


def _flux_jac_bands(grid, flux_form, u):
    """Analytic tridiagonal Jacobian of div(m(u) grad g(u)), zero-flux ends.

    Written through the interior face fluxes F_j = a_{j+1/2}(g_{j+1}-g_j)/h^2
    with a the arithmetic face average of m(u); boundary rows carry the
    trapezoid-weight doubling used throughout.
    """
    m_fn, mp_fn, g_fn, gp_fn = flux_form
    h = grid.h[0]
    n = u.size
    mv, mpv = m_fn(u), mp_fn(u)
    gv, gpv = g_fn(u), gp_fn(u) * np.ones_like(u)
    a = 0.5 * (mv[:-1] + mv[1:])
    dg = gv[1:] - gv[:-1]
    # dF_j / du_j and dF_j / du_{j+1}
    df_lo = (0.5 * mpv[:-1] * dg - a * gpv[:-1]) / h**2
    df_hi = (0.5 * mpv[1:] * dg + a * gpv[1:]) / h**2
    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)
    diag[1:-1] = df_lo[1:] - df_hi[:-1]
    sup[1:-1] = df_hi[1:]
    sub[1:-1] = -df_lo[:-1]
    diag[0] = 2.0 * df_lo[0]
    sup[0] = 2.0 * df_hi[0]
    diag[-1] = -2.0 * df_hi[-1]
    sub[-1] = -2.0 * df_lo[-1]
    return sub, diag, sup


def _newton_shifted(f, u0, alpha, rhs, jac_bands=None, tol=1e-12, maxiter=40):
    """Solve v - alpha f(v) = rhs with a tridiagonal Jacobian."""
    v = u0.copy()
    scale = float(np.linalg.norm(rhs)) + 1.0
    best = math.inf
    for it in range(maxiter):
        r = v - alpha * f(v) - rhs
        rn = float(np.linalg.norm(r))
        if rn <= tol * scale:
            return v
        if rn >= 0.5 * best and best <= 1e-8 * scale and it >= 2:
            return v  # residual-evaluation roundoff floor
        best = min(best, rn)
        if jac_bands is not None:
            sub, diag, sup = jac_bands(v)
        else:
            sub, diag, sup = _banded_fd_jacobian(f, v)
        dv = solve_banded_system(
            -alpha * sub, 1.0 - alpha * diag, -alpha * sup, -r
        )
        v = v + dv
    raise RuntimeError("reference Newton solve stalled")


def _tr_bdf2(spec: ProblemSpec, n_steps: int) -> np.ndarray:
    f = spec.rhs
    jac = None
    if spec.flux_form is not None:
        jac = lambda v: _flux_jac_bands(spec.grid, spec.flux_form, v)
    g = _TRBDF2_GAMMA
    k = spec.final_time / n_steps
    c1 = 1.0 / (g * (2.0 - g))
    c2 = -((1.0 - g) ** 2) / (g * (2.0 - g))
    c3 = (1.0 - g) / (2.0 - g)
    u = spec.u0.copy()
    for _ in range(n_steps):
        rhs_tr = u + 0.5 * g * k * f(u)
        um = _newton_shifted(f, u, 0.5 * g * k, rhs_tr, jac)
        rhs_b = c1 * um + c2 * u
        u = _newton_shifted(f, um, c3 * k, rhs_b, jac)
    return u


def _dirichlet_bands(grid, coef):
    """Bands of I*diag0 + coef*(-laplacian) with identity boundary rows."""
    n = grid.npts[0]
    h = grid.h[0]
    sub, diag, sup = flux_bands_1d(np.ones(n - 1), h, "neumann")
    sub = coef * sub
    diag = coef * diag
    sup = coef * sup
    sub[-1] = sup[0] = 0.0
    diag[0] = diag[-1] = 0.0
    return sub, diag, sup


def _bdf2_ab_ac(spec: ProblemSpec, n_steps: int) -> np.ndarray:
    grid = spec.grid
    k = spec.final_time / n_steps
    wp = lambda u: spec.problem.grad_E2(u)
    u_pp = spec.u0.copy()

    if grid.bc == "periodic":
        sym = fourier_symbol_laplacian(grid.npts, grid.h)

        def solve_be(kk, rhs):
            return _fft_solve(grid, 1.0 - kk * sym, rhs)

        def solve_bdf(rhs):
            return _fft_solve(grid, 1.5 - k * sym, rhs)

    else:

        def solve_be(kk, rhs):
            sub, diag, sup = _dirichlet_bands(grid, kk)
            rhs = rhs.copy()
            rhs[0], rhs[-1] = u_pp[0], u_pp[-1]
            return solve_banded_system(sub, 1.0 + diag, sup, rhs)

        def solve_bdf(rhs):
            sub, diag, sup = _dirichlet_bands(grid, k)
            rhs = rhs.copy()
            rhs[0], rhs[-1] = 1.5 * u_pp[0], 1.5 * u_pp[-1]
            return solve_banded_system(sub, 1.5 + diag, sup, rhs)

    # bootstrap u1: four backward-Euler substeps of size k/4
    u_p = u_pp.copy()
    for _ in range(4):
        u_p = solve_be(k / 4.0, u_p - (k / 4.0) * wp(u_p))
    for _ in range(n_steps - 1):
        rhs = 2.0 * u_p - 0.5 * u_pp - k * (2.0 * wp(u_p) - wp(u_pp))
        u_pp, u_p = u_p, solve_bdf(rhs)
    return u_p


def _bdf2_ab_ch(spec: ProblemSpec, n_steps: int) -> np.ndarray:
    grid = spec.grid
    k = spec.final_time / n_steps
    wp = lambda u: spec.problem.grad_E2(u)
    sym = fourier_symbol_laplacian(grid.npts, grid.h)
    u_pp = spec.u0.copy()

    u_p = u_pp.copy()
    for _ in range(4):
        kk = k / 4.0
        rhs = u_p + kk * laplacian(grid, wp(u_p))
        u_p = _fft_solve(grid, 1.0 + kk * sym**2, rhs)
    for _ in range(n_steps - 1):
        rhs = (
            2.0 * u_p
            - 0.5 * u_pp
            + k * laplacian(grid, 2.0 * wp(u_p) - wp(u_pp))
        )
        u_pp, u_p = u_p, _fft_solve(grid, 1.5 + k * sym**2, rhs)
    return u_p


def _bdf_ab_mob(spec: ProblemSpec, n_steps: int) -> np.ndarray:
    grid = spec.grid
    eps2 = 0.05**2
    k = spec.final_time / n_steps
    sym = fourier_symbol_laplacian(grid.npts, grid.h)

    def stab(u):
        # eps^2 lap^2 u + rhs(u): the add/subtract stabilizer pair
        return eps2 * laplacian(grid, laplacian(grid, u)) + spec.rhs(u)

    u_pp = spec.u0.copy()
    u_p = u_pp.copy()
    for _ in range(4):
        kk = k / 4.0
        rhs = u_p + kk * stab(u_p)
        u_p = _fft_solve(grid, 1.0 + kk * eps2 * sym**2, rhs)
    for _ in range(n_steps - 1):
        rhs = 4.0 * u_p - u_pp + 4.0 * k * stab(u_p) - 2.0 * k * stab(u_pp)
        u_pp, u_p = u_p, _fft_solve(grid, 3.0 + 2.0 * k * eps2 * sym**2, rhs)
    return u_p


_FAMILIES = {
    "tr_bdf2": _tr_bdf2,
    "bdf2_ab_ac": _bdf2_ab_ac,
    "bdf2_ab_ch": _bdf2_ab_ch,
    "bdf_ab_mob": _bdf_ab_mob,
}


def reference_run(spec: ProblemSpec, fine_steps: int) -> np.ndarray:
    """Run the experiment's reference scheme on its own grid."""
    return _FAMILIES[spec.reference](spec, fine_steps)


def reference_solution(
    name: str, fine_steps: int, fine_grid: int | None = None
) -> np.ndarray:
    """Reference end state for a named experiment.

    `fine_grid` overrides the desk-scale spatial resolution; the returned
    field lives on that grid.
    """
    spec = make_problem(name, grid_points=fine_grid)
    return reference_run(spec, fine_steps)
