"""Inner linear solvers for the SPD stage systems.

The generic path is conjugate gradients on a matrix-free operator.  The
concrete problems override it with direct solves: banded factorizations for
1D operators and Fourier diagonalization for periodic constant-coefficient
ones.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "LinearSolverError",
    "cg",
    "flux_bands_1d",
    "solve_banded_system",
    "fourier_symbol_laplacian",
]


class LinearSolverError(RuntimeError):
    """Linear solver broke down or failed to reach its tolerance."""


def cg(apply_op, b, inner, x0=None, rtol=1e-13, maxiter=None):
    """Conjugate gradients in the provided inner product."""
    x = np.zeros_like(b) if x0 is None else x0.copy()
    n = b.size
    if maxiter is None:
        maxiter = 10 * n
    r = b - apply_op(x)
    p = r.copy()
    rs = inner(r, r)
    b_norm = np.sqrt(max(inner(b, b), 0.0))
    if b_norm == 0.0:
        return np.zeros_like(b)
    tol2 = (rtol * b_norm) ** 2
    for _ in range(maxiter):
        if rs <= tol2:
            return x
        ap = apply_op(p)
        pap = inner(p, ap)
        if pap <= 0:
            raise LinearSolverError("CG breakdown: operator not positive definite")
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = inner(r, r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if rs <= tol2 * 16:
        # accept a near-miss at the roundoff floor
        return x
    raise LinearSolverError(
        f"CG did not reach rtol={rtol:g} in {maxiter} iterations "
        f"(residual {np.sqrt(rs) / b_norm:.3e} relative)"
    )


def flux_bands_1d(a_face: np.ndarray, h: float, bc: str):
    """Matrix of -div(a grad .) as (sub, diag, sup) bands from face values.

    a_face[j] sits on face j+1/2 (length N-1 for Neumann, N for periodic
    where the last entry wraps).  Neumann rows at the ends are doubled to
    stay symmetric under trapezoid weights.  Periodic returns a sparse CSC
    matrix instead of bands (the wrap breaks bandedness).
    """
    if bc == "neumann":
        n = a_face.size + 1
        sub = np.zeros(n)
        sup = np.zeros(n)
        diag = np.zeros(n)
        # interior
        diag[1:-1] = (a_face[:-1] + a_face[1:]) / h**2
        sup[1:-1] = -a_face[1:] / h**2
        sub[1:-1] = -a_face[:-1] / h**2
        diag[0] = 2 * a_face[0] / h**2
        sup[0] = -2 * a_face[0] / h**2
        diag[-1] = 2 * a_face[-1] / h**2
        sub[-1] = -2 * a_face[-1] / h**2
        return sub, diag, sup
    if bc == "periodic":
        n = a_face.size
        am = np.roll(a_face, 1)  # face j-1/2
        diag = (a_face + am) / h**2
        sup = -a_face / h**2
        sub = -am / h**2
        mat = sp.diags(
            [sub[1:], diag, sup[:-1]], offsets=[-1, 0, 1], format="lil"
        )
        mat[0, -1] = sub[0]
        mat[-1, 0] = sup[-1]
        return mat.tocsc()
    raise NotImplementedError(bc)


def solve_banded_system(sub, diag, sup, rhs):
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = sup[:-1]
    ab[1, :] = diag
    ab[2, :-1] = sub[1:]
    return sla.solve_banded((1, 1), ab, rhs)


def sparse_solve(mat, rhs):
    return spla.spsolve(mat.tocsc(), rhs)


def fourier_symbol_laplacian(npts: tuple[int, ...], h: tuple[float, ...]):
    """Eigenvalues of the periodic centered Laplacian on the rfft grid."""
    if len(npts) == 1:
        k = np.fft.rfftfreq(npts[0]) * npts[0]
        return -4.0 / h[0] ** 2 * np.sin(np.pi * k / npts[0]) ** 2
    kx = np.fft.fftfreq(npts[0]) * npts[0]
    ky = np.fft.rfftfreq(npts[1]) * npts[1]
    sx = -4.0 / h[0] ** 2 * np.sin(np.pi * kx / npts[0]) ** 2
    sy = -4.0 / h[1] ** 2 * np.sin(np.pi * ky / npts[1]) ** 2
    return sx[:, None] + sy[None, :]
