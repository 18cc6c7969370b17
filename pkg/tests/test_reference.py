import numpy as np
import pytest

from gradflow.grids import norm
from gradflow.problems import make_problem
from gradflow.reference import (
    _banded_fd_jacobian,
    _flux_jac_bands,
    reference_run,
    reference_solution,
)


def test_flux_jacobian_matches_fd():
    for name in ("heat_wass", "pme_hm1", "pme_wass"):
        spec = make_problem(name, grid_points=65)
        u = np.maximum(spec.u0 + 0.01 * np.cos(3 * spec.x), 5e-3)
        s1, d1, p1 = _flux_jac_bands(spec.grid, spec.flux_form, u)
        s2, d2, p2 = _banded_fd_jacobian(spec.rhs, u)
        scale = np.max(np.abs(d1))
        assert np.max(np.abs(s1 - s2)) <= 1e-6 * scale
        assert np.max(np.abs(d1 - d2)) <= 1e-6 * scale
        assert np.max(np.abs(p1 - p2)) <= 1e-6 * scale


@pytest.mark.parametrize(
    "name,n",
    [("heat_wass", 64), ("pme_hm1", 64), ("ac1d_tw", 512), ("ch_mob", 64)],
)
def test_reference_self_convergence_second_order(name, n):
    """Richardson self-test: solutions at k and k/2 differ by about x4.

    The Allen-Cahn reference treats the potential explicitly, so it needs
    k * Lambda below its own stability limit; hence the finer steps there.
    """
    pts = {"ac1d_tw": 513, "heat_wass": 257, "pme_hm1": 257, "ch_mob": 257}[name]
    spec = make_problem(name, grid_points=pts)
    u1 = reference_run(spec, n)
    u2 = reference_run(spec, 2 * n)
    u3 = reference_run(spec, 4 * n)
    d12 = norm(spec.grid, u1 - u2)
    d23 = norm(spec.grid, u2 - u3)
    assert d12 / d23 == pytest.approx(4.0, rel=0.5)


def test_reference_heat_wass_close_to_exact_at_fine_resolution():
    spec = make_problem("heat_wass", grid_points=16385)
    u = reference_solution("heat_wass", fine_steps=2**14, fine_grid=16385)
    err = norm(spec.grid, u - spec.exact(spec.final_time))
    assert err <= 1e-9


def test_reference_ac1d_far_below_coarsest_scheme_error():
    """Same-grid fine-time reference vs the continuum wave: the gap is the
    spatial floor, >= 100x below the coarsest tested scheme error (~2.7)."""
    spec = make_problem("ac1d_tw", grid_points=4097)
    u = reference_run(spec, 2048)
    err = norm(spec.grid, u - spec.exact(spec.final_time))
    assert err <= 2.7 / 100.0


def test_reference_requires_known_family():
    spec = make_problem("heat_wass", grid_points=65)
    spec.reference = "unknown"
    with pytest.raises(KeyError):
        reference_run(spec, 16)
