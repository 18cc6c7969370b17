import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradflow.tableau import (
    BUILTIN_NAMES,
    Tableau,
    TableauFormatError,
    TableauInvariantError,
    UnknownTableauError,
    builtin,
    load,
    save,
)

PRINT_TOL = 2e-3


def test_builtin_names_complete():
    assert set(BUILTIN_NAMES) == {
        "be",
        "be_fi",
        "si2",
        "si3",
        "si1c",
        "si1125c",
        "fi2",
        "fi3",
        "fi1125",
    }


def test_unknown_builtin():
    with pytest.raises(UnknownTableauError):
        builtin("rk4")


def test_be_is_identity_case():
    t = builtin("be")
    assert t.stages == 1
    assert t.gamma[0, 0] == 1.0
    assert t.theta[0, 0] == 1.0
    assert t.claimed_order == 1


def test_si2_printed_entries():
    t = builtin("si2")
    assert t.stages == 5
    assert t.gamma[0, 0] == pytest.approx(8.841)
    assert t.theta[1, 0] == pytest.approx(0.009)
    assert t.claimed_threshold == pytest.approx(3 / 872)
    assert t.claimed_order == 2


def test_fi2_structure():
    t = builtin("fi2")
    assert t.stages == 3
    assert t.theta is None
    assert t.gamma[0, 0] == pytest.approx(5.0)
    np.testing.assert_allclose(t.gamma[2, :3], [-2.0, 0.22, 6.29])


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_theta_row_sums_and_monotonicity(name):
    t = builtin(name)
    if t.theta is None:
        return
    for m in range(t.stages):
        row = t.theta[m, : m + 1]
        assert abs(row.sum() - 1.0) <= PRINT_TOL
        assert np.all(row >= -PRINT_TOL)
        if m >= 1:
            assert np.all(t.theta[m, :m] - t.theta[m - 1, :m] <= PRINT_TOL)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_row_sums_positive(name):
    assert np.all(builtin(name).row_sums > 0)


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_save_load_roundtrip(name, tmp_path):
    t = builtin(name)
    p = tmp_path / f"{name}.tab"
    save(t, p)
    t2 = load(p)
    assert t2.stages == t.stages
    assert t2.label == t.label
    assert t2.claimed_order == t.claimed_order
    if t.claimed_threshold is None:
        assert t2.claimed_threshold is None
    else:
        assert t2.claimed_threshold == t.claimed_threshold
    np.testing.assert_array_equal(t2.gamma, t.gamma)
    if t.theta is None:
        assert t2.theta is None
    else:
        np.testing.assert_array_equal(t2.theta, t.theta)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-4.0, max_value=9.0, allow_nan=False),
        min_size=1,
        max_size=6,
    )
)
def test_roundtrip_arbitrary_gamma_rows(diag_shift):
    # build a random lower-triangular gamma with positive row sums
    m = len(diag_shift)
    gamma = np.zeros((m, m))
    for i, v in enumerate(diag_shift):
        gamma[i, : i + 1] = v / (i + 1)
        gamma[i, i] += abs(v) + 1.0  # force S_m > 0
    t = Tableau(stages=m, gamma=gamma, theta=None, label="rnd", claimed_order=1)
    import tempfile, pathlib

    with tempfile.TemporaryDirectory() as d:
        p = pathlib.Path(d) / "t.tab"
        save(t, p)
        t2 = load(p)
        np.testing.assert_array_equal(t2.gamma, t.gamma)


def test_load_rejects_nonpositive_row_sum(tmp_path):
    p = tmp_path / "bad.tab"
    p.write_text("M 1\ntheta present\n0.0\n1.0\n")
    with pytest.raises(TableauInvariantError, match="nonpositive stage row sum"):
        load(p)


def test_load_rejects_bad_theta_row_sum(tmp_path):
    p = tmp_path / "bad.tab"
    p.write_text("M 2\ntheta present\n1.0\n0.5 0.5\n1.0\n0.4 0.5\n")
    with pytest.raises(TableauInvariantError, match="theta row sum"):
        load(p)


def test_load_rejects_wrong_shape(tmp_path):
    p = tmp_path / "bad.tab"
    p.write_text("M 2\ntheta absent\n1.0 2.0\n0.5 0.5\n")
    with pytest.raises(TableauFormatError):
        load(p)


def test_load_rejects_malformed_header(tmp_path):
    p = tmp_path / "bad.tab"
    p.write_text("stages 2\n1.0\n0.5 0.5\n")
    with pytest.raises(TableauFormatError):
        load(p)


def test_load_rejects_bad_number(tmp_path):
    p = tmp_path / "bad.tab"
    p.write_text("M 1\ntheta absent\nxyz\n")
    with pytest.raises(TableauFormatError):
        load(p)


def test_tableaus_immutable():
    t = builtin("si2")
    with pytest.raises(ValueError):
        t.gamma[0, 0] = 2.0
