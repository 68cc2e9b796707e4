import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifslearn.copula_core import (
    GridCopula,
    TransformationMatrix,
    ValidationError,
    build_ifs,
    c_volume,
    comonotone_copula,
    copula_axiom_violations,
    d_inf,
    empirical_copula,
    independence_copula,
    invariant_copula,
    pushforward_step,
    read_transformation_matrix,
)


def test_matrix_validation():
    with pytest.raises(ValidationError, match="negative"):
        TransformationMatrix([[0.5, -0.1], [0.3, 0.3]])
    with pytest.raises(ValidationError, match="sum to 1"):
        TransformationMatrix([[0.5, 0.1], [0.3, 0.3]])
    with pytest.raises(ValidationError, match="row 2"):
        TransformationMatrix([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(ValidationError, match="column 1"):
        TransformationMatrix([[0.0, 0.5], [0.0, 0.5]])


def test_breakpoints_follow_column_and_row_sums():
    ifs = build_ifs(TransformationMatrix([[0.2, 0.3], [0.1, 0.4]]))
    np.testing.assert_allclose(ifs.col_breaks, [0.0, 0.3, 1.0])
    np.testing.assert_allclose(ifs.row_breaks, [0.0, 0.5, 1.0])
    assert len(ifs.maps) == 4
    np.testing.assert_allclose(sorted(ifs.probs), [0.1, 0.2, 0.3, 0.4])


def test_zero_entries_get_no_map():
    ifs = build_ifs(TransformationMatrix([[0.5, 0.0], [0.0, 0.5]]))
    assert len(ifs.maps) == 2


def test_uniform_matrix_gives_independence():
    A = invariant_copula(TransformationMatrix.uniform(2), 32)
    assert d_inf(A, independence_copula(32)) <= 1e-12


def test_diagonal_and_antidiagonal_limits():
    G = 32
    M = invariant_copula(TransformationMatrix([[0.5, 0.0], [0.0, 0.5]]), G)
    assert d_inf(M, comonotone_copula(G)) <= 2 / G
    W = invariant_copula(TransformationMatrix([[0.0, 0.5], [0.5, 0.0]]), G)
    Wexact = GridCopula.from_function(lambda u, v: np.maximum(u + v - 1, 0.0), G)
    assert d_inf(W, Wexact) <= 2 / G


def test_invariant_copula_is_a_fixed_point():
    U = TransformationMatrix([[0.2, 0.3], [0.1, 0.4]])
    A = invariant_copula(U, 32)
    nxt = pushforward_step(A.cell_masses(), build_ifs(U))
    assert np.abs(nxt.cumsum(0).cumsum(1) - A.values[1:, 1:]).max() < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=9, max_size=9))
def test_invariant_copula_axioms_for_random_matrices(raw):
    u = np.array(raw).reshape(3, 3)
    A = invariant_copula(TransformationMatrix(u / u.sum()), 16)
    v = copula_axiom_violations(A.values)
    assert v["grounded"] == 0 and v["margins"] <= 1e-10 and v["volume"] <= 1e-12 and v["frechet"] <= 1e-12


def test_empirical_copula_of_a_single_point_pattern():
    # four points on the diagonal of the quadrant cells: E at (1/2, 1/2) is 1/2
    pts = np.array([[0.1, 0.1], [0.3, 0.3], [0.6, 0.6], [0.9, 0.9]])
    E = empirical_copula(pts, 8)
    assert E.values[4, 4] == pytest.approx(0.5)


def test_empirical_copula_with_ties_is_independence():
    E = empirical_copula(np.full((5, 2), 0.3), 8)
    assert d_inf(E, independence_copula(8)) <= 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 400), st.integers(0, 2**32 - 1))
def test_empirical_copula_axioms(n, seed):
    pts = np.random.default_rng(seed).random((n, 2))
    v = copula_axiom_violations(empirical_copula(pts, 16).values)
    assert v["grounded"] == 0 and v["margins"] <= 1e-10 and v["volume"] <= 1e-12 and v["frechet"] <= 1e-12


def test_c_volume_and_off_grid_corner():
    P = independence_copula(8)
    assert c_volume(P, (0.25, 0.5, 0.5, 1.0)) == pytest.approx(0.125)
    with pytest.raises(ValidationError):
        c_volume(P, (0.3, 0.5, 0.5, 1.0))


def test_grid_copula_rejects_bad_margins():
    vals = independence_copula(4).values.copy()
    vals[-1, 2] += 0.01
    with pytest.raises(ValidationError, match="margins"):
        GridCopula(4, vals)


def test_d_inf_rejects_mismatched_grids():
    with pytest.raises(ValidationError):
        d_inf(independence_copula(4), independence_copula(8))


def test_read_matrix_json_and_text(tmp_path):
    j = tmp_path / "m.json"
    j.write_text(json.dumps({"orientation": "top_to_bottom", "rows": [[0.1, 0.4], [0.2, 0.3]]}))
    U = read_transformation_matrix(j)
    np.testing.assert_allclose(U.entries, [[0.2, 0.3], [0.1, 0.4]])
    t = tmp_path / "m.txt"
    t.write_text("orientation: bottom_to_top\n0.2 0.3\n0.1, 0.4\n")
    np.testing.assert_allclose(read_transformation_matrix(t).entries, [[0.2, 0.3], [0.1, 0.4]])


def test_read_matrix_requires_orientation(tmp_path):
    t = tmp_path / "m.txt"
    t.write_text("0.5 0.5\n")
    with pytest.raises(ValidationError, match="orientation"):
        read_transformation_matrix(t)
