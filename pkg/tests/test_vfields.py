"""Vector field families: bracket algebra against a finite-difference
oracle, the rank condition on the built-ins, divergence bookkeeping."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submfg.vfields import (VectorField, bracket_tree, euclidean,
                            family_by_name, grushin, heisenberg_periodic,
                            lie_bracket, verify_hormander)


def fd_bracket(a, b, points, h=1e-6):
    """[a,b] = Jb.a - Ja.b via central differences, no symbolic machinery."""
    d = points.shape[1]
    out = np.zeros_like(points)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        ja = (a(points + e) - a(points - e)) / (2 * h)   # d a / d x_j
        jb = (b(points + e) - b(points - e)) / (2 * h)
        out += jb * a(points)[:, j:j + 1] - ja * b(points)[:, j:j + 1]
    return out


@pytest.mark.parametrize("family", [grushin(), heisenberg_periodic()])
def test_bracket_matches_finite_differences(family):
    rng = np.random.default_rng(7)
    pts = rng.uniform(0, 1, size=(40, family.dim))
    for a in family.fields:
        for b in family.fields:
            got = lie_bracket(a, b)(pts)
            want = fd_bracket(a, b, pts)
            assert np.max(np.abs(got - want)) < 1e-7


def test_bracket_antisymmetry():
    fam = heisenberg_periodic()
    pts = np.random.default_rng(1).uniform(0, 1, size=(25, fam.dim))
    for a in fam.fields:
        for b in fam.fields:
            ab = lie_bracket(a, b)(pts)
            ba = lie_bracket(b, a)(pts)
            assert np.max(np.abs(ab + ba)) < 1e-12


def test_bracket_of_field_with_itself_vanishes():
    fam = grushin()
    for f in fam.fields:
        assert lie_bracket(f, f).is_zero()


def test_euclidean_rank_is_immediate():
    fam = euclidean(2)
    pts = np.random.default_rng(2).uniform(0, 1, size=(30, 2))
    rep = verify_hormander(fam, pts, max_step=1)
    assert rep.satisfied and rep.step == 1


def test_grushin_needs_one_bracket():
    fam = grushin()
    # include the degenerate line x0 = 0 explicitly
    pts = np.concatenate([
        np.random.default_rng(3).uniform(0, 1, size=(30, 2)),
        np.column_stack([np.zeros(8), np.linspace(0, 1, 8, endpoint=False)]),
    ])
    rep = verify_hormander(fam, pts, max_step=2)
    assert rep.satisfied and rep.step == 2
    on_axis = np.isclose(pts[:, 0] % 1.0, 0.0)
    assert np.all(rep.depth_needed[on_axis] == 2)
    assert np.all(rep.depth_needed[~on_axis] == 1)


def test_grushin_step_one_fails_on_axis():
    fam = grushin()
    pts = np.array([[0.0, 0.3], [0.5, 0.9]])  # sin(2 pi x0) = 0 on both
    rep = verify_hormander(fam, pts, max_step=1)
    assert not rep.satisfied


def test_heisenberg_periodic_step_at_most_four():
    fam = heisenberg_periodic()
    pts = np.random.default_rng(4).uniform(0, 1, size=(50, 3))
    rep = verify_hormander(fam, pts, max_step=4)
    assert rep.satisfied and rep.step <= 4


def test_builtin_families_are_divergence_free():
    for fam in (euclidean(1), euclidean(3), grushin(), heisenberg_periodic()):
        pts = np.random.default_rng(5).uniform(0, 1, size=(20, fam.dim))
        for f in fam.fields:
            assert np.max(np.abs(f.divergence(pts))) < 1e-12


def test_fields_are_one_periodic():
    for fam in (grushin(), heisenberg_periodic()):
        pts = np.random.default_rng(6).uniform(0, 1, size=(15, fam.dim))
        shift = pts + np.eye(fam.dim)[0]
        for f in fam.fields:
            assert np.allclose(f(pts), f(shift), atol=1e-12)


def test_sigma_stacks_all_fields():
    fam = grushin()
    pts = np.random.default_rng(8).uniform(0, 1, size=(12, 2))
    sig = fam.sigma(pts)
    assert sig.shape == (12, fam.m, 2)
    for k, f in enumerate(fam.fields):
        assert np.array_equal(sig[:, k, :], f(pts))


def test_bracket_tree_depth_counts():
    tree = bracket_tree(grushin(), max_step=3)
    depths = sorted({e.depth for e in tree})
    assert depths[0] == 1 and depths[-1] <= 3
    # generators come first
    assert all(e.depth == 1 for e in tree[:2])


def test_family_by_name_round_trip():
    assert family_by_name("euclidean", 3).dim == 3
    assert family_by_name("grushin").m == 2
    assert family_by_name("heisenberg_periodic").dim == 3
    with pytest.raises(ValueError):
        family_by_name("parabolic")


def test_verify_hormander_rejects_wrong_dimension():
    with pytest.raises(ValueError):
        verify_hormander(grushin(), np.zeros((4, 3)))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_bracket_bilinearity_pointwise(x0, x1, x2):
    fam = heisenberg_periodic()
    a, b = fam.fields
    c = lie_bracket(a, b)
    pt = np.array([[x0, x1, x2]])
    lhs = lie_bracket(a, b)(pt) + lie_bracket(c, b)(pt)
    ab_plus_cb = lie_bracket(VectorField(
        3, [ea + ec for ea, ec in zip(a.exprs, c.exprs)]), b)(pt)
    assert np.allclose(lhs, ab_plus_cb, atol=1e-12)
