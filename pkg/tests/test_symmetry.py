import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperspin.models import C2Axis, StateModel
from hyperspin.reference import EU151_SITE1
from hyperspin.spinops import EulerAngles, ZeemanParams, doublet_splittings, euler_rotation, hamiltonians
from golden import SIGN_TABLE
from hyperspin.symmetry import (
    PATTERNS,
    c2_rotation,
    enumerate_solutions,
    euler_distance,
    euler_equivalents,
    orientation_distance,
    sign_flip,
    subsite_tensors,
)

axis_angles = st.tuples(st.floats(-180, 180), st.floats(0, 180))
euler_deg = st.tuples(st.floats(-180, 180), st.floats(0, 180), st.floats(-180, 180))

SIGN_TABLE_EXCITED_ROW4 = (28.1173, 32.8277, 96.0319)


def random_fields(rng, n=50, scale=10.0):
    return rng.normal(size=(n, 3)) * scale


def assert_same_spectrum(a: StateModel, b: StateModel, fields, atol=1e-9):
    ea = np.linalg.eigvalsh(hamiltonians(a.Q, a.M, fields))
    eb = np.linalg.eigvalsh(hamiltonians(b.Q, b.M, fields))
    assert np.allclose(ea, eb, rtol=0, atol=atol * max(1.0, np.abs(ea).max()))


def test_c2_about_z():
    assert np.allclose(c2_rotation(C2Axis(0.0, 0.0)), np.diag([-1.0, -1.0, 1.0]), atol=1e-15)


@given(axis_angles)
def test_c2_involution_and_proper(angles):
    r = c2_rotation(C2Axis(*angles))
    assert np.allclose(r @ r, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


@given(axis_angles)
def test_c2_fixes_axis(angles):
    axis = C2Axis(*angles)
    assert np.allclose(c2_rotation(axis) @ axis.vector, axis.vector, atol=1e-12)


def test_table_axis_is_fixed():
    axis = EU151_SITE1.c2
    assert np.allclose(c2_rotation(axis) @ axis.vector, axis.vector, atol=1e-12)


@given(axis_angles)
def test_c2_depends_only_on_axis_line(angles):
    axis = C2Axis(*angles)
    anti = C2Axis.from_vector(-axis.vector)
    assert np.allclose(c2_rotation(axis), c2_rotation(anti), atol=1e-12)
    assert np.allclose(c2_rotation(axis), c2_rotation(axis.canonical()), atol=1e-12)


@given(axis_angles)
def test_subsite_tensors_involution(angles):
    g = EU151_SITE1.ground
    axis = C2Axis(*angles)
    q2, m2 = subsite_tensors(g.Q, g.M, axis)
    q1, m1 = subsite_tensors(q2, m2, axis)
    assert np.allclose(q1.matrix, g.Q.matrix, atol=1e-12)
    assert np.allclose(m1.matrix, g.M.matrix, atol=1e-12)
    assert np.allclose(np.linalg.eigvalsh(q2.matrix), np.linalg.eigvalsh(g.Q.matrix), atol=1e-12)
    assert np.allclose(np.linalg.eigvalsh(m2.matrix), np.linalg.eigvalsh(g.M.matrix), atol=1e-12)


def _subsite_splittings(state, fields):
    s = EU151_SITE1.state(state)
    q2, m2 = subsite_tensors(s.Q, s.M, EU151_SITE1.c2)
    return doublet_splittings(s.Q, s.M, fields), doublet_splittings(q2, m2, fields)


@pytest.mark.parametrize("state", ["ground", "excited"])
def test_field_along_c2_degenerate(state):
    a, b = _subsite_splittings(state, 7.0 * EU151_SITE1.c2.vector[None, :])
    assert np.allclose(a, b, atol=1e-9)


@pytest.mark.parametrize("state", ["ground", "excited"])
def test_field_perpendicular_to_c2_degenerate(state, rng):
    axis = EU151_SITE1.c2.vector
    v = rng.normal(size=(20, 3))
    v -= np.outer(v @ axis, axis)
    v *= 10.0 / np.linalg.norm(v, axis=1)[:, None]
    a, b = _subsite_splittings(state, v)
    assert np.allclose(a, b, atol=1e-9)


def test_generic_field_distinguishes_subsites():
    axis = EU151_SITE1.c2.vector
    perp = np.cross(axis, [1.0, 0.0, 0.0])
    perp /= np.linalg.norm(perp)
    b = 10.0 * (axis + perp) / np.sqrt(2.0)
    a, c = _subsite_splittings("ground", b[None, :])
    assert np.abs(a - c).max() > 1.0


def test_sign_flip_maps_sign_table_row1_to_row4():
    g = EU151_SITE1.ground
    positive = ZeemanParams(*np.abs(g.zeeman.values))
    row1 = StateModel(g.quadrupole, positive, EulerAngles.from_degrees(-149.96, 93.88, 124.10), g.m_angles)
    flipped = sign_flip(row1, 3)
    assert flipped.zeeman.values == pytest.approx(g.zeeman.values)
    assert euler_distance(flipped.q_angles, EulerAngles.from_degrees(-29.90, 53.48, 124.05)) < 0.1


@pytest.mark.parametrize("i", [1, 2, 3])
def test_sign_flip_involution(i):
    g = EU151_SITE1.ground
    back = sign_flip(sign_flip(g, i), i)
    assert back.zeeman.values == pytest.approx(g.zeeman.values)
    assert np.allclose(back.Q.matrix, g.Q.matrix, atol=1e-10)


@pytest.mark.parametrize("i", [1, 2, 3])
def test_sign_flip_preserves_spectrum(i, rng):
    g = EU151_SITE1.ground
    fields = random_fields(rng)
    a = doublet_splittings(g.Q, g.M, fields)
    f = sign_flip(g, i)
    b = doublet_splittings(f.Q, f.M, fields)
    assert np.abs(a - b).max() < 1e-6


def test_sign_flip_rejects_bad_index():
    with pytest.raises(ValueError):
        sign_flip(EU151_SITE1.ground, 0)


@pytest.mark.parametrize("state", ["ground", "excited"])
def test_family_has_eight_equivalent_members(state, rng):
    base = EU151_SITE1.state(state)
    family = enumerate_solutions(base)
    assert len(family) == 8
    assert [tuple(p) for p, _ in family] == list(PATTERNS)
    fields = random_fields(rng, 20)
    for _, member in family:
        assert_same_spectrum(base, member, fields)


def test_global_inversion_keeps_q():
    fam = enumerate_solutions(EU151_SITE1.ground)
    a, b = fam.model((1, 1, 1)), fam.model((-1, -1, -1))
    assert np.allclose(a.Q.matrix, b.Q.matrix, atol=1e-10)


def test_family_signs_follow_patterns():
    g = EU151_SITE1.ground
    for pattern, member in enumerate_solutions(g):
        assert np.array_equal(np.sign(member.zeeman.values), np.array(pattern))
        assert np.abs(member.zeeman.values) == pytest.approx(np.abs(g.zeeman.values))


def test_excited_family_row_four():
    fam = enumerate_solutions(EU151_SITE1.excited)
    member = fam.model((1, 1, -1))
    assert euler_distance(member.q_angles, EulerAngles.from_degrees(*SIGN_TABLE_EXCITED_ROW4)) < 0.1


def test_ground_family_matches_sign_table():
    fam = enumerate_solutions(EU151_SITE1.ground)
    misses = [euler_distance(fam.model(p).q_angles, EulerAngles.from_degrees(*g)) for p, g, _ in SIGN_TABLE]
    assert max(misses) < 0.1


def test_sign_table_inverted_rows_share_q():
    # p and -p are related by time reversal, so the family gives them one Q
    fam = enumerate_solutions(EU151_SITE1.excited)
    for p, _, _ in SIGN_TABLE:
        minus = tuple(-s for s in p)
        assert orientation_distance(fam.model(p).q_angles, fam.model(minus).q_angles) < 1e-9


def test_isotropic_family_equivalent(rng):
    iso = StateModel.from_values(27.26, 5.85, (9.0, 9.0, 9.0), (10.0, 20.0, 30.0), (0.0, 0.0, 0.0))
    fields = random_fields(rng, 20)
    for _, member in enumerate_solutions(iso):
        assert_same_spectrum(iso, member, fields)


def test_flips_change_eigenvectors():
    g = EU151_SITE1.ground
    f = sign_flip(g, 1)
    assert not np.allclose(f.Q.matrix, g.Q.matrix, atol=1e-3)


@given(euler_deg)
def test_euler_equivalents_share_tensor(angles):
    e = EulerAngles.from_degrees(*angles)
    d = np.diag([1.0, 2.0, 3.0])
    ref = euler_rotation(e) @ d @ euler_rotation(e).T
    for alt in euler_equivalents(e):
        r = euler_rotation(alt)
        assert np.allclose(r @ d @ r.T, ref, atol=1e-9)
        assert euler_distance(alt, e) < 1e-6


def test_orientation_distance_at_gimbal_lock():
    a = EulerAngles.from_degrees(40.0, 1e-3, -40.0)
    assert orientation_distance(a, EulerAngles(0.0, 0.0, 0.0)) < 2e-3
    assert euler_distance(a, EulerAngles(0.0, 0.0, 0.0)) > 1.0


@given(euler_deg)
def test_orientation_distance_ignores_axis_signs(angles):
    e = EulerAngles.from_degrees(*angles)
    for alt in euler_equivalents(e):
        assert orientation_distance(alt, e) < 1e-5
