import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperspin.branching import (
    BranchingTable,
    branching_table,
    quenching_alphas,
    ranking_text,
    select_solution,
    subsite_averaged_table,
    subsite_tables,
    transition_map,
)
from hyperspin.models import C2Axis, SiteModel, StateModel
from hyperspin.reference import BRANCHING_CALC, BRANCHING_EXP, BRANCHING_EXP_ERR, EU151_SITE1, EU151_SITE1_FRAME
from hyperspin.spinops import EulerAngles, QuadrupoleParams, ZeemanParams, euler_rotation
from hyperspin.symmetry import enumerate_solutions

angle = st.floats(-180, 180)
euler_deg = st.tuples(angle, st.floats(0, 180), angle)


def random_state(rng, D=None, E=None):
    D = rng.uniform(-30, 30) if D is None else D
    E = rng.uniform(-0.3, 0.3) * D if E is None else E
    return StateModel.from_values(
        D, E, rng.uniform(-12, 12, 3), rng.uniform(-180, 180, 3) * [1, 0.5, 1] + [0, 90, 0],
        rng.uniform(-180, 180, 3) * [1, 0.5, 1] + [0, 90, 0],
    )


def assert_doubly_stochastic(values, tol=1e-9):
    assert np.allclose(values.sum(axis=0), 1.0, atol=tol)
    assert np.allclose(values.sum(axis=1), 1.0, atol=tol)
    assert np.all(values >= -tol) and np.all(values <= 1 + tol)


def test_reference_model_reproduces_calculated_table():
    t = branching_table(EU151_SITE1.ground, EU151_SITE1.excited)
    assert np.abs(t.values - np.array(BRANCHING_CALC)).max() <= 0.01


def test_subsite_average_matches_calculated_table():
    t = subsite_averaged_table(EU151_SITE1)
    assert np.abs(t.values - np.array(BRANCHING_CALC)).max() <= 0.01


def test_subsite_tables_equal_at_zero_field():
    a, b = subsite_tables(EU151_SITE1)
    assert np.allclose(a.values, b.values, atol=1e-9)
    assert np.allclose(subsite_averaged_table(EU151_SITE1).values, a.values, atol=1e-9)


def test_random_site_average_is_mean(rng):
    site = SiteModel(random_state(rng), random_state(rng), C2Axis(30.0, 60.0))
    a, b = subsite_tables(site)
    assert np.array_equal(subsite_averaged_table(site).values, 0.5 * (a.values + b.values))


def test_aligned_states_give_identity():
    g = EU151_SITE1.ground
    # same E/D ratio and sign, so the zero-field eigenbases coincide
    scaled = QuadrupoleParams(2 * g.quadrupole.D, 2 * g.quadrupole.E)
    e = StateModel(scaled, ZeemanParams(1, 1, 1), g.q_angles, g.m_angles)
    assert np.allclose(branching_table(g, e).values, np.eye(3), atol=1e-9)


def test_random_tables_doubly_stochastic(rng):
    for _ in range(20):
        assert_doubly_stochastic(branching_table(random_state(rng), random_state(rng)).values)


@given(euler_deg)
def test_global_rotation_invariance(angles):
    r = euler_rotation(EulerAngles.from_degrees(*angles))
    a = branching_table(EU151_SITE1.ground, EU151_SITE1.excited)
    b = branching_table(EU151_SITE1.ground, EU151_SITE1.excited, rotation=r)
    assert np.allclose(a.values, b.values, atol=1e-9)


def test_table_validation():
    with pytest.raises(ValueError):
        BranchingTable(np.eye(2))
    with pytest.raises(ValueError):
        BranchingTable(np.eye(3), errors=0.0)


def test_table_text_and_json():
    t = BranchingTable(BRANCHING_CALC)
    text = t.to_text()
    assert text.splitlines()[1].split()[1:] == ["0.02", "0.18", "0.80"]
    assert '"values"' in t.to_json()


def _families():
    return enumerate_solutions(EU151_SITE1.ground), enumerate_solutions(EU151_SITE1.excited)


def test_selection_counts():
    g, e = _families()
    measured = BranchingTable(BRANCHING_EXP, errors=BRANCHING_EXP_ERR)
    assert len(select_solution(g, e, measured)) == 64
    assert len(select_solution(g, e, measured, excited_positive_only=True)) == 8


def test_selection_prefers_reference_solution():
    g, e = _families()
    ranked = select_solution(g, e, BranchingTable(BRANCHING_EXP, errors=BRANCHING_EXP_ERR))
    top = ranked[0]
    assert (top.ground_pattern, top.excited_pattern) == ("++-", "+++")


def test_only_reference_solution_within_errors():
    g, e = _families()
    ranked = select_solution(g, e, BranchingTable(BRANCHING_EXP, errors=BRANCHING_EXP_ERR))
    inside = [(p.ground_pattern, p.excited_pattern) for p in ranked if p.within_errors]
    assert inside == [("++-", "+++")]


def test_selection_ties_follow_sign_patterns():
    g, e = _families()
    ranked = select_solution(g, e, BranchingTable(BRANCHING_EXP, errors=BRANCHING_EXP_ERR))
    for a, b in zip(ranked, ranked[1:]):
        if round(a.max_deviation, 12) == round(b.max_deviation, 12):
            assert (a.ground_pattern, a.excited_pattern) < (b.ground_pattern, b.excited_pattern)
    tied = [(p.ground_pattern, p.excited_pattern) for p in ranked[:4]]
    assert tied == [("++-", "+++"), ("++-", "---"), ("--+", "+++"), ("--+", "---")]


def test_selection_self_consistency():
    g, e = _families()
    gm, em = g.model((1, -1, 1)), e.model((-1, 1, 1))
    measured = branching_table(gm, em)
    top = select_solution(g, e, measured)[0]
    assert top.max_deviation == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(top.table.values, measured.values, atol=1e-12)


def test_selection_invariant_under_error_rescaling():
    g, e = _families()
    a = select_solution(g, e, BranchingTable(BRANCHING_EXP, errors=0.03))
    b = select_solution(g, e, BranchingTable(BRANCHING_EXP, errors=0.3))
    assert [(p.ground_index, p.excited_index) for p in a] == [(p.ground_index, p.excited_index) for p in b]


def test_ranking_text_rows():
    g, e = _families()
    ranked = select_solution(g, e, BranchingTable(BRANCHING_EXP), excited_positive_only=True)
    assert len(ranking_text(ranked, limit=3).strip().splitlines()) == 4


def test_transition_map_zero_field_reduces_to_table():
    m = transition_map(EU151_SITE1, np.zeros(3))
    t = branching_table(EU151_SITE1.ground, EU151_SITE1.excited)
    assert np.allclose(m.block_table().values, t.values, atol=1e-9)


def test_transition_map_doubly_stochastic_at_10_mT():
    b = 10.0 * EU151_SITE1_FRAME.crystal_rotation[0]
    for sub in (1, 2):
        assert_doubly_stochastic(transition_map(EU151_SITE1_FRAME, b, subsite=sub).values)


def test_transition_map_continuity():
    b = np.array([3.0, -2.0, 5.0])
    eps = 1e-4
    a = transition_map(EU151_SITE1, b).values
    c = transition_map(EU151_SITE1, b + eps * np.array([1.0, 1.0, 1.0])).values
    d = transition_map(EU151_SITE1, b + 2 * eps * np.array([1.0, 1.0, 1.0])).values
    first, second = np.linalg.norm(c - a), np.linalg.norm(d - a)
    assert first < 1e-2
    assert second / first == pytest.approx(2.0, rel=0.05)


def test_quenching_table_values():
    ground = quenching_alphas(EU151_SITE1.ground.zeeman)
    excited = quenching_alphas(EU151_SITE1.excited.zeeman)
    assert ground == pytest.approx((0.59, 0.47, 2.03), abs=0.01)
    assert excited == pytest.approx((0.14, 0.13, 0.14), abs=0.01)


def test_quenching_free_ion():
    assert quenching_alphas(ZeemanParams(10.56, 10.56, 10.56)) == pytest.approx((0.0, 0.0, 0.0))
