import numpy as np
import pytest
from scipy.optimize import least_squares

from hyperspin.models import C2Axis
from hyperspin.reference import EU151_SITE1, EU151_SITE1_FRAME
from hyperspin.spinops import euler_rotation, frame_rotation, lab_to_crystal

from golden import GOLDEN

TOL = 0.01


def crystal_tensor(site, state, which, direction="forward"):
    m = site.state(state)
    lab = m.Q if which == "Q" else m.M
    return lab_to_crystal(lab, site.crystal_rotation, direction).matrix


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_golden_crystal_tensors(key):
    state, which = key
    assert np.abs(crystal_tensor(EU151_SITE1_FRAME, state, which) - GOLDEN[key]).max() <= TOL


@pytest.mark.parametrize("key", sorted(GOLDEN))
def test_reverse_frame_convention_fails(key):
    state, which = key
    if which == "M" and state == "excited":
        pytest.skip("a nearly isotropic tensor cannot discriminate frame conventions")
    assert np.abs(crystal_tensor(EU151_SITE1_FRAME, state, which, "reverse") - GOLDEN[key]).max() > 0.1


@pytest.mark.parametrize("state", ["ground", "excited"])
def test_transposed_placement_fails(state):
    m = EU151_SITE1_FRAME.state(state)
    r = euler_rotation(m.q_angles)
    lab = r.T @ np.diag(m.quadrupole.principal_values) @ r
    t = EU151_SITE1_FRAME.crystal_rotation
    assert np.abs(t @ lab @ t.T - GOLDEN[(state, "Q")]).max() > 1.0


def test_frame_angles_round_to_tabulated_values():
    f = EU151_SITE1_FRAME
    assert (round(f.c2.alpha_c2), round(f.c2.beta_c2), round(f.gamma)) == (
        EU151_SITE1.c2.alpha_c2, EU151_SITE1.c2.beta_c2, EU151_SITE1.gamma)


def test_frame_angles_are_the_least_squares_solution():
    def residual(x):
        t = frame_rotation(*x)
        out = []
        for (state, which), target in GOLDEN.items():
            m = EU151_SITE1.state(state)
            lab = (m.Q if which == "Q" else m.M).matrix
            out.append((t @ lab @ t.T - target).ravel())
        return np.concatenate(out)

    sol = least_squares(residual, [-140.0, 172.0, -51.0], xtol=1e-14, ftol=1e-14)
    stored = [EU151_SITE1_FRAME.c2.alpha_c2, EU151_SITE1_FRAME.c2.beta_c2, EU151_SITE1_FRAME.gamma]
    assert np.allclose(sol.x, stored, atol=1e-3)


def test_subsites_share_model_but_not_tensors():
    q1, _ = EU151_SITE1.tensors("ground", 1)
    q2, _ = EU151_SITE1.tensors("ground", 2)
    assert not np.allclose(q1.matrix, q2.matrix)
    assert isinstance(EU151_SITE1.c2, C2Axis)
