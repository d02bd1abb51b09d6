"""Reference spin Hamiltonian parameters for 151Eu3+:Y2SiO5, site I.

``EU151_SITE1`` holds the best-fit values (angles in degrees, D and E in
MHz, g in MHz/T). The Q orientations use the higher-precision listing of
the same solution from the reference sign-variant table. The C2 axis angles
are given to the nearest degree only, which is too coarse to rebuild the
crystal-frame tensors to their four tabulated decimals; ``EU151_SITE1_FRAME``
carries unrounded frame angles that round to the tabulated ones and reproduce
those tensors.
"""
from __future__ import annotations

from .models import C2Axis, SiteModel, StateModel

GROUND = StateModel.from_values(
    D=-12.3797, E=-2.735,
    g=(4.30, 5.559, -10.891),
    q_deg=(-29.90, 53.48, 124.05),
    m_deg=(105.25, 163.74, 124.56),
)

EXCITED = StateModel.from_values(
    D=27.26, E=5.85,
    g=(9.11, 9.158, 9.069),
    q_deg=(165.2982, 154.9117, 107.8092),
    m_deg=(70.53, 5.0, 62.17),
)

EU151_SITE1 = SiteModel(ground=GROUND, excited=EXCITED, c2=C2Axis(-140.0, 172.0), gamma=-51.0)

# least-squares solution against the crystal-frame tensors, see tests/test_reference.py
EU151_SITE1_FRAME = SiteModel(
    ground=GROUND, excited=EXCITED, c2=C2Axis(-140.2367, 172.2919), gamma=-50.9892
)

# free-ion nuclear moment of 151Eu, MHz/T
G_FREE_ION = 10.56

# relative oscillator strengths, rows ground 1/2, 3/2, 5/2; columns excited 1/2, 3/2, 5/2
BRANCHING_CALC = (
    (0.02, 0.18, 0.80),
    (0.12, 0.71, 0.17),
    (0.87, 0.10, 0.03),
)
BRANCHING_EXP = (
    (0.03, 0.22, 0.75),
    (0.12, 0.68, 0.20),
    (0.85, 0.10, 0.05),
)
BRANCHING_EXP_ERR = 0.03
