"""Magnetic subsites and the sign ambiguity of the Zeeman tensor.

Two operations leave every measured splitting unchanged:

* a pi rotation about the crystal C2 axis, which maps subsite 1 onto
  subsite 2 (and is therefore only visible through the pair of spectra);
* a reflection ``S'_i = R_M S_i R_M^T`` through the plane normal to the
  i-th principal axis of M. It flips the sign of ``g_i`` and carries Q to
  ``S'_i Q S'_i``; the Hamiltonian is unitarily equivalent, so energies are
  identical but the eigenvectors, and hence optical overlaps, change.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .models import C2Axis, StateModel
from .spinops import (
    EulerAngles,
    SymmetricTensor3,
    ZeemanParams,
    euler_from_matrix,
    euler_rotation,
    frame_rotation,
    rot_z,
)

__all__ = [
    "C2Axis",
    "SignPattern",
    "SolutionFamily",
    "c2_rotation",
    "subsite_tensors",
    "sign_flip",
    "apply_signs",
    "enumerate_solutions",
    "euler_equivalents",
    "euler_distance",
    "orientation_distance",
]

# enumeration order of the eight sign patterns
PATTERNS = (
    (1, 1, 1),
    (-1, 1, 1),
    (1, -1, 1),
    (1, 1, -1),
    (-1, 1, -1),
    (1, -1, -1),
    (-1, -1, 1),
    (-1, -1, -1),
)

# proper diagonal sign matrices; R @ S describes the same diagonal tensor as R
_PROPER_SIGNS = (
    np.diag([1.0, 1.0, 1.0]),
    np.diag([-1.0, -1.0, 1.0]),
    np.diag([-1.0, 1.0, -1.0]),
    np.diag([1.0, -1.0, -1.0]),
)


class SignPattern(NamedTuple):
    g1: int
    g2: int
    g3: int

    def __str__(self):
        return "".join("+" if s > 0 else "-" for s in self)


@dataclass(frozen=True)
class SolutionFamily:
    """The eight spectrum-equivalent variants of one state model.

    ``members`` follows the fixed pattern order (+++, -++, +-+, ++-, -+-, +--, --+, ---);
    ``base`` is the model the family was generated from.
    """

    base: StateModel
    members: tuple[tuple[SignPattern, StateModel], ...]

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def model(self, pattern) -> StateModel:
        pattern = tuple(int(s) for s in pattern)
        for p, m in self.members:
            if tuple(p) == pattern:
                return m
        raise KeyError(pattern)

    def index_of(self, pattern) -> int:
        return PATTERNS.index(tuple(int(s) for s in pattern)) + 1


def c2_rotation(axis: C2Axis) -> np.ndarray:
    r = frame_rotation(axis.alpha_c2, axis.beta_c2, 0.0)
    return r.T @ rot_z(math.pi) @ r


def subsite_tensors(Q1, M1, axis: C2Axis) -> tuple[SymmetricTensor3, SymmetricTensor3]:
    r = c2_rotation(axis)
    q = SymmetricTensor3(np.asarray(Q1, dtype=float))
    m = SymmetricTensor3(np.asarray(M1, dtype=float))
    return q.rotated(r), m.rotated(r)


def _reflection(model: StateModel, flips) -> np.ndarray:
    rm = euler_rotation(model.m_angles)
    return rm @ np.diag(np.asarray(flips, dtype=float)) @ rm.T


def apply_signs(model: StateModel, flips) -> StateModel:
    """Flip the sign of every ``g_i`` with ``flips[i] == -1`` and transform Q accordingly."""
    flips = tuple(int(f) for f in flips)
    if any(f not in (1, -1) for f in flips) or len(flips) != 3:
        raise ValueError(f"flips must be three entries of +-1, got {flips}")
    s = _reflection(model, flips)
    rq = s @ euler_rotation(model.q_angles)
    if np.linalg.det(rq) < 0:
        # -1 commutes with the diagonal tensor, restores a proper rotation
        rq = -rq
    g = ZeemanParams(*(f * g for f, g in zip(flips, model.zeeman.values)))
    return StateModel(model.quadrupole, g, euler_from_matrix(rq), model.m_angles)


def sign_flip(model: StateModel, i: int) -> StateModel:
    """Negate ``g_i`` (i in 1..3) and move Q to the mirrored orientation."""
    if i not in (1, 2, 3):
        raise ValueError(f"axis index must be 1, 2 or 3, got {i!r}")
    flips = [1, 1, 1]
    flips[i - 1] = -1
    return apply_signs(model, flips)


def enumerate_solutions(model: StateModel) -> SolutionFamily:
    base_signs = [1 if g >= 0 else -1 for g in model.zeeman.values]
    members = []
    for pattern in PATTERNS:
        flips = [p * b for p, b in zip(pattern, base_signs)]
        members.append((SignPattern(*pattern), apply_signs(model, flips)))
    return SolutionFamily(base=model, members=tuple(members))


def euler_equivalents(e: EulerAngles) -> list[EulerAngles]:
    """The four canonical triples giving the same diagonal-tensor orientation."""
    r = euler_rotation(e)
    return [euler_from_matrix(r @ s) for s in _PROPER_SIGNS]


def _wrapped_max(a, b) -> float:
    d = (np.asarray(a) - np.asarray(b) + 180.0) % 360.0 - 180.0
    return float(np.max(np.abs(d)))


def _aliases(e: EulerAngles):
    """Triples (degrees) equal to ``e`` as rotations, including negative beta."""
    a, b, g = e.degrees
    yield (a, b, g)
    yield (a + 180.0, -b, g + 180.0)


def euler_distance(e1: EulerAngles, e2: EulerAngles) -> float:
    """Largest per-angle difference (degrees) between two tensor orientations.

    Both triples are compared over all representations of the same tensor
    orientation, modulo 360 degrees.
    """
    best = math.inf
    for x, y in itertools.product(euler_equivalents(e1), euler_equivalents(e2)):
        for ax in _aliases(x):
            best = min(best, _wrapped_max(ax, y.degrees))
    return best


def orientation_distance(e1: EulerAngles, e2: EulerAngles) -> float:
    """Smallest rotation angle (degrees) between two diagonal-tensor orientations.

    Unlike :func:`euler_distance` this stays meaningful near beta = 0 or 180,
    where individual Euler angles are not defined.
    """
    r1, r2 = euler_rotation(e1), euler_rotation(e2)
    best = math.inf
    for s in _PROPER_SIGNS:
        d = r1.T @ r2 @ s
        # atan2 keeps small angles accurate where acos of the trace would not
        sin = 0.5 * math.hypot(d[2, 1] - d[1, 2], d[0, 2] - d[2, 0], d[1, 0] - d[0, 1])
        best = min(best, math.degrees(math.atan2(sin, (np.trace(d) - 1.0) / 2.0)))
    return best
