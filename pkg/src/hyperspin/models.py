"""Parameter containers for one electronic state and for a full crystal site."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .spinops import (
    EulerAngles,
    QuadrupoleParams,
    SymmetricTensor3,
    ZeemanParams,
    build_M,
    build_Q,
    frame_rotation,
    lab_to_crystal,
    rot_z,
)

STATES = ("ground", "excited")


@dataclass(frozen=True)
class C2Axis:
    """Orientation of the crystal C2 axis in the lab frame, spherical angles in degrees."""

    alpha_c2: float
    beta_c2: float

    @property
    def vector(self) -> np.ndarray:
        a, b = math.radians(self.alpha_c2), math.radians(self.beta_c2)
        return np.array([math.cos(a) * math.sin(b), math.sin(a) * math.sin(b), math.cos(b)])

    @classmethod
    def from_vector(cls, v) -> "C2Axis":
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        rho = math.hypot(v[0], v[1])
        beta = math.degrees(math.atan2(rho, v[2]))
        alpha = math.degrees(math.atan2(v[1], v[0])) if rho > 1e-15 else 0.0
        return cls(alpha, beta)

    def canonical(self) -> "C2Axis":
        """Representative of the axis line with beta <= 90 degrees.

        Axis and anti-axis give the same pi rotation. Only use this for
        comparisons: the crystal-frame transform depends on the representative.
        """
        v = self.vector
        if v[2] < 0 or (v[2] == 0 and (v[1] < 0 or (v[1] == 0 and v[0] < 0))):
            v = -v
        return C2Axis.from_vector(v)

    def angle_to(self, other: "C2Axis") -> float:
        """Angle in degrees between the two axis lines (0..90)."""
        c = abs(float(self.vector @ other.vector))
        return math.degrees(math.acos(min(1.0, c)))


@dataclass(frozen=True)
class StateModel:
    """Quadrupole and Zeeman parameters of one electronic state, lab frame."""

    quadrupole: QuadrupoleParams
    zeeman: ZeemanParams
    q_angles: EulerAngles
    m_angles: EulerAngles

    @property
    def Q(self) -> SymmetricTensor3:
        return build_Q(self.quadrupole, self.q_angles)

    @property
    def M(self) -> SymmetricTensor3:
        return build_M(self.zeeman, self.m_angles)

    @classmethod
    def from_values(cls, D, E, g, q_deg, m_deg) -> "StateModel":
        return cls(
            QuadrupoleParams(float(D), float(E)),
            ZeemanParams(*(float(x) for x in g)),
            EulerAngles.from_degrees(*q_deg),
            EulerAngles.from_degrees(*m_deg),
        )

    def to_dict(self) -> dict:
        return {
            "D_MHz": self.quadrupole.D,
            "E_MHz": self.quadrupole.E,
            "g_MHz_per_T": list(self.zeeman.values),
            # degree/radian round trips leave ~1e-14 noise
            "q_euler_deg": [round(x, 10) for x in self.q_angles.degrees],
            "m_euler_deg": [round(x, 10) for x in self.m_angles.degrees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateModel":
        return cls.from_values(d["D_MHz"], d["E_MHz"], d["g_MHz_per_T"], d["q_euler_deg"], d["m_euler_deg"])


@dataclass(frozen=True)
class SiteModel:
    """Ground and excited state models of subsite 1 plus the crystal geometry.

    ``gamma`` (degrees) is the in-plane angle of the D1/D2 extinction axes;
    together with the C2 angles it defines the lab -> crystal rotation.
    """

    ground: StateModel
    excited: StateModel
    c2: C2Axis
    gamma: float = 0.0

    def state(self, name: str) -> StateModel:
        if name not in STATES:
            raise ValueError(f"state must be one of {STATES}, got {name!r}")
        return getattr(self, name)

    def with_state(self, name: str, model: StateModel) -> "SiteModel":
        self.state(name)
        return replace(self, **{name: model})

    @property
    def crystal_rotation(self) -> np.ndarray:
        return frame_rotation(self.c2.alpha_c2, self.c2.beta_c2, self.gamma)

    def c2_matrix(self) -> np.ndarray:
        r = frame_rotation(self.c2.alpha_c2, self.c2.beta_c2, 0.0)
        return r.T @ rot_z(math.pi) @ r

    def tensors(self, state: str, subsite: int = 1, frame: str = "lab") -> tuple[SymmetricTensor3, SymmetricTensor3]:
        """(Q, M) of ``state`` for ``subsite`` in the ``"lab"`` or ``"crystal"`` frame."""
        m = self.state(state)
        q, z = m.Q, m.M
        if subsite == 2:
            r = self.c2_matrix()
            q, z = q.rotated(r), z.rotated(r)
        elif subsite != 1:
            raise ValueError(f"subsite must be 1 or 2, got {subsite!r}")
        if frame == "crystal":
            t = self.crystal_rotation
            q, z = lab_to_crystal(q, t), lab_to_crystal(z, t)
        elif frame != "lab":
            raise ValueError(f"frame must be 'lab' or 'crystal', got {frame!r}")
        return q, z

    def to_dict(self) -> dict:
        return {
            "ground": self.ground.to_dict(),
            "excited": self.excited.to_dict(),
            "c2_axis_deg": [self.c2.alpha_c2, self.c2.beta_c2],
            "gamma_deg": self.gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SiteModel":
        return cls(
            ground=StateModel.from_dict(d["ground"]),
            excited=StateModel.from_dict(d["excited"]),
            c2=C2Axis(*(float(x) for x in d["c2_axis_deg"])),
            gamma=float(d.get("gamma_deg", 0.0)),
        )
