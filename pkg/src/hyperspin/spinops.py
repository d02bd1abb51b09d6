"""Spin operators, Euler rotations, interaction tensors and the I = 5/2 Hamiltonian.

Units used throughout the package: energies in MHz, magnetic fields in mT,
Zeeman tensors in MHz/T, doublet splittings in kHz.

Rotation convention
-------------------
``rot_z`` and ``rot_y`` are the passive (frame) rotations::

    rot_z(a) = [[ cos a, sin a, 0],      rot_y(b) = [[cos b, 0, -sin b],
                [-sin a, cos a, 0],                  [    0, 1,      0],
                [     0,     0, 1]]                  [sin b, 0,  cos b]]

and ``euler_rotation`` composes them as ``rot_z(gamma) @ rot_y(beta) @ rot_z(alpha)``.
A tensor with principal values ``P`` is placed in the lab frame as
``R @ diag(P) @ R.T``. Moving a lab tensor into the crystal (D1, D2, b) frame
uses ``T @ X @ T.T`` with ``T = euler_rotation(alpha_c2, beta_c2, gamma)``.
This combination reproduces the reference Eu:YSO crystal-frame matrices to
the tabulated precision. Placing tensors as ``R.T @ diag(P) @ R`` misses them
by several MHz, and the reverse frame transform by up to 0.5 MHz.
"""
from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .exceptions import DegeneracyAmbiguous

SPIN = 2.5
DIM = int(2 * SPIN + 1)
DOUBLETS = (0.5, 1.5, 2.5)
# ratio between inter-doublet gap and intra-doublet splitting below which
# adjacent-energy pairing is no longer trusted
PAIRING_RATIO = 10.0


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def _wrap_deg(x: float) -> float:
    """Map an angle in degrees into (-180, 180]."""
    y = math.fmod(x, 360.0)
    if y <= -180.0:
        y += 360.0
    elif y > 180.0:
        y -= 360.0
    return y


@dataclass(frozen=True)
class EulerAngles:
    """ZYZ Euler triple, stored in radians.

    Use :meth:`from_degrees` to build one from the degree values found in
    parameter tables, and :attr:`degrees` to read them back.
    """

    alpha: float
    beta: float
    gamma: float

    @classmethod
    def from_degrees(cls, alpha, beta, gamma) -> "EulerAngles":
        return cls(math.radians(alpha), math.radians(beta), math.radians(gamma))

    @property
    def degrees(self) -> tuple[float, float, float]:
        return (math.degrees(self.alpha), math.degrees(self.beta), math.degrees(self.gamma))

    def matrix(self) -> np.ndarray:
        return euler_rotation(self)

    def canonical(self) -> "EulerAngles":
        """Equivalent triple with alpha, gamma in (-180, 180] and beta in [0, 180]."""
        return euler_from_matrix(euler_rotation(self))


def euler_rotation(e: EulerAngles) -> np.ndarray:
    return rot_z(e.gamma) @ rot_y(e.beta) @ rot_z(e.alpha)


def euler_from_matrix(r: np.ndarray, eps: float = 1e-12) -> EulerAngles:
    """Inverse of :func:`euler_rotation` for a proper rotation matrix.

    Returns the canonical triple (beta in [0, pi]). At beta = 0 or pi only
    alpha +/- gamma is defined; the whole angle is then put into alpha.
    """
    r = np.asarray(r, dtype=float)
    sb = math.hypot(r[2, 0], r[2, 1])
    beta = math.atan2(sb, r[2, 2])
    if sb > eps:
        alpha = math.atan2(r[2, 1], r[2, 0])
        gamma = math.atan2(r[1, 2], -r[0, 2])
    else:
        # r = rot_z(gamma) rot_y(0 or pi) rot_z(alpha); set gamma = 0
        gamma = 0.0
        if r[2, 2] > 0:
            alpha = math.atan2(r[0, 1], r[0, 0])
        else:
            alpha = math.atan2(-r[0, 1], -r[0, 0])
    a, b, g = (math.degrees(x) for x in (alpha, beta, gamma))
    return EulerAngles.from_degrees(_wrap_deg(a), b, _wrap_deg(g))


@dataclass(frozen=True, eq=False)
class SymmetricTensor3:
    """Real symmetric 3x3 interaction tensor (MHz for Q, MHz/T for M).

    The matrix is symmetrised on construction, so ``T.matrix == T.matrix.T``
    holds exactly.
    """

    matrix: np.ndarray
    _eig: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("tensor entries must be finite")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        return np.array(self.matrix, dtype=dtype)

    def _eigh(self):
        if self._eig is None:
            object.__setattr__(self, "_eig", np.linalg.eigh(self.matrix))
        return self._eig

    @property
    def principal_values(self) -> np.ndarray:
        """Eigenvalues in ascending order."""
        return self._eigh()[0].copy()

    @property
    def principal_axes(self) -> np.ndarray:
        """Columns are unit eigenvectors matching :attr:`principal_values`."""
        return self._eigh()[1].copy()

    def rotated(self, r: np.ndarray) -> "SymmetricTensor3":
        r = np.asarray(r, dtype=float)
        return SymmetricTensor3(r @ self.matrix @ r.T)

    def __repr__(self):
        return f"SymmetricTensor3({np.array2string(self.matrix, precision=4)})"


@dataclass(frozen=True)
class QuadrupoleParams:
    """Quadrupole principal values; the tensor is diag(-E, E, D)."""

    D: float
    E: float

    def __post_init__(self):
        if self.D == 0:
            raise ValueError("quadrupole D must be non-zero")
        if abs(self.eta) > 1:
            warnings.warn(f"|3E/D| = {abs(self.eta):.3f} exceeds 1", stacklevel=3)

    @property
    def eta(self) -> float:
        return 3.0 * self.E / self.D

    @property
    def principal_values(self) -> tuple[float, float, float]:
        return (-self.E, self.E, self.D)


@dataclass(frozen=True)
class ZeemanParams:
    g1: float
    g2: float
    g3: float

    def __post_init__(self):
        if not all(math.isfinite(g) for g in self.values):
            raise ValueError("Zeeman principal values must be finite")

    @property
    def values(self) -> tuple[float, float, float]:
        return (self.g1, self.g2, self.g3)


class SpinOperators(NamedTuple):
    Ix: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray


@functools.lru_cache(maxsize=None)
def _spin_stack() -> np.ndarray:
    m = np.arange(SPIN, -SPIN - 1, -1)
    iz = np.diag(m).astype(complex)
    ip = np.zeros((DIM, DIM), dtype=complex)
    for col in range(1, DIM):
        # <m+1| I+ |m>, basis ordered m = +5/2 ... -5/2
        ip[col - 1, col] = math.sqrt(SPIN * (SPIN + 1) - m[col] * (m[col] + 1))
    ix = 0.5 * (ip + ip.conj().T)
    iy = -0.5j * (ip - ip.conj().T)
    stack = np.stack([ix, iy, iz])
    stack.setflags(write=False)
    return stack


def spin_operators() -> SpinOperators:
    """Angular momentum matrices for I = 5/2, basis m = +5/2 ... -5/2."""
    s = _spin_stack()
    return SpinOperators(s[0].copy(), s[1].copy(), s[2].copy())


@functools.lru_cache(maxsize=None)
def _quadratic_stack() -> np.ndarray:
    s = _spin_stack()
    out = np.einsum("iab,jbc->ijac", s, s)
    out.setflags(write=False)
    return out


def build_Q(p: QuadrupoleParams, e: EulerAngles) -> SymmetricTensor3:
    r = euler_rotation(e)
    return SymmetricTensor3(r @ np.diag(p.principal_values) @ r.T)


def build_M(p: ZeemanParams, e: EulerAngles) -> SymmetricTensor3:
    r = euler_rotation(e)
    return SymmetricTensor3(r @ np.diag(p.values) @ r.T)


def frame_rotation(alpha_c2: float, beta_c2: float, gamma: float) -> np.ndarray:
    """Lab -> crystal (D1, D2, b) rotation; angles in degrees."""
    return euler_rotation(EulerAngles.from_degrees(alpha_c2, beta_c2, gamma))


def lab_to_crystal(tensor, rotation: np.ndarray, direction: str = "forward") -> SymmetricTensor3:
    """Express a lab-frame tensor in the crystal frame.

    ``direction="forward"`` applies ``T X T^T`` and is the convention that
    matches the reference crystal-frame tensors; ``"reverse"`` applies
    ``T^T X T`` and is kept for comparison with other conventions.
    """
    x = np.asarray(tensor, dtype=float)
    t = np.asarray(rotation, dtype=float)
    if direction == "forward":
        return SymmetricTensor3(t @ x @ t.T)
    if direction == "reverse":
        return SymmetricTensor3(t.T @ x @ t)
    raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def crystal_to_lab(tensor, rotation: np.ndarray, direction: str = "forward") -> SymmetricTensor3:
    inverse = {"forward": "reverse", "reverse": "forward"}[direction]
    return lab_to_crystal(tensor, rotation, inverse)


def _as_matrix(t) -> np.ndarray:
    return np.asarray(t.matrix if isinstance(t, SymmetricTensor3) else t, dtype=float)


def quadrupole_operator(Q) -> np.ndarray:
    """I.Q.I as a 6x6 matrix (MHz)."""
    return np.einsum("ij,ijab->ab", _as_matrix(Q), _quadratic_stack())


def hamiltonian(Q, M, B) -> np.ndarray:
    """Effective nuclear spin Hamiltonian I.Q.I + B.M.I in MHz; B in mT."""
    b = np.asarray(B, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise ValueError("B must be a finite 3-vector in mT")
    return hamiltonians(Q, M, b[None, :])[0]


def hamiltonians(Q, M, fields) -> np.ndarray:
    """Batched :func:`hamiltonian` over an (n, 3) array of fields in mT."""
    b = np.atleast_2d(np.asarray(fields, dtype=float))
    # MHz/T * mT -> MHz
    eff = 1e-3 * b @ _as_matrix(M)
    h0 = quadrupole_operator(Q)
    return h0[None] + np.einsum("nj,jab->nab", eff, _spin_stack())


@dataclass(frozen=True)
class LevelSet:
    """Sorted hyperfine energies with their doublet pairing.

    ``labels[i]`` is the doublet (1/2, 3/2 or 5/2) occupying energy slots
    ``2i`` and ``2i + 1``; ``splittings`` maps each label to its splitting in kHz.
    """

    energies: np.ndarray
    labels: tuple[float, float, float]
    splittings: dict

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return ((0, 1), (2, 3), (4, 5))

    def splitting(self, k: float) -> float:
        return self.splittings[float(k)]

    def centroid(self, k: float) -> float:
        i = self.labels.index(float(k))
        return 0.5 * (self.energies[2 * i] + self.energies[2 * i + 1])


def _labels_from_gaps(energies: np.ndarray) -> tuple[float, float, float]:
    lower = 0.5 * (energies[2] + energies[3]) - 0.5 * (energies[0] + energies[1])
    upper = 0.5 * (energies[4] + energies[5]) - 0.5 * (energies[2] + energies[3])
    # for an axial tensor the 1/2-3/2 gap is half the 3/2-5/2 gap
    return DOUBLETS if lower <= upper else DOUBLETS[::-1]


def _check_pairing(energies: np.ndarray) -> None:
    e = np.atleast_2d(energies)
    intra = np.max(e[:, 1::2] - e[:, 0::2], axis=1)
    inter = np.minimum(e[:, 2] - e[:, 1], e[:, 4] - e[:, 3])
    bad = inter < PAIRING_RATIO * intra
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DegeneracyAmbiguous(
            f"inter-doublet gap {inter[i]:.4g} MHz is below {PAIRING_RATIO:g}x the "
            f"intra-doublet splitting {intra[i]:.4g} MHz; the weak-field pairing breaks down"
        )


def eigensystem(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and unit eigenvectors (columns) of a Hermitian matrix."""
    h = np.asarray(H)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"H must be square, got shape {h.shape}")
    if not np.allclose(h, h.conj().T, atol=1e-10 * max(1.0, np.abs(h).max())):
        raise ValueError("H must be Hermitian")
    return np.linalg.eigh(0.5 * (h + h.conj().T))


def levels(H: np.ndarray, labels=None) -> LevelSet:
    """Diagonalise ``H`` and pair the six levels into doublets.

    ``labels`` gives the doublet order from lowest to highest energy; by
    default it is inferred from the zero-field gap pattern (the 1/2-3/2 gap
    is the smaller one), or pass ``doublet_order(Q)`` for adiabatic labelling.
    """
    e = eigensystem(H)[0]
    _check_pairing(e)
    labels = tuple(float(k) for k in (labels or _labels_from_gaps(e)))
    split = {k: 1e3 * (e[2 * i + 1] - e[2 * i]) for i, k in enumerate(labels)}
    return LevelSet(energies=e, labels=labels, splittings=split)


def _principal_key(Q) -> tuple[float, float, float]:
    if isinstance(Q, QuadrupoleParams):
        vals = Q.principal_values
    else:
        vals = np.linalg.eigvalsh(_as_matrix(Q))
    return tuple(round(float(v), 9) for v in sorted(vals))


def doublet_order(Q) -> tuple[float, float, float]:
    """Doublet labels for ascending zero-field energies of ``Q``.

    Labels follow adiabatically from the axial limit: the rhombic part of the
    tensor is switched on in small steps while the doublet subspaces are
    tracked by projector overlap. Only the principal values matter.
    """
    return _doublet_order(_principal_key(Q))


@functools.lru_cache(maxsize=256)
def _doublet_order(vals: tuple[float, float, float]) -> tuple[float, float, float]:
    v = np.array(vals)
    # axial eigenvalue: the one farthest from the mean of the other two
    dev = [abs(v[i] - 0.5 * (v.sum() - v[i])) for i in range(3)]
    ax = int(np.argmax(dev))
    others = [i for i in range(3) if i != ax]
    axial = v.copy()
    axial[others] = v[others].mean()
    # z carries the axial value so the t = 0 eigenstates are |+-m>
    perm = others + [ax]

    def projectors(t):
        diag = (axial + t * (v - axial))[perm]
        w, u = np.linalg.eigh(quadrupole_operator(np.diag(diag)))
        return [u[:, 2 * i:2 * i + 2] @ u[:, 2 * i:2 * i + 2].conj().T for i in range(3)]

    d_eff = v[ax] - v[others].mean()
    current = list(DOUBLETS if d_eff > 0 else DOUBLETS[::-1])
    prev = projectors(0.0)
    for t in np.linspace(0.0, 1.0, 21)[1:]:
        new = projectors(t)
        overlap = np.array([[np.trace(p @ q).real for q in new] for p in prev])
        mapping = np.argmax(overlap, axis=1)
        if len(set(mapping)) != 3:
            raise DegeneracyAmbiguous("doublet tracking failed during adiabatic continuation")
        relabel = [None] * 3
        for i, j in enumerate(mapping):
            relabel[j] = current[i]
        current, prev = relabel, new
    return tuple(current)


def doublet_splittings(Q, M, fields, order=None) -> np.ndarray:
    """Exact doublet splittings in kHz for each field.

    Returns an (n, 3) array whose columns are the 1/2, 3/2 and 5/2 doublets.
    Raises :class:`DegeneracyAmbiguous` if any field leaves the weak-field regime.
    """
    order = order or doublet_order(Q)
    e = np.linalg.eigvalsh(hamiltonians(Q, M, fields))
    _check_pairing(e)
    d = 1e3 * (e[:, 1::2] - e[:, 0::2])
    cols = [order.index(k) for k in DOUBLETS]
    return d[:, cols]


def zero_field_gaps(Q) -> np.ndarray:
    """The two gaps (MHz) between adjacent zero-field doublets, low to high."""
    e = np.linalg.eigvalsh(quadrupole_operator(Q))
    c = 0.5 * (e[0::2] + e[1::2])
    return np.diff(c)


def doublet_projectors(Q) -> dict:
    """Zero-field projectors onto each doublet subspace, keyed by label."""
    w, u = np.linalg.eigh(quadrupole_operator(Q))
    order = doublet_order(Q)
    return {k: u[:, 2 * i:2 * i + 2] @ u[:, 2 * i:2 * i + 2].conj().T for i, k in enumerate(order)}
