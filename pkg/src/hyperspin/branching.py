"""Relative optical oscillator strengths between ground and excited hyperfine levels.

The optical dipole connects nuclear states only through their overlap, so a
ground/excited pair of doublets has strength ``Tr(P_g P_e) / 2`` with ``P``
the zero-field doublet projectors. Tables are doubly stochastic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .models import SiteModel, StateModel
from .reference import G_FREE_ION
from .spinops import DOUBLETS, ZeemanParams, _as_matrix, doublet_order, doublet_projectors, hamiltonians
from .symmetry import SolutionFamily

LABELS = ("1/2", "3/2", "5/2")


@dataclass(frozen=True, eq=False)
class BranchingTable:
    """Rows are ground doublets 1/2, 3/2, 5/2; columns the excited ones.

    ``errors`` optionally holds per-entry uncertainties (measured tables).
    """

    values: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (3, 3):
            raise ValueError(f"a branching table is 3x3, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.errors is not None:
            e = np.broadcast_to(np.asarray(self.errors, dtype=float), (3, 3)).copy()
            if np.any(e <= 0):
                raise ValueError("uncertainties must be > 0")
            e.setflags(write=False)
            object.__setattr__(self, "errors", e)

    def deviation(self, other: "BranchingTable") -> np.ndarray:
        return self.values - np.asarray(other.values)

    def max_deviation(self, other: "BranchingTable") -> float:
        return float(np.max(np.abs(self.deviation(other))))

    def rms_deviation(self, other: "BranchingTable") -> float:
        return float(np.sqrt(np.mean(self.deviation(other) ** 2)))

    def to_dict(self) -> dict:
        d = {"rows": "ground", "columns": "excited", "labels": list(LABELS),
             "values": [[float(f"{x:.9g}") for x in row] for row in self.values]}
        if self.errors is not None:
            d["errors"] = [[float(f"{x:.9g}") for x in row] for row in self.errors]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self, digits: int = 2) -> str:
        """Aligned text: one row per ground doublet, one column per excited doublet."""
        head = "ground \\ excited" + "".join(f"{lab:>10}" for lab in LABELS)
        lines = [head]
        for lab, row in zip(LABELS, self.values):
            lines.append(f"{lab:<16}" + "".join(f"{x:>10.{digits}f}" for x in row))
        return "\n".join(lines) + "\n"


def _projectors(Q, rotation=None) -> dict:
    q = _as_matrix(Q)
    if rotation is not None:
        q = rotation @ q @ rotation.T
    return doublet_projectors(q)


def branching_table(ground: StateModel, excited: StateModel, rotation=None) -> BranchingTable:
    """Zero-field table ``Tr(P_g^k P_e^l) / 2`` for models sharing one frame.

    ``rotation`` applies a common lab rotation to both states (e.g. the C2
    rotation that produces the second subsite).
    """
    pg = _projectors(ground.Q, rotation)
    pe = _projectors(excited.Q, rotation)
    t = np.array([[np.trace(pg[k] @ pe[l]).real / 2 for l in DOUBLETS] for k in DOUBLETS])
    return BranchingTable(t)


def subsite_tables(site: SiteModel) -> tuple[BranchingTable, BranchingTable]:
    return (
        branching_table(site.ground, site.excited),
        branching_table(site.ground, site.excited, rotation=site.c2_matrix()),
    )


def subsite_averaged_table(site: SiteModel) -> BranchingTable:
    """Mean of the two subsite tables."""
    a, b = subsite_tables(site)
    return BranchingTable(0.5 * (a.values + b.values))


@dataclass(frozen=True)
class Pairing:
    """One ground/excited sign-family combination scored against a measured table.

    Indices are 1-based positions in the family enumeration order.
    """

    ground_index: int
    excited_index: int
    ground_pattern: str
    excited_pattern: str
    table: BranchingTable
    max_deviation: float
    rms_deviation: float
    within_errors: bool

    def to_dict(self) -> dict:
        return {
            "ground_solution": self.ground_index,
            "excited_solution": self.excited_index,
            "ground_signs": self.ground_pattern,
            "excited_signs": self.excited_pattern,
            "max_deviation": float(f"{self.max_deviation:.9g}"),
            "rms_deviation": float(f"{self.rms_deviation:.9g}"),
            "within_errors": self.within_errors,
            "table": self.table.to_dict()["values"],
        }


def select_solution(ground: SolutionFamily, excited: SolutionFamily, measured: BranchingTable,
                    error: float = 0.03, excited_positive_only: bool = False) -> list[Pairing]:
    """Rank every ground x excited pairing by its largest deviation from ``measured``.

    A pairing is flagged ``within_errors`` when every entry lies inside the
    measured uncertainty (``measured.errors`` or the scalar ``error``). Ties
    are broken lexicographically on the sign patterns, ground first. With
    ``excited_positive_only`` only the excited member with all g > 0 is used.
    """
    tol = measured.errors if measured.errors is not None else np.full((3, 3), float(error))
    exc = list(enumerate(excited, start=1))
    if excited_positive_only:
        exc = [(i, (p, m)) for i, (p, m) in exc if all(g > 0 for g in m.zeeman.values)]
    out = []
    for gi, (gp, gm) in enumerate(ground, start=1):
        for ei, (ep, em) in exc:
            t = branching_table(gm, em)
            dev = t.deviation(measured)
            out.append(Pairing(
                gi, ei, str(gp), str(ep), t,
                float(np.max(np.abs(dev))), float(np.sqrt(np.mean(dev ** 2))),
                bool(np.all(np.abs(dev) <= tol + 1e-12)),
            ))
    # rounding lets numerically equal scores fall through to the sign patterns
    return sorted(out, key=lambda p: (round(p.max_deviation, 12), p.ground_pattern, p.excited_pattern))


def ranking_text(pairings, limit: int | None = None) -> str:
    lines = [f"{'rank':>4}{'ground':>8}{'excited':>9}{'max dev':>10}{'rms dev':>10}  within"]
    for r, p in enumerate(pairings[:limit] if limit else pairings, start=1):
        lines.append(
            f"{r:>4}{p.ground_index:>4} {p.ground_pattern:>3}{p.excited_index:>5} {p.excited_pattern:>3}"
            f"{p.max_deviation:>10.4f}{p.rms_deviation:>10.4f}  {'yes' if p.within_errors else 'no'}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class TransitionMap:
    """``|<g_i|e_j>|^2`` between the six ground and six excited levels at one field.

    Levels are in ascending energy; ``ground_labels`` / ``excited_labels``
    give the doublet of each level pair.
    """

    values: np.ndarray
    field: np.ndarray
    subsite: int
    ground_labels: tuple[float, float, float]
    excited_labels: tuple[float, float, float]

    def block_table(self) -> BranchingTable:
        """Doublet-block sums divided by two, in 1/2, 3/2, 5/2 order."""
        t = np.empty((3, 3))
        for a, k in enumerate(DOUBLETS):
            i = self.ground_labels.index(k)
            for b, l in enumerate(DOUBLETS):
                j = self.excited_labels.index(l)
                t[a, b] = self.values[2 * i:2 * i + 2, 2 * j:2 * j + 2].sum() / 2
        return BranchingTable(t)


def transition_map(site: SiteModel, B, subsite: int = 1) -> TransitionMap:
    """Overlaps of the exact level eigenvectors of both states at field ``B`` (mT)."""
    b = np.asarray(B, dtype=float)
    vecs = []
    labels = []
    for state in ("ground", "excited"):
        q, m = site.tensors(state, subsite)
        _, u = np.linalg.eigh(hamiltonians(q, m, b[None, :])[0])
        vecs.append(u)
        labels.append(doublet_order(q))
    overlap = np.abs(vecs[0].conj().T @ vecs[1]) ** 2
    return TransitionMap(overlap, b.copy(), subsite, labels[0], labels[1])


def quenching_alphas(g: ZeemanParams, free_ion: float = G_FREE_ION) -> tuple[float, float, float]:
    """``alpha_i = 1 - g_i / g_N`` for the free-ion moment ``g_N`` (MHz/T)."""
    return tuple(1.0 - x / free_ion for x in g.values)
