"""First-order doublet splittings, splitting ellipsoids and fit warm starts.

When the quadrupole term dominates, each zero-field doublet behaves as an
isolated two-level system and the Zeeman term reduced to it is a traceless
2x2 block. Its eigenvalues are +-lambda with ``lambda^2 = b^T C_k b`` where
``b = M B`` is the effective field; ``C_k`` is diagonal in the Q eigenframe
with entries ``c_{k,j}^2``. The splitting surface ``delta_k / (2|B|)`` over
field directions is therefore an ellipsoid, which is what the warm-start
estimators below exploit.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

from .exceptions import IllConditioned, InsufficientCoincidences
from .models import C2Axis
from .observations import ObservationSet
from .spinops import (
    DOUBLETS,
    EulerAngles,
    QuadrupoleParams,
    _as_matrix,
    _spin_stack,
    doublet_order,
    euler_from_matrix,
    euler_rotation,
    quadrupole_operator,
)

# relative eigenvalue gap below which a fitted form has no usable orientation
DEGENERATE_AXES = 1e-2


@dataclass(frozen=True, eq=False)
class SplittingSurface:
    """Samples of ``delta_k / (2|B|)`` (MHz/T) over unit field directions for one doublet.

    ``form`` is the fitted quadratic form ``C`` with ``value^2 = n^T C n``.
    """

    k: float
    directions: np.ndarray
    values: np.ndarray
    form: np.ndarray | None = None

    def fitted(self) -> "SplittingSurface":
        return replace(self, form=fit_quadratic_form(self.directions, self.values))

    @property
    def semi_axes(self) -> np.ndarray:
        w = np.linalg.eigvalsh(self._form())
        return np.sqrt(np.clip(w, 0.0, None))

    @property
    def principal_directions(self) -> np.ndarray:
        return np.linalg.eigh(self._form())[1]

    def _form(self):
        return self.form if self.form is not None else fit_quadratic_form(self.directions, self.values)


def _reduced_generators(Q) -> dict:
    """``G[k][j] = U_k^H I_j U_k`` for the zero-field doublet bases of Q."""
    w, u = np.linalg.eigh(quadrupole_operator(Q))
    order = doublet_order(Q)
    s = _spin_stack()
    out = {}
    for i, k in enumerate(order):
        uk = u[:, 2 * i:2 * i + 2]
        out[k] = np.einsum("ai,jab,bc->jic", uk.conj(), s, uk)
    return out


def _block_spread(blocks: np.ndarray) -> np.ndarray:
    # eigenvalue difference of 2x2 Hermitian blocks, basis independent
    a = blocks[..., 0, 0].real
    d = blocks[..., 1, 1].real
    b = blocks[..., 0, 1]
    return 2.0 * np.sqrt(0.25 * (a - d) ** 2 + np.abs(b) ** 2)


def first_order_splittings(Q, M, fields) -> np.ndarray:
    """First-order splittings (kHz), shape (n, 3), columns 1/2, 3/2, 5/2."""
    b = np.atleast_2d(np.asarray(fields, dtype=float))
    eff = 1e-3 * b @ _as_matrix(M)
    gens = _reduced_generators(Q)
    cols = [_block_spread(np.einsum("nj,jab->nab", eff, gens[k])) for k in DOUBLETS]
    return 1e3 * np.column_stack(cols)


def first_order_splitting(Q, M, B) -> np.ndarray:
    """First-order splittings (kHz) of the three doublets for one field (mT)."""
    return first_order_splittings(Q, M, np.asarray(B, dtype=float)[None, :])[0]


def ellipsoid_coefficients(p: QuadrupoleParams, k: float) -> tuple[float, float, float]:
    """Semi-axes ``c_{k,j}`` of the isotropic-M splitting ellipsoid in the Q eigenframe."""
    gens = _reduced_generators(np.diag(p.principal_values))[float(k)]
    return tuple(float(0.5 * _block_spread(gens[j])) for j in range(3))


def splitting_surface(Q, M, k: float, directions) -> SplittingSurface:
    """First-order ``delta_k / (2|B|)`` in MHz/T on the given directions."""
    n = np.atleast_2d(np.asarray(directions, dtype=float))
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    # 1 T expressed in mT gives MHz; /2 turns splitting into lambda+
    vals = first_order_splittings(Q, M, 1e3 * n)[:, DOUBLETS.index(float(k))] * 1e-3 / 2.0
    return SplittingSurface(float(k), n, vals)


def sphere_grid(n_theta: int = 20, n_phi: int = 40) -> np.ndarray:
    theta = (np.arange(n_theta) + 0.5) * math.pi / n_theta
    phi = np.arange(n_phi) * 2 * math.pi / n_phi
    t, p = np.meshgrid(theta, phi, indexing="ij")
    return np.column_stack([(np.sin(t) * np.cos(p)).ravel(), (np.sin(t) * np.sin(p)).ravel(), np.cos(t).ravel()])


def _design(n: np.ndarray) -> np.ndarray:
    return np.column_stack([n[:, 0] ** 2, n[:, 1] ** 2, n[:, 2] ** 2, 2 * n[:, 0] * n[:, 1], 2 * n[:, 0] * n[:, 2], 2 * n[:, 1] * n[:, 2]])


def _unpack(c: np.ndarray) -> np.ndarray:
    return np.array([[c[0], c[3], c[4]], [c[3], c[1], c[5]], [c[4], c[5], c[2]]])


def fit_quadratic_form(directions, values) -> np.ndarray:
    """Linear least-squares fit of ``value^2 = n^T C n`` over the six entries of C."""
    n = np.atleast_2d(np.asarray(directions, dtype=float))
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    a = _design(n)
    if np.linalg.matrix_rank(a) < 6:
        raise IllConditioned("directions do not determine a quadratic form (need >= 6 generic directions)")
    c, *_ = np.linalg.lstsq(a, np.asarray(values, dtype=float) ** 2, rcond=None)
    return _unpack(c)


def _axes_gap(form: np.ndarray) -> float:
    w = np.linalg.eigvalsh(form)
    return float(np.min(np.diff(w)) / max(abs(w).max(), 1e-300))


def estimate_Q_orientation(surfaces, quadrupole: QuadrupoleParams) -> EulerAngles:
    """Euler angles of Q whose isotropic-M ellipsoids best match the surfaces.

    Each surface's quadratic form is modelled as ``s R diag(c_k^2) R^T``
    with a shared rotation R and scale s (the squared isotropic g). Starts
    come from the eigenvectors of every well-conditioned form; the joint
    least-squares problem over (R, s) picks the answer.
    """
    surfaces = [s if s.form is not None else s.fitted() for s in surfaces]
    if not surfaces:
        raise IllConditioned("no splitting surfaces given")
    targets = {s.k: np.array(ellipsoid_coefficients(quadrupole, s.k)) ** 2 for s in surfaces}
    good = [s for s in surfaces if _axes_gap(s.form) > DEGENERATE_AXES and _axes_gap(np.diag(targets[s.k])) > DEGENERATE_AXES]
    if not good:
        raise IllConditioned("every splitting ellipsoid has near-degenerate axes")
    norm = {s.k: np.linalg.norm(s.form) for s in surfaces}

    def residual(x):
        r = euler_rotation(EulerAngles(*x[:3]))
        out = []
        for s in surfaces:
            model = math.exp(x[3]) * r @ np.diag(targets[s.k]) @ r.T
            out.append(((model - s.form) / norm[s.k]).ravel())
        return np.concatenate(out)

    best = None
    for s in good:
        w, v = np.linalg.eigh(s.form)
        t = targets[s.k]
        # ascending eigenvalues of the form matched to ascending target entries
        rot = np.empty((3, 3))
        rot[:, np.argsort(t)] = v
        if np.linalg.det(rot) < 0:
            rot[:, 0] *= -1
        scale = float(np.sum(w) / np.sum(t))
        e0 = euler_from_matrix(rot)
        x0 = np.array([e0.alpha, e0.beta, e0.gamma, math.log(max(scale, 1e-12))])
        sol = least_squares(residual, x0, method="lm")
        if best is None or sol.cost < best.cost:
            best = sol
    return EulerAngles(*best.x[:3]).canonical()


@dataclass(frozen=True)
class TensorEstimate:
    """First-order joint estimate of the Q orientation and the full M tensor."""

    q_angles: EulerAngles
    M: np.ndarray
    cost: float


def estimate_state_tensors(surfaces, quadrupole: QuadrupoleParams, n_starts: int = 8, seed: int = 0) -> TensorEstimate:
    """Q orientation and M from splitting forms without assuming isotropic M.

    At first order the form of doublet k is ``M R diag(c_k^2) R^T M``. The
    rotation R and the six entries of M are fitted jointly by least squares,
    started from the isotropic estimate and from seeded random orientations.
    M is determined up to the spectrum-preserving sign family.
    """
    surfaces = [s if s.form is not None else s.fitted() for s in surfaces]
    targets = {s.k: np.diag(np.array(ellipsoid_coefficients(quadrupole, s.k)) ** 2) for s in surfaces}
    norm = {s.k: np.linalg.norm(s.form) for s in surfaces}
    iu = np.triu_indices(3)

    def unpack(x):
        m = np.zeros((3, 3))
        m[iu] = x[3:]
        return m + np.triu(m, 1).T

    def residual(x):
        r = euler_rotation(EulerAngles(*x[:3]))
        m = unpack(x)
        return np.concatenate([((m @ r @ targets[s.k] @ r.T @ m - s.form) / norm[s.k]).ravel() for s in surfaces])

    starts = []
    try:
        q0 = estimate_Q_orientation(surfaces, quadrupole)
        starts.append(q0)
    except IllConditioned:
        pass
    rng = np.random.default_rng(seed)
    for _ in range(n_starts):
        a, g = rng.uniform(-math.pi, math.pi, 2)
        starts.append(EulerAngles(a, math.acos(rng.uniform(-1, 1)), g))
    num = sum(float(np.trace(s.form)) for s in surfaces)
    den = sum(float(np.trace(targets[s.k])) for s in surfaces)
    g0 = math.sqrt(max(num / den, 1e-12))
    best = None
    for e in starts:
        x0 = np.concatenate([[e.alpha, e.beta, e.gamma], (g0 * np.eye(3))[iu]])
        sol = least_squares(residual, x0, method="lm")
        if best is None or sol.cost < best.cost:
            best = sol
    return TensorEstimate(EulerAngles(*best.x[:3]).canonical(), unpack(best.x), float(2 * best.cost))


def _paired_series(obs: ObservationSet):
    """Yield (doublet, state, scan order, fields, (n, 2) value pairs) per measured series."""
    state = obs.state
    dbl = obs.doublet
    keys = sorted(set(zip(state, dbl, obs.k, obs.l)))
    for st, k, kk, ll in keys:
        m = (state == st) & (dbl == k) & (obs.k == kk) & (obs.l == ll)
        sub = obs.subset(m)
        uniq, inv = sub.unique_fields()
        pairs, scan, flds = [], [], []
        for i in range(len(uniq)):
            vals = np.sort(sub.offset[inv == i])
            if len(vals) == 2:
                pairs.append(vals)
            elif len(vals) == 1:
                pairs.append(np.array([vals[0], np.nan]))
            else:
                # keep the two extreme lines
                pairs.append(np.array([vals[0], vals[-1]]))
            scan.append(int(np.min(sub.scan_n[inv == i])))
            flds.append(uniq[i])
        order = np.argsort(scan, kind="stable")
        yield k, st, np.asarray(scan)[order], np.asarray(flds)[order], np.asarray(pairs)[order]


def surfaces_from_observations(obs: ObservationSet, state: str, n_starts: int = 16, seed: int = 0) -> tuple[list, list]:
    """Split unlabelled subsite line pairs into two sets of splitting surfaces.

    For every doublet the two lines at each field are assigned to two
    quadratic forms by alternating least squares (a two-component mixture,
    restarted ``n_starts`` times). Returns ``(surfaces_a, surfaces_b)``;
    the a/b labels are consistent across doublets in the sense that the
    a-forms share one ellipsoid orientation as well as possible.
    """
    per_k = surface_pairs(obs, state, n_starts, seed)
    keys = sorted(per_k)
    # choose the a/b labelling per doublet that makes the a-forms most co-axial
    best, best_score = None, math.inf
    for flips in itertools.product((0, 1), repeat=len(keys) - 1):
        flips = (0,) + flips
        chosen = [per_k[k][f] for k, f in zip(keys, flips)]
        other = [per_k[k][1 - f] for k, f in zip(keys, flips)]
        score = _coaxiality(chosen) + _coaxiality(other)
        if score < best_score:
            best, best_score = (chosen, other), score
    return best


def surface_pairs(obs: ObservationSet, state: str, n_starts: int = 16, seed: int = 0) -> dict:
    """Per doublet, the two splitting surfaces separated from the unlabelled line pairs.

    Returns ``{k: (surface_a, surface_b)}``; a/b labels are arbitrary per doublet.
    """
    rng = np.random.default_rng(seed)
    split = {}
    for k, st, _, flds, pairs in _paired_series(obs.for_state(state)):
        ok = np.all(np.isfinite(pairs), axis=1)
        if ok.sum() < 6:
            continue
        b = flds[ok]
        norm = np.linalg.norm(b, axis=1)
        n = b / norm[:, None]
        lam = pairs[ok] / (2.0 * norm[:, None])
        a = _design(n)
        if np.linalg.matrix_rank(a) < 6:
            raise IllConditioned(
                f"{state} field directions do not determine a splitting form (coplanar or too few directions)")
        best = None
        for start in range(n_starts):
            assign = rng.integers(0, 2, len(n)) if start else np.zeros(len(n), dtype=int)
            for _ in range(50):
                va = lam[np.arange(len(n)), assign]
                vb = lam[np.arange(len(n)), 1 - assign]
                ca, *_ = np.linalg.lstsq(a, va ** 2, rcond=None)
                cb, *_ = np.linalg.lstsq(a, vb ** 2, rcond=None)
                pa, pb = a @ ca, a @ cb
                keep = (lam[:, 0] ** 2 - pa) ** 2 + (lam[:, 1] ** 2 - pb) ** 2
                swap = (lam[:, 1] ** 2 - pa) ** 2 + (lam[:, 0] ** 2 - pb) ** 2
                new = np.where(swap < keep, 1, 0)
                if np.array_equal(new, assign):
                    break
                assign = new
            cost = float(np.sum(np.minimum(keep, swap)))
            if best is None or cost < best[0]:
                best = (cost, ca, cb, assign)
        _, ca, cb, assign = best
        idx = np.arange(len(n))
        sa = SplittingSurface(k, n, lam[idx, assign], _unpack(ca))
        sb = SplittingSurface(k, n, lam[idx, 1 - assign], _unpack(cb))
        split.setdefault(k, []).append((sa, sb))
    if not split:
        raise IllConditioned(f"no paired {state} lines to build splitting surfaces from")
    # one representative series per doublet
    return {k: v[0] for k, v in split.items()}


def _coaxiality(surfaces) -> float:
    """How badly the forms fail to share principal axes (0 = common eigenbasis)."""
    forms = [s.form / np.linalg.norm(s.form) for s in surfaces]
    total = 0.0
    for f, g in itertools.combinations(forms, 2):
        total += float(np.linalg.norm(f @ g - g @ f))
    return total


def _dip_positions(score: np.ndarray, threshold: float) -> list[tuple[int, int, float]]:
    """Sub-sample minima of a V-shaped score sequence: (i, j, fraction from i to j)."""
    out = []
    n = len(score)
    for i in range(n):
        left = score[i - 1] if i > 0 else np.inf
        right = score[i + 1] if i < n - 1 else np.inf
        if not (score[i] <= left and score[i] <= right and score[i] < threshold):
            continue
        if np.isinf(left) and np.isinf(right):
            out.append((i, i, 0.0))
            continue
        if np.isinf(left) or np.isinf(right):
            out.append((i, i, 0.0))
            continue
        # symmetric V through the three samples
        if left >= right:
            x0 = (left - right) / (left + right) if left + right > 0 else 0.0
            out.append((i, i + 1, min(x0, 1.0)))
        else:
            x0 = (right - left) / (left + right)
            out.append((i, i - 1, x0))
    return out


def coincidence_directions(obs: ObservationSet, exact_tol: float = 1e-6, dip_threshold: float = 0.3) -> np.ndarray:
    """Unit field directions where all paired subsite splittings coincide.

    The per-field score is the largest relative difference between the two
    subsite lines over every measured series. Fields whose score is below
    ``exact_tol`` count directly; otherwise V-shaped dips along the scan
    order below ``dip_threshold`` times the median score are interpolated.
    """
    table = {}
    for k, st, scan, flds, pairs in _paired_series(obs):
        ok = np.all(np.isfinite(pairs), axis=1)
        if ok.sum() == 0:
            continue
        typical = np.median(pairs[ok].mean(axis=1))
        for s, b, p in zip(scan[ok], flds[ok], pairs[ok]):
            d = abs(p[1] - p[0]) / max(typical, 1e-300)
            key = tuple(np.round(b, 9))
            cur = table.get(key)
            table[key] = (min(cur[0], s) if cur else s, b, max(cur[2], d) if cur else d)
    if not table:
        raise InsufficientCoincidences("no field has both subsite lines observed")
    rows = sorted(table.values(), key=lambda r: r[0])
    fields = np.array([r[1] for r in rows])
    score = np.array([r[2] for r in rows])
    dirs = []
    exact = score <= exact_tol
    for b in fields[exact]:
        if np.linalg.norm(b) > 0:
            dirs.append(b / np.linalg.norm(b))
    if not np.all(exact):
        threshold = dip_threshold * np.median(score[~exact])
        masked = np.where(exact, np.inf, score)
        for i, j, f in _dip_positions(masked, threshold):
            b = (1 - f) * fields[i] + f * fields[j]
            if np.linalg.norm(b) > 0:
                dirs.append(b / np.linalg.norm(b))
    return np.array(dirs).reshape(-1, 3)


def estimate_c2_axis(observations: ObservationSet, min_coincidences: int = 2) -> C2Axis:
    """C2 axis as the normal of the plane through the subsite coincidence directions.

    The normal minimises the summed squared projections of the coincidence
    directions on it (smallest right singular vector); points more than three
    median deviations off the plane are dropped once and the plane refitted.
    """
    dirs = coincidence_directions(observations)
    if len(dirs) < min_coincidences:
        raise InsufficientCoincidences(f"found {len(dirs)} coincidence directions, need {min_coincidences}")
    if len(dirs) == 2:
        v = np.cross(dirs[0], dirs[1])
        if np.linalg.norm(v) < 1e-9:
            raise InsufficientCoincidences("the two coincidence directions are collinear")
        return C2Axis.from_vector(v).canonical()
    normal = np.linalg.svd(dirs)[2][-1]
    dev = np.abs(dirs @ normal)
    keep = dev <= 3 * max(np.median(dev), 1e-12)
    if 2 <= keep.sum() < len(dirs):
        normal = np.linalg.svd(dirs[keep])[2][-1]
    return C2Axis.from_vector(normal).canonical()


def surface_csv(surface: SplittingSurface) -> str:
    lines = ["theta_deg,phi_deg,value_MHz_per_T"]
    for n, v in zip(surface.directions, surface.values):
        theta = math.degrees(math.acos(max(-1.0, min(1.0, n[2]))))
        phi = math.degrees(math.atan2(n[1], n[0]))
        lines.append(f"{theta:.9g},{phi:.9g},{v:.9g}")
    return "\n".join(lines) + "\n"
