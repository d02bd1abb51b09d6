"""Measured line positions: the input of every fitting routine.

One row per identified line. ``kind == "hole"`` rows are side holes whose
offset is an excited-state splitting of doublet ``l/2``; ``"antihole"`` rows
are main antiholes giving the ground-state splitting of doublet ``k/2``.

CSV layout::

    scan_n,Bx_mT,By_mT,Bz_mT,k,l,kind,offset_kHz,sigma_kHz
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

CSV_HEADER = ("scan_n", "Bx_mT", "By_mT", "Bz_mT", "k", "l", "kind", "offset_kHz", "sigma_kHz")
KINDS = ("hole", "antihole")
TRANSITION_LABELS = (1, 3, 5)


class ObservationFormatError(ValueError):
    """Malformed observation input; ``row`` is the 1-based data row number when known."""

    def __init__(self, message, row=None):
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


@dataclass(frozen=True, eq=False)
class ObservationSet:
    scan_n: np.ndarray
    fields: np.ndarray
    k: np.ndarray
    l: np.ndarray
    kind: np.ndarray
    offset: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        n = len(self.offset)
        arrays = {
            "scan_n": np.asarray(self.scan_n, dtype=int).reshape(-1),
            "fields": np.asarray(self.fields, dtype=float).reshape(-1, 3),
            "k": np.asarray(self.k, dtype=int).reshape(-1),
            "l": np.asarray(self.l, dtype=int).reshape(-1),
            "kind": np.asarray(self.kind, dtype=object).reshape(-1),
            "offset": np.asarray(self.offset, dtype=float).reshape(-1),
            "sigma": np.asarray(self.sigma, dtype=float).reshape(-1),
        }
        for name, a in arrays.items():
            if len(a) != n:
                raise ObservationFormatError(f"column {name!r} has {len(a)} entries, expected {n}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not np.all(np.isfinite(self.fields)):
            raise ObservationFormatError("field components must be finite")
        if np.any(self.offset < 0) or not np.all(np.isfinite(self.offset)):
            raise ObservationFormatError("offsets are splitting magnitudes and must be finite and >= 0")
        if np.any(self.sigma <= 0):
            raise ObservationFormatError("uncertainties must be > 0")
        if not set(self.kind) <= set(KINDS):
            raise ObservationFormatError(f"kind must be one of {KINDS}")
        if not (set(self.k) | set(self.l)) <= set(TRANSITION_LABELS):
            raise ObservationFormatError(f"transition labels must be in {TRANSITION_LABELS}")

    def __len__(self):
        return len(self.offset)

    @property
    def doublet(self) -> np.ndarray:
        """Doublet (0.5, 1.5, 2.5) each line measures."""
        lab = np.where(self.kind == "hole", self.l, self.k)
        return lab / 2.0

    @property
    def state(self) -> np.ndarray:
        return np.where(self.kind == "hole", "excited", "ground")

    def subset(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return ObservationSet(
            self.scan_n[mask], self.fields[mask], self.k[mask], self.l[mask],
            self.kind[mask], self.offset[mask], self.sigma[mask],
        )

    def for_state(self, state: str) -> "ObservationSet":
        if state not in ("ground", "excited"):
            raise ValueError(f"state must be 'ground' or 'excited', got {state!r}")
        return self.subset(self.state == state)

    def scaled(self, factor: float) -> "ObservationSet":
        """Fields and offsets multiplied by ``factor`` (linear-regime scale probe)."""
        return ObservationSet(
            self.scan_n, self.fields * factor, self.k, self.l, self.kind,
            self.offset * factor, self.sigma * factor,
        )

    def with_offsets(self, offset) -> "ObservationSet":
        return ObservationSet(self.scan_n, self.fields, self.k, self.l, self.kind, offset, self.sigma)

    def unique_fields(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct field vectors and, for each row, the index into them."""
        # rounding only groups repeats; representatives keep full precision
        _, first, inverse = np.unique(np.round(self.fields, 9), axis=0, return_index=True, return_inverse=True)
        return self.fields[first], inverse.reshape(-1)

    # array form used by the estimator API
    def to_array(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.column_stack([self.fields, self.k, self.l, (self.kind == "antihole").astype(float)])
        return X, self.offset.copy()

    @classmethod
    def from_array(cls, X, y, sigma=None, scan_n=None) -> "ObservationSet":
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 6:
            raise ObservationFormatError("X must have columns Bx, By, Bz, k, l, is_antihole")
        n = len(X)
        sigma = np.ones(n) if sigma is None else np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
        scan_n = np.arange(1, n + 1) if scan_n is None else scan_n
        kind = np.where(X[:, 5] > 0.5, "antihole", "hole")
        return cls(scan_n, X[:, :3], X[:, 3].astype(int), X[:, 4].astype(int), kind, y, sigma)

    @classmethod
    def concatenate(cls, sets) -> "ObservationSet":
        sets = list(sets)
        return cls(
            np.concatenate([s.scan_n for s in sets]),
            np.concatenate([s.fields for s in sets]),
            np.concatenate([s.k for s in sets]),
            np.concatenate([s.l for s in sets]),
            np.concatenate([s.kind for s in sets]),
            np.concatenate([s.offset for s in sets]),
            np.concatenate([s.sigma for s in sets]),
        )

    # CSV
    def to_csv(self, fh=None) -> str | None:
        own = fh is None
        fh = io.StringIO() if own else fh
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(self)):
            b = self.fields[i]
            w.writerow([
                int(self.scan_n[i]), f"{b[0]:.9g}", f"{b[1]:.9g}", f"{b[2]:.9g}",
                int(self.k[i]), int(self.l[i]), self.kind[i],
                f"{self.offset[i]:.9g}", f"{self.sigma[i]:.9g}",
            ])
        return fh.getvalue() if own else None

    @classmethod
    def from_csv(cls, source) -> "ObservationSet":
        """Parse from a path, an open file or CSV text.

        Raises :class:`ObservationFormatError` naming the offending row.
        """
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source, newline="") as fh:
                text = fh.read()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise ObservationFormatError(f"header must be {','.join(CSV_HEADER)}", row=0)
        cols = {name: [] for name in CSV_HEADER}
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CSV_HEADER):
                raise ObservationFormatError(f"expected {len(CSV_HEADER)} fields, got {len(row)}", row=row_no)
            try:
                vals = [
                    int(row[0]), float(row[1]), float(row[2]), float(row[3]),
                    int(row[4]), int(row[5]), row[6].strip(), float(row[7]), float(row[8]),
                ]
            except ValueError as exc:
                raise ObservationFormatError(str(exc), row=row_no) from None
            if vals[6] not in KINDS:
                raise ObservationFormatError(f"kind {vals[6]!r} not in {KINDS}", row=row_no)
            if vals[4] not in TRANSITION_LABELS or vals[5] not in TRANSITION_LABELS:
                raise ObservationFormatError("transition labels must be 1, 3 or 5", row=row_no)
            if vals[7] < 0 or vals[8] <= 0:
                raise ObservationFormatError("offset must be >= 0 and sigma > 0", row=row_no)
            for name, v in zip(CSV_HEADER, vals):
                cols[name].append(v)
        if not cols["scan_n"]:
            raise ObservationFormatError("no observation rows")
        return cls(
            cols["scan_n"],
            np.column_stack([cols["Bx_mT"], cols["By_mT"], cols["Bz_mT"]]),
            cols["k"], cols["l"], cols["kind"], cols["offset_kHz"], cols["sigma_kHz"],
        )
