"""Spiral field scans, hole/antihole line patterns, absorption profiles and FID traces.

A burn on one optical transition of a single subsite leaves a central hole,
two side holes at the excited-state splitting and antiholes at the
ground-state splitting and at its sum and difference with the excited one.
Offsets are in kHz, fields in mT, times in microseconds and the local
oscillator detuning in MHz.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert

from .exceptions import NyquistViolation
from .models import SiteModel
from .observations import ObservationSet
from .spinops import DOUBLETS, doublet_splittings

MERGE_TOL_KHZ = 0.1
DEFAULT_WEIGHTS = {"central": 4.0, "side": 1.0, "main": 2.0, "sum": 1.0, "difference": 1.0}
# kHz * microseconds -> cycles
_KHZ_US = 1e-3


@dataclass(frozen=True)
class SpiralScan:
    """Field amplitudes (mT) and point count of a spiral scan over the sphere."""

    N: int
    Bx: float
    By: float
    Bz: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError(f"a spiral scan needs N >= 2 points, got {self.N!r}")

    @property
    def t(self) -> np.ndarray:
        n = np.arange(1, self.N + 1)
        return -1.0 + 2.0 * (n - 1) / (self.N - 1)

    @property
    def fields(self) -> np.ndarray:
        return _spiral(self.t, self.Bx, self.By, self.Bz)


def _spiral(t, bx, by, bz) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    r = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    return np.stack([bx * r * np.cos(6 * np.pi * t), -by * t, bz * r * np.sin(6 * np.pi * t)], axis=-1)


def spiral_field(n: int, scan: SpiralScan) -> np.ndarray:
    """Field vector (mT) of the ``n``-th scan point, 1-based."""
    if not 1 <= n <= scan.N:
        raise IndexError(f"scan index {n} outside 1..{scan.N}")
    t = -1.0 + 2.0 * (n - 1) / (scan.N - 1)
    return _spiral(t, scan.Bx, scan.By, scan.Bz)


@dataclass(frozen=True, eq=False)
class SpectrumLines:
    """Hole and antihole positions of one burn.

    ``tags`` name the line class (central, side, main, sum, difference;
    merged lines join their tags with ``+``). ``transition`` is ``(k, l)``
    with ground doublet ``k/2`` and excited doublet ``l/2``.
    """

    offsets: np.ndarray
    kinds: np.ndarray
    subsites: np.ndarray
    tags: np.ndarray
    weights: np.ndarray
    transition: tuple[int, int] | None = None

    def __len__(self):
        return len(self.offsets)

    def select(self, kind=None, subsite=None) -> "SpectrumLines":
        m = np.ones(len(self), dtype=bool)
        if kind is not None:
            m &= self.kinds == kind
        if subsite is not None:
            m &= self.subsites == subsite
        return SpectrumLines(self.offsets[m], self.kinds[m], self.subsites[m], self.tags[m], self.weights[m], self.transition)

    @property
    def holes(self) -> np.ndarray:
        return np.sort(self.offsets[self.kinds == "hole"])

    @property
    def antiholes(self) -> np.ndarray:
        return np.sort(self.offsets[self.kinds == "antihole"])


def _merge(raw, tol=MERGE_TOL_KHZ):
    """Merge (offset, kind, subsite, tag, weight) rows closer than ``tol`` within a kind and subsite."""
    out = []
    raw = sorted(raw, key=lambda r: (r[1], r[2], r[0]))
    for r in raw:
        last = out[-1] if out else None
        if last and last[1] == r[1] and last[2] == r[2] and abs(r[0] - last[4]) <= tol:
            w = last[3] + r[4]
            tags = last[5] if r[3] in last[5].split("+") else f"{last[5]}+{r[3]}"
            # weighted mean keeps the set symmetric under negation
            pos = (last[0] * last[3] + r[0] * r[4]) / w
            out[-1] = (pos, r[1], r[2], w, r[0], tags)
        else:
            out.append((r[0], r[1], r[2], r[4], r[0], r[3]))
    return out


def _to_lines(rows, transition):
    rows = sorted(rows, key=lambda r: (r[2], r[1] != "hole", r[0]))
    return SpectrumLines(
        np.array([r[0] for r in rows], dtype=float),
        np.array([r[1] for r in rows], dtype=object),
        np.array([r[2] for r in rows], dtype=int),
        np.array([r[5] for r in rows], dtype=object),
        np.array([r[3] for r in rows], dtype=float),
        transition,
    )


def _raw_lines(dg: float, de: float, subsite: int, weights) -> list:
    w = {**DEFAULT_WEIGHTS, **(weights or {})}
    raw = [(0.0, "hole", subsite, "central", w["central"])]
    for s in (1.0, -1.0):
        raw.append((s * de, "hole", subsite, "side", w["side"]))
        raw.append((s * dg, "antihole", subsite, "main", w["main"]))
        raw.append((s * (dg + de), "antihole", subsite, "sum", w["sum"]))
        raw.append((s * (dg - de), "antihole", subsite, "difference", w["difference"]))
    return raw


def _drop_central_antiholes(rows, tol=MERGE_TOL_KHZ):
    # an antihole on top of the central hole cannot be seen; it is removed
    return [r for r in rows if not (r[1] == "antihole" and abs(r[0]) <= tol)]


def line_positions(dg: float, de: float, subsite: int = 1, weights=None, transition=None) -> SpectrumLines:
    """Holes at 0 and +-de; antiholes at +-dg, +-(dg - de) and +-(dg + de), kHz.

    Lines of one kind closer than 0.1 kHz merge with summed weight.
    Antiholes landing on the central hole are dropped.
    """
    if dg < 0 or de < 0:
        raise ValueError("splittings are magnitudes and must be >= 0")
    rows = _drop_central_antiholes(_merge(_raw_lines(float(dg), float(de), subsite, weights)))
    return _to_lines(rows, transition)


def _check_transition(transition) -> tuple[int, int]:
    k, l = (int(x) for x in transition)
    if k not in (1, 3, 5) or l not in (1, 3, 5):
        raise ValueError(f"transition labels must be in (1, 3, 5), got {transition!r}")
    return k, l


def subsite_splittings(model: SiteModel, fields, state: str) -> np.ndarray:
    """Doublet splittings (kHz) of both subsites, shape (n, 2, 3)."""
    out = []
    for sub in (1, 2):
        q, m = model.tensors(state, sub)
        out.append(doublet_splittings(q, m, fields))
    return np.stack(out, axis=1)


def site_lines(model: SiteModel, B, transition=(1, 1), weights=None) -> SpectrumLines:
    """Union of the subsite line sets at field ``B`` (mT) for burn transition (k, l).

    The central hole is shared: it appears once, tagged subsite 1, with the
    weight of both subsites.
    """
    k, l = _check_transition(transition)
    b = np.asarray(B, dtype=float)[None, :]
    dg = subsite_splittings(model, b, "ground")[0, :, DOUBLETS.index(k / 2)]
    de = subsite_splittings(model, b, "excited")[0, :, DOUBLETS.index(l / 2)]
    rows = []
    central = 0.0
    for sub in (1, 2):
        part = _drop_central_antiholes(_merge(_raw_lines(dg[sub - 1], de[sub - 1], sub, weights)))
        for r in part:
            if r[1] == "hole" and "central" in r[5]:
                # side holes merged into the centre add their weight to it
                central += r[3]
                continue
            rows.append(r)
    rows.append((0.0, "hole", 1, central, 0.0, "central"))
    return _to_lines(rows, (k, l))


@dataclass(frozen=True, eq=False)
class AbsorptionProfile:
    freq: np.ndarray
    values: np.ndarray
    width: float

    @property
    def step(self) -> float:
        return float(self.freq[1] - self.freq[0])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("freq_kHz,absorption\n")
        for f, v in zip(self.freq, self.values):
            buf.write(f"{f:.9g},{v:.9g}\n")
        return buf.getvalue()


def uniform_grid(span: float, step: float) -> np.ndarray:
    """Symmetric grid ``step * (-m .. m)`` covering ``[-span/2, span/2]``."""
    if step <= 0 or span <= 0:
        raise ValueError("span and step must be > 0")
    m = int(math.ceil(span / (2 * step) - 1e-9))
    return step * np.arange(-m, m + 1)


def synth_profile(lines: SpectrumLines, width: float = 10.0, span: float | None = None,
                  step: float | None = None, shape: str = "lorentzian") -> AbsorptionProfile:
    """Sum of unit-area line shapes scaled by weight; holes negative.

    ``width`` is the full width at half maximum in kHz. The grid defaults
    to a step of width/20 over the lines plus 20 widths on each side.
    """
    if width <= 0:
        raise ValueError("width must be > 0")
    if span is None:
        reach = float(np.max(np.abs(lines.offsets))) if len(lines) else 0.0
        span = 2 * (reach + 20 * width)
    step = width / 20 if step is None else step
    f = uniform_grid(span, step)
    sign = np.where(lines.kinds == "hole", -1.0, 1.0) * lines.weights
    d = f[:, None] - lines.offsets[None, :]
    if shape == "lorentzian":
        hw = width / 2
        kernel = (hw / np.pi) / (d * d + hw * hw)
    elif shape == "gaussian":
        s = width / (2 * math.sqrt(2 * math.log(2)))
        kernel = np.exp(-0.5 * (d / s) ** 2) / (s * math.sqrt(2 * math.pi))
    else:
        raise ValueError(f"shape must be 'lorentzian' or 'gaussian', got {shape!r}")
    return AbsorptionProfile(f, kernel @ sign, float(width))


@dataclass(frozen=True, eq=False)
class FidTrace:
    """Real detector samples of the heterodyne beat between FID and local oscillator."""

    time: np.ndarray
    signal: np.ndarray
    lo_detune: float
    delay: float
    phase: float
    band: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.time[1] - self.time[0])

    def envelope(self) -> np.ndarray:
        """Magnitude of the analytic signal (the FID envelope)."""
        return np.abs(hilbert(self.signal))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time_us,signal\n")
        for t, s in zip(self.time, self.signal):
            buf.write(f"{t:.9g},{s:.9g}\n")
        return buf.getvalue()


def _grid_index(x: float, step: float, what: str) -> int:
    i = round(x / step)
    if abs(i * step - x) > 1e-9 * max(1.0, abs(x)):
        raise ValueError(f"{what} ({x} kHz) must be a multiple of the profile step {step} kHz")
    return int(i)


def fid_trace(profile: AbsorptionProfile, lo_detune: float = 4.0, delay: float = 0.0,
              phase: float = 0.0, sample_rate: float | None = None) -> FidTrace:
    """Detector trace ``Re[e(t) exp(i(2 pi lo_detune t + phase))]`` sampled from ``delay`` on.

    ``e(t)`` is the complex FID envelope whose spectrum is ``i * absorption``
    on the profile grid. Sampling covers one period of the grid,
    ``1/step``, so the discrete transform inverts it exactly. ``sample_rate``
    is in MHz and defaults to the smallest grid multiple above 2.5x the
    highest beat frequency.
    """
    df = profile.step
    lo = 1e3 * lo_detune
    half = max(abs(profile.freq[0]), abs(profile.freq[-1]))
    _grid_index(lo, df, "LO detuning")
    _grid_index(profile.freq[0], df, "profile start")
    if sample_rate is None:
        n = int(math.ceil(2.5 * (lo + half) / df))
    else:
        n = _grid_index(1e3 * sample_rate, df, "sample rate")
    fs = n * df
    if lo <= half or fs <= 2 * (lo + half):
        raise NyquistViolation(
            f"sampling at {fs / 1e3:.6g} MHz with LO detuning {lo_detune:.6g} MHz cannot hold a "
            f"{2 * half:.6g} kHz band (need detuning > {half:.6g} kHz and rate > {2 * (lo + half) / 1e3:.6g} MHz)"
        )
    dt = 1e3 / fs
    t = delay + dt * np.arange(n)
    nu = lo + profile.freq
    # every beat frequency sits on an FFT bin, so an inverse FFT evaluates the sum exactly
    coeff = 1j * profile.values * df * np.exp(1j * (phase + 2 * np.pi * nu * delay * _KHZ_US))
    bins = np.zeros(n, dtype=complex)
    np.add.at(bins, np.rint(nu / df).astype(int) % n, coeff)
    signal = (n * np.fft.ifft(bins)).real
    return FidTrace(t, signal, float(lo_detune), float(delay), float(phase), profile.freq.copy())


def recover_spectrum(trace: FidTrace, phi0: float, tau: float, width: float = float("nan")) -> AbsorptionProfile:
    """Imaginary part of the phase-corrected transform, demodulated at the LO detuning.

    ``phi0`` removes the constant LO phase and ``tau`` the linear phase slope
    ``2 pi f tau`` left by the acquisition delay.
    """
    n = len(trace.signal)
    df = 1e3 / (n * trace.dt)
    nu = 1e3 * trace.lo_detune + trace.band
    idx = np.rint(nu / df).astype(int) % n
    spec = np.fft.fft(trace.signal)[idx]
    corr = np.exp(-1j * (phi0 + 2 * np.pi * nu * tau * _KHZ_US))
    values = (2.0 * spec * corr / (n * df)).imag
    return AbsorptionProfile(trace.band.copy(), values, width)


def observe_spiral(model: SiteModel, scan: SpiralScan, transitions=((1, 5), (3, 3), (5, 1)),
                   noise: float = 0.0, seed: int | None = 0, states=("ground", "excited")) -> ObservationSet:
    """Synthetic side-hole and main-antihole positions along a spiral scan.

    Every scan point yields, per transition and subsite, one hole row at the
    excited splitting of doublet l/2 and one antihole row at the ground
    splitting of doublet k/2. Gaussian noise of ``noise`` kHz is added and
    the result folded back to a magnitude.
    """
    fields = scan.fields
    rng = np.random.default_rng(seed)
    split = {st: subsite_splittings(model, fields, st) for st in states}
    rows = []
    for i, b in enumerate(fields):
        for tr in transitions:
            k, l = _check_transition(tr)
            for st, kind, lab in (("excited", "hole", l), ("ground", "antihole", k)):
                if st not in split:
                    continue
                for sub in (0, 1):
                    rows.append((i + 1, b, k, l, kind, split[st][i, sub, DOUBLETS.index(lab / 2)]))
    offset = np.array([r[5] for r in rows])
    sigma = np.full(len(rows), noise if noise > 0 else 1.0)
    if noise > 0:
        offset = np.abs(offset + rng.normal(0.0, noise, len(rows)))
    return ObservationSet(
        np.array([r[0] for r in rows]), np.array([r[1] for r in rows]),
        np.array([r[2] for r in rows]), np.array([r[3] for r in rows]),
        np.array([r[4] for r in rows], dtype=object), offset, sigma,
    )


def scan_lines_csv(model: SiteModel, scan: SpiralScan, transition=(1, 1), weights=None) -> str:
    """Line table of a whole scan, one row per line and scan point."""
    buf = io.StringIO()
    buf.write("n,t,Bx_mT,By_mT,Bz_mT,offset_kHz,kind,subsite,weight\n")
    for n, (t, b) in enumerate(zip(scan.t, scan.fields), start=1):
        lines = site_lines(model, b, transition, weights)
        for off, kind, sub, w in zip(lines.offsets, lines.kinds, lines.subsites, lines.weights):
            buf.write(f"{n},{t:.9g},{b[0]:.9g},{b[1]:.9g},{b[2]:.9g},{off:.9g},{kind},{sub},{w:.9g}\n")
    return buf.getvalue()
