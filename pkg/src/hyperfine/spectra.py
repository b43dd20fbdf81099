"""Peak spectra: prediction over field paths, peak-list I/O and peak assignment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import AxisDirection, FieldPath, c2_rotation, spherical_field
from .io import atomic_write
from .spin import (DoubletBasis, SpinSystem, diagonalize, doublet_basis,
                   hamiltonian_matrices, label_levels)

DEFAULT_PENALTY = 0.5  # MHz per unmatched peak


@dataclass(frozen=True)
class Manifold:
    """Transition group between two zero-field doublets of one electronic state."""

    state: str  # "ground" | "excited"
    lower_m: float
    upper_m: float

    @property
    def tag(self) -> str:
        return f"{self.state[0]}:{_frac(self.lower_m)}-{_frac(self.upper_m)}"

    def __str__(self) -> str:
        return self.tag


def _frac(abs_m: float) -> str:
    return f"{int(round(2 * abs_m))}/2"


MANIFOLDS = {
    m.tag: m for m in (
        Manifold("ground", 0.5, 1.5),
        Manifold("ground", 1.5, 2.5),
        Manifold("excited", 0.5, 1.5),
        Manifold("excited", 1.5, 2.5),
    )
}


def manifold(tag: str | Manifold) -> Manifold:
    if isinstance(tag, Manifold):
        return tag
    try:
        return MANIFOLDS[tag]
    except KeyError:
        raise ValueError(f"unknown manifold tag {tag!r}; choose from {sorted(MANIFOLDS)}") from None


@dataclass(frozen=True)
class Peak:
    frequency: float
    amplitude: float | None = None
    subsite: int | None = None
    transition: tuple[int, int] | None = None  # level indices (lower doublet, upper doublet)


@dataclass(frozen=True)
class PeakSpectrum:
    field_t: float | None
    field_vec: np.ndarray | None
    peaks: tuple[Peak, ...] = ()

    def __post_init__(self):
        peaks = tuple(sorted(self.peaks, key=lambda p: p.frequency))
        if any(not p.frequency > 0 for p in peaks):
            raise ValueError("peak frequencies must be positive")
        for p in peaks:
            if p.transition is not None and not all(0 <= i < 6 for i in p.transition):
                raise ValueError(f"invalid level pair {p.transition}")
        object.__setattr__(self, "peaks", peaks)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.frequency for p in self.peaks])

    def __len__(self) -> int:
        return len(self.peaks)


@dataclass(frozen=True)
class SweepDataset:
    manifold: Manifold
    b0: float  # Tesla
    spectra: tuple[PeakSpectrum, ...]
    window: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "manifold", manifold(self.manifold))
        object.__setattr__(self, "spectra", tuple(self.spectra))
        t = [s.field_t for s in self.spectra]
        if any(x is None for x in t):
            raise ValueError("every spectrum of a sweep needs its path parameter t")
        if np.any(np.diff(t) <= 0):
            raise ValueError("path parameter t must increase strictly")

    @property
    def t(self) -> np.ndarray:
        return np.array([s.field_t for s in self.spectra])

    @property
    def fields(self) -> np.ndarray:
        return np.array([s.field_vec for s in self.spectra])

    @property
    def n_peaks(self) -> int:
        return sum(len(s) for s in self.spectra)


# Prediction

def _manifold_pairs(levels_lower: Sequence[int], levels_upper: Sequence[int]) -> list[tuple[int, int]]:
    return [(i, j) for i in levels_lower for j in levels_upper]


def predict_subsite(sys: SpinSystem, field_vec, man: Manifold,
                    basis: DoubletBasis | None = None) -> list[tuple[float, tuple[int, int]]]:
    """The four transitions of one subsite between the doublets of ``man``."""
    basis = doublet_basis(sys.q) if basis is None else basis
    d = diagonalize(sys, field_vec)
    labels = label_levels(d, basis)
    lower = [i for i, lab in enumerate(labels) if lab.abs_m == man.lower_m]
    upper = [i for i, lab in enumerate(labels) if lab.abs_m == man.upper_m]
    return [(float(abs(d.energies[j] - d.energies[i])), (i, j))
            for i, j in _manifold_pairs(lower, upper)]


def predict_spectrum(sys: SpinSystem, axis: AxisDirection, field_vec,
                     man: Manifold | str, field_t: float | None = None) -> PeakSpectrum:
    """Eight labelled peaks: four transitions for each of the two C2 subsites."""
    man = manifold(man)
    partner = sys.rotated(c2_rotation(axis))
    peaks = []
    for subsite, s in ((1, sys), (2, partner)):
        for f, pair in predict_subsite(s, field_vec, man):
            peaks.append(Peak(f, subsite=subsite, transition=pair))
    return PeakSpectrum(field_t, np.asarray(field_vec, dtype=float), tuple(peaks))


def predict_sweep(sys: SpinSystem, axis: AxisDirection, path: FieldPath,
                  man: Manifold | str) -> SweepDataset:
    man = manifold(man)
    spectra = [predict_spectrum(sys, axis, b, man, field_t=float(t))
               for t, b in zip(path.t, path.points)]
    return SweepDataset(man, path.b0, tuple(spectra))


def doublet_slots(q: np.ndarray, man: Manifold) -> tuple[int, int]:
    """Zero-field energy rank (0, 1, 2) of the two doublets of ``man``."""
    basis = doublet_basis(q)
    return basis.doublet_index(man.lower_m), basis.doublet_index(man.upper_m)


def manifold_frequencies(m: np.ndarray, q: np.ndarray, fields: np.ndarray,
                         man: Manifold) -> np.ndarray:
    """Batched four-peak frequencies for one subsite, shape (n, 4), unsorted.

    Assumes the Zeeman energy is small against the doublet spacings, so that
    the sorted eigenvalues stay grouped by doublet (true for the sub-0.1 T
    sweeps used in fitting). ``predict_spectrum`` makes no such assumption.
    """
    k_lo, k_hi = doublet_slots(q, man)
    w = np.linalg.eigvalsh(hamiltonian_matrices(m, q, fields))
    lo = w[:, 2 * k_lo:2 * k_lo + 2]
    hi = w[:, 2 * k_hi:2 * k_hi + 2]
    return np.abs(hi[:, None, :] - lo[:, :, None]).reshape(len(w), 4)


def sweep_frequencies(m: np.ndarray, q: np.ndarray, axis: AxisDirection,
                      fields: np.ndarray, man: Manifold) -> np.ndarray:
    """Batched eight-peak frequencies (both subsites), sorted per row, shape (n, 8)."""
    r = c2_rotation(axis)
    f1 = manifold_frequencies(m, q, fields, man)
    f2 = manifold_frequencies(r @ m @ r.T, r @ q @ r.T, fields, man)
    return np.sort(np.concatenate([f1, f2], axis=1), axis=1)


# Assignment

@dataclass(frozen=True)
class Assignment:
    pairs: tuple[tuple[int, int], ...]  # (measured index, predicted index), sorted-order indices
    residuals: np.ndarray  # |f_meas - f_pred| per matched pair
    unmatched: int
    penalty: float

    @property
    def total(self) -> float:
        return float(self.residuals.sum() + self.penalty * self.unmatched)


def assign_frequencies(measured, predicted, penalty: float = DEFAULT_PENALTY) -> Assignment:
    """Minimum-cost matching under |f_meas - f_pred| with a per-peak miss penalty."""
    meas = np.asarray(measured, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    unmatched = abs(len(meas) - len(pred))
    if len(meas) == 0 or len(pred) == 0:
        return Assignment((), np.zeros(0), unmatched, penalty)
    if len(meas) == len(pred):
        # sorted-to-sorted is optimal for |x - y| on the line
        im, ip = np.argsort(meas, kind="stable"), np.argsort(pred, kind="stable")
        rows, cols = im, ip
    else:
        rows, cols = linear_sum_assignment(np.abs(meas[:, None] - pred[None, :]))
    res = np.abs(meas[rows] - pred[cols])
    order = np.argsort(rows, kind="stable")
    pairs = tuple((int(rows[k]), int(cols[k])) for k in order)
    return Assignment(pairs, res[order], unmatched, penalty)


def assign_peaks(measured: PeakSpectrum, predicted: PeakSpectrum,
                 penalty: float = DEFAULT_PENALTY) -> Assignment:
    if len(measured) == 0 or len(predicted) == 0:
        raise ValueError("assign_peaks needs non-empty spectra")
    return assign_frequencies(measured.frequencies, predicted.frequencies, penalty)


# Peak-list files

def merge_split_peaks(freqs: Iterable[float], threshold: float) -> list[float]:
    """Replace clusters of peaks closer than ``threshold`` MHz by their mean."""
    f = sorted(freqs)
    if not f:
        return []
    groups = [[f[0]]]
    for x in f[1:]:
        if x - groups[-1][-1] < threshold:
            groups[-1].append(x)
        else:
            groups.append([x])
    return [float(np.mean(g)) for g in groups]


def _parse_header(line: str) -> dict[str, str]:
    out = {}
    for item in line.split(","):
        if "=" not in item:
            raise ValueError(f"malformed header item {item.strip()!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for k in ("manifold", "b0_gauss", "n_points"):
        if k not in out:
            raise ValueError(f"header lacks {k!r}")
    return out


def parse_peak_list(text: str, merge_threshold: float | None = None) -> SweepDataset:
    """Parse the peak-list format.

    Comment lines start with ``#``. The first other line is the header
    ``manifold=<tag>, b0_gauss=<G>, n_points=<N>[, fmin=<MHz>, fmax=<MHz>]``,
    followed by one ``t, f1, f2, ...`` row per field point.
    """
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise ValueError("peak list is empty")
    head = _parse_header(rows[0])
    man = manifold(head["manifold"])
    b0 = float(head["b0_gauss"]) * 1e-4
    n_points = int(head["n_points"])
    window = None
    if "fmin" in head or "fmax" in head:
        window = (float(head.get("fmin", 0.0)), float(head.get("fmax", math.inf)))
    spectra = []
    for lineno, row in enumerate(rows[1:], start=2):
        cells = [c.strip() for c in row.split(",")]
        cells = [c for c in cells if c != ""] if len(cells) > 1 else cells
        try:
            values = [float(c) for c in cells]
        except ValueError:
            raise ValueError(f"data row {lineno}: non-numeric entry in {row!r}") from None
        t, freqs = values[0], values[1:]
        if not -1.0 <= t <= 1.0:
            raise ValueError(f"data row {lineno}: t = {t} outside [-1, 1]")
        if any(f <= 0 for f in freqs):
            raise ValueError(f"data row {lineno}: non-positive frequency")
        if window is not None and any(not window[0] <= f <= window[1] for f in freqs):
            raise ValueError(f"data row {lineno}: frequency outside declared window {window}")
        if merge_threshold is not None:
            freqs = merge_split_peaks(freqs, merge_threshold)
        if spectra and t <= spectra[-1].field_t:
            raise ValueError(f"data row {lineno}: t = {t} is not increasing")
        spectra.append(PeakSpectrum(t, spherical_field(b0, t), tuple(Peak(f) for f in freqs)))
    if len(spectra) != n_points:
        raise ValueError(f"header declares {n_points} points, file has {len(spectra)}")
    return SweepDataset(man, b0, tuple(spectra), window)


def ingest_peaks(path, merge_threshold: float | None = None) -> SweepDataset:
    return parse_peak_list(Path(path).read_text(encoding="utf-8"), merge_threshold)


def format_peak_list(ds: SweepDataset, comments: Sequence[str] = ()) -> str:
    lines = [f"# {c}" for c in comments]
    lines.append("# frequencies in MHz; t parametrizes the spherical field path")
    head = f"manifold={ds.manifold.tag}, b0_gauss={ds.b0 * 1e4:.6g}, n_points={len(ds.spectra)}"
    if ds.window is not None:
        head += f", fmin={ds.window[0]:.6f}, fmax={ds.window[1]:.6f}"
    lines.append(head)
    for s in ds.spectra:
        lines.append(", ".join([f"{s.field_t:.6f}"] + [f"{f:.6f}" for f in s.frequencies]))
    return "\n".join(lines) + "\n"


def write_peak_list(ds: SweepDataset, path, comments: Sequence[str] = ()) -> None:
    atomic_write(path, format_peak_list(ds, comments))


def spectrum_records(ds: SweepDataset) -> list[dict]:
    """JSON-ready records: one per peak with t, field (T), frequency and labels."""
    out = []
    for s in ds.spectra:
        for p in s.peaks:
            out.append({
                "manifold": ds.manifold.tag,
                "t": s.field_t,
                "field_T": [float(x) for x in s.field_vec],
                "frequency_MHz": p.frequency,
                "amplitude": p.amplitude,
                "subsite": p.subsite,
                "levels": list(p.transition) if p.transition is not None else None,
            })
    return out


def dump_records(ds: SweepDataset) -> str:
    return json.dumps({"schema": "hyperfine.spectra/1", "b0_T": ds.b0,
                       "records": spectrum_records(ds)}, indent=1)
