"""Spectral hole-burning predictions from paired ground/excited Hamiltonians.

An ion class is the set of ions whose (ground level, excited level) optical
transition sits at the burn laser frequency. Populations are tracked per
class with idealized, rate-free pumping.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .io import csv_text
from .spin import LevelDiagram, LevelLabel, SpinSystem, diagonalize, doublet_basis, label_levels

CLASS_MERGE_TOL = 1e-6  # MHz
DEFAULT_PROBE_WINDOW = 10.0  # MHz, half width of the probe sweep around the central hole


@dataclass(frozen=True)
class IonClass:
    subsite: int
    ground: LevelDiagram
    excited: LevelDiagram
    population: np.ndarray
    resonant: tuple[int, int]  # (ground, excited) level indices at the burn laser frequency
    ground_labels: tuple[LevelLabel, ...] = ()
    excited_labels: tuple[LevelLabel, ...] = ()
    multiplicity: int = 1

    def __post_init__(self):
        pop = np.asarray(self.population, dtype=float)
        if pop.shape != (6,):
            raise ValueError("population needs one entry per ground level")
        if np.any(pop < -1e-15) or np.any(pop > 1 + 1e-12) or abs(pop.sum() - 1) > 1e-12:
            raise ValueError("populations must lie in [0, 1] and sum to 1")
        object.__setattr__(self, "population", pop)

    def offset(self, g: int, e: int) -> float:
        """Frequency of g -> e relative to the class's resonant transition (MHz)."""
        gb, eb = self.resonant
        return float((self.excited.energies[e] - self.ground.energies[g])
                     - (self.excited.energies[eb] - self.ground.energies[gb]))

    def levels(self, which: str, abs_m: float) -> list[int]:
        labels = self.ground_labels if which == "ground" else self.excited_labels
        return [i for i, lab in enumerate(labels) if lab.abs_m == abs_m]


def enumerate_classes(ground: SpinSystem, excited: SpinSystem, field_vec,
                      subsite: int = 1) -> list[IonClass]:
    """All 36 classes of one subsite, uniformly populated.

    At zero field classes with identical relative spectra are merged, which
    leaves nine (one per pair of doublets).
    """
    gd = diagonalize(ground, field_vec)
    ed = diagonalize(excited, field_vec)
    gl = tuple(label_levels(gd, doublet_basis(ground.q)))
    el = tuple(label_levels(ed, doublet_basis(excited.q)))
    uniform = np.full(6, 1 / 6)
    classes = [IonClass(subsite, gd, ed, uniform, (g, e), gl, el) for g in range(6) for e in range(6)]
    return merge_classes(classes)


def _signature(c: IonClass) -> tuple:
    offs = sorted(c.offset(g, e) for g in range(6) for e in range(6))
    return tuple(np.round(np.array(offs) / CLASS_MERGE_TOL).astype(np.int64))


def merge_classes(classes: Sequence[IonClass]) -> list[IonClass]:
    """Collapse classes whose relative transition spectra coincide within 1e-6 MHz."""
    out: dict[tuple, IonClass] = {}
    for c in classes:
        key = (c.subsite, _signature(c), tuple(np.round(c.population, 12)))
        if key in out:
            k = out[key]
            out[key] = replace(k, multiplicity=k.multiplicity + c.multiplicity)
        else:
            out[key] = c
    return list(out.values())


@dataclass(frozen=True)
class PumpStep:
    """Empty ``empty`` into ``into`` (None: every other level).

    With ``doublets=True`` both sets hold |m| values of ground doublets that
    are resolved to level indices per class.
    """

    empty: frozenset
    into: frozenset | None = None
    doublets: bool = False

    def resolve(self, c: IonClass) -> tuple[list[int], list[int]]:
        if self.doublets:
            empty = [i for m in sorted(self.empty) for i in c.levels("ground", m)]
            into = (None if self.into is None else
                    [i for m in sorted(self.into) for i in c.levels("ground", m)])
        else:
            empty, into = sorted(self.empty), None if self.into is None else sorted(self.into)
        if into is None:
            into = [i for i in range(6) if i not in empty]
        bad = [i for i in list(empty) + list(into) if not 0 <= i < 6]
        if bad:
            raise ValueError(f"invalid ground level indices {bad}")
        if not into or set(into) <= set(empty):
            raise ValueError("pump step would empty all six levels")
        return list(empty), [i for i in into if i not in empty]


def _transfer(pop: np.ndarray, empty: Sequence[int], into: Sequence[int]) -> np.ndarray:
    pop = pop.copy()
    moved = pop[list(empty)].sum()
    pop[list(empty)] = 0.0
    target = pop[list(into)]
    w = target / target.sum() if target.sum() > 0 else np.full(len(into), 1 / len(into))
    pop[list(into)] += moved * w
    return pop


def pump_sequence(classes: Sequence[IonClass], steps: Iterable[PumpStep | tuple]) -> list[IonClass]:
    """Apply complete-transfer pump steps to every class.

    Tuples ``(empty, into)`` are taken as level-index sets.
    """
    steps = [s if isinstance(s, PumpStep) else
             PumpStep(frozenset(s[0]), None if s[1] is None else frozenset(s[1])) for s in steps]
    out = []
    for c in classes:
        pop = c.population
        for s in steps:
            empty, into = s.resolve(c)
            pop = _transfer(pop, empty, into)
        out.append(replace(c, population=pop))
    return out


def clean_classes(classes: Sequence[IonClass], pump_offsets: Sequence[float],
                  sweep_width: float = 8.0, window: float | None = None) -> list[IonClass]:
    """Keep classes with a transition near every pump frequency.

    ``pump_offsets`` are pump frequencies relative to the burn laser (MHz);
    the resonance window defaults to half the pump sweep width.
    """
    window = sweep_width / 2 if window is None else window
    keep = []
    for c in classes:
        offs = np.array([c.offset(g, e) for g in range(6) for e in range(6)])
        if all(np.any(np.abs(offs - p) <= window) for p in pump_offsets):
            keep.append(c)
    return keep


@dataclass(frozen=True)
class HoleFeature:
    offset: float  # MHz
    kind: str  # "hole" | "anti-hole"
    weight: float
    subsite: int = 1
    resonant: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class HoleSpectrum:
    features: tuple[HoleFeature, ...] = field(default_factory=tuple)

    def __post_init__(self):
        feats = tuple(sorted(self.features, key=lambda f: (f.offset, f.kind, f.subsite, f.resonant)))
        if any(f.weight < 0 for f in feats):
            raise ValueError("feature weights must be non-negative")
        if feats and not any(f.kind == "hole" and abs(f.offset) < 1e-9 for f in feats):
            raise ValueError("a hole spectrum needs its central hole at offset 0")
        object.__setattr__(self, "features", feats)

    def offsets(self, kind: str | None = None) -> np.ndarray:
        return np.array([f.offset for f in self.features if kind is None or f.kind == kind])

    def union(self, other: "HoleSpectrum") -> "HoleSpectrum":
        return HoleSpectrum(self.features + other.features)

    def to_csv(self) -> str:
        rows = [(f"{f.offset:.6f}", f.kind, f"{f.weight:.6g}", f.subsite,
                 f"{f.resonant[0]}-{f.resonant[1]}") for f in self.features]
        return csv_text(["offset_MHz", "type", "weight", "subsite", "class"], rows)


def predict_holes(classes: Sequence[IonClass], burn: tuple,
                  probe_window: float = DEFAULT_PROBE_WINDOW, by_doublet: bool = True) -> HoleSpectrum:
    """Holes and anti-holes seen by a probe swept around the burn frequency.

    ``burn`` is (ground, excited): |m| doublet values when ``by_doublet``,
    otherwise level indices. Every class whose resonant transition lies in
    the burn pair has its burn ground level emptied into its other populated
    levels. Features farther than ``probe_window`` from the central hole are
    dropped.
    """
    bg, be = burn
    feats: list[HoleFeature] = []
    burned_any = False
    for c in classes:
        gb, eb = c.resonant
        if by_doublet:
            if gb not in c.levels("ground", bg) or eb not in c.levels("excited", be):
                continue
        elif (gb, eb) != (bg, be):
            continue
        if c.population[gb] <= 0:
            continue
        burned_any = True
        after = _transfer(c.population, [gb], [i for i in range(6) if i != gb])
        change = after - c.population
        for g in range(6):
            if change[g] == 0:
                continue
            kind = "hole" if change[g] < 0 else "anti-hole"
            w = abs(change[g]) * c.multiplicity
            for e in range(6):
                off = c.offset(g, e)
                if abs(off) <= probe_window:
                    feats.append(HoleFeature(0.0 if (g, e) == (gb, eb) else off, kind, w,
                                             c.subsite, (gb, eb)))
    if not burned_any:
        raise ValueError("burn transition is unpopulated in every class")
    return HoleSpectrum(tuple(feats))


def init_step(abs_m: float = 0.5) -> PumpStep:
    """Empty every other ground doublet into the ``abs_m`` doublet."""
    others = frozenset({0.5, 1.5, 2.5} - {abs_m})
    return PumpStep(others, frozenset({abs_m}), doublets=True)


def burn_spectrum(ground: SpinSystem, excited: SpinSystem, field_vec,
                  burn: tuple[float, float] = (0.5, 0.5), init_abs_m: float = 0.5,
                  cleaning: Sequence[float] = (), sweep_width: float = 8.0,
                  probe_window: float = DEFAULT_PROBE_WINDOW, subsite: int = 1) -> HoleSpectrum:
    """Class enumeration, optional cleaning, initialisation and burn in one call."""
    classes = enumerate_classes(ground, excited, field_vec, subsite)
    if cleaning:
        classes = clean_classes(classes, cleaning, sweep_width)
    classes = pump_sequence(classes, [init_step(init_abs_m)])
    return predict_holes(classes, burn, probe_window)
