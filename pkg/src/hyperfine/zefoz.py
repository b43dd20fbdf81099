"""Field sensitivity of hyperfine transitions and ZEFOZ-point search."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .geometry import AxisDirection, c2_rotation
from .io import csv_text
from .spin import (SpinSystem, _SPIN_STACK, diagonalize, doublet_basis, label_levels,
                   track_levels)

DEGENERATE_GAP = 1e-4  # MHz, transition levels closer than this are rejected
CURVATURE_GAP = 1e-3  # MHz, second-order terms with smaller denominators are dropped
TRACK_START = 1e-3  # T, field at which labels are read before tracking outward
TRACK_STEP = 0.01  # T


@dataclass(frozen=True)
class TransitionSensitivity:
    field: np.ndarray  # T
    levels: tuple[int, int]  # (lower, upper) energy-sorted indices at this field
    frequency: float  # MHz
    gradient: np.ndarray  # MHz/T
    curvature: np.ndarray  # MHz/T^2
    excluded: tuple[tuple[int, int], ...] = ()  # near-degenerate pairs left out of the curvature
    label: str = ""

    @property
    def gradient_norm(self) -> float:
        return float(np.linalg.norm(self.gradient))


def zeeman_operators(m: np.ndarray) -> np.ndarray:
    """V_a = sum_b M_ab I_b, so that H_Z = sum_a B_a V_a."""
    return np.einsum("ab,bij->aij", np.asarray(m, dtype=float), _SPIN_STACK)


def level_derivatives(sys: SpinSystem, field_vec, gap: float = CURVATURE_GAP):
    """Energies, first and second field derivatives of every level.

    Returns (diagram, grad (6, 3), hess (6, 3, 3), excluded pairs).
    """
    d = diagonalize(sys, field_vec)
    v = d.vectors
    ops = zeeman_operators(sys.m)
    mat = np.einsum("ia,kij,jb->kab", v.conj(), ops, v)  # <a|V_k|b>
    grad = np.real(np.einsum("kaa->ak", mat))
    diff = d.energies[:, None] - d.energies[None, :]
    mask = np.abs(diff) >= gap
    np.fill_diagonal(mask, False)
    inv = np.where(mask, 1.0 / np.where(mask, diff, 1.0), 0.0)
    hess = 2 * np.real(np.einsum("kab,lba,ab->akl", mat, mat, inv))
    hess = 0.5 * (hess + hess.transpose(0, 2, 1))
    excluded = tuple((i, j) for i in range(6) for j in range(i + 1, 6) if abs(diff[i, j]) < gap)
    return d, grad, hess, excluded


def sensitivity(sys: SpinSystem, field_vec, levels: tuple[int, int],
                gap: float = CURVATURE_GAP) -> TransitionSensitivity:
    """Frequency, gradient and curvature of the transition between two level indices."""
    a, b = levels
    if not (0 <= a < 6 and 0 <= b < 6):
        raise IndexError(f"level pair {levels} out of range")
    d, grad, hess, excluded = level_derivatives(sys, field_vec, gap)
    if a == b:
        return TransitionSensitivity(np.asarray(field_vec, float), (a, b), 0.0,
                                     np.zeros(3), np.zeros((3, 3)), excluded)
    lo, hi = sorted((a, b))
    if d.energies[hi] - d.energies[lo] < DEGENERATE_GAP:
        raise ValueError(f"levels {lo} and {hi} are degenerate at this field")
    bad = [pair for pair in excluded if lo in pair or hi in pair]
    return TransitionSensitivity(
        np.asarray(field_vec, float), (lo, hi), float(d.energies[hi] - d.energies[lo]),
        grad[hi] - grad[lo], hess[hi] - hess[lo], tuple(bad))


def track_labels(sys: SpinSystem, field_vec, start: float = TRACK_START,
                 step: float = TRACK_STEP) -> list:
    """Zero-field labels carried out to ``field_vec`` along its ray by eigenvector overlap."""
    field_vec = np.asarray(field_vec, dtype=float)
    norm = np.linalg.norm(field_vec)
    basis = doublet_basis(sys.q)
    if norm <= start:
        return label_levels(diagonalize(sys, field_vec), basis)
    u = field_vec / norm
    prev = diagonalize(sys, start * u)
    labels = label_levels(prev, basis)
    n = max(1, int(np.ceil((norm - start) / step)))
    for b in np.linspace(start, norm, n + 1)[1:]:
        cur = diagonalize(sys, b * u)
        perm = track_levels(prev, cur)
        new = [None] * 6
        for i, j in enumerate(perm):
            new[j] = labels[i]
        labels, prev = new, cur
    return labels


def find_levels(sys: SpinSystem, field_vec, pair: Sequence[str]) -> tuple[int, int]:
    """Energy indices at ``field_vec`` of the tracked levels named like "-3/2", "+3/2"."""
    labels = [str(x).strip("|>") for x in track_labels(sys, field_vec)]
    out = []
    for name in pair:
        name = name.strip("|> ")
        if name not in labels:
            raise ValueError(f"no level labelled {name!r} (have {labels})")
        out.append(labels.index(name))
    return tuple(out)


def transition_sensitivity(sys: SpinSystem, field_vec, pair: Sequence[str]) -> TransitionSensitivity:
    levels = find_levels(sys, field_vec, pair)
    s = sensitivity(sys, field_vec, levels)
    return TransitionSensitivity(s.field, s.levels, s.frequency, s.gradient, s.curvature,
                                 s.excluded, f"{pair[0]}<->{pair[1]}")


def subsite_sensitivity(sys: SpinSystem, axis: AxisDirection, field_vec, levels,
                        subsite: int = 1) -> TransitionSensitivity:
    """Subsite 2 is evaluated directly on the C2-conjugated tensors."""
    if subsite == 1:
        return sensitivity(sys, field_vec, levels)
    if subsite == 2:
        return sensitivity(sys.rotated(c2_rotation(axis)), field_vec, levels)
    raise ValueError("subsite must be 1 or 2")


@dataclass(frozen=True)
class ZefozResult:
    field: np.ndarray
    gradient_norm: float
    curvature_eigenvalues: np.ndarray
    frequency: float
    levels: tuple[int, int]
    iterations: int
    seed_field: np.ndarray = field(default_factory=lambda: np.zeros(3))


def zefoz_search(sys: SpinSystem, seed_field, levels: tuple[int, int],
                 bounds: float = 2.0, tol: float = 1e-12, max_iter: int = 200) -> ZefozResult:
    """Trust-region Newton on |grad f|^2 with the analytic curvature as Jacobian.

    Levels are followed by eigenvector overlap with those at the seed, so
    the search stays on the same physical transition. ``bounds`` caps each
    field component (T).
    """
    seed = np.asarray(seed_field, dtype=float)
    if np.any(np.abs(seed) > bounds):
        raise ValueError("seed field lies outside the search bounds")
    ref = diagonalize(sys, seed)
    ref_levels = tuple(levels)

    def current_levels(b):
        perm = track_levels(ref, diagonalize(sys, b))
        return tuple(int(perm[i]) for i in ref_levels)

    def fun(b):
        return sensitivity(sys, b, current_levels(b)).gradient

    def jac(b):
        return sensitivity(sys, b, current_levels(b)).curvature

    g0 = fun(seed)
    if np.linalg.norm(g0) == 0.0:
        best, nfev = seed, 0
    else:
        res = least_squares(fun, seed, jac=jac, bounds=(-bounds, bounds), method="trf",
                            xtol=tol, ftol=tol, gtol=tol, max_nfev=max_iter, x_scale="jac")
        best, nfev = res.x, res.nfev
        if np.any(np.abs(best) >= bounds * (1 - 1e-9)) and np.linalg.norm(res.fun) > np.linalg.norm(g0):
            raise RuntimeError("ZEFOZ search diverged to the bounds")
    s = sensitivity(sys, best, current_levels(best))
    return ZefozResult(best, s.gradient_norm, np.linalg.eigvalsh(s.curvature), s.frequency,
                       s.levels, nfev, seed)


def random_directions(n: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sensitivity_grid(sys: SpinSystem, fields: np.ndarray, levels: tuple[int, int]) -> list[TransitionSensitivity]:
    return [sensitivity(sys, b, levels) for b in np.asarray(fields, dtype=float)]


def grid_csv(results: Sequence[TransitionSensitivity], comments: Sequence[str] = ()) -> str:
    rows = [(*(f"{x:.9g}" for x in r.field), f"{r.frequency:.9f}", f"{r.gradient_norm:.9g}")
            for r in results]
    return csv_text(["Bx_T", "By_T", "Bz_T", "f_MHz", "grad_MHz_per_T"], rows, comments)
