"""Spin-5/2 operator algebra, effective Hamiltonian assembly and eigen-solves.

The effective nuclear-spin Hamiltonian of one electronic state is

    H = B . M . I + I . Q . I

with ``M`` the effective Zeeman tensor (MHz/T), ``Q`` the effective
quadrupole tensor (MHz) and ``I`` the spin-5/2 operators in the basis
m = +5/2 ... -5/2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

SPIN = 2.5
DIM = 6
DEGENERACY_TOL = 1e-6  # MHz
SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class SpinOperators:
    ix: np.ndarray
    iy: np.ndarray
    iz: np.ndarray

    @property
    def stack(self) -> np.ndarray:
        """(3, 6, 6) array ordered x, y, z."""
        return np.array([self.ix, self.iy, self.iz])


@lru_cache(maxsize=None)
def build_spin_operators() -> SpinOperators:
    """Return Ix, Iy, Iz for I = 5/2 in the m = +5/2 ... -5/2 basis."""
    off = np.array([np.sqrt(5), 2 * np.sqrt(2), 3.0, 2 * np.sqrt(2), np.sqrt(5)])
    ix = (np.diag(off, 1) + np.diag(off, -1)).astype(complex) / 2
    iy = 0.5j * (np.diag(-off, 1) + np.diag(off, -1))
    iz = np.diag([5, 3, 1, -1, -3, -5]).astype(complex) / 2
    for op in (ix, iy, iz):
        op.setflags(write=False)
    return SpinOperators(ix, iy, iz)


_SPIN_STACK = build_spin_operators().stack
_SPIN_STACK.setflags(write=False)
# I_a I_b products, used to assemble I.Q.I as a tensor contraction
_SPIN_PAIRS = np.einsum("aij,bjk->abik", _SPIN_STACK, _SPIN_STACK)
_SPIN_PAIRS.setflags(write=False)


def _rz(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_rotation(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Rotation matrix Rz(alpha) . Ry(beta) . Rz(gamma), angles in radians."""
    angles = np.array([alpha, beta, gamma], dtype=float)
    if not np.all(np.isfinite(angles)):
        raise ValueError(f"Euler angles must be finite, got {angles}")
    return _rz(angles[0]) @ _ry(angles[1]) @ _rz(angles[2])


def build_tensor(principal: Sequence[float], euler: Sequence[float]) -> np.ndarray:
    """Rotate ``diag(principal)`` into the lab frame: R . diag . R^T."""
    p = np.asarray(principal, dtype=float)
    if p.shape != (3,):
        raise ValueError("principal values must be a 3-vector")
    r = euler_rotation(*euler)
    t = r @ np.diag(p) @ r.T
    return 0.5 * (t + t.T)


def quadrupole_tensor(e: float, d: float, euler: Sequence[float]) -> np.ndarray:
    """Q tensor from its principal form diag(-E, E, D)."""
    return build_tensor((-e, e, d), euler)


def zeeman_tensor(g: Sequence[float], euler: Sequence[float]) -> np.ndarray:
    return build_tensor(g, euler)


def _check_symmetric(t: np.ndarray, name: str) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got shape {t.shape}")
    scale = max(1.0, float(np.abs(t).max()))
    if np.abs(t - t.T).max() > SYMMETRY_TOL * scale:
        raise ValueError(f"{name} tensor is not symmetric")
    return t


@dataclass(frozen=True)
class SpinSystem:
    """Zeeman tensor ``m`` (MHz/T) and quadrupole tensor ``q`` (MHz) of one subsite."""

    m: np.ndarray
    q: np.ndarray
    label: str = ""

    def __post_init__(self):
        m = _check_symmetric(self.m, "M").copy()
        q = _check_symmetric(self.q, "Q").copy()
        m.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "q", q)

    def rotated(self, r: np.ndarray, label: str | None = None) -> "SpinSystem":
        """Similarity transform of both tensors by the orthogonal matrix ``r``."""
        return SpinSystem(r @ self.m @ r.T, r @ self.q @ r.T,
                          self.label if label is None else label)


@dataclass(frozen=True)
class Hamiltonian:
    h: np.ndarray
    field: np.ndarray
    provenance: str = ""


def quadrupole_matrix(q: np.ndarray) -> np.ndarray:
    """I . Q . I as a 6x6 matrix."""
    return np.einsum("ab,abij->ij", q, _SPIN_PAIRS)


def hamiltonian_matrices(m: np.ndarray, q: np.ndarray, fields: np.ndarray) -> np.ndarray:
    """Batched Hamiltonians for an (n, 3) array of fields, shape (n, 6, 6)."""
    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    coupling = fields @ m  # (n, 3): (B.M)_a
    zeeman = (coupling @ _SPIN_STACK.reshape(3, DIM * DIM)).reshape(-1, DIM, DIM)
    return zeeman + quadrupole_matrix(q)


def build_hamiltonian(sys: SpinSystem, field: Sequence[float]) -> Hamiltonian:
    b = np.asarray(field, dtype=float)
    if b.shape != (3,) or not np.all(np.isfinite(b)):
        raise ValueError(f"field must be a finite 3-vector, got {field!r}")
    h = hamiltonian_matrices(sys.m, sys.q, b[None, :])[0]
    h = 0.5 * (h + h.conj().T)
    h.setflags(write=False)
    return Hamiltonian(h, b.copy(), sys.label)


@dataclass(frozen=True)
class LevelDiagram:
    """Ascending energies (MHz) and matching eigenvectors (columns)."""

    energies: np.ndarray
    vectors: np.ndarray
    field: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def relative_energies(self) -> np.ndarray:
        """Energies with the manifold mean removed, for display."""
        return self.energies - self.energies.mean()

    def degenerate_pairs(self, tol: float = DEGENERACY_TOL) -> list[tuple[int, int]]:
        gaps = np.diff(self.energies)
        return [(i, i + 1) for i, gap in enumerate(gaps) if gap < tol]


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    # make the largest-magnitude component of each column real and positive
    idx = np.argmax(np.abs(vectors), axis=0)
    lead = vectors[idx, np.arange(vectors.shape[1])]
    return vectors * (np.abs(lead) / lead)[None, :]


def eigendecompose(h: Hamiltonian | np.ndarray) -> LevelDiagram:
    if isinstance(h, Hamiltonian):
        mat, b = h.h, h.field
    else:
        mat, b = np.asarray(h), np.zeros(3)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("Hamiltonian must be a square matrix")
    scale = max(1.0, float(np.abs(mat).max()))
    if np.abs(mat - mat.conj().T).max() > 1e-12 * scale:
        raise ValueError("Hamiltonian is not Hermitian")
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    v = _fix_phases(v)
    w.setflags(write=False)
    v.setflags(write=False)
    return LevelDiagram(w, v, np.array(b, dtype=float))


def diagonalize(sys: SpinSystem, field: Sequence[float]) -> LevelDiagram:
    return eigendecompose(build_hamiltonian(sys, field))


def transition_frequencies(d: LevelDiagram, pairs: Sequence[tuple[int, int]]) -> list[float]:
    n = len(d.energies)
    out = []
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise IndexError(f"level pair ({i}, {j}) out of range 0..{n - 1}")
        out.append(float(abs(d.energies[j] - d.energies[i])))
    return out


# Level labelling

@dataclass(frozen=True)
class DoubletBasis:
    """Zero-field doublet subspaces of a quadrupole tensor.

    ``projectors[k]`` projects onto the doublet whose dominant |m| is
    ``abs_m[k]``, measured along the principal axis of the traceless part of
    Q with the largest-magnitude value; ``k`` indexes doublets in ascending
    zero-field energy.
    """

    projectors: np.ndarray  # (3, 6, 6)
    abs_m: tuple[float, float, float]
    axis_operator: np.ndarray  # n . I along the principal axis

    def doublet_index(self, abs_m: float) -> int:
        return self.abs_m.index(abs_m)


def doublet_basis(q: np.ndarray) -> DoubletBasis:
    q = _check_symmetric(q, "Q")
    w, v = np.linalg.eigh(quadrupole_matrix(q))
    pw, pv = np.linalg.eigh(q)
    # only the traceless part splits the levels; its largest principal value sets the axis
    axis = pv[:, np.argmax(np.abs(pw - pw.mean()))]
    i_axis = np.einsum("a,aij->ij", axis, _SPIN_STACK)
    i_axis_sq = i_axis @ i_axis
    projectors, m2 = [], []
    for k in range(3):
        cols = v[:, 2 * k:2 * k + 2]
        projectors.append(cols @ cols.conj().T)
        m2.append(float(np.real(np.trace(cols.conj().T @ i_axis_sq @ cols))) / 2)
    rank = np.argsort(m2)
    abs_m = [0.0, 0.0, 0.0]
    for r, k in enumerate(rank):
        abs_m[k] = (0.5, 1.5, 2.5)[r]
    return DoubletBasis(np.array(projectors), tuple(abs_m), i_axis)


@dataclass(frozen=True)
class LevelLabel:
    abs_m: float
    sign: int  # +1 / -1 from <n.I>, 0 when undetermined

    def __str__(self) -> str:
        num = int(round(2 * self.abs_m))
        if self.sign == 0:
            return f"|±{num}/2>"
        return f"|{'+' if self.sign > 0 else '-'}{num}/2>"


def label_levels(d: LevelDiagram, basis: DoubletBasis) -> list[LevelLabel]:
    """Label each level by its dominant zero-field doublet component.

    Levels are assigned two per doublet by maximizing the total projected
    weight; the sign comes from the expectation of the principal-axis spin.
    """
    v = d.vectors
    weights = np.real(np.einsum("ia,kij,ja->ak", v.conj(), basis.projectors, v))
    cost = -np.repeat(weights, 2, axis=1)  # (level, doublet slot)
    rows, cols = linear_sum_assignment(cost)
    labels = [None] * len(rows)
    for level, slot in zip(rows, cols):
        k = slot // 2
        proj = float(np.real(v[:, level].conj() @ basis.axis_operator @ v[:, level]))
        sign = 0 if abs(proj) < 1e-3 else int(np.sign(proj))
        labels[level] = LevelLabel(basis.abs_m[k], sign)
    return labels


def doublet_levels(d: LevelDiagram, basis: DoubletBasis, abs_m: float) -> tuple[int, int]:
    """Indices (ascending) of the two levels belonging to the |m| doublet."""
    labels = label_levels(d, basis)
    idx = tuple(i for i, lab in enumerate(labels) if lab.abs_m == abs_m)
    if len(idx) != 2:
        raise RuntimeError(f"could not identify doublet |m|={abs_m}")
    return idx


def track_levels(previous: LevelDiagram, current: LevelDiagram) -> np.ndarray:
    """Permutation ``p`` with current level ``p[i]`` continuing previous level ``i``.

    Uses maximal eigenvector overlap so that labels survive avoided crossings.
    """
    overlap = np.abs(previous.vectors.conj().T @ current.vectors) ** 2
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm
