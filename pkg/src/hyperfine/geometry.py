"""C2 pi-rotation, subsite generation, lab/crystal frames and the spherical field path."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spin import SpinSystem

MIN_SEPARATION_DEG = 1.0


@dataclass(frozen=True)
class AxisDirection:
    """Direction given by polar angle ``theta`` from lab z and azimuth ``phi`` (radians)."""

    theta: float
    phi: float

    @classmethod
    def from_degrees(cls, theta: float, phi: float) -> "AxisDirection":
        return cls(np.radians(theta), np.radians(phi))

    @classmethod
    def from_vector(cls, v) -> "AxisDirection":
        v = np.asarray(v, dtype=float)
        v = v / np.linalg.norm(v)
        return cls(float(np.arccos(np.clip(v[2], -1, 1))), float(np.arctan2(v[1], v[0])))

    @property
    def vector(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.array([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])


def skew_operator(axis: AxisDirection) -> np.ndarray:
    """Cross-product matrix J with J @ v = n x v."""
    nx, ny, nz = axis.vector
    return np.array([[0.0, -nz, ny], [nz, 0.0, -nx], [-ny, nx, 0.0]])


def c2_rotation(axis: AxisDirection) -> np.ndarray:
    """Rotation by pi about ``axis``: I + 2 J^2 = 2 n n^T - I."""
    n = axis.vector
    return 2.0 * np.outer(n, n) - np.eye(3)


def subsite_partner(sys: SpinSystem, axis: AxisDirection) -> SpinSystem:
    """The magnetically inequivalent partner obtained by C2 conjugation of M and Q."""
    r = c2_rotation(axis)
    label = f"{sys.label}*" if not sys.label.endswith("*") else sys.label[:-1]
    return sys.rotated(r, label=label)


@dataclass(frozen=True)
class FieldPath:
    b0: float
    t: np.ndarray
    points: np.ndarray  # (n, 3), Tesla

    def __len__(self) -> int:
        return len(self.t)


def spherical_field(b0: float, t) -> np.ndarray:
    """Field on the spiral B = B0 (sqrt(1-t^2) cos 6 pi t, sqrt(1-t^2) sin 6 pi t, t)."""
    t = np.asarray(t, dtype=float)
    r = np.sqrt(np.clip(1.0 - t**2, 0.0, None))
    return b0 * np.stack([r * np.cos(6 * np.pi * t), r * np.sin(6 * np.pi * t), t], axis=-1)


def field_path(b0: float, n: int = 201) -> FieldPath:
    if n < 2:
        raise ValueError("a field path needs at least 2 points")
    t = np.linspace(-1.0, 1.0, n)
    return FieldPath(float(b0), t, spherical_field(b0, t))


def _angle_deg(u: np.ndarray, v: np.ndarray) -> float:
    c = abs(float(u @ v)) / (np.linalg.norm(u) * np.linalg.norm(v))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass(frozen=True)
class CrystalFrame:
    """Orthonormal crystal axes [D1, D2, b] expressed in lab coordinates.

    Vectors convert with ``A = [d1 d2 b]`` (axes as columns): crystal = A @ lab.
    The transposed convention fails the reference lab/crystal vector pairs.
    """

    d1: np.ndarray
    d2: np.ndarray
    b: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.column_stack([self.d1, self.d2, self.b])

    def to_crystal(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)

    def to_lab(self, v) -> np.ndarray:
        return self.matrix.T @ np.asarray(v, dtype=float)

    def tensor_to_crystal(self, t) -> np.ndarray:
        a = self.matrix
        return a @ np.asarray(t, dtype=float) @ a.T

    def tensor_to_lab(self, t) -> np.ndarray:
        a = self.matrix
        return a.T @ np.asarray(t, dtype=float) @ a

    def system_to_crystal(self, sys: SpinSystem) -> SpinSystem:
        return sys.rotated(self.matrix)


def build_frame(c2: AxisDirection, d1: AxisDirection, d2: AxisDirection) -> CrystalFrame:
    """Gram-Schmidt in priority order b, D1, D2."""
    b = c2.vector
    u1, u2 = d1.vector, d2.vector
    for name, (x, y) in {"b/D1": (b, u1), "b/D2": (b, u2), "D1/D2": (u1, u2)}.items():
        if _angle_deg(x, y) < MIN_SEPARATION_DEG:
            raise ValueError(f"axes {name} are closer than {MIN_SEPARATION_DEG} degree")
    e1 = u1 - (u1 @ b) * b
    e1 /= np.linalg.norm(e1)
    e2 = u2 - (u2 @ b) * b - (u2 @ e1) * e1
    norm = np.linalg.norm(e2)
    if norm < np.sin(np.radians(MIN_SEPARATION_DEG)):
        raise ValueError("D2 lies in the span of b and D1")
    e2 /= norm
    if np.cross(e1, e2) @ b < 0:
        raise ValueError("axes [D1, D2, b] form a left-handed triad")
    return CrystalFrame(e1, e2, b.copy())
