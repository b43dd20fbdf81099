"""Effective-Hamiltonian parameter sets and their key = value file format.

Angles are radians in memory and degrees on disk. A parameter file looks like::

    [excited]
    alpha_M = -79.51    # degrees
    g1 = 9.59           # MHz/T
    ...
    [ground]
    ...
    [axes]
    theta_C2 = 3.20     # degrees
    phi_C2 = 331.76     # degrees
    theta_D1 = 92.8220  # degrees, optional
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import AxisDirection, CrystalFrame, build_frame, c2_rotation
from .spin import SpinSystem, quadrupole_tensor, zeeman_tensor

STATE_KEYS = ("alpha_M", "beta_M", "gamma_M", "g1", "g2", "g3",
              "alpha_Q", "beta_Q", "gamma_Q", "E", "D")
ANGLE_KEYS = frozenset({"alpha_M", "beta_M", "gamma_M", "alpha_Q", "beta_Q", "gamma_Q"})
AXIS_KEYS = ("theta_C2", "phi_C2")
FRAME_KEYS = ("theta_D1", "phi_D1", "theta_D2", "phi_D2")
STATES = ("excited", "ground")
UNITS = {k: ("degrees" if k in ANGLE_KEYS else "MHz/T" if k.startswith("g") else "MHz")
         for k in STATE_KEYS}


@dataclass(frozen=True)
class StateParams:
    """The 11 tensor parameters of one electronic state (angles in radians)."""

    alpha_M: float
    beta_M: float
    gamma_M: float
    g1: float
    g2: float
    g3: float
    alpha_Q: float
    beta_Q: float
    gamma_Q: float
    E: float
    D: float

    @classmethod
    def from_array(cls, a) -> "StateParams":
        return cls(*(float(x) for x in a))

    @classmethod
    def from_degrees(cls, **kw) -> "StateParams":
        return cls(**{k: np.radians(v) if k in ANGLE_KEYS else float(v) for k, v in kw.items()})

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in STATE_KEYS])

    def to_degrees(self) -> dict[str, float]:
        return {k: float(np.degrees(v)) if k in ANGLE_KEYS else float(v)
                for k, v in zip(STATE_KEYS, self.to_array())}

    @property
    def m_tensor(self) -> np.ndarray:
        return zeeman_tensor((self.g1, self.g2, self.g3), (self.alpha_M, self.beta_M, self.gamma_M))

    @property
    def q_tensor(self) -> np.ndarray:
        return quadrupole_tensor(self.E, self.D, (self.alpha_Q, self.beta_Q, self.gamma_Q))

    def system(self, label: str = "") -> SpinSystem:
        return SpinSystem(self.m_tensor, self.q_tensor, label)


@dataclass(frozen=True)
class ParamVector:
    """Joint parameter set: up to two states plus the shared C2 direction."""

    excited: StateParams | None
    ground: StateParams | None
    theta_C2: float
    phi_C2: float
    frame_axes: tuple[float, float, float, float] | None = None  # D1, D2 (theta, phi), radians

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(s for s in STATES if getattr(self, s) is not None)

    @property
    def axis(self) -> AxisDirection:
        return AxisDirection(self.theta_C2, self.phi_C2)

    def state(self, name: str) -> StateParams:
        p = getattr(self, name)
        if p is None:
            raise KeyError(f"parameter set has no {name} state")
        return p

    def system(self, name: str, subsite: int = 1) -> SpinSystem:
        sys = self.state(name).system(label=f"{name}/1")
        if subsite == 1:
            return sys
        if subsite == 2:
            return sys.rotated(c2_rotation(self.axis), label=f"{name}/2")
        raise ValueError("subsite must be 1 or 2")

    def frame(self) -> CrystalFrame:
        if self.frame_axes is None:
            raise ValueError("parameter set carries no D1/D2 directions")
        t1, p1, t2, p2 = self.frame_axes
        return build_frame(self.axis, AxisDirection(t1, p1), AxisDirection(t2, p2))

    def to_array(self) -> np.ndarray:
        parts = [self.state(s).to_array() for s in self.states]
        return np.concatenate(parts + [np.array([self.theta_C2, self.phi_C2])])

    def with_array(self, a) -> "ParamVector":
        """Same layout as ``self`` with values taken from the flat array ``a``."""
        a = np.asarray(a, dtype=float)
        if a.shape != (len(self.states) * 11 + 2,):
            raise ValueError(f"expected {len(self.states) * 11 + 2} values, got {a.shape}")
        kw = {s: None for s in STATES}
        for i, s in enumerate(self.states):
            kw[s] = StateParams.from_array(a[11 * i:11 * (i + 1)])
        return replace(self, **kw, theta_C2=float(a[-2]), phi_C2=float(a[-1]))

    def names(self) -> list[str]:
        return [f"{s}.{k}" for s in self.states for k in STATE_KEYS] + list(AXIS_KEYS)


def table1() -> ParamVector:
    """Fitted 151Eu:Y2SiO5 site-1 parameters (lab frame)."""
    excited = StateParams.from_degrees(
        alpha_M=-79.51, beta_M=89.65, gamma_M=-68.670, g1=9.59, g2=9.444, g3=10.189,
        alpha_Q=35.4201, beta_Q=-30.44, gamma_Q=1.3725, E=5.8713, D=27.18611)
    ground = StateParams.from_degrees(
        alpha_M=-153.2297, beta_M=-68.3, gamma_M=10.113, g1=11.802, g2=4.7502, g3=-5.827,
        alpha_Q=-171.681, beta_Q=-51.16, gamma_Q=49.4, E=-2.7359, D=-12.3819)
    frame = tuple(np.radians([92.8220, 0.0218, 88.4860, 89.9471]))
    return ParamVector(excited, ground, np.radians(3.20), np.radians(331.76), frame)


def format_params(p: ParamVector) -> str:
    lines = []
    for s in p.states:
        lines.append(f"[{s}]")
        for k, v in p.state(s).to_degrees().items():
            lines.append(f"{k} = {v!r}  # {UNITS[k]}")
        lines.append("")
    lines.append("[axes]")
    axes = dict(zip(AXIS_KEYS, (p.theta_C2, p.phi_C2)))
    if p.frame_axes is not None:
        axes.update(zip(FRAME_KEYS, p.frame_axes))
    for k, v in axes.items():
        lines.append(f"{k} = {float(np.degrees(v))!r}  # degrees")
    return "\n".join(lines) + "\n"


def write_params(p: ParamVector, path) -> None:
    Path(path).write_text(format_params(p), encoding="utf-8")


def parse_params(text: str) -> ParamVector:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string(text)
    states = {}
    for s in STATES:
        if not cp.has_section(s):
            states[s] = None
            continue
        sec = cp[s]
        missing = [k for k in STATE_KEYS if k not in sec]
        extra = [k for k in sec if k not in STATE_KEYS]
        if missing or extra:
            raise ValueError(f"[{s}] missing keys {missing}, unknown keys {extra}")
        states[s] = StateParams.from_degrees(**{k: float(sec[k]) for k in STATE_KEYS})
    if not any(states.values()):
        raise ValueError("parameter file defines neither [excited] nor [ground]")
    if not cp.has_section("axes"):
        raise ValueError("parameter file lacks an [axes] section")
    ax = cp["axes"]
    unknown = [k for k in ax if k not in AXIS_KEYS + FRAME_KEYS]
    if unknown or any(k not in ax for k in AXIS_KEYS):
        raise ValueError(f"[axes] needs theta_C2 and phi_C2; unknown keys {unknown}")
    frame = None
    if any(k in ax for k in FRAME_KEYS):
        if not all(k in ax for k in FRAME_KEYS):
            raise ValueError("[axes] must give all of theta_D1, phi_D1, theta_D2, phi_D2 or none")
        frame = tuple(float(np.radians(float(ax[k]))) for k in FRAME_KEYS)
    return ParamVector(states["excited"], states["ground"],
                       float(np.radians(float(ax["theta_C2"]))),
                       float(np.radians(float(ax["phi_C2"]))), frame)


def read_params(path) -> ParamVector:
    return parse_params(Path(path).read_text(encoding="utf-8"))


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def params_hash(p: ParamVector) -> str:
    return hashlib.sha256(format_params(p).encode()).hexdigest()[:16]


__all__ = ["StateParams", "ParamVector", "table1", "read_params", "write_params",
           "parse_params", "format_params", "file_hash", "params_hash",
           "STATE_KEYS", "ANGLE_KEYS"]
