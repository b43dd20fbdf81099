"""Simulated-annealing recovery of effective-Hamiltonian parameters from peak sweeps.

The objective is the total absolute error (MHz) between measured peaks and
the label-free eight-peak prediction at every field point of every dataset.
Metropolis decisions use the objective divided by the number of measured
peaks, so temperatures are in MHz per peak.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq, least_squares, linear_sum_assignment

from .geometry import AxisDirection, c2_rotation
from .io import atomic_write
from .params import ANGLE_KEYS, STATE_KEYS, STATES, ParamVector, StateParams, format_params, parse_params
from .spectra import DEFAULT_PENALTY, Manifold, SweepDataset, manifold
from .spin import (doublet_basis, euler_rotation, hamiltonian_matrices, quadrupole_matrix,
                   quadrupole_tensor)

log = logging.getLogger(__name__)

N_STATE = len(STATE_KEYS)
_ANGLE_MASK = np.array([k in ANGLE_KEYS for k in STATE_KEYS])
_G_MASK = np.array([k in ("g1", "g2", "g3") for k in STATE_KEYS])


# Objective

@dataclass
class _Prepared:
    man: Manifold
    rows: np.ndarray  # indices into the state's unique field array
    full_rows: np.ndarray  # positions (within rows) with exactly 8 measured peaks
    full_meas: np.ndarray  # (k, 8) sorted
    ragged: list[tuple[int, np.ndarray]]  # (position, measured freqs) for other counts


class Objective:
    """Callable total absolute error for a fixed list of sweep datasets."""

    def __init__(self, datasets: Sequence[SweepDataset], penalty: float = DEFAULT_PENALTY):
        if not datasets:
            raise ValueError("objective needs at least one dataset")
        self.datasets = list(datasets)
        self.penalty = float(penalty)
        self.n_peaks = sum(ds.n_peaks for ds in self.datasets)
        if self.n_peaks == 0:
            raise ValueError("datasets contain no peaks")
        self.states = tuple(s for s in STATES if any(ds.manifold.state == s for ds in self.datasets))
        self._fields: dict[str, np.ndarray] = {}
        self._prep: dict[str, list[_Prepared]] = {}
        for s in self.states:
            dss = [ds for ds in self.datasets if ds.manifold.state == s]
            allf = np.concatenate([ds.fields for ds in dss])
            uniq, inv = np.unique(np.round(allf, 15), axis=0, return_inverse=True)
            self._fields[s] = uniq
            inv = np.asarray(inv).ravel()
            prep, start = [], 0
            for ds in dss:
                rows = inv[start:start + len(ds.spectra)]
                start += len(ds.spectra)
                counts = np.array([len(sp) for sp in ds.spectra])
                full = np.flatnonzero(counts == 8)
                meas = (np.array([ds.spectra[i].frequencies for i in full]).reshape(-1, 8)
                        if len(full) else np.zeros((0, 8)))
                ragged = [(i, ds.spectra[i].frequencies) for i in np.flatnonzero(counts != 8)]
                prep.append(_Prepared(ds.manifold, rows, full, np.sort(meas, axis=1), ragged))
            self._prep[s] = prep

    def state_cost(self, state: str, sp: np.ndarray, axis: AxisDirection) -> float:
        """Total absolute error (MHz) of the datasets belonging to ``state``."""
        res, extra = self.state_residuals(state, sp, axis)
        return float(np.abs(res).sum()) + extra

    def state_residuals(self, state: str, sp: np.ndarray, axis: AxisDirection) -> tuple[np.ndarray, float]:
        """Signed prediction minus measurement for every matched peak, plus the unmatched penalty."""
        p = StateParams.from_array(sp)
        m, q = p.m_tensor, p.q_tensor
        r = c2_rotation(axis)
        fields = self._fields[state]
        w1 = np.linalg.eigvalsh(hamiltonian_matrices(m, q, fields))
        w2 = np.linalg.eigvalsh(hamiltonian_matrices(r @ m @ r.T, r @ q @ r.T, fields))
        basis = doublet_basis(q)
        out = []
        extra = 0.0
        for prep in self._prep[state]:
            k_lo, k_hi = basis.doublet_index(prep.man.lower_m), basis.doublet_index(prep.man.upper_m)
            pred = []
            for w in (w1, w2):
                lo = w[prep.rows, 2 * k_lo:2 * k_lo + 2]
                hi = w[prep.rows, 2 * k_hi:2 * k_hi + 2]
                pred.append(np.abs(hi[:, None, :] - lo[:, :, None]).reshape(len(prep.rows), 4))
            pred = np.sort(np.concatenate(pred, axis=1), axis=1)
            if len(prep.full_rows):
                out.append((pred[prep.full_rows] - prep.full_meas).ravel())
            for i, meas in prep.ragged:
                d, pen = _match_residuals(meas, pred[i], self.penalty)
                out.append(d)
                extra += pen
        return (np.concatenate(out) if out else np.zeros(0)), extra

    def __call__(self, p: ParamVector) -> float:
        return sum(self.state_cost(s, p.state(s).to_array(), p.axis) for s in self.states)

    def residuals(self, p: ParamVector) -> np.ndarray:
        """Per-peak absolute residuals (MHz) for every matched measured peak."""
        from .spectra import assign_frequencies, sweep_frequencies
        out = []
        for ds in self.datasets:
            sys = p.system(ds.manifold.state)
            pred = sweep_frequencies(sys.m, sys.q, p.axis, ds.fields, ds.manifold)
            for sp, pr in zip(ds.spectra, pred):
                if len(sp):
                    out.append(assign_frequencies(sp.frequencies, pr, self.penalty).residuals)
        return np.concatenate(out) if out else np.zeros(0)


def _match_residuals(meas: np.ndarray, pred: np.ndarray, penalty: float) -> tuple[np.ndarray, float]:
    """Signed residuals of the optimal one-to-one matching and the unmatched penalty."""
    if len(meas) == 0:
        return np.zeros(0), penalty * len(pred)
    c = np.abs(meas[:, None] - pred[None, :])
    r, k = linear_sum_assignment(c)
    return pred[k] - meas[r], penalty * abs(len(meas) - len(pred))


# Stage 1: E and D from zero-field splittings

def zero_field_splittings(datasets: Sequence[SweepDataset]) -> dict[str, dict[Manifold, float]]:
    """Mean peak centroid per manifold; first-order Zeeman shifts cancel in the mean."""
    out: dict[str, dict[Manifold, float]] = {}
    for ds in datasets:
        cents = [sp.frequencies.mean() for sp in ds.spectra if len(sp) == 8]
        if not cents:
            cents = [sp.frequencies.mean() for sp in ds.spectra if len(sp)]
        out.setdefault(ds.manifold.state, {})[ds.manifold] = float(np.mean(cents))
    return out


def _zero_field_pair(e: float, d: float) -> tuple[float, float]:
    w = np.linalg.eigvalsh(quadrupole_matrix(quadrupole_tensor(e, d, (0, 0, 0))))
    basis = doublet_basis(quadrupole_tensor(e, d, (0, 0, 0)))
    lev = {basis.abs_m[k]: w[2 * k] for k in range(3)}
    return abs(lev[1.5] - lev[0.5]), abs(lev[2.5] - lev[1.5])


def fit_quadrupole(s12: float | None, s35: float | None) -> tuple[float, float]:
    """(E, D) with D > 0 reproducing the two zero-field splittings.

    The asymmetry E/D in [0, 1/3) fixes the splitting ratio; D then sets the
    scale. With one splitting missing an axial tensor (E = 0) is assumed.
    """
    if s12 is None and s35 is None:
        raise ValueError("need at least one zero-field splitting")
    if s12 is None or s35 is None:
        a, b = _zero_field_pair(0.0, 1.0)
        return 0.0, (s12 / a if s12 is not None else s35 / b)
    target = s12 / s35

    def ratio(eta):
        a, b = _zero_field_pair(eta, 1.0)
        return a / b - target

    lo, hi = 0.0, 1 / 3 - 1e-6
    if ratio(lo) >= 0:
        eta = lo
    elif ratio(hi) <= 0:
        eta = hi
    else:
        eta = brentq(ratio, lo, hi, xtol=1e-14)
    a, b = _zero_field_pair(eta, 1.0)
    d = 0.5 * (s12 / a + s35 / b)
    return eta * d, d


# Annealing

@dataclass(frozen=True)
class AnnealSchedule:
    t0: float = 5.0  # MHz per peak
    cooling: float = 0.97
    steps_per_temp: int = 200
    t_min: float = 1e-3
    restarts: int = 3
    seed: int = 0
    step_angle: float = math.radians(5.0)
    step_g: float = 0.5  # MHz/T
    step_quad: float = 0.2  # MHz
    step_axis: float = math.radians(5.0)
    min_step_fraction: float = 1e-3
    adapt: bool = True
    target_acceptance: float = 0.35
    block_fraction: float = 0.25  # share of proposals moving a whole state at once
    rotation_moves: bool = True
    polish: bool = True  # least-squares refinement of each restart's best vector
    axis_scan: int = 400  # C2 directions tried with everything else fixed before polishing
    axis_candidates: int = 4  # distinct scanned axes that are polished besides the annealed one

    def __post_init__(self):
        if not (self.t0 > self.t_min > 0):
            raise ValueError("need t0 > t_min > 0")
        if not 0 < self.cooling < 1:
            raise ValueError("cooling factor must lie in (0, 1)")
        if self.steps_per_temp < 1 or self.restarts < 1:
            raise ValueError("steps_per_temp and restarts must be positive")
        if not 0 <= self.block_fraction <= 1:
            raise ValueError("block_fraction must lie in [0, 1]")
        if self.axis_scan < 0 or self.axis_candidates < 0:
            raise ValueError("axis_scan and axis_candidates must be non-negative")
        for name in ("step_angle", "step_g", "step_quad", "step_axis"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def temperatures(self) -> np.ndarray:
        n = int(math.floor(math.log(self.t_min / self.t0) / math.log(self.cooling))) + 1
        return self.t0 * self.cooling ** np.arange(n)

    def base_steps(self, n_states: int) -> np.ndarray:
        per_state = np.where(_ANGLE_MASK, self.step_angle,
                             np.where(_G_MASK, self.step_g, self.step_quad))
        return np.concatenate([np.tile(per_state, n_states), [self.step_axis, self.step_axis]])


@dataclass
class RestartResult:
    index: int
    seed: int
    best: np.ndarray
    best_cost: float
    iterations: int
    acceptance: list[float]
    best_trace: list[float]
    polished_cost: float | None = None  # objective after polish; best is then the polished vector


@dataclass
class FitResult:
    best: ParamVector
    objective: float  # total MHz
    n_peaks: int
    iterations: int
    seed: int
    schedule: AnnealSchedule
    restarts: list[RestartResult] = field(default_factory=list)
    acceptance: list[float] = field(default_factory=list)
    mode: str = "joint"

    @property
    def mean_khz_per_peak(self) -> float:
        return 1e3 * self.objective / self.n_peaks

    def to_json(self) -> str:
        doc = {
            "schema": "hyperfine.fit/1",
            "objective_MHz": self.objective,
            "mean_kHz_per_peak": self.mean_khz_per_peak,
            "n_peaks": self.n_peaks,
            "iterations": self.iterations,
            "seed": self.seed,
            "mode": self.mode,
            "schedule": asdict(self.schedule),
            "params": format_params(self.best),
            "param_names": self.best.names(),
            "param_values": [float(x) for x in self.best.to_array()],
            "acceptance_trace": self.acceptance,
            "restarts": [
                {"index": r.index, "seed": r.seed, "objective_MHz": r.best_cost,
                 "iterations": r.iterations, "best": [float(x) for x in r.best],
                 "acceptance_trace": r.acceptance, "best_trace": r.best_trace,
                 "polished_MHz": r.polished_cost}
                for r in self.restarts
            ],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        doc = json.loads(text)
        best = parse_params(doc["params"])
        best = best.with_array(doc["param_values"])
        rs = [RestartResult(r["index"], r["seed"], np.array(r["best"]), r["objective_MHz"],
                            r["iterations"], r["acceptance_trace"], r["best_trace"],
                            r.get("polished_MHz"))
              for r in doc["restarts"]]
        return cls(best, doc["objective_MHz"], doc["n_peaks"], doc["iterations"], doc["seed"],
                   AnnealSchedule(**doc["schedule"]), rs, doc["acceptance_trace"], doc["mode"])


def random_params(rng: np.random.Generator, template: ParamVector,
                  quad: dict[str, tuple[float, float]] | None = None,
                  g_range: float = 15.0) -> ParamVector:
    """Random start: uniform angles, uniform g in [-g_range, g_range], random C2 axis.

    ``quad`` supplies (E, D) per state (stage-1 estimates); otherwise E, D are
    drawn uniformly in [-50, 50] MHz.
    """
    parts = []
    for s in template.states:
        a = np.empty(N_STATE)
        a[_ANGLE_MASK] = rng.uniform(-np.pi, np.pi, _ANGLE_MASK.sum())
        a[_G_MASK] = rng.uniform(-g_range, g_range, 3)
        if quad and s in quad:
            a[9:11] = quad[s]
        else:
            a[9:11] = rng.uniform(-50, 50, 2)
        parts.append(a)
    theta = math.acos(rng.uniform(-1, 1))
    phi = rng.uniform(0, 2 * np.pi)
    return template.with_array(np.concatenate(parts + [np.array([theta, phi])]))


class _Annealer:
    """One annealing chain; state is plain data so it can be checkpointed."""

    def __init__(self, objective: Objective, template: ParamVector, schedule: AnnealSchedule,
                 free: np.ndarray, x0: np.ndarray, seed: int, index: int):
        self.obj = objective
        self.template = template
        self.schedule = schedule
        self.free = np.flatnonzero(free)
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.index = index
        self.x = np.array(x0, dtype=float)
        self.steps = schedule.base_steps(len(template.states))
        self.scale = np.ones_like(self.steps)
        self._free_set = set(int(i) for i in self.free)
        self._blocks = [
            np.array([k for k in self.free if N_STATE * i <= k < N_STATE * (i + 1)], dtype=int)
            for i in range(len(template.states))]
        self.costs = self._state_costs(self.x)
        self.best = self.x.copy()
        self.best_cost = sum(self.costs.values())
        self.level = 0
        self.iterations = 0
        self.acceptance: list[float] = []
        self.best_trace: list[float] = []

    def _axis(self, x):
        return AxisDirection(x[-2], x[-1])

    def _state_costs(self, x, only: Sequence[str] | None = None) -> dict[str, float]:
        out = dict(self.costs) if only is not None else {}
        for i, s in enumerate(self.template.states):
            if only is None or s in only:
                out[s] = self.obj.state_cost(s, x[N_STATE * i:N_STATE * (i + 1)], self._axis(x))
        return out

    def _affected(self, k: int) -> list[str]:
        states = self.template.states
        if k >= N_STATE * len(states):
            return list(states)
        return [states[k // N_STATE]]

    def _propose(self, tscale: float):
        """Candidate vector, states whose cost changes, and the coordinate moved (None for block moves)."""
        cand = self.x.copy()
        n_axis = N_STATE * len(self.template.states)
        blocks = [b for b in self._blocks if len(b)]
        if blocks and self.rng.random() < self.schedule.block_fraction:
            i = self.rng.integers(len(blocks))
            b = blocks[i]
            cand[b] += (self.rng.normal(size=len(b)) * self.steps[b] * self.scale[b]
                        * tscale / math.sqrt(len(b)))
            return cand, [self.template.states[b[0] // N_STATE]], None
        k = self.free[self.rng.integers(len(self.free))]
        step = self.steps[k] * self.scale[k] * tscale
        if k >= n_axis:
            # rotate the axis vector itself so moves stay isotropic near the poles
            n0 = AxisDirection(cand[-2], cand[-1]).vector
            n1 = n0 + step * self.rng.normal(size=3)
            a = AxisDirection.from_vector(n1)
            fixed_theta = n_axis not in self.free
            fixed_phi = n_axis + 1 not in self.free
            cand[-2] = cand[-2] if fixed_theta else a.theta
            cand[-1] = cand[-1] if fixed_phi else a.phi
        elif self.schedule.rotation_moves and _ANGLE_MASK[k % N_STATE]:
            # small rotation of the whole principal frame, free of gimbal lock
            base = N_STATE * (k // N_STATE) + (0 if k % N_STATE < 3 else 6)
            trip = [base, base + 1, base + 2]
            if all(i in self._free_set for i in trip):
                w = self.rng.normal(size=3)
                w *= step / np.linalg.norm(w) * abs(self.rng.normal())
                r = _rotvec(w) @ euler_rotation(*cand[trip])
                cand[trip] = _euler_from_matrix(r)
            else:
                cand[k] += self.rng.normal() * step
        else:
            cand[k] += self.rng.normal() * step
        return cand, self._affected(k), k

    def run_level(self) -> None:
        sch = self.schedule
        temps = sch.temperatures
        temp = temps[self.level]
        tscale = max(math.sqrt(temp / sch.t0), sch.min_step_fraction)
        n = self.obj.n_peaks
        current = sum(self.costs.values())
        tried = np.zeros_like(self.steps)
        accepted = np.zeros_like(self.steps)
        n_acc = 0
        for _ in range(sch.steps_per_temp):
            cand, affected, k = self._propose(tscale)
            costs = self._state_costs(cand, only=affected)
            new = sum(costs.values())
            delta = (new - current) / n
            if k is not None:
                tried[k] += 1
            if delta <= 0 or self.rng.random() < math.exp(-delta / temp):
                self.x, self.costs, current = cand, costs, new
                if k is not None:
                    accepted[k] += 1
                n_acc += 1
                if new < self.best_cost:
                    self.best, self.best_cost = cand.copy(), new
            self.iterations += 1
        if sch.adapt:
            rate = np.divide(accepted, tried, out=np.full_like(tried, sch.target_acceptance),
                             where=tried > 0)
            self.scale *= np.exp(rate - sch.target_acceptance)
            np.clip(self.scale, 1e-3, 1e3, out=self.scale)
        self.acceptance.append(n_acc / sch.steps_per_temp)
        self.best_trace.append(self.best_cost)
        self.level += 1

    @property
    def done(self) -> bool:
        return self.level >= len(self.schedule.temperatures)

    def state_dict(self) -> dict:
        return {
            "index": self.index, "seed": self.seed, "level": self.level,
            "iterations": self.iterations, "x": self.x.tolist(), "best": self.best.tolist(),
            "best_cost": self.best_cost, "costs": self.costs, "scale": self.scale.tolist(),
            "acceptance": self.acceptance, "best_trace": self.best_trace,
            "rng": self.rng.bit_generator.state,
        }

    def load_state(self, st: dict) -> None:
        self.level = st["level"]
        self.iterations = st["iterations"]
        self.x = np.array(st["x"])
        self.best = np.array(st["best"])
        self.best_cost = st["best_cost"]
        self.costs = dict(st["costs"])
        self.scale = np.array(st["scale"])
        self.acceptance = list(st["acceptance"])
        self.best_trace = list(st["best_trace"])
        self.rng.bit_generator.state = st["rng"]

    def result(self) -> RestartResult:
        return RestartResult(self.index, self.seed, self.best.copy(), self.best_cost,
                             self.iterations, list(self.acceptance), list(self.best_trace))


def _checkpoint_path(directory, index: int) -> Path:
    return Path(directory) / f"anneal_restart{index}.json"


def _run_chain(objective: Objective, template: ParamVector, schedule: AnnealSchedule,
               free: np.ndarray, x0: np.ndarray, seed: int, index: int,
               checkpoint_dir=None, checkpoint_every: int = 10,
               max_levels: int | None = None) -> RestartResult:
    chain = _Annealer(objective, template, schedule, free, x0, seed, index)
    if checkpoint_dir is not None:
        path = _checkpoint_path(checkpoint_dir, index)
        if path.exists():
            chain.load_state(json.loads(path.read_text()))
            log.info("restart %d resumed at level %d", index, chain.level)
    ran = 0
    while not chain.done and (max_levels is None or ran < max_levels):
        chain.run_level()
        ran += 1
        if checkpoint_dir is not None and (chain.level % checkpoint_every == 0 or chain.done):
            atomic_write(_checkpoint_path(checkpoint_dir, index), json.dumps(chain.state_dict()))
        if chain.level % 20 == 0:
            log.debug("restart %d level %d T=%.4g best=%.4g kHz/peak", index, chain.level,
                      schedule.temperatures[chain.level - 1],
                      1e3 * chain.best_cost / objective.n_peaks)
    if checkpoint_dir is not None and not chain.done:
        atomic_write(_checkpoint_path(checkpoint_dir, index), json.dumps(chain.state_dict()))
    return chain.result()


def _hemisphere(n: int) -> np.ndarray:
    """Near-uniform unit vectors with z > 0 (Fibonacci lattice)."""
    k = np.arange(n) + 0.5
    z = 1 - k / n
    phi = np.pi * (1 + math.sqrt(5)) * k
    r = np.sqrt(1 - z**2)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def axis_candidates(objective: Objective, template: ParamVector, x: np.ndarray,
                    n_scan: int = 400, keep: int = 4, min_sep_deg: float = 15.0) -> list[np.ndarray]:
    """Copies of ``x`` with the C2 axis moved to the best of ``n_scan`` directions.

    The state parameters stay fixed during the scan. A wrong axis is the usual
    trap for annealing: subsite-1 tensors can be right while the partner is
    wrong. Returned axes are at least ``min_sep_deg`` apart (n and -n equal).
    """
    if n_scan == 0 or keep == 0:
        return []
    x = np.asarray(x, dtype=float)
    dirs = _hemisphere(n_scan)
    cands = []
    for u in dirs:
        a = AxisDirection.from_vector(u)
        y = x.copy()
        y[-2], y[-1] = a.theta, a.phi
        cands.append(y)
    costs = [objective(template.with_array(y)) for y in cands]
    cos_min = math.cos(math.radians(min_sep_deg))
    chosen: list[int] = []
    for i in np.argsort(costs, kind="stable"):
        if all(abs(dirs[i] @ dirs[j]) < cos_min for j in chosen):
            chosen.append(int(i))
        if len(chosen) == keep:
            break
    return [cands[i] for i in chosen]


def polish(objective: Objective, template: ParamVector, x: np.ndarray, free: np.ndarray,
           max_nfev: int = 200) -> tuple[np.ndarray, float]:
    """Local least-squares refinement of an annealed vector.

    Peak assignments are re-derived at every evaluation. The refined vector is
    kept only if it lowers the absolute-error objective.
    """
    x = np.asarray(x, dtype=float)
    idx = np.flatnonzero(free)
    states = template.states

    def total(v):
        axis = AxisDirection(v[-2], v[-1])
        return sum(objective.state_cost(s, v[N_STATE * i:N_STATE * (i + 1)], axis)
                   for i, s in enumerate(states))

    def fun(y):
        v = x.copy()
        v[idx] = y
        axis = AxisDirection(v[-2], v[-1])
        return np.concatenate([objective.state_residuals(s, v[N_STATE * i:N_STATE * (i + 1)], axis)[0]
                               for i, s in enumerate(states)])

    start = total(x)
    if not len(idx):
        return x, start
    res = least_squares(fun, x[idx], method="trf", max_nfev=max_nfev, x_scale="jac")
    v = x.copy()
    v[idx] = res.x
    cost = total(v)
    if cost < start:
        return v, cost
    return x, start


def free_mask(template: ParamVector, mode: str = "joint", fix: Sequence[str] = ()) -> np.ndarray:
    """Boolean mask of annealed parameters; ``fix`` lists names as in ``ParamVector.names``."""
    names = template.names()
    mask = np.ones(len(names), dtype=bool)
    for f in fix:
        if f not in names:
            raise ValueError(f"unknown parameter {f!r}")
        mask[names.index(f)] = False
    if mode not in ("joint", "sequential"):
        raise ValueError("mode must be 'joint' or 'sequential'")
    return mask


def anneal(datasets: Sequence[SweepDataset], schedule: AnnealSchedule = AnnealSchedule(),
           init: ParamVector | None = None, *, penalty: float = DEFAULT_PENALTY,
           mode: str = "joint", fix: Sequence[str] = (), stage_quadrupole: bool = True,
           checkpoint_dir=None, workers: int = 1, max_levels: int | None = None) -> FitResult:
    """Anneal the parameters of the states present in ``datasets``.

    With ``init=None`` every restart starts from a random vector whose E, D
    come from the zero-field splittings (stage 1). ``mode="sequential"`` fits
    the ground state together with the C2 axis first and then the excited
    state with the axis held fixed.
    """
    objective = Objective(datasets, penalty)
    states = objective.states
    template = ParamVector(
        *(StateParams.from_array(np.zeros(N_STATE)) if s in states else None for s in STATES),
        0.0, 0.0)
    if init is not None:
        template = replace(template, **{s: init.state(s) for s in states},
                           theta_C2=init.theta_C2, phi_C2=init.phi_C2)
    quad = None
    if stage_quadrupole:
        zf = zero_field_splittings(datasets)
        quad = {}
        for s, d in zf.items():
            s12 = next((v for m, v in d.items() if (m.lower_m, m.upper_m) == (0.5, 1.5)), None)
            s35 = next((v for m, v in d.items() if (m.lower_m, m.upper_m) == (1.5, 2.5)), None)
            quad[s] = fit_quadrupole(s12, s35)
    seeds = np.random.SeedSequence(schedule.seed).spawn(schedule.restarts)
    starts = []
    for ss in seeds:
        rng = np.random.default_rng(ss.spawn(1)[0])
        starts.append(template.to_array() if init is not None else
                      random_params(rng, template, quad).to_array())
    chain_seeds = [int(ss.generate_state(1)[0]) for ss in seeds]

    if mode == "sequential" and len(states) == 2:
        results = []
        for i in range(schedule.restarts):
            mask_g = free_mask(template, "joint", fix) & np.array(
                [not n.startswith("excited.") for n in template.names()])
            obj_g = Objective([d for d in datasets if d.manifold.state == "ground"], penalty)
            sub = replace(template, excited=None)
            idx_g = [k for k, n in enumerate(template.names()) if not n.startswith("excited.")]
            rg = _run_chain(obj_g, sub, schedule, mask_g[idx_g], starts[i][idx_g],
                            chain_seeds[i], i, checkpoint_dir, max_levels=max_levels)
            x = starts[i].copy()
            x[idx_g] = rg.best
            mask_e = free_mask(template, "joint", fix) & np.array(
                [n.startswith("excited.") for n in template.names()])
            results.append(_run_chain(objective, template, schedule, mask_e, x,
                                      chain_seeds[i] + 1, i + schedule.restarts,
                                      checkpoint_dir, max_levels=max_levels))
    else:
        mask = free_mask(template, mode, fix)
        args = [(objective, template, schedule, mask, starts[i], chain_seeds[i], i,
                 checkpoint_dir, 10, max_levels) for i in range(schedule.restarts)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                results = list(ex.map(_run_chain_star, args))
        else:
            results = [_run_chain(*a) for a in args]

    if schedule.polish:
        full = free_mask(template, "joint", fix)
        scan = schedule.axis_scan if full[-2] and full[-1] else 0
        for r in results:
            starts_ = [r.best] + axis_candidates(objective, template, r.best, scan,
                                                 schedule.axis_candidates)
            polished = [polish(objective, template, x, full) for x in starts_]
            x, cost = min(polished, key=lambda t: t[1])
            r.best, r.polished_cost = x, cost
    winner = min(results, key=lambda r: (_final_cost(r), r.index))
    best = template.with_array(winner.best)
    value = objective(best)
    return FitResult(best, value, objective.n_peaks, sum(r.iterations for r in results),
                     schedule.seed, schedule, results, winner.acceptance, mode)


def _final_cost(r: RestartResult) -> float:
    return r.best_cost if r.polished_cost is None else r.polished_cost


def _run_chain_star(args):
    return _run_chain(*args)


def synthetic_datasets(p: ParamVector, b0: float = 0.08, n_points: int = 201,
                       sigma: float = 0.0, rng: np.random.Generator | None = None,
                       manifolds: Sequence[str] | None = None) -> list[SweepDataset]:
    """Noisy eight-peak sweeps predicted by ``p`` (b0 in tesla, sigma in MHz)."""
    from .geometry import field_path
    from .spectra import MANIFOLDS, Peak, PeakSpectrum, sweep_frequencies
    rng = rng if rng is not None else np.random.default_rng(0)
    path = field_path(b0, n_points)
    tags = manifolds if manifolds is not None else [t for t, m in MANIFOLDS.items() if m.state in p.states]
    out = []
    for tag in tags:
        man = manifold(tag)
        sys = p.system(man.state)
        freqs = sweep_frequencies(sys.m, sys.q, p.axis, path.points, man)
        freqs = freqs + sigma * rng.normal(size=freqs.shape)
        spectra = tuple(
            PeakSpectrum(float(t), tuple(v), tuple(Peak(float(f)) for f in np.sort(row)))
            for t, v, row in zip(path.t, path.points, freqs))
        out.append(SweepDataset(man, b0, spectra))
    return out


def sensitivity_report(objective: Objective, p: ParamVector, rel_increase: float = 0.01,
                       floor_khz: float = 0.1) -> dict[str, dict]:
    """Per-parameter steps that raise the objective by a fixed amount.

    The target increase is ``rel_increase`` of the current objective but at
    least ``floor_khz`` per peak. Each direction is bracketed by doubling and
    then bisected, which suits the piecewise-linear absolute-error objective
    better than a curvature estimate. These are not statistical uncertainties.
    """
    x0 = p.to_array()
    f0 = objective(p)
    target = max(rel_increase * f0, 1e-3 * floor_khz * objective.n_peaks)

    def rise(k, h):
        x = x0.copy()
        x[k] += h
        return objective(p.with_array(x)) - f0

    out = {}
    for k, name in enumerate(p.names()):
        steps = []
        for sign in (1.0, -1.0):
            lo, hi = 0.0, 1e-6
            while rise(k, sign * hi) < target and hi < 1e3:
                lo, hi = hi, 2 * hi
            if rise(k, sign * hi) < target:
                steps.append(math.inf)
                continue
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if rise(k, sign * mid) < target:
                    lo = mid
                else:
                    hi = mid
            steps.append(hi)
        out[name] = {"step_plus": steps[0], "step_minus": steps[1], "increase_MHz": target}
    return out


# Symmetry classes

def _euler_from_matrix(r: np.ndarray) -> np.ndarray:
    """ZYZ angles (alpha, beta, gamma) with r = Rz(a) Ry(b) Rz(g), beta in [0, pi]."""
    beta = math.acos(float(np.clip(r[2, 2], -1.0, 1.0)))
    if abs(math.sin(beta)) < 1e-12:
        alpha = math.atan2(r[1, 0], r[0, 0])
        return np.array([alpha, beta, 0.0])
    return np.array([math.atan2(r[1, 2], r[0, 2]), beta, math.atan2(r[2, 1], -r[2, 0])])


def _rotvec(w: np.ndarray) -> np.ndarray:
    """Rotation matrix for the rotation vector ``w`` (Rodrigues)."""
    theta = float(np.linalg.norm(w))
    if theta == 0.0:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(theta) * kx + (1 - math.cos(theta)) * kx @ kx


def _proper_frame(vecs: np.ndarray) -> np.ndarray:
    v = vecs.copy()
    for j in range(2):
        if v[np.argmax(np.abs(v[:, j])), j] < 0:
            v[:, j] *= -1
    if np.linalg.det(v) < 0:
        v[:, 2] *= -1
    return v


def canonical_state(sp: StateParams, flip_m: bool = True) -> StateParams:
    """Re-derive the 11 parameters from the tensors with a fixed convention.

    M: principal values ascending, overall sign chosen so the trace is
    non-negative (M and -M give identical spectra). Q: the principal pair
    summing to zero defines E >= 0, the remaining value is D (tensor kept).
    """
    m = sp.m_tensor
    if flip_m and np.trace(m) < 0:
        m = -m
    return _state_from_tensors(m, sp.q_tensor)


def _canonical_axis(theta: float, phi: float) -> tuple[float, float]:
    n = AxisDirection(theta, phi).vector
    if n[2] < 0 or (n[2] == 0 and (n[1] < 0 or (n[1] == 0 and n[0] < 0))):
        n = -n
    a = AxisDirection.from_vector(n)
    return a.theta, a.phi % (2 * np.pi)


def _swap_subsites(p: ParamVector) -> ParamVector:
    r = c2_rotation(p.axis)
    kw = {}
    for s in p.states:
        st = p.state(s)
        kw[s] = _state_from_tensors(r @ st.m_tensor @ r.T, r @ st.q_tensor @ r.T)
    return replace(p, **kw)


def _state_from_tensors(m: np.ndarray, q: np.ndarray) -> StateParams:
    gw, gv = np.linalg.eigh(m)
    ma = _euler_from_matrix(_proper_frame(gv))
    qw, qv = np.linalg.eigh(q)
    pairs = [(abs(qw[i] + qw[j]), i, j) for i, j in ((0, 1), (0, 2), (1, 2))]
    _, i, j = min(pairs)
    kd = 3 - i - j
    lo, hi = (i, j) if qw[i] <= qw[j] else (j, i)
    qa = _euler_from_matrix(_proper_frame(qv[:, [lo, hi, kd]]))
    return StateParams(ma[0], ma[1], ma[2], gw[0], gw[1], gw[2], qa[0], qa[1], qa[2],
                       abs(qw[hi] - qw[lo]) / 2, qw[kd])


def equivalence_classes(p: ParamVector) -> ParamVector:
    """Canonical representative of the spectrum-preserving symmetry class of ``p``.

    Covers Euler-angle redundancy, principal-axis relabelling, the sign of M,
    the direction sign of the C2 axis and the global subsite swap. Two more
    moves leave NMR spectra unchanged but are kept distinct on purpose: the
    sign of Q (it fixes the absolute level order) and swapping the subsite of
    one state only (it decides which excited ion pairs with which ground ion).
    Hole burning tells both apart.
    """
    theta, phi = _canonical_axis(p.theta_C2, p.phi_C2)
    cands = []
    for q in (p, _swap_subsites(p)):
        kw = {s: canonical_state(q.state(s)) for s in q.states}
        cands.append(replace(q, **kw, theta_C2=theta, phi_C2=phi))
    keys = [tuple(np.round(c.to_array(), 9)) for c in cands]
    return cands[0] if keys[0] <= keys[1] else cands[1]


canonicalize = equivalence_classes


def spectra_equivalent(p1: ParamVector, p2: ParamVector, n_probe: int = 20, b0: float = 0.08,
                       tol: float = 1e-6, seed: int = 12345) -> bool:
    """True when both models give the same eight-peak sets on random probe fields."""
    from .spectra import MANIFOLDS, sweep_frequencies
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_probe, 3))
    fields = b0 * v / np.linalg.norm(v, axis=1, keepdims=True)
    for man in MANIFOLDS.values():
        if man.state not in p1.states or man.state not in p2.states:
            continue
        a = p1.system(man.state)
        b = p2.system(man.state)
        fa = sweep_frequencies(a.m, a.q, p1.axis, fields, man)
        fb = sweep_frequencies(b.m, b.q, p2.axis, fields, man)
        if np.abs(fa - fb).max() > tol:
            return False
    return True
