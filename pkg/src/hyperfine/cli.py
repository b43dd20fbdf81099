"""Batch front end: predict | fit | holeburn | zefoz | frame.

Fields are given in gauss and angles in degrees; everything is converted to
tesla and radians internally. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import fitter, holeburn, zefoz
from .geometry import AxisDirection, field_path
from .io import atomic_write, csv_text
from .params import ParamVector, file_hash, format_params, read_params
from .spectra import (MANIFOLDS, DEFAULT_PENALTY, Peak, PeakSpectrum, SweepDataset,
                      format_peak_list, ingest_peaks, manifold, sweep_frequencies)
from .spin import diagonalize, doublet_basis, label_levels

log = logging.getLogger("hyperfine")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
GAUSS = 1e-4


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    params: Path | None = None
    data: list[Path] = field(default_factory=list)
    out: Path = Path("out")
    seed: int = 0
    b0_gauss: float | None = None
    direction: np.ndarray | None = None
    path_points: int = 201
    manifold: str | None = None
    extra: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.params is not None and not self.params.is_file():
            raise ConfigError(f"parameter file {self.params} does not exist")
        for d in self.data:
            if not d.is_file():
                raise ConfigError(f"data file {d} does not exist")
        if self.path_points < 2:
            raise ConfigError("--path-points must be at least 2")
        if self.b0_gauss is not None and self.b0_gauss < 0:
            raise ConfigError("--b0-gauss must be non-negative")
        if self.manifold is not None and self.manifold not in MANIFOLDS:
            raise ConfigError(f"unknown manifold {self.manifold!r}; choose from {sorted(MANIFOLDS)}")
        return self


def _direction(text: str | None) -> np.ndarray | None:
    if text is None:
        return None
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise ConfigError(f"--direction expects x,y,z, got {text!r}") from None
    if v.shape != (3,) or not np.all(np.isfinite(v)) or np.linalg.norm(v) == 0:
        raise ConfigError("--direction must be three finite numbers, not all zero")
    return v / np.linalg.norm(v)


def _load_params(cfg: RunConfig, required: bool = True) -> tuple[ParamVector | None, str]:
    if cfg.params is None:
        if required:
            raise ConfigError("--params is required for this command")
        return None, "none"
    try:
        return read_params(cfg.params), file_hash(cfg.params)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"bad parameter file {cfg.params}: {exc}") from None


def _header(cfg: RunConfig, phash: str, *lines: str) -> list[str]:
    return [f"hyperfine {cfg.command}", f"params_sha256_16={phash}", *lines]


def _safe(tag: str) -> str:
    return tag.replace(":", "_").replace("/", "_")


def _field(cfg: RunConfig, default_gauss: float, default_dir: Sequence[float]) -> np.ndarray:
    b0 = (cfg.b0_gauss if cfg.b0_gauss is not None else default_gauss) * GAUSS
    u = cfg.direction if cfg.direction is not None else np.asarray(default_dir, float)
    return b0 * u / np.linalg.norm(u)


# predict

def cmd_predict(cfg: RunConfig) -> int:
    p, phash = _load_params(cfg)
    tags = [cfg.manifold] if cfg.manifold else [t for t, m in MANIFOLDS.items() if m.state in p.states]
    b0 = (cfg.b0_gauss if cfg.b0_gauss is not None else 800.0) * GAUSS
    if cfg.direction is not None:
        t = np.array([0.0])
        fields = b0 * cfg.direction[None, :]
    else:
        path = field_path(b0, cfg.path_points)
        t, fields = path.t, path.points
    cfg.out.mkdir(parents=True, exist_ok=True)
    summary = []
    for tag in tags:
        man = manifold(tag)
        sys_ = p.system(man.state)
        freqs = sweep_frequencies(sys_.m, sys_.q, p.axis, fields, man)
        spectra = tuple(PeakSpectrum(float(ti), tuple(b), tuple(Peak(float(f)) for f in row))
                        for ti, b, row in zip(t, fields, freqs))
        ds = SweepDataset(man, b0, spectra)
        text = format_peak_list(ds, _header(cfg, phash, "predicted eight-peak spectra (MHz)"))
        atomic_write(cfg.out / f"predicted_{_safe(tag)}.peaks", text)
        summary.append(f"{tag}: {len(spectra)} field points, peaks {freqs.min():.4f}..{freqs.max():.4f} MHz")

    rows = []
    for ti, b in zip(t, fields):
        for state in p.states:
            for subsite in (1, 2):
                sys_ = p.system(state, subsite)
                d = diagonalize(sys_, b)
                labels = label_levels(d, doublet_basis(sys_.q))
                rows.append([f"{ti:.6f}", *(f"{x:.9g}" for x in b), state, subsite,
                             *(f"{e:.6f}" for e in d.energies), *(str(x) for x in labels)])
    head = ["t", "Bx_T", "By_T", "Bz_T", "state", "subsite",
            *(f"E{i}_MHz" for i in range(6)), *(f"label{i}" for i in range(6))]
    atomic_write(cfg.out / "levels.csv",
                 csv_text(head, rows, _header(cfg, phash, "level energies in MHz, fields in T")))
    if np.linalg.norm(fields[0]) == 0:
        for state in p.states:
            d = diagonalize(p.system(state), np.zeros(3))
            labels = label_levels(d, doublet_basis(p.system(state).q))
            summary.append(f"{state} zero-field levels (MHz):")
            for k in range(0, 6, 2):
                summary.append(f"  |±{int(2 * labels[k].abs_m)}/2>  {d.energies[k]:.4f}")
    _emit(cfg, summary)
    return EXIT_OK


# fit

def _load_data(cfg: RunConfig) -> list[SweepDataset]:
    if not cfg.data:
        raise ConfigError("fit needs at least one --data file")
    out, seen = [], {}
    for path in cfg.data:
        try:
            ds = ingest_peaks(path, cfg.extra.get("merge_threshold"))
        except (ValueError, OSError, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: {exc}") from None
        tag = ds.manifold.tag
        if cfg.manifold is not None and tag != cfg.manifold:
            raise DataError(f"{path}: manifold {tag} conflicts with --manifold {cfg.manifold}")
        if tag in seen:
            raise DataError(f"{path}: manifold {tag} already given by {seen[tag]}")
        seen[tag] = path
        out.append(ds)
    return out


def cmd_fit(cfg: RunConfig) -> int:
    datasets = _load_data(cfg)
    init, phash = _load_params(cfg, required=False)
    x = cfg.extra
    try:
        schedule = fitter.AnnealSchedule(
            seed=cfg.seed, restarts=x.get("restarts") or 3,
            **{k: v for k, v in (("t0", x.get("t0")), ("cooling", x.get("cooling")),
                                 ("steps_per_temp", x.get("steps")), ("t_min", x.get("t_min")))
               if v is not None})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.out.mkdir(parents=True, exist_ok=True)
    ckpt = cfg.out / "checkpoints"
    if not x.get("resume"):
        for f in sorted(ckpt.glob("anneal_restart*.json")) if ckpt.exists() else []:
            f.unlink()
    ckpt.mkdir(exist_ok=True)
    result = fitter.anneal(datasets, schedule, init, penalty=x.get("penalty", DEFAULT_PENALTY),
                           mode=x.get("mode", "joint"), checkpoint_dir=ckpt,
                           workers=x.get("workers", 1))
    atomic_write(cfg.out / "fit.json", result.to_json() + "\n")
    atomic_write(cfg.out / "fit.params", format_params(result.best))
    lines = [f"datasets: {', '.join(ds.manifold.tag for ds in datasets)}",
             f"peaks: {result.n_peaks}",
             f"objective: {result.objective:.6f} MHz total",
             f"mean residual: {result.mean_khz_per_peak:.3f} kHz/peak",
             f"iterations: {result.iterations}  seed: {result.seed}  init params: {phash}"]
    _emit(cfg, lines)
    return EXIT_OK


# holeburn

def _parse_burn(text: str) -> tuple[float, float]:
    try:
        g, e = (float(eval_fraction(s)) for s in text.split(","))
    except ValueError:
        raise ConfigError(f"--burn expects two |m| values like 1/2,5/2, got {text!r}") from None
    if g not in (0.5, 1.5, 2.5) or e not in (0.5, 1.5, 2.5):
        raise ConfigError("--burn values must be 1/2, 3/2 or 5/2")
    return g, e


def eval_fraction(s: str) -> float:
    s = s.strip()
    if "/" in s:
        num, den = s.split("/")
        return float(num) / float(den)
    return float(s)


def cmd_holeburn(cfg: RunConfig) -> int:
    p, phash = _load_params(cfg)
    b = _field(cfg, 600.0, (0.6551, 0.6976, -0.2900))
    burn = _parse_burn(cfg.extra.get("burn") or "1/2,5/2")
    swap = bool(cfg.extra.get("swap_excited"))
    window = cfg.extra.get("probe_window") or holeburn.DEFAULT_PROBE_WINDOW
    excited = p.system("excited", 2 if swap else 1)
    spec = holeburn.burn_spectrum(p.system("ground"), excited, b, burn=burn, probe_window=window)
    cfg.out.mkdir(parents=True, exist_ok=True)
    text = spec.to_csv()
    comments = _header(cfg, phash, f"field_T={','.join(f'{x:.9g}' for x in b)}",
                       f"burn |m|g,|m|e={burn[0]},{burn[1]} excited={'C2 partner' if swap else 'as given'}",
                       "offsets in MHz from the central hole")
    atomic_write(cfg.out / "holes.csv", "".join(f"# {c}\n" for c in comments) + text)
    anti = sorted({round(float(o), 3) for o in spec.offsets("anti-hole") if o > 0})
    holes = sorted({round(float(o), 3) for o in spec.offsets("hole") if o > 0})
    far = max(abs(spec.offsets()))
    lines = [f"field: {np.linalg.norm(b) / GAUSS:.1f} G along {np.round(b / np.linalg.norm(b), 4).tolist()}",
             f"positive anti-hole offsets (MHz): {anti}",
             f"positive hole offsets (MHz): {holes}",
             f"largest |offset|: {far:.3f} MHz"]
    atomic_write(cfg.out / "holeburn_summary.txt", "\n".join(lines) + "\n")
    _emit(cfg, lines)
    return EXIT_OK


# zefoz

def cmd_zefoz(cfg: RunConfig) -> int:
    p, phash = _load_params(cfg)
    b = _field(cfg, 12610.0, (-0.5914, 0.5239, 0.6130))
    state = cfg.extra.get("state") or "ground"
    subsite = cfg.extra.get("subsite") or 2
    pair = tuple(s.strip() for s in (cfg.extra.get("levels") or "-3/2,+3/2").split(","))
    if len(pair) != 2:
        raise ConfigError("--levels expects two labels like -3/2,+3/2")
    sys_ = p.system(state, subsite)
    try:
        s = zefoz.transition_sensitivity(sys_, b, pair)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    lines = [f"{state} subsite {subsite} |{pair[0]}> <-> |{pair[1]}> at {np.linalg.norm(b):.4f} T",
             f"frequency: {s.frequency:.4f} MHz",
             f"gradient: {np.round(s.gradient, 6).tolist()} MHz/T (norm {s.gradient_norm:.6f})"]
    rng = np.random.default_rng(cfg.seed)
    ref = [zefoz.sensitivity(sys_, 0.08 * u, s.levels).gradient_norm
           for u in zefoz.random_directions(20, rng)]
    lines.append(f"median gradient norm at 800 G: {np.median(ref):.4f} MHz/T")
    grid = [s]
    if cfg.extra.get("search"):
        r = zefoz.zefoz_search(sys_, b, s.levels)
        lines += [f"search minimum: {np.round(r.field, 6).tolist()} T ({np.linalg.norm(r.field):.4f} T)",
                  f"  residual gradient {r.gradient_norm:.3e} MHz/T, frequency {r.frequency:.4f} MHz",
                  f"  curvature eigenvalues {np.round(r.curvature_eigenvalues, 4).tolist()} MHz/T^2"]
        grid.append(zefoz.sensitivity(sys_, r.field, r.levels))
    n = cfg.extra.get("grid") or 0
    if n:
        offs = np.linspace(-0.01, 0.01, n)
        for dx in offs:
            for dy in offs:
                for dz in offs:
                    grid.append(zefoz.sensitivity(sys_, b + [dx, dy, dz], s.levels))
    cfg.out.mkdir(parents=True, exist_ok=True)
    atomic_write(cfg.out / "zefoz.csv", zefoz.grid_csv(grid, _header(
        cfg, phash, f"{state} subsite {subsite} levels {s.levels}", "field in T, f in MHz, |grad| in MHz/T")))
    atomic_write(cfg.out / "zefoz_summary.txt", "\n".join(lines) + "\n")
    _emit(cfg, lines)
    return EXIT_OK


# frame

def cmd_frame(cfg: RunConfig) -> int:
    p, phash = _load_params(cfg)
    if cfg.direction is None:
        raise ConfigError("frame needs --direction x,y,z (lab frame)")
    try:
        frame = p.frame()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    v = frame.to_crystal(cfg.direction)
    if cfg.extra.get("inverse"):
        v = frame.to_lab(cfg.direction)
    cfg.out.mkdir(parents=True, exist_ok=True)
    names = ("lab", "crystal") if not cfg.extra.get("inverse") else ("crystal", "lab")
    rows = [[names[0], *(f"{x:.6f}" for x in cfg.direction)], [names[1], *(f"{x:.6f}" for x in v)]]
    atomic_write(cfg.out / "frame.csv", csv_text(["frame", "x", "y", "z"], rows, _header(
        cfg, phash, "unit vectors; crystal axes ordered D1, D2, b")))
    _emit(cfg, [f"{names[0]} {np.round(cfg.direction, 4).tolist()} -> {names[1]} {np.round(v, 4).tolist()}"])
    return EXIT_OK


def _emit(cfg: RunConfig, lines: Sequence[str]) -> None:
    print("\n".join(lines))


COMMANDS = {"predict": cmd_predict, "fit": cmd_fit, "holeburn": cmd_holeburn,
            "zefoz": cmd_zefoz, "frame": cmd_frame}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", type=Path, help="parameter file (degrees, MHz, MHz/T)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--b0-gauss", type=float, help="field magnitude in gauss")
    common.add_argument("--direction", help="lab-frame direction x,y,z")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="hyperfine", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("predict", parents=[common], help="predicted spectra and level diagrams")
    sp.add_argument("--path-points", type=int, default=201)
    sp.add_argument("--manifold", help="e.g. g:1/2-3/2")

    sf = sub.add_parser("fit", parents=[common], help="anneal parameters against peak lists")
    sf.add_argument("--data", type=Path, nargs="+", default=[])
    sf.add_argument("--manifold")
    sf.add_argument("--restarts", type=int)
    sf.add_argument("--steps", type=int, help="proposals per temperature")
    sf.add_argument("--t0", type=float, help="initial temperature, MHz per peak")
    sf.add_argument("--t-min", type=float, help="final temperature, MHz per peak")
    sf.add_argument("--cooling", type=float)
    sf.add_argument("--penalty", type=float, default=DEFAULT_PENALTY, help="MHz per unmatched peak")
    sf.add_argument("--mode", choices=("joint", "sequential"), default="joint")
    sf.add_argument("--merge-threshold", type=float, help="merge peaks closer than this (MHz)")
    sf.add_argument("--workers", type=int, default=1)
    sf.add_argument("--resume", action="store_true", help="continue from checkpoints in OUT")

    sh = sub.add_parser("holeburn", parents=[common], help="hole/anti-hole positions")
    sh.add_argument("--burn", help="|m| of burned ground and excited doublets, e.g. 1/2,5/2")
    sh.add_argument("--swap-excited", action="store_true", help="use the C2-partner excited state")
    sh.add_argument("--probe-window", type=float, help="MHz around the central hole")

    sz = sub.add_parser("zefoz", parents=[common], help="transition field sensitivity")
    sz.add_argument("--state", choices=("ground", "excited"))
    sz.add_argument("--subsite", type=int, choices=(1, 2))
    sz.add_argument("--levels", help="tracked level labels, e.g. -3/2,+3/2")
    sz.add_argument("--search", action="store_true", help="descend to the nearest ZEFOZ point")
    sz.add_argument("--grid", type=int, help="points per axis of a +-10 mT sensitivity grid")

    sr = sub.add_parser("frame", parents=[common], help="lab <-> crystal vector conversion")
    sr.add_argument("--inverse", action="store_true", help="treat --direction as crystal frame")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    known = {"command", "params", "out", "seed", "b0_gauss", "direction", "path_points",
             "manifold", "data", "verbose"}
    extra = {k: v for k, v in vars(ns).items() if k not in known}
    return RunConfig(ns.command, ns.params, list(getattr(ns, "data", []) or []), ns.out, ns.seed,
                     ns.b0_gauss, _direction(ns.direction), getattr(ns, "path_points", 201),
                     getattr(ns, "manifold", None), extra).validate()


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
