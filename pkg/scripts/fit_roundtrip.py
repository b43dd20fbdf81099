"""Synthetic round trip: generate noisy sweeps from the reference parameters,
anneal from random starts, report fit residual and held-out agreement.

    python3 scripts/fit_roundtrip.py --restarts 3 --seed 0 --out runs/roundtrip
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from hyperfine import fitter as F
from hyperfine.params import format_params, table1
from hyperfine.spectra import MANIFOLDS, sweep_frequencies


def held_out(truth, fitted, n_fields, b0, seed):
    v = np.random.default_rng(seed).normal(size=(n_fields, 3))
    fields = b0 * v / np.linalg.norm(v, axis=1, keepdims=True)
    out = {}
    for tag, man in MANIFOLDS.items():
        a, b = truth.system(man.state), fitted.system(man.state)
        d = np.abs(sweep_frequencies(a.m, a.q, truth.axis, fields, man)
                   - sweep_frequencies(b.m, b.q, fitted.axis, fields, man))
        out[tag] = (1e3 * d.mean(), 1e3 * d.max())
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sigma-khz", type=float, default=14.0)
    ap.add_argument("--points", type=int, default=201)
    ap.add_argument("--restarts", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--t0", type=float, default=5.0)
    ap.add_argument("--cooling", type=float, default=0.97)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--mode", default="joint", choices=("joint", "sequential"))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    truth = table1()
    data = F.synthetic_datasets(truth, 0.08, args.points, args.sigma_khz * 1e-3,
                                np.random.default_rng(args.data_seed))
    floor = F.Objective(data)(truth) / sum(d.n_peaks for d in data) * 1e3
    schedule = F.AnnealSchedule(t0=args.t0, cooling=args.cooling, steps_per_temp=args.steps,
                                restarts=args.restarts, seed=args.seed)
    t0 = time.perf_counter()
    res = F.anneal(data, schedule, mode=args.mode, workers=args.workers)
    dt = time.perf_counter() - t0

    print(f"generating parameters score {floor:.2f} kHz/peak on this data")
    for r in res.restarts:
        print(f"restart {r.index}: annealed {1e3 * r.best_cost / res.n_peaks:.2f}, "
              f"polished {1e3 * F._final_cost(r) / res.n_peaks:.2f} kHz/peak")
    print(f"best: {res.mean_khz_per_peak:.2f} kHz/peak in {dt:.0f} s")
    ho = held_out(truth, res.best, 20, 0.08, 99)
    for tag, (mean, worst) in ho.items():
        print(f"held-out {tag}: mean {mean:.2f} kHz, max {worst:.2f} kHz")
    print("spectrum-equivalent to generator (50 kHz):", F.spectra_equivalent(res.best, truth, tol=0.05))
    print(format_params(F.canonicalize(res.best)))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "fit.json").write_text(res.to_json() + "\n")
        (args.out / "held_out.json").write_text(json.dumps(ho, indent=1) + "\n")


if __name__ == "__main__":
    main()
