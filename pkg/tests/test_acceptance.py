"""End-to-end acceptance checks at their stated tolerances.

Each test records one PASS/FAIL line, shown in the pytest terminal summary
(and printed directly when this file is run as a script).
"""

import time

import numpy as np
import pytest

import conftest
from hyperfine import fitter as F
from hyperfine.holeburn import burn_spectrum
from hyperfine.params import table1
from hyperfine.spectra import MANIFOLDS, sweep_frequencies
from hyperfine.spin import (build_hamiltonian, build_spin_operators, diagonalize, euler_rotation,
                            quadrupole_tensor, zeeman_tensor, SpinSystem)
from hyperfine.zefoz import random_directions, sensitivity, transition_sensitivity
from oracle import eigvals_bruteforce, finite_diff_gradient, random_hermitian

GAUSS = 1e-4
HOLE_DIR = np.array([0.6551, 0.6976, -0.2900])
ZEFOZ_DIR = np.array([-0.5914, 0.5239, 0.6130])


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def zero_field_splittings(sp):
    e = np.linalg.eigvalsh(build_hamiltonian(SpinSystem(np.zeros((3, 3)), sp.q_tensor), np.zeros(3)).h)
    doublets = e[::2]
    return sorted(np.diff(doublets))


def test_1_zero_field_splittings():
    t0 = time.perf_counter()
    p = table1()
    g = zero_field_splittings(p.ground)
    e = zero_field_splittings(p.excited)
    dt = time.perf_counter() - t0
    ok = (abs(g[0] - 34.5) <= 0.3 and abs(g[1] - 46.2) <= 0.3 and abs(e[0] - 75.0) <= 0.7
          and abs(e[1] - 101.7) <= 0.7 and dt < 1)
    record(1, ok, f"ground {g[0]:.3f}, {g[1]:.3f} MHz; excited {e[0]:.3f}, {e[1]:.3f} MHz; {dt:.3f} s")


def test_2_frame_conversion():
    t0 = time.perf_counter()
    frame = table1().frame()
    pairs = [([-0.5914, 0.5239, 0.6130], [-0.5600, 0.5073, 0.6550]),
             ([0.6551, 0.6976, -0.2900], [0.6407, 0.7053, -0.3034])]
    worst = max(np.abs(frame.to_crystal(np.array(lab) / np.linalg.norm(lab)) - crys).max()
                for lab, crys in pairs)
    dt = time.perf_counter() - t0
    record(2, worst <= 0.02 and dt < 1, f"max component deviation {worst:.4f}; {dt:.3f} s")


def test_3_hole_burning():
    t0 = time.perf_counter()
    p = table1()
    b = 600 * GAUSS * HOLE_DIR / np.linalg.norm(HOLE_DIR)
    # burned excited doublet: the one sharing the energy slot of the ground |+-1/2> doublet
    burn = (0.5, 2.5)
    same = burn_spectrum(p.system("ground"), p.system("excited"), b, burn=burn)
    partner = burn_spectrum(p.system("ground"), p.system("excited", 2), b, burn=burn)
    anti = same.offsets("anti-hole")
    near = anti[np.argmin(np.abs(anti - 3.45))]
    far = float(np.abs(partner.offsets()).max())
    dt = time.perf_counter() - t0
    ok = abs(near - 3.45) <= 0.10 and far <= 3.0 and dt < 10
    record(3, ok, f"anti-hole at {near:+.3f} MHz; C2-partner excited state max |offset| {far:.3f} MHz; {dt:.2f} s")


def test_4_zefoz():
    t0 = time.perf_counter()
    sys = table1().system("ground", 2)
    b = 1.261 * ZEFOZ_DIR / np.linalg.norm(ZEFOZ_DIR)
    s = transition_sensitivity(sys, b, ("-3/2", "+3/2"))
    rng = np.random.default_rng(0)
    ref = np.median([sensitivity(sys, 0.08 * u, s.levels).gradient_norm
                     for u in random_directions(20, rng)])
    dt = time.perf_counter() - t0
    ok = abs(s.frequency - 12.46) <= 0.20 and s.gradient_norm * 100 <= ref and dt < 30
    record(4, ok, f"f = {s.frequency:.4f} MHz, |grad| = {s.gradient_norm:.4g} MHz/T vs median "
                  f"{ref:.4g} MHz/T at 800 G (ratio {ref / s.gradient_norm:.0f}); {dt:.2f} s")


ROUND_TRIP_SIGMA = 0.014  # MHz


@pytest.fixture(scope="module")
def round_trip():
    truth = table1()
    data = F.synthetic_datasets(truth, b0=0.08, n_points=201, sigma=ROUND_TRIP_SIGMA,
                                rng=np.random.default_rng(1))
    t0 = time.perf_counter()
    result = F.anneal(data, F.AnnealSchedule(restarts=3, seed=0))
    return truth, result, time.perf_counter() - t0


def held_out_error(truth, fitted, n_fields=20, b0=0.08, seed=99):
    v = np.random.default_rng(seed).normal(size=(n_fields, 3))
    fields = b0 * v / np.linalg.norm(v, axis=1, keepdims=True)
    diffs = []
    for man in MANIFOLDS.values():
        a, b = truth.system(man.state), fitted.system(man.state)
        fa = sweep_frequencies(a.m, a.q, truth.axis, fields, man)
        fb = sweep_frequencies(b.m, b.q, fitted.axis, fields, man)
        diffs.append(np.abs(fa - fb).ravel())
    return float(np.mean(np.concatenate(diffs))) * 1e3


def test_5_fit_round_trip(round_trip):
    truth, result, dt = round_trip
    held = held_out_error(truth, result.best)
    ok = result.mean_khz_per_peak <= 20 and held <= 30 and dt <= 900 and len(result.restarts) >= 3
    record(5, ok, f"fit residual {result.mean_khz_per_peak:.2f} kHz/peak, held-out error "
                  f"{held:.2f} kHz/peak, {len(result.restarts)} restarts, {dt:.0f} s")


def test_6_property_suites(tmp_path):
    rng = np.random.default_rng(6)
    ops = build_spin_operators()
    ix, iy, iz = ops.ix, ops.iy, ops.iz
    comm = max(np.abs(ix @ iy - iy @ ix - 1j * iz).max(), np.abs(iy @ iz - iz @ iy - 1j * ix).max(),
               np.abs(iz @ ix - ix @ iz - 1j * iy).max())
    casimir = np.abs(ix @ ix + iy @ iy + iz @ iz - 35 / 4 * np.eye(6)).max()

    rot = 0.0
    for _ in range(200):
        r = euler_rotation(*rng.uniform(-np.pi, np.pi, 3))
        rot = max(rot, np.abs(r @ r.T - np.eye(3)).max(), abs(np.linalg.det(r) - 1))
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        c2 = 2 * np.outer(n, n) - np.eye(3)
        rot = max(rot, np.abs(c2 @ c2 - np.eye(3)).max())

    herm = trace = 0.0
    for _ in range(200):
        e, d = rng.normal(scale=20, size=2)
        sys = SpinSystem(zeeman_tensor(rng.normal(scale=10, size=3), rng.uniform(-3, 3, 3)),
                         quadrupole_tensor(e, d, rng.uniform(-3, 3, 3)))
        h = build_hamiltonian(sys, rng.normal(scale=0.5, size=3)).h
        herm = max(herm, np.abs(h - h.conj().T).max())
        # tr(I_a I_b) = I(I+1)(2I+1)/3 delta_ab = 17.5 delta_ab; the Zeeman term is traceless
        trace = max(trace, abs(np.trace(h).real - 17.5 * np.trace(sys.q)))

    eig = 0.0
    for _ in range(1000):
        h = random_hermitian(rng, scale=50.0)
        w = np.linalg.eigvalsh(h)
        eig = max(eig, np.abs(eigvals_bruteforce(h) - w).max() / np.abs(w).max())

    grad = 0.0
    for _ in range(20):
        sys = SpinSystem(zeeman_tensor(rng.normal(scale=10, size=3), rng.uniform(-3, 3, 3)),
                         quadrupole_tensor(*rng.normal(scale=20, size=2), rng.uniform(-3, 3, 3)))
        b = rng.normal(scale=0.1, size=3)
        s = sensitivity(sys, b, (1, 4))
        fd = finite_diff_gradient(lambda x: float(np.diff(diagonalize(sys, x).energies[[1, 4]])[0]), b)
        grad = max(grad, np.abs(s.gradient - fd).max() / np.abs(fd).max())

    from hyperfine.holeburn import enumerate_classes, pump_sequence
    p = table1()
    classes = enumerate_classes(p.system("ground"), p.system("excited"), 0.06 * HOLE_DIR / np.linalg.norm(HOLE_DIR))
    pop = 0.0
    for _ in range(50):
        steps = [(set(rng.choice(6, size=rng.integers(1, 6), replace=False).tolist()), None)
                 for _ in range(rng.integers(1, 5))]
        for c in pump_sequence(classes, steps):
            pop = max(pop, abs(c.population.sum() - 1))

    from hyperfine.cli import main
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        assert main(["predict", "--params", str(conftest.PARAMS_FILE), "--out", str(d), "--path-points", "21"]) == 0
        outs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
    a = F.anneal(F.synthetic_datasets(p, n_points=11),
                 F.AnnealSchedule(t0=0.05, t_min=0.02, cooling=0.7, steps_per_temp=20, restarts=1, seed=3))
    b = F.anneal(F.synthetic_datasets(p, n_points=11),
                 F.AnnealSchedule(t0=0.05, t_min=0.02, cooling=0.7, steps_per_temp=20, restarts=1, seed=3))
    same = outs[0] == outs[1] and a.to_json() == b.to_json()

    checks = {"commutators": (comm, 1e-12), "casimir": (casimir, 1e-12), "rotations": (rot, 1e-12),
              "hermiticity": (herm, 1e-9), "trace": (trace, 1e-9), "eigen-oracle": (eig, 1e-8),
              "gradient-fd": (grad, 1e-4), "population": (pop, 1e-12)}
    ok = all(v <= tol for v, tol in checks.values()) and same
    detail = ", ".join(f"{k} {v:.1e}" for k, (v, _) in checks.items())
    record(6, ok, f"{detail}, reruns byte-identical {same}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
