"""Print the headline numbers derived from the reference parameters:
zero-field splittings, frame conversions, hole-burning offsets and the
clock-transition search."""

import numpy as np

from hyperfine.holeburn import burn_spectrum
from hyperfine.params import table1
from hyperfine.spin import diagonalize, doublet_basis, label_levels
from hyperfine.zefoz import random_directions, sensitivity, transition_sensitivity, zefoz_search


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


p = table1()

print("zero-field levels")
for state in p.states:
    sys = p.system(state)
    d = diagonalize(sys, np.zeros(3))
    labels = label_levels(d, doublet_basis(sys.q))
    doublets = d.energies[::2]
    print(f"  {state:8s}", "  ".join(f"|±{int(2 * labels[2 * k].abs_m)}/2>: {doublets[k]:9.3f}" for k in range(3)),
          f"  splittings {np.round(np.diff(doublets), 3).tolist()} MHz")

print("\nlab -> crystal")
frame = p.frame()
for lab in ([-0.5914, 0.5239, 0.6130], [0.6551, 0.6976, -0.2900]):
    print(f"  {lab} -> {np.round(frame.to_crystal(unit(lab)), 4).tolist()}")

print("\nhole burning at 600 G")
b = 0.06 * unit([0.6551, 0.6976, -0.2900])
for name, ex in (("same subsite", p.system("excited")), ("C2 partner", p.system("excited", 2))):
    for burn in ((0.5, 0.5), (0.5, 2.5)):
        spec = burn_spectrum(p.system("ground"), ex, b, burn=burn)
        anti = sorted({round(float(o), 3) for o in spec.offsets("anti-hole") if o > 0})
        print(f"  {name:12s} burn |m| {burn}: anti-holes {anti}, max |offset| "
              f"{np.abs(spec.offsets()).max():.3f} MHz")

print("\nclock transition near 1.261 T")
bz = 1.261 * unit([-0.5914, 0.5239, 0.6130])
for subsite in (1, 2):
    sys = p.system("ground", subsite)
    s = transition_sensitivity(sys, bz, ("-3/2", "+3/2"))
    ref = np.median([sensitivity(sys, 0.08 * u, s.levels).gradient_norm
                     for u in random_directions(20, np.random.default_rng(0))])
    r = zefoz_search(sys, bz, s.levels)
    print(f"  subsite {subsite}: f = {s.frequency:.4f} MHz, |grad| = {s.gradient_norm:.4g} MHz/T "
          f"(800 G median {ref:.3g}); search -> {np.linalg.norm(r.field):.4f} T, "
          f"{np.degrees(np.arccos(unit(r.field) @ unit(bz))):.2f} deg off, f = {r.frequency:.4f} MHz")
