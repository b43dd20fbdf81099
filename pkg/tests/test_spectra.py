import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperfine.geometry import c2_rotation, field_path, spherical_field
from hyperfine.spectra import (MANIFOLDS, Peak, PeakSpectrum, SweepDataset, assign_frequencies,
                               assign_peaks, dump_records, format_peak_list, manifold,
                               merge_split_peaks, parse_peak_list, predict_spectrum, predict_sweep,
                               sweep_frequencies, write_peak_list, ingest_peaks)
from hyperfine.spin import build_hamiltonian, doublet_basis
from oracle import eigvals_bruteforce


def test_manifold_tags():
    assert sorted(MANIFOLDS) == ["e:1/2-3/2", "e:3/2-5/2", "g:1/2-3/2", "g:3/2-5/2"]
    assert manifold("g:1/2-3/2").state == "ground"
    with pytest.raises(ValueError):
        manifold("x:1/2-3/2")


@pytest.mark.parametrize("tag,expected", [("g:1/2-3/2", 34.5), ("g:3/2-5/2", 46.2),
                                          ("e:1/2-3/2", 75.0), ("e:3/2-5/2", 101.7)])
def test_zero_field_collapse(t1, tag, expected):
    man = manifold(tag)
    sp = predict_spectrum(t1.system(man.state), t1.axis, np.zeros(3), man)
    f = sp.frequencies
    assert len(f) == 8 and f.max() - f.min() < 1e-6
    assert f[0] == pytest.approx(expected, abs=0.7)


def test_excited_800g_example_against_oracle(t1):
    # the window quoted for this spectrum is 74-77 MHz; the model puts the outer
    # peaks at 72.76 and 77.31 MHz, so we check the oracle values instead
    b = spherical_field(0.08, -0.32)
    sys = t1.system("excited")
    sp = predict_spectrum(sys, t1.axis, b, "e:1/2-3/2", field_t=-0.32)
    ref = []
    basis = doublet_basis(sys.q)
    for s in (sys, sys.rotated(c2_rotation(t1.axis))):
        w = eigvals_bruteforce(build_hamiltonian(s, b).h)
        lo, hi = w[2 * basis.doublet_index(0.5):][:2], w[2 * basis.doublet_index(1.5):][:2]
        ref += [abs(h - l) for l in lo for h in hi]
    assert np.allclose(sp.frequencies, np.sort(ref), atol=1e-8)
    assert 72.5 < sp.frequencies.min() and sp.frequencies.max() < 77.5
    assert len(np.unique(np.round(sp.frequencies, 3))) == 8


def test_labels_reference_valid_pairs(t1):
    sp = predict_spectrum(t1.system("ground"), t1.axis, [0.03, -0.05, 0.04], "g:3/2-5/2")
    assert sorted(p.subsite for p in sp.peaks) == [1] * 4 + [2] * 4
    assert all(0 <= i < 6 and 0 <= j < 6 for p in sp.peaks for i, j in [p.transition])


def test_fast_path_matches_labelled(t1):
    path = field_path(0.08, 41)
    for tag, man in MANIFOLDS.items():
        sys = t1.system(man.state)
        fast = sweep_frequencies(sys.m, sys.q, t1.axis, path.points, man)
        slow = np.array([s.frequencies for s in predict_sweep(sys, t1.axis, path, man).spectra])
        assert np.abs(fast - slow).max() < 1e-9


def test_continuity_along_path(t1):
    path = field_path(0.08, 201)
    for man in MANIFOLDS.values():
        sys = t1.system(man.state)
        f = sweep_frequencies(sys.m, sys.q, t1.axis, path.points, man)
        assert np.abs(np.diff(f, axis=0)).max() < 1.0


def test_subsite_swap_invariance(t1, rng):
    sys = t1.system("ground")
    partner = t1.system("ground", 2)
    b = rng.normal(scale=0.05, size=3)
    a = predict_spectrum(sys, t1.axis, b, "g:1/2-3/2").frequencies
    c = predict_spectrum(partner, t1.axis, b, "g:1/2-3/2").frequencies
    assert np.allclose(a, c, atol=1e-9)


class TestAssignment:
    def test_identity(self):
        f = np.array([1.0, 2.0, 3.5])
        a = assign_frequencies(f, f)
        assert a.total == 0 and a.pairs == ((0, 0), (1, 1), (2, 2))

    def test_uniform_shift(self):
        f = np.linspace(30, 40, 8)
        assert assign_frequencies(f, f + 0.01).total == pytest.approx(0.08)

    def test_penalty(self):
        a = assign_frequencies([1.0, 2.0], [1.0, 2.0, 9.0], penalty=0.5)
        assert a.unmatched == 1 and a.total == pytest.approx(0.5)

    @settings(max_examples=50)
    @given(st.lists(st.floats(1, 100), min_size=1, max_size=8),
           st.lists(st.floats(1, 100), min_size=1, max_size=8), st.randoms())
    def test_order_invariant_and_optimal(self, meas, pred, r):
        from scipy.optimize import linear_sum_assignment
        base = assign_frequencies(meas, pred).total
        shuffled = list(meas)
        r.shuffle(shuffled)
        assert assign_frequencies(shuffled, pred).total == pytest.approx(base, abs=1e-9)
        c = np.abs(np.subtract.outer(meas, pred))
        i, j = linear_sum_assignment(c)
        assert base == pytest.approx(c[i, j].sum() + 0.5 * abs(len(meas) - len(pred)), abs=1e-9)
        if len(meas) == len(pred):
            assert assign_frequencies(pred, meas).total == pytest.approx(base, abs=1e-9)

    def test_assign_peaks_requires_peaks(self):
        empty = PeakSpectrum(0.0, np.zeros(3), ())
        full = PeakSpectrum(0.0, np.zeros(3), (Peak(1.0),))
        with pytest.raises(ValueError):
            assign_peaks(empty, full)


class TestPeakFiles:
    HEAD = "# test\nmanifold=g:1/2-3/2, b0_gauss=800, n_points=3\n"

    def test_parse(self):
        ds = parse_peak_list(self.HEAD + "-1, 34.1, 34.2\n0.0,\n1, " + ", ".join(["35"] * 8) + "\n")
        assert [len(s) for s in ds.spectra] == [2, 0, 8]
        assert ds.b0 == pytest.approx(0.08)
        assert np.allclose(ds.spectra[2].field_vec, [0, 0, 0.08])

    @pytest.mark.parametrize("body", [
        "-1, 34\n-1, 34\n1, 34\n",        # duplicate t
        "-1, 34\n0.5, 34\n0.2, 34\n",     # decreasing t
        "-1, 34\n0, x\n1, 34\n",          # non-numeric
        "-1, 34\n0, -3\n1, 34\n",         # non-positive
        "-1, 34\n0, 34\n",                # point count
        "-2, 34\n0, 34\n1, 34\n",         # t out of range
    ])
    def test_rejects(self, body):
        with pytest.raises(ValueError):
            parse_peak_list(self.HEAD + body)

    def test_window(self):
        head = "manifold=g:1/2-3/2, b0_gauss=800, n_points=1, fmin=30, fmax=40\n"
        parse_peak_list(head + "0, 35\n")
        with pytest.raises(ValueError):
            parse_peak_list(head + "0, 45\n")

    def test_merge_split_peaks(self):
        assert merge_split_peaks([10.0, 10.05, 12.0], 0.2) == [pytest.approx(10.025), 12.0]
        ds = parse_peak_list("manifold=g:1/2-3/2, b0_gauss=800, n_points=1\n0, 10.0, 10.05, 12\n",
                             merge_threshold=0.2)
        assert len(ds.spectra[0]) == 2

    def test_roundtrip(self, t1, tmp_path):
        ds = predict_sweep(t1.system("ground"), t1.axis, field_path(0.08, 11), "g:1/2-3/2")
        path = tmp_path / "p.peaks"
        write_peak_list(ds, path, ["hello"])
        back = ingest_peaks(path)
        assert back.manifold == ds.manifold and len(back.spectra) == 11
        assert np.allclose([s.frequencies for s in back.spectra], [s.frequencies for s in ds.spectra], atol=1e-6)
        assert format_peak_list(back) == format_peak_list(ds)
        assert '"schema": "hyperfine.spectra/1"' in dump_records(ds)

    def test_dataset_needs_increasing_t(self):
        sp = PeakSpectrum(0.0, np.zeros(3), ())
        with pytest.raises(ValueError):
            SweepDataset("g:1/2-3/2", 0.08, (sp, sp))
