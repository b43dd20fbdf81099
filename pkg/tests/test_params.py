import numpy as np
import pytest

from hyperfine.params import (ParamVector, StateParams, file_hash, format_params, params_hash,
                              parse_params, read_params, write_params)

from conftest import PARAMS_FILE


def test_shipped_file_is_table1(t1):
    p = read_params(PARAMS_FILE)
    assert np.array_equal(p.to_array(), t1.to_array())
    assert p.frame_axes == t1.frame_axes


def test_roundtrip(t1, tmp_path):
    path = tmp_path / "x.params"
    write_params(t1, path)
    p = read_params(path)
    assert np.allclose(p.to_array(), t1.to_array(), rtol=0, atol=1e-14)
    assert params_hash(p) == params_hash(t1)


def test_degrees_on_disk(t1):
    text = format_params(t1)
    assert "theta_C2 = 3.2" in text and "# degrees" in text and "# MHz/T" in text


def test_array_layout(t1):
    a = t1.to_array()
    assert a.shape == (24,)
    assert t1.names()[0] == "excited.alpha_M" and t1.names()[-1] == "phi_C2"
    assert t1.with_array(a) == t1
    with pytest.raises(ValueError):
        t1.with_array(a[:-1])


@pytest.mark.parametrize("bad", [
    "[ground]\nalpha_M = 1\n[axes]\ntheta_C2 = 0\nphi_C2 = 0\n",
    "[axes]\ntheta_C2 = 0\nphi_C2 = 0\n",
])
def test_rejects_incomplete(bad):
    with pytest.raises(ValueError):
        parse_params(bad)


def test_rejects_unknown_key(t1):
    text = format_params(t1).replace("[axes]", "[axes]\nbogus = 1")
    with pytest.raises(ValueError):
        parse_params(text)


def test_partial_frame_rejected(t1):
    text = format_params(t1).split("theta_D1")[0]
    text += "theta_D1 = 90\n"
    with pytest.raises(ValueError):
        parse_params(text)


def test_single_state_file(t1):
    p = ParamVector(None, t1.ground, t1.theta_C2, t1.phi_C2)
    q = parse_params(format_params(p))
    assert q.states == ("ground",)
    with pytest.raises(KeyError):
        q.state("excited")


def test_file_hash_stable(tmp_path, t1):
    path = tmp_path / "a.params"
    write_params(t1, path)
    assert file_hash(path) == file_hash(path) and len(file_hash(path)) == 16


def test_subsite_two_is_c2_conjugate(t1):
    s1, s2 = t1.system("ground", 1), t1.system("ground", 2)
    from hyperfine.geometry import c2_rotation
    r = c2_rotation(t1.axis)
    assert np.allclose(s2.m, r @ s1.m @ r.T) and np.allclose(s2.q, r @ s1.q @ r.T)
    with pytest.raises(ValueError):
        t1.system("ground", 3)


def test_state_degrees_roundtrip():
    s = StateParams.from_degrees(alpha_M=10, beta_M=20, gamma_M=30, g1=1, g2=2, g3=3,
                                 alpha_Q=40, beta_Q=50, gamma_Q=60, E=1, D=2)
    assert s.to_degrees()["beta_Q"] == pytest.approx(50)
