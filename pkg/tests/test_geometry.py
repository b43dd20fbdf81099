import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperfine.geometry import (AxisDirection, build_frame, c2_rotation, field_path, skew_operator,
                                spherical_field, subsite_partner)
from hyperfine.spin import SpinSystem, diagonalize, quadrupole_tensor, zeeman_tensor

thetas = st.floats(0, np.pi, allow_nan=False)
phis = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


@given(thetas, phis)
def test_c2_is_proper_involution(theta, phi):
    axis = AxisDirection(theta, phi)
    r = c2_rotation(axis)
    assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
    assert np.abs(r @ r - np.eye(3)).max() < 1e-12
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(r @ axis.vector, axis.vector, atol=1e-12)


@given(thetas, phis)
def test_c2_matches_skew_form(theta, phi):
    axis = AxisDirection(theta, phi)
    j = skew_operator(axis)
    assert np.abs(c2_rotation(axis) - (np.eye(3) + 2 * j @ j)).max() < 1e-12


def test_skew_is_cross_product(rng):
    axis = AxisDirection(0.7, 1.9)
    v = rng.normal(size=3)
    assert np.allclose(skew_operator(axis) @ v, np.cross(axis.vector, v))


def test_axis_vector_roundtrip():
    a = AxisDirection.from_degrees(3.2, 331.76)
    b = AxisDirection.from_vector(a.vector)
    assert np.allclose(a.vector, b.vector)


def test_subsite_partner_involution(rng):
    sys = SpinSystem(zeeman_tensor([1, 2, 3], [0.1, 0.2, 0.3]), quadrupole_tensor(1, 5, [0.4, 0.5, 0.6]), "x")
    axis = AxisDirection(0.3, 1.1)
    back = subsite_partner(subsite_partner(sys, axis), axis)
    assert np.allclose(back.m, sys.m, atol=1e-12) and np.allclose(back.q, sys.q, atol=1e-12)
    assert back.label == "x"


def test_partner_spectrum_is_rotated_field(rng):
    sys = SpinSystem(zeeman_tensor([4, 6, -3], [0.1, 1.2, -0.3]), quadrupole_tensor(2, -9, [0.4, 0.5, 0.6]))
    axis = AxisDirection(1.0, 0.4)
    r = c2_rotation(axis)
    b = rng.normal(scale=0.1, size=3)
    assert np.allclose(diagonalize(subsite_partner(sys, axis), b).energies,
                       diagonalize(sys, r @ b).energies, atol=1e-9)


class TestFieldPath:
    def test_endpoints_and_count(self):
        p = field_path(0.08, 201)
        assert len(p) == 201
        assert np.allclose(p.points[0], [0, 0, -0.08]) and np.allclose(p.points[-1], [0, 0, 0.08])
        assert np.allclose(np.linalg.norm(p.points, axis=1), 0.08)

    def test_three_turns(self):
        b = spherical_field(1.0, 0.5)
        assert np.allclose(b, [np.sqrt(0.75) * np.cos(3 * np.pi), np.sqrt(0.75) * np.sin(3 * np.pi), 0.5])

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            field_path(0.08, 1)


class TestFrame:
    def test_reference_vector_pairs(self, t1):
        frame = t1.frame()
        assert np.abs(frame.to_crystal([-0.5914, 0.5239, 0.6130]) - [-0.5600, 0.5073, 0.6550]).max() < 0.02
        assert np.abs(frame.to_crystal([0.6551, 0.6976, -0.2900]) - [0.6407, 0.7053, -0.3034]).max() < 0.02

    def test_orthonormal_and_inverse(self, t1, rng):
        frame = t1.frame()
        a = frame.matrix
        assert np.abs(a.T @ a - np.eye(3)).max() < 1e-12
        v = rng.normal(size=3)
        assert np.allclose(frame.to_lab(frame.to_crystal(v)), v)
        t = rng.normal(size=(3, 3))
        assert np.allclose(frame.tensor_to_lab(frame.tensor_to_crystal(t)), t)

    def test_b_axis_kept_exactly(self, t1):
        frame = t1.frame()
        assert np.allclose(frame.b, t1.axis.vector)

    def test_nearly_parallel_axes_rejected(self):
        b = AxisDirection.from_degrees(0, 0)
        with pytest.raises(ValueError):
            build_frame(b, AxisDirection.from_degrees(0.5, 0), AxisDirection.from_degrees(90, 90))
        with pytest.raises(ValueError):
            build_frame(b, AxisDirection.from_degrees(90, 0), AxisDirection.from_degrees(90, 0.5))

    def test_left_handed_rejected(self):
        with pytest.raises(ValueError):
            build_frame(AxisDirection.from_degrees(0, 0), AxisDirection.from_degrees(90, 90),
                        AxisDirection.from_degrees(90, 0))
