import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sympgeom.core import (AffineSymplecticMap, DimensionError, apply_J, curve_action, j_matrix,
                           liouville, omega, random_affine_symplectic)

E = np.eye(4)  # e_p1, e_q1, e_p2, e_q2


def circle(k, a=1.0, b=1.0, reverse=False):
    t = 2 * np.pi * np.arange(k) / k
    if reverse:
        t = -t
    X = np.zeros((k, 4))
    X[:, 0], X[:, 1] = a * np.cos(t), b * np.sin(t)
    return X


def test_omega_basis_and_antisymmetry(rng):
    assert omega(E[0], E[1]) == 1.0
    assert omega(E[2], E[3]) == 1.0
    v = rng.normal(size=4)
    assert omega(v, v) == 0.0


def test_omega_is_J_invariant(rng):
    U, V = rng.normal(size=(2, 20, 4))
    assert np.max(np.abs(omega(apply_J(U), apply_J(V)) - omega(U, V))) < 1e-12


def test_omega_dimension_mismatch():
    with pytest.raises(DimensionError):
        omega(np.ones(4), np.ones(6))


def test_apply_J_convention(rng):
    assert np.array_equal(apply_J(E[0]), E[1])
    assert np.array_equal(apply_J(E[1]), -E[0])
    v = rng.normal(size=6)
    assert np.array_equal(apply_J(apply_J(v)), -v)
    assert np.array_equal(j_matrix(3) @ v, apply_J(v))
    assert apply_J(E[2]) @ E[3] == 1.0 == omega(E[2], E[3])


def test_liouville():
    assert liouville(E[0], E[1]) == 0.5
    assert liouville(np.zeros(4), np.arange(4.0)) == 0.0


def test_liouville_exterior_derivative_is_omega(rng):
    # d(lambda)(u, v) = u.grad <lambda, v> - v.grad <lambda, u> for a linear form
    h = 1e-3
    for _ in range(10):
        z, u, v = rng.normal(size=(3, 4))
        du = (liouville(z + h * u, v) - liouville(z - h * u, v)) / (2 * h)
        dv = (liouville(z + h * v, u) - liouville(z - h * v, u)) / (2 * h)
        assert abs((du - dv) - omega(u, v)) < 1e-9


def test_curve_action_disc_orientation_and_ellipse():
    assert abs(curve_action(circle(256)) - math.pi) < 1e-3
    assert abs(curve_action(circle(256, reverse=True)) + math.pi) < 1e-3
    assert abs(curve_action(circle(256, 1.0, 2.0)) - 2 * math.pi) < 1e-3


def test_curve_action_hermite_converges_fast():
    k = 64
    t = np.linspace(0, math.pi, k + 1)
    Z = np.zeros((k, 4))
    Z[:, 0], Z[:, 1] = np.cos(2 * t[:-1]), np.sin(2 * t[:-1])
    V = 2 * apply_J(Z)
    assert abs(curve_action(Z, V, t) - math.pi) < 1e-6
    assert abs(curve_action(Z) - math.pi) > 1e-3  # the polyline alone is coarse at k = 64


def test_curve_action_needs_three_vertices():
    with pytest.raises(ValueError):
        curve_action(np.zeros((2, 4)))


def test_flow_orbit_lambda_integral_is_pi():
    # unit circle traversed by the flow of |z|^2 (counter-clockwise in (p1, q1))
    assert abs(curve_action(circle(4096)) - math.pi) < 1e-5


@given(seed=st.integers(0, 10_000), spread=st.floats(0.0, 1.5))
def test_random_map_is_symplectic(seed, spread):
    phi = random_affine_symplectic(seed, spread)
    J = j_matrix(2)
    assert np.max(np.abs(phi.linear.T @ J @ phi.linear - J)) <= 1e-10
    assert abs(np.linalg.det(phi.linear) - 1) < 1e-8


def test_random_map_examples():
    phi0 = random_affine_symplectic(5, 0.0)
    assert np.array_equal(phi0.linear, np.eye(4)) and not np.any(phi0.translation)
    phi = random_affine_symplectic(42, 0.5)
    assert abs(np.linalg.det(phi.linear) - 1) < 1e-9
    again = random_affine_symplectic(42, 0.5)
    assert np.array_equal(phi.linear, again.linear)


def test_map_rejects_non_symplectic():
    with pytest.raises(ValueError):
        AffineSymplecticMap(np.diag([2.0, 1.0, 1.0, 1.0]), np.zeros(4))


def test_map_inverse_and_compose(rng):
    a, b = random_affine_symplectic(1, 0.8), random_affine_symplectic(2, 0.8)
    z = rng.normal(size=4)
    assert np.allclose(a.inverse()(a(z)), z, atol=1e-12)
    assert np.allclose(a.compose(b)(z), a(b(z)), atol=1e-12)


@given(seed=st.integers(0, 10_000), k=st.integers(3, 40))
def test_action_invariant_under_affine_symplectic_maps(seed, k):
    r = np.random.default_rng(seed)
    X = r.normal(size=(k, 4))
    phi = random_affine_symplectic(seed, 0.7)
    assert abs(curve_action(phi(X)) - curve_action(X)) <= 1e-9 * max(1.0, np.abs(X).max() ** 2 * k)
