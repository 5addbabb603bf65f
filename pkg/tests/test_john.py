import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import regular_polygon, triangle_inradius
from sympgeom.body import Ellipsoid, SmoothedPolydisc, Transformed
from sympgeom.core import random_affine_symplectic
from sympgeom.john import (JohnError, SectionError, check_convex, john_ellipse, make_plane, polygon_area,
                           section, section_is_john, section_john_ratio)

E = np.eye(4)
O = np.zeros(4)
BALL = Ellipsoid.ball(2)
ELL12 = Ellipsoid.from_coefficients([1.0, 2.0])
SQUARE = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])


def radii(sec):
    return np.linalg.norm(sec.polygon - sec.interior, axis=1)


def test_section_examples():
    sec = section(BALL, make_plane(O, E[0], E[1]), 256)
    assert np.allclose(radii(sec), 1.0, atol=1e-12)
    sec = section(BALL, make_plane(0.6 * E[2], E[0], E[1]), 256)
    assert np.allclose(radii(sec), 0.8, atol=1e-12)
    sec = section(ELL12, make_plane(O, E[2], E[3]), 256)
    assert np.allclose(radii(sec), 1 / math.sqrt(2), atol=1e-12)


def test_section_points_on_boundary_and_convex():
    phi = random_affine_symplectic(2, 0.5)
    K = Transformed(SmoothedPolydisc(6), phi)
    s = 1 / math.sqrt(2)
    sec = section(K, make_plane(phi.translation + 0.1 * E[1], s * (E[0] + E[2]), E[3]), 300)
    assert np.max(np.abs(K.value(sec.points()) - 1)) <= 1e-8
    check_convex(sec.polygon)
    assert polygon_area(sec.polygon) > 0


def test_section_missing_interior():
    with pytest.raises(SectionError):
        section(BALL, make_plane(1.2 * E[2], E[0], E[1]))
    with pytest.raises(SectionError):
        make_plane(O, E[0], E[0] + E[1])


def test_john_square_and_triangle():
    je = john_ellipse(SQUARE)
    assert je.area == pytest.approx(math.pi, abs=1e-6)
    assert np.allclose(je.shape, np.eye(2), atol=1e-6) and np.allclose(je.center, 0, atol=1e-8)
    tri = regular_polygon(3, 1.0, math.pi / 2)
    r = triangle_inradius(math.sqrt(3.0))
    je = john_ellipse(tri)
    assert r == pytest.approx(0.5)
    assert je.area == pytest.approx(math.pi * r * r, abs=1e-6)
    assert je.max_violation <= 1e-8


def test_john_of_sampled_ellipse_is_itself():
    P = regular_polygon(512) * [1.0, 2.0]
    je = john_ellipse(P)
    assert je.area == pytest.approx(2 * math.pi, abs=1e-3 * 2 * math.pi)
    assert np.allclose(je.shape, np.diag([1.0, 2.0]), atol=1e-3)
    assert je.max_violation <= 1e-8


def test_john_rejects_bad_polygons():
    with pytest.raises(JohnError):
        john_ellipse(np.array([[0, 0], [2, 0], [1, 0.2], [1, 2]], dtype=float)[[0, 1, 3, 2]])
    with pytest.raises(JohnError):
        john_ellipse(np.array([[0.0, 0], [1, 1], [2, 2]]))
    with pytest.raises(JohnError):
        john_ellipse(np.array([[0.0, 0], [1, 1]]))


def test_john_accepts_clockwise_input():
    je = john_ellipse(SQUARE[::-1])
    assert je.area == pytest.approx(math.pi, abs=1e-6)


@given(seed=st.integers(0, 10_000))
def test_john_affine_equivariance(seed):
    r = np.random.default_rng(seed)
    P = regular_polygon(7, 1.0, r.uniform(0, 1)) * r.uniform(0.5, 1.5, size=2)
    L = r.normal(size=(2, 2))
    if abs(np.linalg.det(L)) < 0.2:
        L += np.eye(2)
    t = r.normal(size=2)
    a = john_ellipse(P)
    b = john_ellipse(P @ L.T + t)
    assert b.area == pytest.approx(a.area * abs(np.linalg.det(L)), rel=1e-6)
    assert np.allclose(b.center, L @ a.center + t, atol=1e-6)
    # shape matrices agree up to the O(2) ambiguity: compare B B^T
    assert np.allclose(b.shape @ b.shape.T, L @ a.shape @ a.shape.T @ L.T, atol=1e-6)


def test_john_unique_from_random_starts(rng):
    P = regular_polygon(9) * [1.0, 0.6] + [0.3, -0.2]
    ref = john_ellipse(P)
    for _ in range(5):
        c0 = ref.center + 0.1 * rng.normal(size=2)
        init = (0.05 * np.eye(2), c0)
        je = john_ellipse(P, init=init)
        assert np.allclose(je.center, ref.center, atol=1e-6)
        assert np.allclose(je.shape, ref.shape, atol=1e-6)


def test_section_is_john_for_ellipsoids(rng):
    lin = random_affine_symplectic(8, 0.5).linear
    K = Ellipsoid(lin.T @ np.diag([1.0, 1.0, 2.0, 2.0]) @ lin)
    for _ in range(3):
        Q, _ = np.linalg.qr(rng.normal(size=(4, 2)))
        assert section_is_john(K, make_plane(O, Q[:, 0], Q[:, 1]), tol=1e-3)
    assert section_is_john(BALL, make_plane(O, E[0], E[1]))


def test_polydisc_mixed_section_is_not_john():
    assert not section_is_john(SmoothedPolydisc(8), make_plane(O, E[0], E[2]), tol=1e-3)
    assert section_john_ratio(SmoothedPolydisc(8), make_plane(O, E[0], E[2])) < 0.9


def test_polydisc_diagonal_block_section_is_round():
    # both blocks equal |z_1|^2 on this plane, so the section is a circle
    s = 1 / math.sqrt(2)
    plane = make_plane(O, s * (E[0] + E[2]), s * (E[1] + E[3]))
    assert section_is_john(SmoothedPolydisc(8), plane, tol=1e-3)
