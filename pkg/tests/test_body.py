import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import polydisc_support, polydisc_volume
from sympgeom.body import (BodyError, Ellipsoid, MinkowskiDifference, PerturbedBall, SmoothedPolydisc,
                           Transformed, as_ellipsoid, boundary_point, evaluate_H, frame_at,
                           minkowski_difference, polar_body, strong_convexity_check, support,
                           support_values, volume)
from sympgeom.core import apply_J, random_affine_symplectic

E = np.eye(4)
BALL = Ellipsoid.ball(2)
ELL12 = Ellipsoid.from_coefficients([1.0, 2.0])


def unit_rows(rng, k, d=4):
    U = rng.normal(size=(k, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def all_bodies():
    phi = random_affine_symplectic(7, 0.6)
    return [
        BALL,
        ELL12,
        SmoothedPolydisc(8),
        SmoothedPolydisc(4, radii=[1.0, 1.5], center=[0.1, 0.0, -0.2, 0.3]),
        PerturbedBall(2, 0.1),
        Transformed(SmoothedPolydisc(6), phi),
        Transformed(ELL12, phi),
    ]


def test_evaluate_examples():
    ev = evaluate_H(BALL, E[0])
    assert ev.value == 1.0 and np.array_equal(ev.gradient, 2 * E[0])
    ev = evaluate_H(ELL12, E[2])
    assert ev.value == 2.0 and np.array_equal(ev.gradient, 4 * E[2])


@pytest.mark.parametrize("body", all_bodies(), ids=lambda b: b.kind)
def test_euler_identity_and_homogeneity(body, rng):
    Z = body.center + rng.normal(size=(200, 4))
    H = body.value(Z)
    G = body.gradient(Z)
    euler = np.einsum("ij,ij->i", G, Z - body.center)
    assert np.max(np.abs(euler - 2 * H) / H) < 1e-9
    t = 1.7
    assert np.allclose(body.value(body.center + t * (Z - body.center)), t * t * H, rtol=1e-12)


@pytest.mark.parametrize("body", all_bodies(), ids=lambda b: b.kind)
def test_gradient_and_hessian_match_finite_differences(body, rng):
    h = 1e-6
    for z in body.center + rng.normal(size=(5, 4)):
        g = body.gradient(z)
        Hs = body.hessian(z)
        for k in range(4):
            dz = h * E[k]
            fd = (body.value(z + dz) - body.value(z - dz)) / (2 * h)
            assert abs(fd - g[k]) <= 1e-6 * max(1.0, np.abs(g).max())
            fdg = (body.gradient(z + dz) - body.gradient(z - dz)) / (2 * h)
            assert np.max(np.abs(fdg - Hs[:, k])) <= 1e-5 * max(1.0, np.abs(Hs).max())


def test_polydisc_degenerate_flag():
    P = SmoothedPolydisc(8)
    assert P.is_degenerate(np.array([1.0, 0.0, 0.0, 0.0]))
    assert not P.is_degenerate(np.array([1.0, 0.0, 0.5, 0.0]))
    assert evaluate_H(P, np.array([1.0, 0.0, 0.0, 0.0])).degenerate


def test_boundary_point_examples():
    assert np.allclose(boundary_point(BALL, E[3]), E[3], atol=1e-15)
    assert np.allclose(boundary_point(ELL12, E[2]), E[2] / math.sqrt(2), atol=1e-15)
    with pytest.raises(BodyError):
        boundary_point(BALL, np.zeros(4))


@pytest.mark.parametrize("body", all_bodies(), ids=lambda b: b.kind)
def test_boundary_point_on_level_set(body, rng):
    Z = boundary_point(body, rng.normal(size=(50, 4)))
    assert np.max(np.abs(body.value(Z) - 1)) <= 1e-12


def test_boundary_point_commutes_with_linear_maps(rng):
    phi = random_affine_symplectic(3, 0.7)
    lin = type(phi)(phi.linear, np.zeros(4))
    base = SmoothedPolydisc(8)
    T = Transformed(base, lin)
    D = rng.normal(size=(20, 4))
    assert np.allclose(boundary_point(T, lin(D)), lin(boundary_point(base, D)), atol=1e-12)


def test_frame_examples(rng):
    f = frame_at(BALL, E[0])
    assert np.array_equal(f.normal, E[0]) and np.array_equal(f.char_dir, E[1])
    z = boundary_point(BALL, rng.normal(size=4))
    assert np.allclose(frame_at(BALL, z).char_dir, apply_J(z), atol=1e-15)
    f = frame_at(ELL12, E[2] / math.sqrt(2))
    assert np.allclose(f.normal, E[2]) and np.allclose(f.char_dir, E[3])
    assert np.array_equal(f.char_dir, apply_J(f.normal)) and f.normal @ f.char_dir == 0
    with pytest.raises(BodyError):
        frame_at(BALL, 1.1 * E[0])


def test_support_examples():
    assert support(BALL, E[0]).value == pytest.approx(1.0, abs=1e-15)
    assert support(ELL12, E[2]).value == pytest.approx(1 / math.sqrt(2), abs=1e-15)


@pytest.mark.parametrize("m", [2, 8, 32])
def test_polydisc_support_matches_dual_norm(m, rng):
    U = unit_rows(rng, 300)
    assert np.max(np.abs(support_values(SmoothedPolydisc(m), U) - polydisc_support(m, U))) < 1e-10


@pytest.mark.parametrize("body", all_bodies(), ids=lambda b: b.kind)
def test_support_eval_contract(body, rng):
    u = unit_rows(rng, 1)[0]
    s = support(body, u)
    assert s.value == pytest.approx(u @ s.maximizer, abs=1e-12)
    assert abs(body.value(s.maximizer) - 1) < 1e-10
    X = boundary_point(body, rng.normal(size=(500, 4)))
    assert np.all(X @ u <= s.value + 1e-10)


def test_transformed_support_rule(rng):
    phi = random_affine_symplectic(11, 0.8)
    base = SmoothedPolydisc(6)
    T = Transformed(base, phi)
    U = unit_rows(rng, 100)
    expected = support_values(base, U @ phi.linear) + U @ phi.translation
    assert np.max(np.abs(support_values(T, U) - expected)) < 1e-9


def test_support_duality_for_centered_ellipsoids(rng):
    A = random_affine_symplectic(4, 0.5).linear
    K = Ellipsoid(A.T @ np.diag([1, 1, 3, 3]) @ A)
    U = unit_rows(rng, 100)
    assert np.max(np.abs(support_values(polar_body(K), U) - np.sqrt(K.value(U)))) < 1e-9


def test_polar_examples(rng):
    for flag in (False, True):
        P = polar_body(BALL, symplectic=flag)
        assert np.allclose(P.A, np.eye(4))
    assert np.allclose(polar_body(ELL12).A, np.diag([1, 1, 0.5, 0.5]))
    with pytest.raises(BodyError):
        polar_body(Ellipsoid.ball(2, center=[0.1, 0, 0, 0]))


@pytest.mark.parametrize("body", [Ellipsoid(np.diag([1.0, 2.0, 3.0, 0.5])), SmoothedPolydisc(6),
                                  PerturbedBall(2, 0.1)], ids=lambda b: b.kind)
def test_double_symplectic_polar_is_minus_K(body, rng):
    U = unit_rows(rng, 100)
    Kww = polar_body(polar_body(body, symplectic=True), symplectic=True)
    assert np.max(np.abs(support_values(Kww, U) - support_values(body, -U))) < 1e-8


def test_minkowski_difference_examples(rng):
    U = unit_rows(rng, 100)
    K = Ellipsoid(np.diag([1.0, 2.0, 3.0, 0.5]))
    assert np.allclose(support_values(minkowski_difference(K), U), 2 * support_values(K, U), atol=1e-12)
    K2 = SmoothedPolydisc(4, center=[0.3, -0.2, 0.1, 0.5])
    K0 = SmoothedPolydisc(4)
    assert np.allclose(support_values(minkowski_difference(K2), U),
                       support_values(minkowski_difference(K0), U), atol=1e-10)
    P = PerturbedBall(2, 0.2)
    assert np.max(np.abs(support_values(MinkowskiDifference(P), U)
                         - support_values(P, U) - support_values(P, -U))) < 1e-9


def test_minkowski_difference_gauge_is_consistent(rng):
    D = MinkowskiDifference(PerturbedBall(2, 0.2))
    Z = boundary_point(D, rng.normal(size=(5, 4)))
    U = D.gradient(Z)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    # at a boundary point the outward normal attains the support value
    assert np.allclose(np.einsum("ij,ij->i", U, Z), support_values(D, U), atol=1e-7)


def test_volume_closed_forms():
    assert volume(BALL, "closed_form").value == pytest.approx(math.pi**2 / 2, rel=1e-14)
    assert volume(ELL12, "closed_form").value == pytest.approx(math.pi**2 / 4, rel=1e-14)
    K = Ellipsoid(np.diag([1.0, 2.0, 3.0, 0.5]))
    assert volume(minkowski_difference(K)).value == pytest.approx(16 * volume(K).value, rel=1e-12)
    with pytest.raises(BodyError):
        volume(SmoothedPolydisc(8), "closed_form")


def test_volume_invariant_under_symplectic_maps():
    phi = random_affine_symplectic(9, 0.7)
    assert volume(Transformed(ELL12, phi)).value == pytest.approx(math.pi**2 / 4, rel=1e-9)
    P = SmoothedPolydisc(8)
    v = volume(Transformed(P, phi), "radial", samples=200_000, seed=1)
    assert abs(v.value - polydisc_volume(8)) < 4 * v.stderr + 1e-12


@pytest.mark.parametrize("method", ["monte_carlo", "radial"])
def test_stochastic_volume_methods_agree_with_closed_form(method):
    P = SmoothedPolydisc(8)
    v = volume(P, method, samples=200_000, seed=3)
    assert abs(v.value - polydisc_volume(8)) < 4 * v.stderr
    assert v.stderr < 0.01 * v.value


def test_support_integral_volume_on_strongly_convex_bodies():
    # h det D^2 h is bounded only when the curvature is bounded below
    K = Transformed(ELL12, random_affine_symplectic(2, 0.4))
    v = volume(K, "support_integral", samples=20_000, seed=1)
    assert abs(v.value - math.pi**2 / 4) < 4 * v.stderr + 1e-9
    P = PerturbedBall(2, 0.1)
    a = volume(P, "support_integral", samples=20_000, seed=1)
    b = volume(P, "radial", samples=200_000, seed=2)
    assert abs(a.value - b.value) < 4 * math.hypot(a.stderr, b.stderr)


def test_monte_carlo_self_consistency_at_ten_times_samples():
    P = SmoothedPolydisc(16)
    small = volume(P, "monte_carlo", samples=200_000, seed=5)
    big = volume(P, "monte_carlo", samples=2_000_000, seed=6)
    assert abs(small.value - big.value) < 3 * math.hypot(small.stderr, big.stderr)
    assert big.value < math.pi**2


def test_monte_carlo_independent_of_threads():
    P = SmoothedPolydisc(8)
    a = volume(P, "monte_carlo", samples=600_000, seed=2, threads=1)
    b = volume(P, "monte_carlo", samples=600_000, seed=2, threads=3)
    assert a == b


def test_strong_convexity_examples(rng):
    rep = strong_convexity_check(BALL, 50)
    assert rep.passed and rep.min_tangential_eigenvalue == pytest.approx(1.0, abs=1e-12)
    P = SmoothedPolydisc(8)
    balanced = boundary_point(P, rng.normal(size=(100, 4)) * [1, 1, 1, 1])
    balanced = np.column_stack([balanced[:, :2], balanced[:, :2] @ np.array([[0, 1], [-1, 0]])])
    rep = strong_convexity_check(P, points=balanced)
    assert rep.passed and rep.min_tangential_eigenvalue > 0
    # uniform samples: curvature decays like a power of the smaller block, never negative
    assert strong_convexity_check(P, 200).min_tangential_eigenvalue > -1e-9
    with pytest.raises(BodyError):
        Ellipsoid(np.diag([1.0, 1.0, 1.0, 0.0]))


def test_as_ellipsoid_collapses_constructions():
    phi = random_affine_symplectic(1, 0.5)
    assert as_ellipsoid(Transformed(ELL12, phi)) is not None
    assert as_ellipsoid(SmoothedPolydisc(4)) is None


@given(seed=st.integers(0, 2**31))
def test_support_transformed_property(seed):
    r = np.random.default_rng(seed)
    phi = random_affine_symplectic(seed % 997, 0.5)
    U = unit_rows(r, 5)
    T = Transformed(ELL12, phi)
    exp = support_values(ELL12, U @ phi.linear) + U @ phi.translation
    assert np.allclose(support_values(T, U), exp, atol=1e-10)
