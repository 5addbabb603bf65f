import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import symplectic_eigenvalues
from sympgeom import capacity
from sympgeom.body import Ellipsoid, PerturbedBall, SmoothedPolydisc, Transformed, volume
from sympgeom.capacity import (CapacityError, CapacityEstimate, brunn_minkowski_gap, ehz_capacity,
                               is_symplectic_ball, santalo_bound, santalo_product, viterbo_report,
                               williamson, williamson_witness, witness_residual)
from sympgeom.core import j_matrix, random_affine_symplectic

BALL = Ellipsoid.ball(2)
ELL12 = Ellipsoid.from_coefficients([1.0, 2.0])
SANTALO_4D = (math.pi**2 / 2) ** 2


def random_spd(r, d=4):
    X = r.normal(size=(d, d))
    return X @ X.T + 0.5 * np.eye(d)


def test_williamson_examples():
    assert williamson(np.eye(4)).coefficients == pytest.approx((1.0, 1.0))
    assert williamson(np.diag([1.0, 1, 2, 2])).coefficients == pytest.approx((1.0, 2.0))
    with pytest.raises(ValueError):
        williamson(np.diag([1.0, 1, -2, 2]))


def test_williamson_matches_hermitian_oracle(rng):
    for _ in range(10):
        A = random_spd(rng, 6)
        assert np.allclose(williamson(A).coefficients, symplectic_eigenvalues(A), rtol=1e-10)


@given(seed=st.integers(0, 10_000))
def test_williamson_symplectic_invariance(seed):
    r = np.random.default_rng(seed)
    A = random_spd(r)
    S = random_affine_symplectic(seed, 0.6).linear
    a = williamson(A).coefficients
    b = williamson(S.T @ A @ S).coefficients
    assert np.allclose(a, b, rtol=1e-9)


@given(seed=st.integers(0, 10_000))
def test_williamson_witness_is_symplectic_and_diagonalizes(seed):
    A = random_spd(np.random.default_rng(seed))
    S, spec = williamson_witness(A)
    J = j_matrix(2)
    assert np.max(np.abs(S.T @ J @ S - J)) < 1e-9
    assert np.allclose(S.T @ A @ S, spec.canonical_matrix(), atol=1e-9 * np.abs(A).max())


def test_is_symplectic_ball():
    ok, w = is_symplectic_ball(np.eye(4))
    assert ok and witness_residual(np.eye(4), w) < 1e-12
    S = random_affine_symplectic(3, 0.7).linear
    A = S.T @ S
    ok, w = is_symplectic_ball(A)
    assert ok and witness_residual(A, w) <= 1e-8
    ok, w = is_symplectic_ball(np.diag([1.0, 1, 2, 2]))
    assert not ok and w is None


def test_capacity_examples():
    assert ehz_capacity(BALL).value == pytest.approx(math.pi, rel=1e-14)
    c = ehz_capacity(ELL12)
    assert c.value == pytest.approx(math.pi / 2, rel=1e-14) and c.method == "williamson_closed_form"
    with pytest.raises(CapacityError):
        ehz_capacity(SmoothedPolydisc(4), method="williamson_closed_form")


def test_polydisc_sampled_capacity():
    c = ehz_capacity(SmoothedPolydisc(16), n_starts=8, seed=1, horizon=3 * math.pi)
    assert math.pi - 0.05 <= c.value <= math.pi + 1e-6
    assert c.upper_bound and "upper bound" in c.method and c.n_closed >= 1


def test_sampled_capacity_not_below_closed_form():
    c = ehz_capacity(ELL12, method="min_action_sampled", n_starts=4)
    assert c.value >= math.pi / 2 - 1e-6


def test_sampled_capacity_without_closed_orbits():
    K = Ellipsoid.from_coefficients([1.0, math.sqrt(2.0)])
    with pytest.raises(CapacityError, match="no closed characteristic"):
        ehz_capacity(K, method="min_action_sampled", n_starts=2, horizon=2.0,
                     extra_starts=np.zeros((0, 4)))


def test_viterbo_examples():
    r = viterbo_report(BALL)
    assert abs(r.viterbo_ratio - 1) <= 1e-9 and not r.viterbo_violation
    r = viterbo_report(ELL12)
    assert r.volume == pytest.approx(math.pi**2 / 4, rel=1e-14)
    assert r.c_ehz == pytest.approx(math.pi / 2, rel=1e-14)
    assert r.viterbo_ratio == pytest.approx(2.0, rel=1e-12)
    assert r.recompute_ratio() == pytest.approx(r.viterbo_ratio, rel=1e-15)
    assert r.spectrum == pytest.approx((1.0, 2.0))
    assert r.santalo_product == pytest.approx(SANTALO_4D, rel=1e-12)
    assert r.to_dict()["method"] == "williamson_closed_form"


def test_viterbo_violation_is_flagged(monkeypatch, caplog):
    monkeypatch.setattr(capacity, "ehz_capacity",
                        lambda body, **kw: CapacityEstimate(4.0, "fixture"))
    with caplog.at_level(logging.WARNING, logger="sympgeom.capacity"):
        r = viterbo_report(BALL)
    assert r.viterbo_violation and r.viterbo_ratio < 1
    assert "Viterbo inequality violated" in caplog.text


def test_invariance_under_affine_symplectic_maps():
    phi = random_affine_symplectic(17, 0.8)
    T = Transformed(ELL12, phi)
    a, b = viterbo_report(ELL12), viterbo_report(T)
    for f in ("volume", "c_ehz", "viterbo_ratio"):
        assert getattr(b, f) == pytest.approx(getattr(a, f), rel=1e-6)


def test_capacity_monotone_under_inclusion():
    small = Ellipsoid.from_coefficients([1.5, 3.0])  # contained in ELL12
    assert ehz_capacity(small).value <= ehz_capacity(ELL12).value


def test_santalo_examples():
    assert santalo_product(BALL) == pytest.approx(SANTALO_4D, rel=1e-12)
    assert santalo_product(ELL12) == pytest.approx(SANTALO_4D, rel=1e-12)
    lin = random_affine_symplectic(5, 0.7).linear
    K = Ellipsoid(lin.T @ lin)
    assert santalo_product(K) == pytest.approx(SANTALO_4D, rel=1e-9)
    assert santalo_bound(2) == pytest.approx(SANTALO_4D)


def test_santalo_below_ball_value_for_polydisc():
    assert santalo_product(SmoothedPolydisc(8), samples=100_000) < SANTALO_4D


def test_brunn_minkowski_gap():
    K = Ellipsoid(np.diag([1.0, 2.0, 3.0, 0.5]))
    assert brunn_minkowski_gap(K) == (pytest.approx(0.0, abs=1e-12), 0.0)
    K2 = Ellipsoid(K.A, center=[0.4, -1.0, 0.2, 0.0])
    assert brunn_minkowski_gap(K2)[0] == pytest.approx(0.0, abs=1e-12)
    gap, se = brunn_minkowski_gap(PerturbedBall(2, 0.1), samples=10_000)
    assert gap > 3 * se and gap > 0


def test_brunn_minkowski_gap_zero_for_symmetric_nonellipsoid():
    gap, se = brunn_minkowski_gap(PerturbedBall(2, 0.0), samples=4000)
    assert abs(gap) <= 3 * se + 1e-9
