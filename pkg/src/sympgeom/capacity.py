"""Williamson spectrum, EHZ capacity and the volume/capacity identities."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import linalg

from .body import (BodyError, ConvexBody, MinkowskiDifference, as_ellipsoid, ball_volume,
                   minkowski_difference, polar_body, sphere_area, support_integrand, volume)
from .characteristics import survey
from .core import AffineSymplecticMap, j_matrix

log = logging.getLogger(__name__)

VITERBO_TOL = 1e-9


class CapacityError(RuntimeError):
    pass


@dataclass(frozen=True)
class WilliamsonSpectrum:
    coefficients: tuple

    @property
    def n(self) -> int:
        return len(self.coefficients)

    def canonical_matrix(self) -> np.ndarray:
        return np.diag(np.repeat(self.coefficients, 2))


def _check_spd(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] % 2:
        raise ValueError("expected an even-dimensional square matrix")
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ValueError("matrix is not positive definite") from None
    return A


def williamson(A) -> WilliamsonSpectrum:
    """Coefficients a_i with A symplectically congruent to sum a_i (p_i^2 + q_i^2).

    They are the moduli of the (purely imaginary) eigenvalues of J A.
    """
    A = _check_spd(A)
    n = A.shape[0] // 2
    ev = np.abs(np.linalg.eigvals(j_matrix(n) @ A).imag)
    return WilliamsonSpectrum(tuple(np.sort(ev)[::2].tolist()))


def williamson_witness(A):
    """Symplectic S with S^T A S = diag(a_1, a_1, ..., a_n, a_n), a ascending.

    Built from the real Schur form of the skew matrix A^{-1/2} J A^{-1/2},
    whose 2x2 blocks are (1/a_i) J after orienting each block.
    """
    A = _check_spd(A)
    n = A.shape[0] // 2
    J = j_matrix(n)
    w, V = np.linalg.eigh(A)
    Ainv_half = (V / np.sqrt(w)) @ V.T
    K = Ainv_half @ J @ Ainv_half
    K = 0.5 * (K - K.T)
    T, O = linalg.schur(K, output="real")
    cols, coef = [], []
    i = 0
    while i < 2 * n:
        beta = T[i + 1, i]
        x, y = O[:, i], O[:, i + 1]
        # want block [[0, -1/a], [1/a, 0]]; swapping the pair flips its sign
        if beta < 0:
            x, y = y, x
        cols.append((x, y))
        coef.append(1.0 / abs(beta))
        i += 2
    order = np.argsort(coef)
    O2 = np.column_stack([v for k in order for v in cols[k]])
    a = np.array(coef)[order]
    S = Ainv_half @ O2 @ np.diag(np.sqrt(np.repeat(a, 2)))
    return S, WilliamsonSpectrum(tuple(a.tolist()))


def is_symplectic_ball(A, tol: float = 1e-8):
    """True iff all Williamson coefficients coincide (within relative `tol`).

    Returns (verdict, witness) where the witness is an AffineSymplecticMap
    whose linear part S satisfies S^T A S ~ a I (None when the verdict is false).
    """
    S, spec = williamson_witness(A)
    a = np.asarray(spec.coefficients)
    verdict = bool(a.max() / a.min() - 1.0 <= tol)
    if not verdict:
        return False, None
    return True, AffineSymplecticMap(S, np.zeros(S.shape[0]))


def witness_residual(A, witness: AffineSymplecticMap) -> float:
    S = witness.linear
    C = S.T @ np.asarray(A, dtype=float) @ S
    a = np.mean(np.diag(C))
    return float(np.max(np.abs(C - a * np.eye(len(C)))))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CapacityEstimate:
    value: float
    method: str
    n_closed: int | None = None
    upper_bound: bool = False


def ehz_capacity(body: ConvexBody, method: str = "auto", n_starts: int = 32, seed: int = 0,
                 horizon: float | None = None, extra_starts=None, threads: int = 1) -> CapacityEstimate:
    """EHZ capacity as the minimal action of a closed characteristic.

    Ellipsoids use pi / max a_i.  Other bodies fall back to the minimum action
    over the closed orbits found by a survey; this is only an upper bound for
    the true minimum and is labelled as such.  The survey always includes
    the boundary points on the coordinate axes in addition to the random
    starts, since those carry the block circles of toric bodies.
    """
    ell = as_ellipsoid(body)
    if method == "auto":
        method = "williamson_closed_form" if ell is not None else "min_action_sampled"
    if method == "williamson_closed_form":
        if ell is None:
            raise CapacityError(f"closed-form capacity is unavailable for {body.kind}")
        return CapacityEstimate(math.pi / max(williamson(ell.A).coefficients), method)
    if method != "min_action_sampled":
        raise ValueError(f"unknown capacity method {method!r}")
    if extra_starts is None:
        extra_starts = body.center + np.eye(body.dim)
    sv = survey(body, n_starts, seed=seed, horizon=horizon, extra_starts=extra_starts,
                threads=threads)
    if not sv.closed_records:
        raise CapacityError("no closed characteristic detected within horizon")
    return CapacityEstimate(sv.min_action, "min_action_sampled (upper bound)",
                            n_closed=len(sv.closed_records), upper_bound=True)


@dataclass
class CapacityReport:
    volume: float
    volume_stderr: float
    volume_method: str
    c_ehz: float
    method: str
    viterbo_ratio: float
    n: int
    santalo_product: float | None = None
    spectrum: tuple | None = None
    n_closed: int | None = None
    viterbo_violation: bool = False

    def recompute_ratio(self) -> float:
        return self.volume * math.factorial(self.n) / self.c_ehz**self.n

    def to_dict(self) -> dict:
        return asdict(self)


def viterbo_report(body: ConvexBody, volume_method: str = "auto", samples: int = 2_000_000,
                   seed: int = 0, threads: int = 1, **capacity_kw) -> CapacityReport:
    n = body.n
    vol = volume(body, volume_method, samples=samples, seed=seed, threads=threads)
    cap = ehz_capacity(body, seed=seed, threads=threads, **capacity_kw)
    ratio = vol.value * math.factorial(n) / cap.value**n
    ell = as_ellipsoid(body)
    spectrum = williamson(ell.A).coefficients if ell is not None else None
    santalo = None
    if ell is not None and not np.any(body.center):
        santalo = santalo_product(body)
    # tolerance: closed forms at round-off, otherwise 3 standard errors of the volume
    tol = 3 * VITERBO_TOL + 3 * vol.stderr * math.factorial(n) / cap.value**n
    violation = ratio < 1.0 - tol
    if violation:
        log.warning("Viterbo inequality violated beyond tolerance: ratio %.9g (tol %.3g) for %r",
                    ratio, tol, body)
    return CapacityReport(vol.value, vol.stderr, vol.method, cap.value, cap.method, ratio, n,
                          santalo, spectrum, cap.n_closed, violation)


def santalo_product(body: ConvexBody, samples: int = 400_000, seed: int = 0) -> float:
    """vol(K) * vol(K°) for a body centered at the origin.

    Closed form for ellipsoids; otherwise both volumes come from the same
    sphere directions, with radial function H^{-1/2} for K and 1/h_K for K°.
    """
    if np.any(body.center):
        raise BodyError("Santalo product needs a body centered at the origin")
    ell = as_ellipsoid(body)
    if ell is not None:
        return volume(ell, "closed_form").value * volume(polar_body(ell), "closed_form").value
    return volume(body, "radial", samples=samples, seed=seed).value * \
        volume(polar_body(body), "radial", samples=samples, seed=seed).value


def brunn_minkowski_gap(body: ConvexBody, samples: int = 20_000, seed: int = 0):
    """vol(K - K)^(1/2n) - 2 vol(K)^(1/2n), with its standard error.

    Zero exactly (closed form) for ellipsoids.  Otherwise both volumes are
    sphere averages of h det(D^2 h) over common directions, and the error
    accounts for their correlation.
    """
    d = body.dim
    ell = as_ellipsoid(body)
    if ell is not None:
        vk = volume(ell, "closed_form").value
        vd = volume(minkowski_difference(ell), "closed_form").value
        return vd ** (1 / d) - 2 * vk ** (1 / d), 0.0
    diff = MinkowskiDifference(body)
    fk = support_integrand(body)
    fd = support_integrand(diff)
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(samples, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    a = 0.5 * (fk(U) + fk(-U))
    b = 0.5 * (fd(U) + fd(-U))
    scale = sphere_area(d) / d
    vk, vd = scale * a.mean(), scale * b.mean()
    gap = vd ** (1 / d) - 2 * vk ** (1 / d)
    # delta method on (vk, vd)
    ga = -2 * (1 / d) * vk ** (1 / d - 1) * scale
    gb = (1 / d) * vd ** (1 / d - 1) * scale
    cov = np.cov(np.vstack([a, b])) / samples
    se = math.sqrt(max(np.array([ga, gb]) @ cov @ np.array([ga, gb]), 0.0))
    return float(gap), se


def santalo_bound(n: int) -> float:
    return ball_volume(2 * n) ** 2


__all__ = [
    "CapacityError", "CapacityEstimate", "CapacityReport", "WilliamsonSpectrum",
    "brunn_minkowski_gap", "ehz_capacity", "is_symplectic_ball", "santalo_bound",
    "santalo_product", "viterbo_report", "williamson", "williamson_witness",
    "witness_residual",
]
