"""Symplectic conventions on R^{2n}.

Coordinates are interleaved as (p1, q1, p2, q2, ..., pn, qn).  The complex
structure J acts blockwise by J e_p = e_q, J e_q = -e_p, so that

    omega(u, v) = sum_i dp_i ^ dq_i (u, v) = <J u, v>

and the Liouville form lambda_z(v) = omega(z, v) / 2 satisfies d(lambda) = omega.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SYMPLECTIC_TOL = 1e-10


class DimensionError(ValueError):
    pass


def check_dim(z) -> int:
    z = np.asarray(z)
    d = z.shape[-1]
    if d % 2 or d < 4:
        raise DimensionError(f"expected an even dimension >= 4, got {d}")
    return d // 2


@lru_cache(maxsize=None)
def _j_matrix(n: int) -> np.ndarray:
    J = np.zeros((2 * n, 2 * n))
    for i in range(n):
        J[2 * i + 1, 2 * i] = 1.0
        J[2 * i, 2 * i + 1] = -1.0
    J.setflags(write=False)
    return J


def j_matrix(n: int) -> np.ndarray:
    """Matrix of J on R^{2n} (read-only)."""
    return _j_matrix(int(n))


def apply_J(v):
    """Apply J to the last axis of `v`; works on batches."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0::2] = -v[..., 1::2]
    out[..., 1::2] = v[..., 0::2]
    return out


def omega(u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[-1] != v.shape[-1]:
        raise DimensionError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    return np.sum(apply_J(u) * v, axis=-1)


def liouville(z, v):
    return 0.5 * omega(z, v)


def _as_closed_polyline(vertices) -> np.ndarray:
    pts = np.asarray(vertices, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("a closed polyline needs at least 3 vertices")
    return pts


# 3-point Gauss-Legendre on [0, 1]; exact for the degree-5 integrand of a cubic segment
_GL_X = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


def curve_action(vertices, velocities=None, times=None) -> float:
    """Action (integral of the Liouville form) around a closed curve.

    Without velocities this is the trapezoidal rule on the polyline, which for
    a linear 1-form reduces to ``sum omega(v_i, v_{i+1}) / 2``.  When the
    curve is a sampled trajectory, passing ``velocities`` (dz/dt at each
    vertex) and ``times`` switches to cubic Hermite segments, which brings the
    quadrature error from O(h^2) down to O(h^4).  The last vertex is joined to
    the first; for Hermite mode, ``times`` must have one more entry than
    ``vertices`` (the time at which the curve returns to its start).
    """
    pts = _as_closed_polyline(vertices)
    nxt = np.roll(pts, -1, axis=0)
    if velocities is None:
        return float(0.5 * np.sum(omega(pts, nxt)))

    vel = np.asarray(velocities, dtype=float)
    t = np.asarray(times, dtype=float)
    if vel.shape != pts.shape or t.shape != (pts.shape[0] + 1,):
        raise ValueError("velocities must match vertices and times needs len(vertices) + 1 entries")
    h = np.diff(t)[:, None]
    v0 = vel * h
    v1 = np.roll(vel, -1, axis=0) * h
    total = 0.0
    for s, w in zip(_GL_X, _GL_W):
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        z = h00 * pts + h10 * v0 + h01 * nxt + h11 * v1
        dh00 = 6 * s**2 - 6 * s
        dh10 = 3 * s**2 - 4 * s + 1
        dh01 = -6 * s**2 + 6 * s
        dh11 = 3 * s**2 - 2 * s
        dz = dh00 * pts + dh10 * v0 + dh01 * nxt + dh11 * v1
        total += w * np.sum(liouville(z, dz))
    return float(total)


@dataclass(frozen=True, eq=False)
class AffineSymplecticMap:
    """z -> linear @ z + translation with linear^T J linear = J."""

    linear: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        M = np.array(self.linear, dtype=float)
        t = np.array(self.translation, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionError("linear part must be square")
        n = check_dim(M[0])
        if t.shape != (2 * n,):
            raise DimensionError("translation does not match the linear part")
        J = j_matrix(n)
        defect = np.max(np.abs(M.T @ J @ M - J))
        if defect > SYMPLECTIC_TOL:
            raise ValueError(f"matrix is not symplectic (defect {defect:.3e})")
        M.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "linear", M)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    @classmethod
    def identity(cls, n: int) -> "AffineSymplecticMap":
        return cls(np.eye(2 * n), np.zeros(2 * n))

    def __call__(self, z):
        return np.asarray(z, dtype=float) @ self.linear.T + self.translation

    def push_vector(self, v):
        return np.asarray(v, dtype=float) @ self.linear.T

    def inverse(self) -> "AffineSymplecticMap":
        # M^{-1} = -J M^T J for symplectic M
        J = j_matrix(self.dim // 2)
        Minv = -J @ self.linear.T @ J
        return AffineSymplecticMap(Minv, -Minv @ self.translation)

    def compose(self, other: "AffineSymplecticMap") -> "AffineSymplecticMap":
        """self after other."""
        return AffineSymplecticMap(
            self.linear @ other.linear, self.linear @ other.translation + self.translation
        )


def _realify(U: np.ndarray) -> np.ndarray:
    """Real 2n x 2n form of a complex n x n matrix in the z_j = p_j + i q_j chart."""
    n = U.shape[0]
    R = np.zeros((2 * n, 2 * n))
    R[0::2, 0::2] = U.real
    R[0::2, 1::2] = -U.imag
    R[1::2, 0::2] = U.imag
    R[1::2, 1::2] = U.real
    return R


def _unitary(H: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(H)
    return (V * np.exp(1j * w)) @ V.conj().T


def random_affine_symplectic(seed: int, spread: float, n: int = 2) -> AffineSymplecticMap:
    """Random affine symplectomorphism of R^{2n}, deterministic in `seed`.

    The linear part is U2 @ D @ Shear @ U1 with U1, U2 unitary (block rotations
    and mixing), D = diag(c, 1/c) per block and Shear: p -> p + S q for a
    symmetric S.  `spread` scales all generators; ``spread=0`` gives the
    identity.
    """
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = np.random.default_rng(seed)

    def herm():
        X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        return spread * (X + X.conj().T) / 2

    U1 = _realify(_unitary(herm()))
    U2 = _realify(_unitary(herm()))
    logc = spread * rng.normal(size=n)
    D = np.diag(np.repeat(np.exp(logc), 2) ** np.tile([1.0, -1.0], n))
    S = rng.normal(size=(n, n))
    S = spread * (S + S.T) / 2
    shear = np.eye(2 * n)
    shear[0::2, 1::2] = S
    M = U2 @ D @ shear @ U1
    t = spread * rng.normal(size=2 * n)
    return AffineSymplecticMap(M, t)
