"""Smooth strongly convex bodies given by 2-homogeneous Hamiltonians.

A body is ``K = {z : H(z) <= 1}`` where ``H`` is positively 2-homogeneous
about ``body.center``.  Everything downstream (normals, characteristic
directions, flows, tangencies) is computed from ``H``, its gradient and its
Hessian, all of which accept batches of points along leading axes.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .core import AffineSymplecticMap, apply_J, check_dim, j_matrix

BOUNDARY_TOL = 1e-8
STRONG_CONVEXITY_EPS = 1e-6
MC_DEFAULT_SAMPLES = 2_000_000
MC_CHUNK = 250_000


class BodyError(ValueError):
    pass


class SupportConvergenceError(RuntimeError):
    def __init__(self, message, direction=None, residual=None):
        super().__init__(message)
        self.direction = direction
        self.residual = residual


class HamiltonianEval(NamedTuple):
    value: np.ndarray
    gradient: np.ndarray
    hessian: np.ndarray
    degenerate: bool


class BoundaryFrame(NamedTuple):
    point: np.ndarray
    normal: np.ndarray
    char_dir: np.ndarray


class SupportEval(NamedTuple):
    direction: np.ndarray
    value: float
    maximizer: np.ndarray


class VolumeEstimate(NamedTuple):
    value: float
    stderr: float
    method: str


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere S^{d-1}."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


class ConvexBody:
    """Base class; subclasses implement value/gradient/hessian."""

    kind = "abstract"

    def __init__(self, n: int, center=None):
        self.n = int(n)
        if self.n < 2:
            raise BodyError("need n >= 2")
        c = np.zeros(2 * self.n) if center is None else np.array(center, dtype=float)
        if c.shape != (2 * self.n,):
            raise BodyError(f"center must have length {2 * self.n}")
        c.setflags(write=False)
        self.center = c

    @property
    def dim(self) -> int:
        return 2 * self.n

    def value(self, z) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, z) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, z) -> np.ndarray:
        # central differences of the gradient; subclasses override when analytic
        z = np.asarray(z, dtype=float)
        d = self.dim
        h = 1e-6 * np.maximum(1.0, np.linalg.norm(z - self.center, axis=-1))[..., None]
        cols = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = 1.0
            cols.append((self.gradient(z + h * e) - self.gradient(z - h * e)) / (2 * h))
        Hs = np.stack(cols, axis=-1)
        return 0.5 * (Hs + np.swapaxes(Hs, -1, -2))

    def is_degenerate(self, z) -> bool:
        return False

    # support function --------------------------------------------------
    def support_batch(self, U) -> tuple[np.ndarray, np.ndarray]:
        """Support values and maximizers for a batch of directions (k, d)."""
        return _support_newton(self, np.atleast_2d(np.asarray(U, dtype=float)))

    def support_hessian(self, U) -> np.ndarray:
        """Hessian of the support function (1-homogeneous on R^d) at each direction."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        _, X = self.support_batch(U)
        G = self.gradient(X)
        Hs = self.hessian(X)
        lam = np.einsum("kd,kd->k", G, U) / np.einsum("kd,kd->k", U, U)
        d = self.dim
        k = U.shape[0]
        KKT = np.zeros((k, d + 1, d + 1))
        KKT[:, :d, :d] = Hs
        KKT[:, :d, d] = -U
        KKT[:, d, :d] = U
        rhs = np.zeros((k, d + 1, d))
        rhs[:, :d, :] = lam[:, None, None] * np.eye(d)
        sol = np.linalg.solve(KKT, rhs)
        D = sol[:, :d, :]
        return 0.5 * (D + np.swapaxes(D, -1, -2))

    def __repr__(self):
        return f"{type(self).__name__}(n={self.n}, center={self.center.tolist()})"


class Ellipsoid(ConvexBody):
    """H(z) = (z - c)^T A (z - c) with A symmetric positive definite."""

    kind = "ellipsoid"

    def __init__(self, A, center=None):
        A = np.array(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise BodyError("A must be a square matrix")
        n = check_dim(A[0])
        super().__init__(n, center)
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise BodyError("A must be symmetric")
        A = 0.5 * (A + A.T)
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            raise BodyError("A must be positive definite (full rank)") from None
        A.setflags(write=False)
        self.A = A

    @classmethod
    def ball(cls, n: int = 2, radius: float = 1.0, center=None) -> "Ellipsoid":
        return cls(np.eye(2 * n) / radius**2, center)

    @classmethod
    def from_coefficients(cls, a, center=None) -> "Ellipsoid":
        """Canonical form sum_i a_i (p_i^2 + q_i^2)."""
        return cls(np.diag(np.repeat(np.asarray(a, dtype=float), 2)), center)

    def value(self, z):
        w = np.asarray(z, dtype=float) - self.center
        return np.einsum("...i,ij,...j->...", w, self.A, w)

    def gradient(self, z):
        w = np.asarray(z, dtype=float) - self.center
        return 2.0 * w @ self.A

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        return np.broadcast_to(2.0 * self.A, z.shape[:-1] + self.A.shape).copy()

    def support_batch(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        AiU = np.linalg.solve(self.A, U.T).T
        s = np.sqrt(np.einsum("kd,kd->k", U, AiU))
        return U @ self.center + s, self.center + AiU / s[:, None]

    def support_hessian(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Ai = np.linalg.inv(self.A)
        AiU = U @ Ai
        s = np.sqrt(np.einsum("kd,kd->k", U, AiU))
        return Ai[None] / s[:, None, None] - np.einsum("ki,kj->kij", AiU, AiU) / s[:, None, None] ** 3

    def __repr__(self):
        return f"Ellipsoid(A={self.A.tolist()}, center={self.center.tolist()})"


class SmoothedPolydisc(ConvexBody):
    """H(z) = (sum_i (|z_i - c_i|^2 / r_i^2)^m)^(1/m), z_i the (p_i, q_i) block.

    As m grows the body increases to the polydisc prod_i {|z_i| <= r_i}.
    """

    kind = "smoothed_polydisc"

    def __init__(self, m: int, radii=None, n: int = 2, center=None):
        if radii is not None:
            n = len(radii)
        super().__init__(n, center)
        if int(m) != m or m < 1:
            raise BodyError("smoothing exponent m must be a positive integer")
        self.m = int(m)
        r = np.ones(self.n) if radii is None else np.array(radii, dtype=float)
        if r.shape != (self.n,) or np.any(r <= 0):
            raise BodyError("block radii must be positive")
        r.setflags(write=False)
        self.radii = r

    def _blocks(self, z):
        w = np.asarray(z, dtype=float) - self.center
        s = w[..., 0::2] ** 2 + w[..., 1::2] ** 2
        return w, s / self.radii**2

    def _value_from_y(self, y):
        ymax = np.max(y, axis=-1)
        safe = np.where(ymax > 0, ymax, 1.0)
        H = safe * np.sum((y / safe[..., None]) ** self.m, axis=-1) ** (1.0 / self.m)
        return np.where(ymax > 0, H, 0.0)

    def value(self, z):
        return self._value_from_y(self._blocks(z)[1])

    def _dH_ds(self, y, H):
        q = y / H[..., None]
        return q ** (self.m - 1) / self.radii**2, q

    def gradient(self, z):
        w, y = self._blocks(z)
        H = self._value_from_y(y)
        with np.errstate(invalid="ignore", divide="ignore"):
            dHds, _ = self._dH_ds(y, H)
        g = 2.0 * w * np.repeat(dHds, 2, axis=-1)
        return np.where((H > 0)[..., None], g, 0.0)

    def hessian(self, z):
        w, y = self._blocks(z)
        H = self._value_from_y(y)
        m = self.m
        dHds, q = self._dH_ds(y, H)
        r2 = self.radii**2
        qm1 = q ** (m - 1) / r2
        d2 = (1 - m) / H[..., None, None] * qm1[..., :, None] * qm1[..., None, :]
        diag = (m - 1) / H[..., None] * q ** (m - 2) / r2**2
        d2 = d2 + np.einsum("...i,ij->...ij", diag, np.eye(self.n))
        # block embedding: E[..., 2i + a, i] = 2 w[..., 2i + a]
        n = self.n
        E = np.zeros(w.shape + (n,))
        for i in range(n):
            E[..., 2 * i : 2 * i + 2, i] = 2.0 * w[..., 2 * i : 2 * i + 2]
        Hs = np.einsum("...ai,...ij,...bj->...ab", E, d2, E)
        Hs = Hs + np.einsum("...a,ab->...ab", np.repeat(2.0 * dHds, 2, axis=-1), np.eye(2 * n))
        return Hs

    def is_degenerate(self, z) -> bool:
        _, y = self._blocks(z)
        return bool(self.m >= 2 and np.any(y <= 1e-14 * np.max(y)))

    def __repr__(self):
        return f"SmoothedPolydisc(m={self.m}, radii={self.radii.tolist()}, center={self.center.tolist()})"


class PerturbedBall(ConvexBody):
    """Ball with an odd cubic perturbation of its gauge.

    gauge(w) = |w| + eps <u, w>^3 / |w|^2, H = gauge^2, w = z - center.  For
    eps != 0 the body has no center of symmetry, which makes it the standard
    control for strict Brunn-Minkowski.  Convex for |eps| small (checked by
    ``strong_convexity_check``).
    """

    kind = "perturbed_ball"

    def __init__(self, n: int = 2, eps: float = 0.1, direction=None, center=None):
        super().__init__(n, center)
        u = np.zeros(2 * self.n) if direction is None else np.array(direction, dtype=float)
        if direction is None:
            u[0] = 1.0
        if u.shape != (2 * self.n,) or np.linalg.norm(u) == 0:
            raise BodyError("perturbation direction must be a non-zero vector of length 2n")
        u = u / np.linalg.norm(u)
        u.setflags(write=False)
        self.direction = u
        self.eps = float(eps)

    def _parts(self, z):
        w = np.asarray(z, dtype=float) - self.center
        r = np.linalg.norm(w, axis=-1)
        s = w @ self.direction
        return w, r, s

    def _gauge(self, w, r, s):
        return r + self.eps * s**3 / r**2

    def value(self, z):
        w, r, s = self._parts(z)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = np.where(r > 0, self._gauge(w, r, s), 0.0)
        return g**2

    def _gauge_grad(self, w, r, s):
        u = self.direction
        r_ = r[..., None]
        s_ = s[..., None]
        return w / r_ + self.eps * (3 * s_**2 * u / r_**2 - 2 * s_**3 * w / r_**4)

    def gradient(self, z):
        w, r, s = self._parts(z)
        return 2.0 * self._gauge(w, r, s)[..., None] * self._gauge_grad(w, r, s)

    def hessian(self, z):
        w, r, s = self._parts(z)
        u = self.direction
        d = self.dim
        I = np.eye(d)
        r_ = r[..., None, None]
        s_ = s[..., None, None]
        ww = np.einsum("...i,...j->...ij", w, w)
        uw = np.einsum("i,...j->...ij", u, w)
        uu = np.outer(u, u)
        hess_r = (I - ww / r_**2) / r_
        hess_t = (
            6 * s_ * uu / r_**2
            - 6 * s_**2 * (uw + np.swapaxes(uw, -1, -2)) / r_**4
            - 2 * s_**3 * I / r_**4
            + 8 * s_**3 * ww / r_**6
        )
        gg = self._gauge_grad(w, r, s)
        g = self._gauge(w, r, s)[..., None, None]
        return 2 * np.einsum("...i,...j->...ij", gg, gg) + 2 * g * (hess_r + self.eps * hess_t)

    def __repr__(self):
        return f"PerturbedBall(n={self.n}, eps={self.eps}, direction={self.direction.tolist()})"


class Transformed(ConvexBody):
    """Image Phi(K) of a body under an affine symplectic map."""

    kind = "transformed"

    def __init__(self, base: ConvexBody, phi: AffineSymplecticMap):
        if phi.dim != base.dim:
            raise BodyError("map and body dimensions differ")
        super().__init__(base.n, phi(base.center))
        self.base = base
        self.phi = phi
        self._Minv = phi.inverse().linear

    def _pull(self, z):
        return (np.asarray(z, dtype=float) - self.phi.translation) @ self._Minv.T

    def value(self, z):
        return self.base.value(self._pull(z))

    def gradient(self, z):
        return self.base.gradient(self._pull(z)) @ self._Minv

    def hessian(self, z):
        Mi = self._Minv
        return Mi.T @ self.base.hessian(self._pull(z)) @ Mi

    def is_degenerate(self, z) -> bool:
        return self.base.is_degenerate(self._pull(z))

    def support_batch(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        M = self.phi.linear
        vals, X = self.base.support_batch(U @ M)
        return vals + U @ self.phi.translation, self.phi(X)

    def support_hessian(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        M = self.phi.linear
        return M @ self.base.support_hessian(U @ M) @ M.T

    def __repr__(self):
        return f"Transformed({self.base!r}, linear={self.phi.linear.tolist()}, translation={self.phi.translation.tolist()})"


class PolarBody(ConvexBody):
    """Polar body of a body containing the origin, backed by the base support function.

    The gauge of K° is h_K, so H°(y) = h_K(y)^2, and the support function of
    K° is the gauge sqrt(H_K).
    """

    kind = "polar"

    def __init__(self, base: ConvexBody):
        if np.any(base.center != 0) or not base.value(np.zeros(base.dim)) < 1:
            raise BodyError("polar body needs a base centered at the origin")
        super().__init__(base.n)
        self.base = base

    def value(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1, self.dim)
        nz = np.linalg.norm(flat, axis=1) > 0
        out = np.zeros(flat.shape[0])
        if nz.any():
            out[nz] = self.base.support_batch(flat[nz])[0] ** 2
        return out.reshape(z.shape[:-1])

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        flat = np.atleast_2d(z.reshape(-1, self.dim))
        h, X = self.base.support_batch(flat)
        return (2 * h[:, None] * X).reshape(z.shape)

    def hessian(self, z):
        z = np.asarray(z, dtype=float)
        flat = np.atleast_2d(z.reshape(-1, self.dim))
        h, X = self.base.support_batch(flat)
        D = self.base.support_hessian(flat)
        Hs = 2 * np.einsum("ki,kj->kij", X, X) + 2 * h[:, None, None] * D
        return Hs.reshape(z.shape + (self.dim,))

    def support_batch(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Hb = self.base.value(U)
        g = np.sqrt(Hb)
        return g, self.base.gradient(U) / (2 * g[:, None])

    def support_hessian(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Hb = self.base.value(U)[:, None, None]
        G = self.base.gradient(U)
        return self.base.hessian(U) / (2 * np.sqrt(Hb)) - np.einsum("ki,kj->kij", G, G) / (4 * Hb**1.5)

    def __repr__(self):
        return f"PolarBody({self.base!r})"


class MinkowskiDifference(ConvexBody):
    """K - K, given by its support function h_K(u) + h_K(-u).

    Pointwise H (the squared gauge) needs an optimization per point; prefer
    the support-function based volume for this kind.
    """

    kind = "minkowski_difference"

    def __init__(self, base: ConvexBody):
        super().__init__(base.n)
        self.base = base

    def support_batch(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        hp, Xp = self.base.support_batch(U)
        hm, Xm = self.base.support_batch(-U)
        return hp + hm, Xp - Xm

    def support_hessian(self, U):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return self.base.support_hessian(U) + self.base.support_hessian(-U)

    def _gauge_one(self, y):
        if not np.any(y):
            return 0.0, np.zeros(self.dim)

        def neg_ratio(u):
            h, X = self.support_batch(u)
            val = (u @ y) / h[0]
            grad = (y * h[0] - (u @ y) * X[0]) / h[0] ** 2
            return -val, -grad

        res = optimize.minimize(neg_ratio, y / np.linalg.norm(y), jac=True, method="BFGS",
                                options={"gtol": 1e-12})
        u = res.x
        h = self.support_batch(u)[0][0]
        return float((u @ y) / h), u / h

    def value(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1, self.dim)
        out = np.array([self._gauge_one(y)[0] for y in flat]) ** 2
        return out.reshape(z.shape[:-1])

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        flat = z.reshape(-1, self.dim)
        out = []
        for y in flat:
            g, du = self._gauge_one(y)
            out.append(2 * g * du)
        return np.array(out).reshape(z.shape)

    def __repr__(self):
        return f"MinkowskiDifference({self.base!r})"


def as_ellipsoid(body: ConvexBody) -> Ellipsoid | None:
    """Collapse ellipsoid-valued constructions to a plain Ellipsoid, else None."""
    if isinstance(body, Ellipsoid):
        return body
    if isinstance(body, Transformed):
        base = as_ellipsoid(body.base)
        if base is None:
            return None
        Mi = body._Minv
        return Ellipsoid(Mi.T @ base.A @ Mi, body.phi(base.center))
    if isinstance(body, PolarBody):
        base = as_ellipsoid(body.base)
        return None if base is None else Ellipsoid(np.linalg.inv(base.A))
    if isinstance(body, MinkowskiDifference):
        base = as_ellipsoid(body.base)
        return None if base is None else Ellipsoid(base.A / 4.0)
    return None


# ---------------------------------------------------------------------------
# operations


def evaluate_H(body: ConvexBody, z) -> HamiltonianEval:
    z = np.asarray(z, dtype=float)
    return HamiltonianEval(body.value(z), body.gradient(z), body.hessian(z), body.is_degenerate(z))


def boundary_point(body: ConvexBody, direction) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    if np.any(np.linalg.norm(d, axis=-1) == 0):
        raise BodyError("boundary_point needs a non-zero direction")
    p = body.center + d
    x = body.center + d / np.sqrt(body.value(p))[..., None]
    # one Newton polish along the ray for numerically evaluated H
    return body.center + (x - body.center) / np.sqrt(body.value(x))[..., None]


def frame_at(body: ConvexBody, z, tol: float = BOUNDARY_TOL) -> BoundaryFrame:
    z = np.asarray(z, dtype=float)
    off = np.max(np.abs(body.value(z) - 1.0))
    if off > tol:
        raise BodyError(f"point is off the boundary by {off:.3e}")
    g = body.gradient(z)
    normal = g / np.linalg.norm(g, axis=-1, keepdims=True)
    return BoundaryFrame(z, normal, apply_J(normal))


def _support_newton(body: ConvexBody, U: np.ndarray, max_iter: int = 50, tol: float = 1e-10):
    """Support values and maximizers by Newton on the first-order conditions.

    For 2-homogeneous H the maximizer of <u, x> on {H <= 1} is the radial
    image of the minimizer of H(c + w) on the hyperplane <u, w> = 1, and
    h(u) = <u, c> + 1 / sqrt(min H).  That minimization is smooth and
    convex, so damped Newton with Armijo backtracking on H converges from the
    radial initialization.  Directions still misaligned after `max_iter`
    iterations go through a BFGS fallback.
    """
    k, d = U.shape
    if np.any(np.linalg.norm(U, axis=1) == 0):
        raise BodyError("support direction must be non-zero")
    c = body.center
    X0 = boundary_point(body, U)
    W = (X0 - c) / np.einsum("kd,kd->k", U, X0 - c)[:, None]
    act = np.ones(k, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(act)
        if idx.size == 0:
            break
        Wa, Ua = W[idx], U[idx]
        Z = c + Wa
        G = body.gradient(Z)
        Hv = body.value(Z)
        # stationarity on the hyperplane: G parallel to u
        lam = np.einsum("kd,kd->k", G, Ua) / np.einsum("kd,kd->k", Ua, Ua)
        res = np.linalg.norm(G - lam[:, None] * Ua, axis=1) / np.linalg.norm(G, axis=1)
        conv = res <= tol
        act[idx[conv]] = False
        keep = ~conv
        if not keep.any():
            break
        idx, Wa, Ua, G, Hv, Z = idx[keep], Wa[keep], Ua[keep], G[keep], Hv[keep], Z[keep]
        m = idx.size
        KKT = np.zeros((m, d + 1, d + 1))
        KKT[:, :d, :d] = body.hessian(Z)
        KKT[:, :d, d] = Ua
        KKT[:, d, :d] = Ua
        rhs = np.concatenate([-G, np.zeros((m, 1))], axis=1)
        try:
            dw = np.linalg.solve(KKT, rhs[..., None])[..., 0][:, :d]
        except np.linalg.LinAlgError:
            break
        slope = np.einsum("kd,kd->k", G, dw)
        step = np.ones(m)
        pending = np.ones(m, dtype=bool)
        for _ in range(30):
            j = np.flatnonzero(pending)
            trial = Wa[j] + step[j, None] * dw[j]
            ok = body.value(c + trial) <= Hv[j] + 1e-4 * step[j] * slope[j] + 1e-14 * Hv[j]
            W[idx[j[ok]]] = trial[ok]
            pending[j[ok]] = False
            step[pending] *= 0.5
            if not pending.any():
                break
        # rows whose line search failed cannot make progress; leave them to the fallback
        act[idx[pending]] = False
    Z = c + W
    X = c + W / np.sqrt(body.value(Z))[:, None]
    G = body.gradient(X)
    lam = np.einsum("kd,kd->k", G, U) / np.einsum("kd,kd->k", U, U)
    rnorm = np.linalg.norm(G - lam[:, None] * U, axis=1) / np.linalg.norm(G, axis=1)
    for i in np.flatnonzero(~(rnorm <= tol)):
        X[i] = _support_fallback(body, U[i])
    return np.einsum("kd,kd->k", U, X), X


def _support_fallback(body: ConvexBody, u: np.ndarray) -> np.ndarray:
    """Maximize <u, d> / sqrt(H(c + d)) over d (degree-0 homogeneous) with BFGS."""
    c = body.center

    def f(d):
        Hd = body.value(c + d)
        g = np.sqrt(Hd)
        val = (u @ d) / g
        grad = u / g - (u @ d) * body.gradient(c + d) / (2 * g * Hd)
        return -val, -grad

    res = optimize.minimize(f, u / np.linalg.norm(u), jac=True, method="BFGS",
                            options={"gtol": 1e-13, "maxiter": 500})
    x = boundary_point(body, res.x)
    g = body.gradient(x)
    cosang = (g @ u) / (np.linalg.norm(g) * np.linalg.norm(u))
    if not (1 - cosang) <= 1e-12:
        raise SupportConvergenceError(
            "support maximization did not converge", direction=u, residual=float(1 - cosang)
        )
    return x


def support(body: ConvexBody, direction) -> SupportEval:
    u = np.asarray(direction, dtype=float)
    if np.linalg.norm(u) == 0:
        raise BodyError("support direction must be non-zero")
    vals, X = body.support_batch(u[None])
    return SupportEval(u, float(vals[0]), X[0])


def support_values(body: ConvexBody, U) -> np.ndarray:
    return body.support_batch(np.atleast_2d(U))[0]


def polar_body(body: ConvexBody, symplectic: bool = False) -> ConvexBody:
    """K° or, with ``symplectic=True``, the symplectic polar J K°."""
    if np.any(body.center != 0):
        raise BodyError("polar body requires a body centered at the origin")
    ell = as_ellipsoid(body)
    if ell is not None:
        P = Ellipsoid(np.linalg.inv(ell.A))
    else:
        P = PolarBody(body)
    if not symplectic:
        return P
    J = j_matrix(body.n)
    if isinstance(P, Ellipsoid):
        # J E(B) = E(J B J^T)
        return Ellipsoid(J @ P.A @ J.T)
    return Transformed(P, AffineSymplecticMap(J, np.zeros(body.dim)))


def minkowski_difference(body: ConvexBody) -> ConvexBody:
    ell = as_ellipsoid(body)
    if ell is not None:
        return Ellipsoid(ell.A / 4.0)
    return MinkowskiDifference(body)


# ---------------------------------------------------------------------------
# volume


def _random_directions(rng, k, d):
    U = rng.normal(size=(k, d))
    return U / np.linalg.norm(U, axis=1, keepdims=True)


def _chunks(samples: int) -> list[int]:
    full, rest = divmod(samples, MC_CHUNK)
    return [MC_CHUNK] * full + ([rest] if rest else [])


def _map_chunks(fn, seed, samples, threads):
    sizes = _chunks(samples)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    args = list(zip(seqs, sizes))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda a: fn(*a), args))
    return [fn(*a) for a in args]


def _mc_rejection(body, samples, seed, threads):
    d = body.dim
    E = np.eye(d)
    hi = support_values(body, E)
    lo = -support_values(body, -E)
    box = float(np.prod(hi - lo))

    def chunk(seq, size):
        rng = np.random.default_rng(seq)
        X = lo + (hi - lo) * rng.random((size, d))
        return int(np.count_nonzero(body.value(X) <= 1.0))

    hits = sum(_map_chunks(chunk, seed, samples, threads))
    p = hits / samples
    return box * p, box * math.sqrt(max(p * (1 - p), 0.0) / samples)


def _sphere_mean(integrand, body, samples, seed, threads):
    d = body.dim

    def chunk(seq, size):
        rng = np.random.default_rng(seq)
        U = _random_directions(rng, size, d)
        # antithetic pairs reduce variance for near-symmetric bodies
        f = 0.5 * (integrand(U) + integrand(-U))
        return f.sum(), (f**2).sum(), size

    parts = _map_chunks(chunk, seed, samples, threads)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    N = sum(p[2] for p in parts)
    mean = s1 / N
    var = max(s2 / N - mean**2, 0.0)
    return mean, math.sqrt(var / N)


def radial_integrand(body):
    d = body.dim
    return lambda U: body.value(body.center + U) ** (-d / 2)


def support_integrand(body):
    """h(u) * det of the support Hessian on u-perp; integrates to d * vol over the sphere."""

    def f(U):
        h = support_values(body, U)
        D = body.support_hessian(U) + np.einsum("ki,kj->kij", U, U)
        return h * np.linalg.det(D)

    return f


def volume(body: ConvexBody, method: str = "auto", samples: int = MC_DEFAULT_SAMPLES,
           seed: int = 0, threads: int = 1) -> VolumeEstimate:
    """Volume of a body.

    Methods: ``closed_form`` (ellipsoids), ``monte_carlo`` (rejection sampling
    in the support bounding box), ``radial`` (sphere average of rho^d) and
    ``support_integral`` (sphere average of h * det D^2 h, the only option for
    bodies known through their support function alone).  Stochastic methods
    split ``seed`` into fixed-size chunk streams so the result does not depend
    on ``threads``.
    """
    d = body.dim
    if method == "auto":
        if as_ellipsoid(body) is not None:
            method = "closed_form"
        elif isinstance(body, MinkowskiDifference):
            method = "support_integral"
        else:
            method = "monte_carlo"
    if method == "closed_form":
        ell = as_ellipsoid(body)
        if ell is None:
            raise BodyError(f"closed-form volume is unavailable for {body.kind}")
        return VolumeEstimate(ball_volume(d) / math.sqrt(np.linalg.det(ell.A)), 0.0, method)
    if method == "monte_carlo":
        v, se = _mc_rejection(body, samples, seed, threads)
        return VolumeEstimate(v, se, method)
    if method in ("radial", "support_integral"):
        integrand = radial_integrand(body) if method == "radial" else support_integrand(body)
        mean, se = _sphere_mean(integrand, body, samples, seed, threads)
        scale = sphere_area(d) / d
        return VolumeEstimate(scale * mean, scale * se, method)
    raise BodyError(f"unknown volume method {method!r}")


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexityReport:
    min_tangential_eigenvalue: float
    passed: bool
    n_samples: int


def strong_convexity_check(body: ConvexBody, n_samples: int = 200, seed: int = 0,
                           eps: float = STRONG_CONVEXITY_EPS, points=None) -> ConvexityReport:
    """Minimal eigenvalue of Hess H on the tangent hyperplane, divided by |grad H|.

    Samples uniformly random boundary directions, or the radial boundary
    images of `points` (offsets from the center) when given.
    """
    if points is not None:
        Z = boundary_point(body, np.atleast_2d(np.asarray(points, dtype=float)))
        n_samples = len(Z)
    else:
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        rng = np.random.default_rng(seed)
        Z = boundary_point(body, _random_directions(rng, n_samples, body.dim))
    G = body.gradient(Z)
    Hs = body.hessian(Z)
    worst = np.inf
    for g, Hz in zip(G, Hs):
        nrm = np.linalg.norm(g)
        # orthonormal basis of the tangent hyperplane g-perp
        Q, _ = np.linalg.qr(np.column_stack([g / nrm, np.eye(body.dim)]))
        T = Q[:, 1 : body.dim]
        lam = np.linalg.eigvalsh(T.T @ Hz @ T).min() / nrm
        worst = min(worst, lam)
    return ConvexityReport(float(worst), bool(worst > eps), n_samples)
