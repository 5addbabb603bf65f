"""Planar sections K ∩ L and maximal-area inscribed (John) ellipses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .body import ConvexBody
from .characteristics import PlaneFit


class SectionError(ValueError):
    pass


class JohnError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanarSection:
    plane: PlaneFit
    polygon: np.ndarray  # (resolution, 2) in plane coordinates, counter-clockwise
    resolution: int
    interior: np.ndarray  # in-plane minimizer of H, plane coordinates

    def points(self) -> np.ndarray:
        return self.plane.lift(self.polygon)

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


@dataclass(frozen=True)
class JohnEllipse:
    center: np.ndarray
    shape: np.ndarray  # symmetric PD B; ellipse = {B u + center : |u| <= 1}
    area: float
    max_violation: float
    newton_decrement: float

    def boundary(self, k: int = 256) -> np.ndarray:
        t = np.linspace(0, 2 * np.pi, k, endpoint=False)
        return self.center + np.column_stack([np.cos(t), np.sin(t)]) @ self.shape.T


def make_plane(point, u, v) -> PlaneFit:
    B = np.vstack([np.asarray(u, dtype=float), np.asarray(v, dtype=float)])
    if np.max(np.abs(B @ B.T - np.eye(2))) > 1e-10:
        raise SectionError("plane basis must be orthonormal")
    return PlaneFit(np.asarray(point, dtype=float), B, 0.0, float("nan"))


def polygon_area(P) -> float:
    x, y = np.asarray(P, dtype=float).T
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _plane_minimizer(body, plane):
    """Newton for the minimum of H over the affine plane, from the projected center."""
    B = plane.basis
    uv = plane.coords(body.center)
    for _ in range(100):
        z = plane.lift(uv)
        if body.value(z) <= 1e-300:
            break  # the plane passes through the center, the global minimizer
        g = B @ body.gradient(z)
        Hs = B @ body.hessian(z) @ B.T
        step = np.linalg.solve(Hs, -g)
        # H is convex along the plane; plain Newton with halving on increase
        h0 = body.value(z)
        t = 1.0
        while t > 1e-12 and body.value(plane.lift(uv + t * step)) > h0 + 1e-15 * max(h0, 1.0):
            t *= 0.5
        uv = uv + t * step
        if np.linalg.norm(t * step) <= 1e-14 * max(1.0, np.linalg.norm(uv)):
            break
    return uv, float(body.value(plane.lift(uv)))


def section(body: ConvexBody, plane: PlaneFit, resolution: int = 512) -> PlanarSection:
    """Boundary of K ∩ L sampled at `resolution` equally spaced polar angles.

    Angles are measured around the in-plane minimizer o of H; each radius
    solves H(o + r(cos t u + sin t v)) = 1 by bracketing, Brent and a
    final Newton polish.
    """
    if resolution < 3:
        raise SectionError("resolution must be >= 3")
    o, hmin = _plane_minimizer(body, plane)
    if not hmin < 1.0:
        raise SectionError(f"plane misses the interior (min H on plane = {hmin:.6g})")
    theta = np.linspace(0.0, 2 * np.pi, resolution, endpoint=False)
    dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    pts = np.empty((resolution, 2))
    for k, e in enumerate(dirs):
        f = lambda r: body.value(plane.lift(o + r * e)) - 1.0  # noqa: E731
        hi = 1.0
        while f(hi) < 0:
            hi *= 2.0
            if hi > 1e12:
                raise SectionError("section is unbounded along a ray")
        try:
            r = optimize.brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        except ValueError as exc:
            raise SectionError(f"root finding failed at angle {theta[k]:.4f}") from exc
        d = plane.basis.T @ e
        for _ in range(3):
            z = plane.lift(o + r * e)
            fr = body.value(z) - 1.0
            dfr = body.gradient(z) @ d
            if dfr == 0:
                break
            r -= fr / dfr
        pts[k] = o + r * e
    return PlanarSection(plane, pts, resolution, o)


def _halfplanes(P):
    """Unit outward normals a_e and offsets b_e of the polygon's edges (CCW order)."""
    P = np.asarray(P, dtype=float)
    E = np.roll(P, -1, axis=0) - P
    A = np.column_stack([E[:, 1], -E[:, 0]])
    nrm = np.linalg.norm(A, axis=1)
    if np.any(nrm == 0):
        raise JohnError("polygon has repeated vertices")
    A /= nrm[:, None]
    b = np.einsum("ij,ij->i", A, P)
    return A, b


def check_convex(P, strict: bool = True) -> np.ndarray:
    """Return the polygon in counter-clockwise order; raise if it is not convex."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2 or len(P) < 3:
        raise JohnError("need a polygon with at least 3 vertices")
    if polygon_area(P) < 0:
        P = P[::-1]
    if abs(polygon_area(P)) <= 1e-14 * max(1.0, np.ptp(P) ** 2):
        raise JohnError("polygon is degenerate")
    E = np.roll(P, -1, axis=0) - P
    cross = E[:, 0] * np.roll(E[:, 1], -1) - E[:, 1] * np.roll(E[:, 0], -1)
    scale = np.linalg.norm(E, axis=1) * np.roll(np.linalg.norm(E, axis=1), -1)
    if strict and np.any(cross < -1e-12 * scale):
        raise JohnError("polygon is not convex")
    return P


# dB/dx for x = (B11, B12, B22)
_G0 = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
_G1 = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
_D2DET = np.array([[0.0, 0.0, 1.0], [0.0, -2.0, 0.0], [1.0, 0.0, 0.0]])


def _unpack(x):
    return np.array([[x[0], x[1]], [x[1], x[2]]]), x[3:]


def _barrier(x, A, b, mu, need_hess=True):
    B, c = _unpack(x)
    det = x[0] * x[2] - x[1] ** 2
    if det <= 0 or x[0] <= 0:
        return np.inf, None, None
    W = A @ B  # rows: B a_e (B symmetric)
    wn = np.linalg.norm(W, axis=1)
    s = b - A @ c - wn
    if np.any(s <= 0):
        return np.inf, None, None
    f = -math.log(det) - mu * np.sum(np.log(s))
    if not need_hess:
        return f, None, None
    # G_e = dW_e/dx_B = a1 * _G0 + a2 * _G1
    G = A[:, 0, None, None] * _G0 + A[:, 1, None, None] * _G1  # (m, 2, 3)
    u = W / wn[:, None]
    ds_B = -np.einsum("mi,mij->mj", u, G)
    ds = np.hstack([ds_B, -A])  # (m, 5)
    dd = np.array([x[2], -2 * x[1], x[0]])
    g = np.zeros(5)
    g[:3] = -dd / det
    g += -mu * np.sum(ds / s[:, None], axis=0)
    Hm = np.zeros((5, 5))
    Hm[:3, :3] = -_D2DET / det + np.outer(dd, dd) / det**2
    P = (np.eye(2)[None] - np.einsum("mi,mj->mij", u, u)) / wn[:, None, None]
    d2s_B = -np.einsum("mia,mij,mjb->mab", G, P, G)
    Hm += mu * np.einsum("mi,mj->ij", ds / s[:, None], ds / s[:, None])
    Hm[:3, :3] -= mu * np.sum(d2s_B / s[:, None, None], axis=0)
    return f, g, Hm


def _solve_barrier(A, b, x, mu0=1.0, mu_min=1e-9, shrink=0.2, tol=1e-10, max_newton=100):
    mu = mu0
    lam2 = np.inf
    while True:
        for _ in range(max_newton):
            f, g, Hm = _barrier(x, A, b, mu)
            step = -np.linalg.solve(Hm, g)
            lam2 = float(-g @ step)
            if lam2 / 2 <= tol:
                break
            t = 1.0
            while True:
                fn = _barrier(x + t * step, A, b, mu, need_hess=False)[0]
                if fn <= f - 0.25 * t * lam2:
                    break
                t *= 0.5
                if t < 1e-14:
                    raise JohnError("barrier line search failed")
            x = x + t * step
        else:
            raise JohnError(f"barrier Newton did not converge at mu={mu:g}")
        if mu <= mu_min * (1 + 1e-12):
            return x, lam2
        mu = max(mu * shrink, mu_min)


def john_ellipse(polygon, init=None, mu_min: float = 1e-9) -> JohnEllipse:
    """Maximal-area ellipse {B u + c : |u| <= 1} inside a convex polygon.

    Solves max log det B subject to |B a_e| + <a_e, c> <= b_e for each edge
    by a log-barrier path (mu from 1 down to `mu_min`, x0.2 per stage) with
    damped Newton steps.  `init` = (B0, c0) overrides the default start
    (centroid with a small disc).
    """
    P = check_convex(polygon)
    A, b = _halfplanes(P)
    # work in normalized coordinates for scale-free tolerances
    mu_p = P.mean(axis=0)
    scale = float(np.sqrt(np.mean(np.sum((P - mu_p) ** 2, axis=1))))
    Pn = (P - mu_p) / scale
    An, bn = _halfplanes(Pn)
    if init is None:
        c0 = np.zeros(2)
        r0 = 0.5 * np.min(bn - An @ c0)
        B0 = r0 * np.eye(2)
    else:
        B0 = np.asarray(init[0], dtype=float) / scale
        c0 = (np.asarray(init[1], dtype=float) - mu_p) / scale
        if np.any(bn - An @ c0 - np.linalg.norm(An @ B0, axis=1) <= 0):
            raise JohnError("initial ellipse is not strictly inside the polygon")
    x0 = np.array([B0[0, 0], B0[0, 1], B0[1, 1], c0[0], c0[1]])
    # the inner barrier objective is scaled by the edge count to keep mu meaningful
    x, lam2 = _solve_barrier(An, bn, x0, mu0=1.0 / len(An), mu_min=mu_min / len(An))
    Bn, cn = _unpack(x)
    B = Bn * scale
    c = mu_p + cn * scale
    viol = float(np.max(np.linalg.norm(A @ B, axis=1) + A @ c - b))
    return JohnEllipse(c, B, math.pi * float(np.linalg.det(B)), max(viol, 0.0), lam2)


def section_is_john(body: ConvexBody, plane: PlaneFit, resolution: int = 512, tol: float = 1e-3) -> bool:
    """True iff the section is (numerically) its own John ellipse."""
    return section_john_ratio(body, plane, resolution) >= 1.0 - tol


def section_john_ratio(body: ConvexBody, plane: PlaneFit, resolution: int = 512) -> float:
    sec = section(body, plane, resolution)
    return john_ellipse(sec.polygon).area / sec.area
