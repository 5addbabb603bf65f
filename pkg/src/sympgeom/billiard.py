"""Outer billiard map about a smooth convex body in R^{2n}.

For x outside K, the forward map finds the boundary point z with

    x = z + t w(z),   w(z) = J grad H(z) / |grad H(z)|,   t > 0

and sends x to y = 2 z - x.  The reverse map uses t < 0 in the same system
and inverts the forward map.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .body import ConvexBody, boundary_point
from .characteristics import DegenerateCurveError, PlaneFit, fit_plane
from .core import apply_J, j_matrix
from .john import section

CLEARANCE = 1e-6
TANGENCY_TOL = 1e-10
PERIOD_TOL = 1e-7
PERIOD_GUARD = 1e-4
MAX_RESTARTS = 8


class TangencyError(RuntimeError):
    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


def char_direction(body: ConvexBody, z) -> np.ndarray:
    g = body.gradient(z)
    return apply_J(g) / np.linalg.norm(g, axis=-1, keepdims=True)


def _system(body, x, z, t):
    g = body.gradient(z)
    gn = np.linalg.norm(g)
    w = apply_J(g) / gn
    F = np.concatenate([x - z - t * w, [body.value(z) - 1.0]])
    Hs = body.hessian(z)
    J = j_matrix(body.n)
    dw = J @ (np.eye(len(z)) / gn - np.outer(g, g) / gn**3) @ Hs
    d = len(z)
    Jac = np.zeros((d + 1, d + 1))
    Jac[:d, :d] = -np.eye(d) - t * dw
    Jac[:d, d] = -w
    Jac[d, :d] = g
    return F, Jac


def _newton(body, x, z, t, sign, max_iter=60):
    best = (np.inf, z, t)
    for _ in range(max_iter):
        F, Jac = _system(body, x, z, t)
        r = float(np.max(np.abs(F)))
        if r < best[0]:
            best = (r, z.copy(), t)
        try:
            step = np.linalg.solve(Jac, -F)
        except np.linalg.LinAlgError:
            break
        # damp to stay on the requested sheet and away from the center
        lim = 0.5 * max(np.linalg.norm(z - body.center), 1e-12)
        s = min(1.0, lim / max(np.linalg.norm(step[:-1]), 1e-300))
        zn = z + s * step[:-1]
        tn = t + s * step[-1]
        if sign * tn <= 0:
            tn = 0.5 * t
        z, t = zn, tn
        if np.linalg.norm(s * step) <= 1e-15 * (1 + np.linalg.norm(z)) and r <= TANGENCY_TOL:
            break
    F, _ = _system(body, x, z, t)
    r = float(np.max(np.abs(F)))
    if r < best[0]:
        best = (r, z.copy(), t)
    return best


def _ball_guess(body, x, sign, alpha):
    """Exact tangency for the ball H = alpha |z - c|^2 through x."""
    c = body.center
    v = x - c
    R2 = alpha * (v @ v)
    t = sign * math.sqrt(max(R2 - 1.0, 0.0) / alpha)
    # x - c = (I + t' J)(z - c) with t' = t sqrt(alpha) scaled; invert (I + s J)
    s = t * math.sqrt(alpha)
    zc = (v - s * apply_J(v)) / (1 + s * s)
    return c + zc, t


def tangency(body: ConvexBody, x, reverse: bool = False):
    """Boundary point z and parameter t with x = z + t w(z), t > 0 (t < 0 if reverse).

    Newton on the (2n+1)-dimensional system in (z, t).  The first attempt
    starts from the exact solution for the round ball through x with the
    same H value; on failure a homotopy H_s = (1 - s) alpha |z - c|^2 + s H
    is followed from s = 0, then up to `MAX_RESTARTS` perturbed starts.
    """
    x = np.asarray(x, dtype=float)
    Hx = float(body.value(x))
    if not Hx - 1.0 >= CLEARANCE:
        raise TangencyError(f"point is not outside the body with clearance (H(x) - 1 = {Hx - 1:.3e})")
    sign = -1.0 if reverse else 1.0
    v = x - body.center
    alpha = Hx / (v @ v)
    z0, t0 = _ball_guess(body, x, sign, alpha)
    z0 = boundary_point(body, z0 - body.center)
    res, z, t = _newton(body, x, z0, t0, sign)
    if res <= TANGENCY_TOL and sign * t > 0:
        return z, t
    best = (res, z, t)
    z, t = _homotopy(body, x, sign, alpha)
    if z is not None:
        r, z, t = _newton(body, x, z, t, sign)
        if r <= TANGENCY_TOL and sign * t > 0:
            return z, t
        best = min(best, (r, z, t), key=lambda b: b[0])
    rng = np.random.default_rng(0)
    for _ in range(MAX_RESTARTS):
        zp = boundary_point(body, z0 - body.center + 0.1 * np.linalg.norm(v) * rng.normal(size=len(x)))
        r, z, t = _newton(body, x, zp, t0, sign)
        if r <= TANGENCY_TOL and sign * t > 0:
            return z, t
        best = min(best, (r, z, t), key=lambda b: b[0])
    raise TangencyError("tangency solver did not converge", best_residual=best[0])


class _Blend(ConvexBody):
    kind = "blend"

    def __init__(self, body, alpha, s):
        super().__init__(body.n, body.center)
        self.body, self.alpha, self.s = body, alpha, s

    def value(self, z):
        w = np.asarray(z) - self.center
        return (1 - self.s) * self.alpha * np.sum(w * w, axis=-1) + self.s * self.body.value(z)

    def gradient(self, z):
        w = np.asarray(z) - self.center
        return (1 - self.s) * 2 * self.alpha * w + self.s * self.body.gradient(z)

    def hessian(self, z):
        z = np.asarray(z)
        I = np.broadcast_to(np.eye(self.dim), z.shape[:-1] + (self.dim, self.dim))
        return (1 - self.s) * 2 * self.alpha * I + self.s * self.body.hessian(z)


def _homotopy(body, x, sign, alpha, stages=16):
    z, t = _ball_guess(body, x, sign, alpha)
    for s in np.linspace(0.0, 1.0, stages + 1)[1:]:
        r, z, t = _newton(_Blend(body, alpha, s), x, z, t, sign, max_iter=30)
        if not np.isfinite(r) or r > 1e-6 or sign * t <= 0:
            return None, None
    return z, t


def step(body: ConvexBody, x, reverse: bool = False) -> np.ndarray:
    z, _ = tangency(body, x, reverse=reverse)
    return 2 * z - np.asarray(x, dtype=float)


@dataclass
class OuterBilliardTrajectory:
    vertices: np.ndarray
    tangencies: np.ndarray
    params: np.ndarray
    body_id: str = ""
    planarity: PlaneFit | None = None
    period: int | None = None
    period_status: str = "aperiodic"  # periodic | indeterminate | aperiodic
    min_return_distance: float = float("inf")
    truncated: bool = False

    @property
    def n_steps(self) -> int:
        return len(self.tangencies)


def trajectory(body: ConvexBody, x0, n_steps: int, stop_at_period: bool = False,
               period_tol: float = PERIOD_TOL, guard: float = PERIOD_GUARD,
               reverse: bool = False, body_id: str = "") -> OuterBilliardTrajectory:
    """Iterate the outer billiard map `n_steps` times from x0.

    The period is the first k with |x_k - x_0| <= period_tol; a best return
    inside (period_tol, guard] without an exact return is "indeterminate".
    """
    x = np.asarray(x0, dtype=float)
    V = [x.copy()]
    Z, T = [], []
    period = None
    best = np.inf
    for k in range(1, n_steps + 1):
        z, t = tangency(body, x, reverse=reverse)
        x = 2 * z - x
        V.append(x.copy())
        Z.append(z)
        T.append(t)
        dist = float(np.linalg.norm(x - V[0]))
        best = min(best, dist)
        if period is None and dist <= period_tol:
            period = k
            if stop_at_period:
                break
    V = np.array(V)
    try:
        plane = fit_plane(V) if len(V) >= 4 else None
    except DegenerateCurveError:
        plane = None
    status = "periodic" if period else ("indeterminate" if best <= guard else "aperiodic")
    return OuterBilliardTrajectory(V, np.array(Z), np.array(T), body_id or body.kind, plane,
                                   period, status, best, truncated=period is None)


def trajectory_planarity(traj: OuterBilliardTrajectory) -> float:
    """Relative RMS distance of the vertices from their best-fit 2-plane."""
    V = traj.vertices
    if traj.period:
        V = V[: traj.period]
    if len(V) < 4:
        return 0.0 if len(V) == 3 else float("nan")
    return fit_plane(V).relative_residual


# ---------------------------------------------------------------------------
# good points


@dataclass
class GoodPointReport:
    plane: PlaneFit
    section_points: np.ndarray
    angles: np.ndarray  # polar angle of each section sample about the interior point
    deviation: np.ndarray  # angle between char. direction and L at each sample
    good_mask: np.ndarray
    good_points: np.ndarray  # one representative per cluster of good samples
    good_angles: np.ndarray
    all_good: bool
    angular_tol: float
    tangency_angles: np.ndarray | None = None
    counts_between_tangencies: list = field(default_factory=list)
    trajectory_planar: bool | None = None
    trajectory_period: int | None = None


def _deviation_from_plane(W, basis):
    proj = W @ basis.T @ basis
    out = np.linalg.norm(W - proj, axis=-1)
    return np.arcsin(np.clip(out, 0.0, 1.0))


def _clusters(mask):
    """Runs of True in a cyclic boolean array, as lists of indices."""
    n = len(mask)
    if mask.all():
        return [list(range(n))]
    if not mask.any():
        return []
    start = int(np.flatnonzero(~mask)[0])
    runs, cur = [], []
    for k in range(1, n + 1):
        i = (start + k) % n
        if mask[i]:
            cur.append(i)
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def counts_between(good_angles, tangency_angles):
    """Good points strictly inside each arc between consecutive tangencies (in trajectory order).

    Arcs are taken in the direction of increasing polar angle from tangency
    i to tangency i+1 (cyclic).
    """
    tau = np.mod(np.asarray(tangency_angles, dtype=float), 2 * np.pi)
    g = np.mod(np.asarray(good_angles, dtype=float), 2 * np.pi)
    counts = []
    for i in range(len(tau)):
        a, b = tau[i], tau[(i + 1) % len(tau)]
        span = np.mod(b - a, 2 * np.pi)
        rel = np.mod(g - a, 2 * np.pi)
        counts.append(int(np.count_nonzero((rel > 1e-12) & (rel < span - 1e-12))))
    return counts


def good_points(body: ConvexBody, plane: PlaneFit, resolution: int = 4096,
                angular_tol: float = 1e-6, traj: OuterBilliardTrajectory | None = None) -> GoodPointReport:
    """Points of the section L ∩ ∂K whose characteristic direction lies in L."""
    sec = section(body, plane, resolution)
    P = sec.points()
    W = char_direction(body, P)
    dev = _deviation_from_plane(W, plane.basis)
    mask = dev <= angular_tol
    rel = sec.polygon - sec.interior
    angles = np.arctan2(rel[:, 1], rel[:, 0])
    if mask.all():
        reps = list(range(len(mask)))
    else:
        reps = [min(run, key=lambda i: dev[i]) for run in _clusters(mask)]
    rep = GoodPointReport(plane, P, angles, dev, mask, P[reps] if reps else np.zeros((0, body.dim)),
                          angles[reps] if reps else np.zeros(0), bool(mask.all()), angular_tol)
    if traj is not None:
        T = traj.tangencies[: traj.period] if traj.period else traj.tangencies
        uv = plane.coords(T) - sec.interior
        rep.tangency_angles = np.arctan2(uv[:, 1], uv[:, 0])
        rep.trajectory_period = traj.period
        V = traj.vertices
        off = V - plane.lift(plane.coords(V))
        rep.trajectory_planar = bool(np.max(np.linalg.norm(off, axis=1)) <= 1e-6 * max(1.0, np.ptp(V)))
        rep.counts_between_tangencies = counts_between(rep.good_angles, rep.tangency_angles)
    return rep


@dataclass(frozen=True)
class UniformityResult:
    status: str  # "equal" | "unequal" | "not_applicable"
    counts: tuple = ()
    reason: str = ""

    @property
    def equal(self) -> bool | None:
        return None if self.status == "not_applicable" else self.status == "equal"


def uniform_distribution_check(report: GoodPointReport) -> UniformityResult:
    """Are the good points evenly spread between consecutive tangency points?"""
    if report.tangency_angles is None:
        return UniformityResult("not_applicable", reason="no trajectory supplied")
    if report.all_good:
        return UniformityResult("not_applicable", reason="every section point is good")
    if not report.trajectory_planar:
        return UniformityResult("not_applicable", reason="trajectory is not planar in L")
    if not report.trajectory_period:
        return UniformityResult("not_applicable", reason="trajectory is not periodic")
    counts = tuple(report.counts_between_tangencies)
    status = "equal" if len(set(counts)) == 1 else "unequal"
    return UniformityResult(status, counts)


# ---------------------------------------------------------------------------


@dataclass
class PeriodScan:
    t_grid: np.ndarray
    periods: list  # int or None
    return_distances: list
    statuses: list
    errors: list

    def to_records(self):
        return [
            {"t": float(t), "period": p, "return_distance": d, "status": s, "error": e}
            for t, p, d, s, e in zip(self.t_grid, self.periods, self.return_distances, self.statuses, self.errors)
        ]


def period_scan(body: ConvexBody, z, t_grid, horizon: int = 10_000) -> PeriodScan:
    """Periods of trajectories started on the tangent line z - t v, v the characteristic direction at z."""
    z = np.asarray(z, dtype=float)
    tg = np.asarray(t_grid, dtype=float)
    if np.any(tg <= 0) or np.any(np.diff(tg) <= 0):
        raise ValueError("t_grid must be positive and strictly increasing")
    v = char_direction(body, z)
    periods, dists, statuses, errors = [], [], [], []
    for t in tg:
        try:
            tr = trajectory(body, z - t * v, horizon, stop_at_period=True)
            periods.append(tr.period)
            dists.append(tr.min_return_distance)
            statuses.append(tr.period_status)
            errors.append(None)
        except (TangencyError, ValueError) as exc:
            periods.append(None)
            dists.append(None)
            statuses.append("error")
            errors.append(str(exc))
    return PeriodScan(tg, periods, dists, statuses, errors)


def ball_expected_period(radius: float, max_period: int = 10_000, tol: float = 1e-9) -> int | None:
    """Period of a ball trajectory at distance `radius`: rotation 2 arccos(1/R) per step."""
    rho = 2 * math.acos(1.0 / radius) / (2 * math.pi)
    for k in range(1, max_period + 1):
        if abs(k * rho - round(k * rho)) <= tol * k:
            return k
    return None


def symplecticity_defect(body: ConvexBody | None, x, h: float = 1e-5, mapping=None) -> float:
    """max |D^T J D - J| for the central finite-difference Jacobian D of the map at x."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    if mapping is None:
        Hx = body.value(x)
        # clearance of 10 h measured along the ray through x
        if np.sqrt(Hx) - 1.0 < 10 * h / max(np.linalg.norm(x - body.center), 1e-300) * np.sqrt(Hx):
            raise TangencyError("point too close to the body for the finite-difference step")
        mapping = lambda p: step(body, p)  # noqa: E731
    D = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        D[:, k] = (mapping(x + e) - mapping(x - e)) / (2 * h)
    J = j_matrix(d // 2)
    return float(np.max(np.abs(D.T @ J @ D - J)))
