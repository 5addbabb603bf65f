"""Characteristic flow z' = J grad H(z) on the level set {H = 1}.

Orbits are integrated with classical RK4 followed by the radial projection
z -> c + (z - c) / sqrt(H(z)), which is exact for 2-homogeneous H.  Closure
is detected on the hyperplane through the start point normal to the
initial velocity; the crossing time is refined by solving for the length of
a final partial RK4 step.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.spatial.distance import pdist

from .body import ConvexBody, as_ellipsoid, boundary_point
from .core import apply_J, curve_action, j_matrix

CLOSURE_TOL = 1e-7
DT_FACTOR = 1e-3
HORIZON_PERIODS = 50
PLANAR_REL = 1e-6
NONPLANAR_REL = 1e-3
ELLIPSE_REL = 1e-6
LOCAL_ERROR_BOUND = 1e-6
SURVEY_CHUNK = 25


class FlowError(RuntimeError):
    pass


class OpenOrbitError(ValueError):
    pass


class DegenerateCurveError(ValueError):
    pass


class NotEllipseError(ValueError):
    pass


def natural_period(body: ConvexBody) -> float:
    """pi / max Williamson coefficient for ellipsoids, pi otherwise."""
    ell = as_ellipsoid(body)
    if ell is None:
        return math.pi
    ev = np.linalg.eigvals(j_matrix(ell.n) @ ell.A)
    return math.pi / np.max(np.abs(ev.imag))


def default_dt(body: ConvexBody) -> float:
    return DT_FACTOR * natural_period(body)


@dataclass
class Characteristic:
    body_id: str
    samples: np.ndarray
    times: np.ndarray
    velocities: np.ndarray
    timestep: float
    closed: bool
    period: float | None
    action: float | None
    start: np.ndarray
    return_distance: float | None = None
    max_energy_drift: float = 0.0

    @property
    def truncated(self) -> bool:
        return not self.closed


def _rhs(body, Z):
    return apply_J(body.gradient(Z))


def _project(body, Z):
    c = body.center
    return c + (Z - c) / np.sqrt(body.value(Z))[:, None]


def _rk4_raw(body, Z, h):
    k1 = _rhs(body, Z)
    k2 = _rhs(body, Z + 0.5 * h * k1)
    k3 = _rhs(body, Z + 0.5 * h * k2)
    k4 = _rhs(body, Z + h * k3)
    return Z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_step(body, Z, h):
    """One projected RK4 step with step halving on large energy defect."""
    Zn = _rk4_raw(body, Z, h)
    defect = np.abs(body.value(Zn) - 1.0)
    bad = defect > LOCAL_ERROR_BOUND
    if bad.any():
        for level in range(1, 11):
            sub = 2**level
            Zb = Z[bad]
            ok = True
            for _ in range(sub):
                Zb = _rk4_raw(body, Zb, h / sub)
                if np.any(np.abs(body.value(Zb) - 1.0) > LOCAL_ERROR_BOUND):
                    ok = False
                    break
                Zb = _project(body, Zb)
            if ok:
                Zn[bad] = Zb
                break
        else:
            raise FlowError("step rejected after 10 halvings; the body may be too flat or too curved")
    return _project(body, Zn)


def _partial_step(body, z, h):
    return _project(body, _rk4_raw(body, z[None], h))[0]


def _refine_crossing(body, z_prev, dt, z0, v0):
    def g(h):
        return (_partial_step(body, z_prev, h) - z0) @ v0

    lo, hi = 0.0, dt
    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        h = hi if abs(ghi) < abs(glo) else lo
    else:
        h = optimize.brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    return h, _partial_step(body, z_prev, h)


def _check_start(body, Z0):
    Z0 = np.atleast_2d(np.asarray(Z0, dtype=float))
    off = np.abs(body.value(Z0) - 1.0)
    if np.any(off > 1e-6):
        raise ValueError(f"start point is {off.max():.2e} away from the level set H = 1")
    return _project(body, Z0)


def _flow_batch(body, Z0, t_max, dt, closure_tol, stop_at_closure, body_id, chunk_steps=256):
    Z0 = _check_start(body, Z0)
    k, d = Z0.shape
    sgn = 1.0 if dt > 0 else -1.0
    V0 = sgn * _rhs(body, Z0)
    n_steps = int(math.ceil(t_max / abs(dt)))
    samples = [[Z0[i].copy()] for i in range(k)]
    active = np.ones(k, dtype=bool)
    closed = np.zeros(k, dtype=bool)
    period = np.full(k, np.nan)
    ret_dist = np.full(k, np.nan)
    tail = [None] * k  # (h, z_star) of the closing partial step
    checked = np.zeros(k, dtype=int)  # samples already scanned for crossings
    Z = Z0.copy()
    step = 0
    while step < n_steps and active.any():
        idx = np.flatnonzero(active)
        Za = Z[idx]
        m = min(chunk_steps, n_steps - step)
        block = np.empty((m, len(idx), d))
        for j in range(m):
            Za = _rk4_step(body, Za, dt)
            block[j] = Za
        Z[idx] = Za
        step += m
        for col, i in enumerate(idx):
            samples[i].extend(block[:, col])
            if not stop_at_closure:
                continue
            arr = samples[i]
            gvals = np.array([(arr[t] - Z0[i]) @ V0[i] for t in range(max(checked[i], 1) - 1, len(arr))])
            base = max(checked[i], 1) - 1
            cross = np.flatnonzero((gvals[:-1] < 0) & (gvals[1:] >= 0))
            for c in cross:
                kprev = base + c
                h, zs = _refine_crossing(body, arr[kprev], dt, Z0[i], V0[i])
                dist = float(np.linalg.norm(zs - Z0[i]))
                if np.isnan(ret_dist[i]) or dist < ret_dist[i]:
                    ret_dist[i] = dist
                if dist <= closure_tol:
                    closed[i] = True
                    active[i] = False
                    period[i] = kprev * abs(dt) + h
                    ret_dist[i] = dist
                    del arr[kprev + 1 :]
                    tail[i] = (h, zs)
                    break
            checked[i] = len(arr)
    out = []
    for i in range(k):
        S = np.array(samples[i])
        T = np.arange(len(S)) * abs(dt)
        if closed[i]:
            h, zs = tail[i]
            S = np.vstack([S, zs])
            T = np.append(T, T[-1] + h)
        S_flow = S
        V = sgn * _rhs(body, S_flow)
        ch = Characteristic(
            body_id=body_id,
            samples=S,
            times=sgn * T,
            velocities=V,
            timestep=dt,
            closed=bool(closed[i]),
            period=float(period[i]) if closed[i] else None,
            action=None,
            start=Z0[i].copy(),
            return_distance=None if np.isnan(ret_dist[i]) else float(ret_dist[i]),
            max_energy_drift=float(np.max(np.abs(body.value(S) - 1.0))),
        )
        if ch.closed:
            ch.action = action_of(ch)
        out.append(ch)
    return out


def flow(body: ConvexBody, z0, t_max: float | None = None, dt: float | None = None,
         closure_tol: float = CLOSURE_TOL, stop_at_closure: bool = True,
         body_id: str = "") -> Characteristic:
    """Integrate the characteristic through `z0` until it closes or `t_max` is reached.

    Negative `dt` integrates backwards in time.  `t_max` defaults to 50
    natural periods, `dt` to 1e-3 natural periods.
    """
    if dt is None:
        dt = default_dt(body)
    if dt == 0:
        raise ValueError("dt must be non-zero")
    if t_max is None:
        t_max = HORIZON_PERIODS * natural_period(body)
    return _flow_batch(body, z0, t_max, dt, closure_tol, stop_at_closure, body_id or body.kind)[0]


def flow_many(body: ConvexBody, Z0, t_max=None, dt=None, closure_tol=CLOSURE_TOL,
              body_id: str = "") -> list[Characteristic]:
    """Vectorized `flow` over a batch of start points (k, 2n)."""
    if dt is None:
        dt = default_dt(body)
    if t_max is None:
        t_max = HORIZON_PERIODS * natural_period(body)
    return _flow_batch(body, Z0, t_max, dt, closure_tol, True, body_id or body.kind)


def detect_closure(samples, tol: float = CLOSURE_TOL, times=None, velocities=None):
    """First return to the start across the section normal to the initial velocity.

    Returns (closed, period).  The crossing is located by cubic Hermite
    interpolation when velocities are given, linear interpolation otherwise.
    Without `times` the period is measured in sample-index units.
    """
    S = np.asarray(samples, dtype=float)
    if S.shape[0] < 10:
        raise ValueError("need at least 10 samples")
    t = np.arange(len(S), dtype=float) if times is None else np.abs(np.asarray(times, dtype=float))
    z0 = S[0]
    if velocities is not None:
        V = np.asarray(velocities, dtype=float)
        v0 = V[0]
    else:
        V = None
        v0 = S[1] - S[0]
    g = (S - z0) @ v0
    for k in np.flatnonzero((g[:-1] < 0) & (g[1:] >= 0)):
        h = t[k + 1] - t[k]
        if V is None:
            s = g[k] / (g[k] - g[k + 1])
            z = S[k] + s * (S[k + 1] - S[k])
        else:
            a, b, va, vb = S[k], S[k + 1], V[k] * h, V[k + 1] * h

            def herm(s):
                return ((2 * s**3 - 3 * s**2 + 1) * a + (s**3 - 2 * s**2 + s) * va
                        + (-2 * s**3 + 3 * s**2) * b + (s**3 - s**2) * vb)

            s = optimize.brentq(lambda s: (herm(s) - z0) @ v0, 0.0, 1.0, xtol=1e-15)
            z = herm(s)
        if np.linalg.norm(z - z0) <= tol:
            return True, float(t[k] + s * h)
    return False, None


def action_of(ch: Characteristic) -> float:
    """Integral of the Liouville form around a closed characteristic."""
    if not ch.closed:
        raise OpenOrbitError("action is only defined for closed characteristics")
    # the last sample is the (numerical) return to the start; identify them
    T = np.abs(ch.times)
    return curve_action(ch.samples[:-1], ch.velocities[:-1], T) * np.sign(ch.timestep)


# ---------------------------------------------------------------------------
# planarity and ellipse shape


@dataclass(frozen=True)
class PlaneFit:
    center: np.ndarray
    basis: np.ndarray  # shape (2, d), orthonormal rows
    residual: float
    diameter: float = float("nan")

    @property
    def relative_residual(self) -> float:
        return self.residual / self.diameter if self.diameter > 0 else float("inf")

    def coords(self, X):
        return (np.asarray(X, dtype=float) - self.center) @ self.basis.T

    def lift(self, uv):
        return self.center + np.asarray(uv, dtype=float) @ self.basis

    def verdict(self, planar_rel=PLANAR_REL, nonplanar_rel=NONPLANAR_REL) -> str:
        r = self.relative_residual
        if r <= planar_rel:
            return "planar"
        if r >= nonplanar_rel:
            return "nonplanar"
        return "indeterminate"


def curve_diameter(X, max_points: int = 1500) -> float:
    X = np.asarray(X, dtype=float)
    if len(X) > max_points:
        X = X[np.linspace(0, len(X) - 1, max_points).astype(int)]
    return float(pdist(X).max()) if len(X) > 1 else 0.0


def fit_plane(samples) -> PlaneFit:
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 4:
        raise DegenerateCurveError("need at least 4 samples")
    c = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - c, full_matrices=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise DegenerateCurveError("samples do not span a 2-plane")
    rest = s[2:]
    residual = float(np.sqrt(np.sum(rest**2) / X.shape[0]))
    return PlaneFit(c, Vt[:2].copy(), residual, curve_diameter(X))


@dataclass(frozen=True)
class EllipseFit:
    plane: PlaneFit
    conic: np.ndarray  # a x^2 + b xy + c y^2 + d x + e y + f in plane coordinates
    residual: float  # RMS Sampson distance / curve diameter
    semi_axes: tuple
    area: float
    center: np.ndarray  # in plane coordinates
    symplectic_area: float  # area * omega(b1, b2)

    def accepted(self, threshold: float = ELLIPSE_REL) -> bool:
        return self.residual <= threshold


def _conic_geometry(theta):
    a, b, c, d, e, f = theta
    Q = np.array([[a, b / 2], [b / 2, c]])
    if np.linalg.det(Q) <= 0:
        raise NotEllipseError("fitted conic is not an ellipse")
    x0 = -0.5 * np.linalg.solve(Q, [d, e])
    F0 = f + 0.5 * (d * x0[0] + e * x0[1])
    lam = np.linalg.eigvalsh(Q)
    if np.any(-F0 / lam <= 0):
        raise NotEllipseError("fitted conic has no real points")
    axes = np.sqrt(-F0 / lam)
    return x0, tuple(sorted(axes.tolist(), reverse=True))


def fit_ellipse(ch, plane: PlaneFit | None = None) -> EllipseFit:
    """Algebraic conic fit (unit-norm coefficients) in the coordinates of `plane`.

    `ch` may be a Characteristic or a plain (N, d) array of samples.
    """
    X = ch.samples if isinstance(ch, Characteristic) else np.asarray(ch, dtype=float)
    if plane is None:
        plane = fit_plane(X)
    P = plane.coords(X)
    mu = P.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum((P - mu) ** 2, axis=1)))
    x, y = ((P - mu) / scale).T
    D = np.column_stack([x * x, x * y, y * y, x, y, np.ones_like(x)])
    theta = np.linalg.svd(D, full_matrices=False)[2][-1]
    a, b, c, d, e, f = theta
    Fv = D @ theta
    gx = 2 * a * x + b * y + d
    gy = b * x + 2 * c * y + e
    sampson = np.abs(Fv) / np.maximum(np.hypot(gx, gy), 1e-300)
    residual = float(np.sqrt(np.mean(sampson**2)) * scale / max(plane.diameter, 1e-300))
    x0, axes = _conic_geometry(theta)
    # back to plane coordinates: u = mu + scale * (x, y)
    s2 = scale**2
    conic = np.array([
        a / s2, b / s2, c / s2,
        (d * scale - 2 * a * mu[0] - b * mu[1]) / s2,
        (e * scale - b * mu[0] - 2 * c * mu[1]) / s2,
        (a * mu[0] ** 2 + b * mu[0] * mu[1] + c * mu[1] ** 2 - d * scale * mu[0] - e * scale * mu[1]) / s2 + f,
    ])
    conic = conic / np.linalg.norm(conic)
    axes = (axes[0] * scale, axes[1] * scale)
    area = math.pi * axes[0] * axes[1]
    b1, b2 = plane.basis
    return EllipseFit(plane, conic, residual, axes, area, mu + scale * x0,
                      area * float(apply_J(b1) @ b2))


# ---------------------------------------------------------------------------
# surveys


@dataclass
class OrbitRecord:
    index: int
    start: list
    closed: bool
    period: float | None
    action: float | None
    planarity_residual: float
    planarity: str
    ellipse_residual: float | None
    return_distance: float | None
    max_energy_drift: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class CharacteristicSurvey:
    body_id: str
    records: list[OrbitRecord] = field(default_factory=list)
    horizon: float = 0.0
    timestep: float = 0.0
    seed: int | None = None

    @property
    def closed_records(self):
        return [r for r in self.records if r.closed]

    @property
    def all_closed_sampled(self) -> bool:
        return all(r.closed for r in self.records)

    @property
    def all_planar_sampled(self) -> bool:
        return all(r.planarity == "planar" for r in self.records)

    @property
    def all_ellipses_sampled(self) -> bool:
        return all(r.ellipse_residual is not None and r.ellipse_residual <= ELLIPSE_REL
                   for r in self.records)

    @property
    def action_spread(self) -> float | None:
        acts = [r.action for r in self.closed_records]
        return float(max(acts) - min(acts)) if acts else None

    @property
    def min_action(self) -> float | None:
        acts = [r.action for r in self.closed_records]
        return float(min(acts)) if acts else None

    @property
    def planar_fraction(self) -> float:
        return sum(r.planarity == "planar" for r in self.records) / max(len(self.records), 1)

    @property
    def nonplanar_fraction(self) -> float:
        return sum(r.planarity == "nonplanar" for r in self.records) / max(len(self.records), 1)

    def aggregates(self) -> dict:
        return {
            "n_orbits": len(self.records),
            "n_closed": len(self.closed_records),
            "all_closed_sampled": self.all_closed_sampled,
            "all_planar_sampled": self.all_planar_sampled,
            "all_ellipses_sampled": self.all_ellipses_sampled,
            "planar_fraction": self.planar_fraction,
            "nonplanar_fraction": self.nonplanar_fraction,
            "action_spread": self.action_spread,
            "min_action": self.min_action,
        }

    def to_dict(self) -> dict:
        return {
            "body_id": self.body_id,
            "horizon": self.horizon,
            "timestep": self.timestep,
            "seed": self.seed,
            "aggregates": self.aggregates(),
            "records": [r.to_dict() for r in self.records],
        }


def _record(i, ch: Characteristic) -> OrbitRecord:
    X = ch.samples[:-1] if ch.closed else ch.samples
    try:
        pf = fit_plane(X)
        rel = pf.relative_residual
        verdict = pf.verdict()
    except DegenerateCurveError:
        pf, rel, verdict = None, float("inf"), "nonplanar"
    ell = None
    if verdict == "planar":
        try:
            ell = fit_ellipse(X, pf).residual
        except NotEllipseError:
            ell = None
    return OrbitRecord(
        index=i,
        start=ch.start.tolist(),
        closed=ch.closed,
        period=ch.period,
        action=ch.action,
        planarity_residual=float(rel),
        planarity=verdict,
        ellipse_residual=ell,
        return_distance=ch.return_distance,
        max_energy_drift=ch.max_energy_drift,
    )


def survey_starts(body: ConvexBody, n_starts: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    U = rng.normal(size=(n_starts, body.dim))
    return boundary_point(body, U)


def survey(body: ConvexBody, n_starts: int, seed: int = 0, horizon: float | None = None,
           dt: float | None = None, extra_starts=None, threads: int = 1,
           body_id: str = "", keep_orbits: bool = False):
    """Flow from random boundary starts and aggregate closure, action and shape.

    Starts are ``boundary_point`` of standard-normal directions drawn from
    `seed`; `extra_starts` (points near the boundary) are appended after
    them.  Orbits are processed in fixed-size chunks so the result does not
    depend on `threads`.  With ``keep_orbits`` returns (survey, orbits).
    """
    if n_starts < 1 and extra_starts is None:
        raise ValueError("n_starts must be >= 1")
    if dt is None:
        dt = default_dt(body)
    if horizon is None:
        horizon = HORIZON_PERIODS * natural_period(body)
    Z0 = survey_starts(body, n_starts, seed) if n_starts > 0 else np.zeros((0, body.dim))
    if extra_starts is not None:
        Z0 = np.vstack([Z0, boundary_point(body, np.atleast_2d(extra_starts) - body.center)])
    chunks = [Z0[i : i + SURVEY_CHUNK] for i in range(0, len(Z0), SURVEY_CHUNK)]

    def run(chunk):
        return _flow_batch(body, chunk, horizon, dt, CLOSURE_TOL, True, body_id or body.kind)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    orbits = [ch for part in results for ch in part]
    sv = CharacteristicSurvey(body_id or body.kind, [_record(i, ch) for i, ch in enumerate(orbits)],
                              horizon=horizon, timestep=dt, seed=seed)
    sv.records.sort(key=lambda r: r.index)
    return (sv, orbits) if keep_orbits else sv
