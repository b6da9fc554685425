"""Relativistic particle motion in static axisymmetric fields with specular walls.

Particles obey ``x' = vhat``, ``v' = s (E + vhat x B)`` with ``vhat = v / <v>``,
``E = -grad phi`` and ``B = curl(A e_phi)``.  Along exact orbits
``e = <v> + s phi`` and ``p = r (v_phi + s A)`` are constant; the integrator
works in Cartesian coordinates and the invariants are monitored.

The base step is the relativistic Boris scheme (drift, half kick, exact
magnetic rotation, half kick, drift).  It is time symmetric, so the triple-jump
composition raises it to fourth order; step sizes come from step doubling.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .geometry import GeometryError, MeridianGrid

_CBRT2 = 2.0 ** (1.0 / 3.0)
_W1 = 1.0 / (2.0 - _CBRT2)
_W0 = -_CBRT2 / (2.0 - _CBRT2)

WALL_TIME_TOL = 1e-12
CSV_COLUMNS = ("t", "r", "phi", "z", "v_r", "v_phi", "v_z", "e", "p")


class TrajectoryError(RuntimeError):
    pass


@dataclass
class ParticleState:
    """N particles in Cartesian form; ``sign`` is +1 for ions and -1 for electrons."""
    x: np.ndarray        # (N, 3)
    u: np.ndarray        # (N, 3) relativistic momentum
    sign: np.ndarray     # (N,)
    t: np.ndarray = None
    reflections: np.ndarray = None

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float)).copy()
        self.u = np.atleast_2d(np.asarray(self.u, dtype=float)).copy()
        n = self.x.shape[0]
        if self.x.shape != (n, 3) or self.u.shape != (n, 3):
            raise ValueError("positions and momenta must have shape (N, 3)")
        self.sign = np.broadcast_to(np.asarray(self.sign, dtype=float), (n,)).copy()
        if not np.all(np.isin(self.sign, (-1.0, 1.0))):
            raise ValueError("species sign must be +1 or -1")
        self.t = np.zeros(n) if self.t is None else np.asarray(self.t, dtype=float).copy()
        self.reflections = (np.zeros(n, dtype=np.int64) if self.reflections is None
                            else np.asarray(self.reflections).copy())

    @classmethod
    def from_cylindrical(cls, r, angle, z, v_r, v_phi, v_z, sign=1.0) -> "ParticleState":
        r, angle, z = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (r, angle, z))
        v_r, v_phi, v_z = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (v_r, v_phi, v_z))
        c, s = np.cos(angle), np.sin(angle)
        x = np.stack([r * c, r * s, z], axis=1)
        u = np.stack([v_r * c - v_phi * s, v_r * s + v_phi * c, v_z], axis=1)
        return cls(x, u, sign)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def r(self) -> np.ndarray:
        return np.hypot(self.x[:, 0], self.x[:, 1])

    @property
    def angle(self) -> np.ndarray:
        return np.arctan2(self.x[:, 1], self.x[:, 0])

    @property
    def z(self) -> np.ndarray:
        return self.x[:, 2]

    def cylindrical_velocity(self):
        return _cyl_velocity(self.x, self.u)

    @property
    def gamma(self) -> np.ndarray:
        return np.sqrt(1.0 + np.sum(self.u ** 2, axis=1))

    def copy(self) -> "ParticleState":
        return ParticleState(self.x, self.u, self.sign, self.t, self.reflections)


def _cyl_velocity(x, u):
    r = np.hypot(x[:, 0], x[:, 1])
    c = np.where(r > 0, x[:, 0] / np.where(r > 0, r, 1.0), 1.0)
    s = np.where(r > 0, x[:, 1] / np.where(r > 0, r, 1.0), 0.0)
    return u[:, 0] * c + u[:, 1] * s, -u[:, 0] * s + u[:, 1] * c, u[:, 2]


class FieldInterpolant:
    """C^4 quintic spline interpolation of phi and the total A_phi on the grid.

    E and B are derived from the same splines, so the orbit invariants are
    exact invariants of the interpolated fields.  Quintic rather than cubic
    splines keep the force C^3, which the fourth-order pusher and its error
    estimate need when a step crosses a cell edge.  For speed the splines are
    stored cell by cell as polynomials in local coordinates; outside the grid
    the nearest cell's polynomial continues the field smoothly.
    """

    def __init__(self, grid: MeridianGrid, fields=None, margin: float = 0.05,
                 degree: int = 5):
        self.grid = grid
        dom = grid.domain
        self.margin = margin * max(dom.r_max - dom.r_min, dom.z_max - dom.z_min)
        self.degree = min(degree, grid.n_r - 1, grid.n_z - 1)
        if self.degree % 2 == 0:
            self.degree -= 1
        self.zero = fields is None
        if not self.zero:
            a = fields.a_phi if getattr(fields, "a_ext", None) is None else fields.a_phi + fields.a_ext
            phi = np.asarray(fields.phi, dtype=float)
            a = np.asarray(a, dtype=float)
            self.zero = not (np.any(phi) or np.any(a))
            self._coef = np.stack([self._cell_polys(phi), self._cell_polys(a)])

    def _cell_polys(self, values):
        g = self.grid
        k = self.degree
        sp = RectBivariateSpline(g.r, g.z, values, kx=k, ky=k)
        # sample each cell at (k+1)^2 interior points and solve the Vandermonde
        # systems; the spline is one polynomial per cell
        # in cell coordinates (0..1) for conditioning
        loc = (np.arange(k + 1) + 0.5) / (k + 1)
        R = g.r[:-1, None] + loc[None, :] * g.h_r
        Z = g.z[:-1, None] + loc[None, :] * g.h_z
        vals = sp(R.ravel(), Z.ravel(), grid=True).reshape(g.n_r - 1, k + 1, g.n_z - 1, k + 1)
        # solve rather than multiply by the explicit inverse: its large
        # entries cost ~1e-10 through cancellation
        V = np.vander(loc, k + 1, increasing=True)
        n_i, n_j = g.n_r - 1, g.n_z - 1
        t = np.linalg.solve(V, vals.transpose(1, 0, 2, 3).reshape(k + 1, -1))
        t = t.reshape(k + 1, n_i, n_j, k + 1).transpose(3, 1, 2, 0)
        c = np.linalg.solve(V, t.reshape(k + 1, -1)).reshape(k + 1, n_i, n_j, k + 1)
        return c.transpose(1, 2, 3, 0)

    def _check(self, r, z):
        d = self.grid.domain
        m = self.margin
        if (np.any(r < d.r_min - m) or np.any(r > d.r_max + m)
                or np.any(z < d.z_min - m) or np.any(z > d.z_max + m)):
            raise GeometryError("interpolation outside grid")

    def _eval(self, r, z, derivs=True):
        g = self.grid
        i = np.clip(((r - g.r[0]) / g.h_r).astype(np.int64), 0, g.n_r - 2)
        j = np.clip(((z - g.z[0]) / g.h_z).astype(np.int64), 0, g.n_z - 2)
        u = (r - g.r[i]) / g.h_r
        w = (z - g.z[j]) / g.h_z
        n = self.degree + 1
        pu = np.empty((u.size, n))
        pw = np.empty((u.size, n))
        pu[:, 0] = 1.0
        pw[:, 0] = 1.0
        for q in range(1, n):
            pu[:, q] = pu[:, q - 1] * u
            pw[:, q] = pw[:, q - 1] * w
        C = self._coef[:, i, j]
        cw = np.einsum("nb,fnab->fna", pw, C)
        val = np.einsum("na,fna->fn", pu, cw)
        if not derivs:
            return val
        q = np.arange(1, n)
        du = np.zeros_like(pu)
        dw = np.zeros_like(pw)
        du[:, 1:] = pu[:, :-1] * q
        dw[:, 1:] = pw[:, :-1] * q
        d_r = np.einsum("na,fna->fn", du, cw) / g.h_r
        d_z = np.einsum("na,nb,fnab->fn", pu, dw, C) / g.h_z
        return val, d_r, d_z

    def potentials(self, r, z):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        z = np.atleast_1d(np.asarray(z, dtype=float))
        self._check(r, z)
        if self.zero:
            return np.zeros_like(r), np.zeros_like(r)
        val = self._eval(r.ravel(), z.ravel(), derivs=False)
        return val[0].reshape(r.shape), val[1].reshape(r.shape)

    def eb(self, x):
        """Cartesian E and B at positions x (N, 3); no domain check (hot path)."""
        n = x.shape[0]
        if self.zero:
            return np.zeros((n, 3)), np.zeros((n, 3))
        r = np.hypot(x[:, 0], x[:, 1])
        z = x[:, 2]
        if np.any(r <= 0):
            raise TrajectoryError("particle reached the symmetry axis")
        c, s = x[:, 0] / r, x[:, 1] / r
        val, d_r, d_z = self._eval(r, z)
        er, ez = -d_r[0], -d_z[0]
        br = -d_z[1]
        bz = val[1] / r + d_r[1]
        E = np.empty((n, 3))
        B = np.empty((n, 3))
        E[:, 0], E[:, 1], E[:, 2] = er * c, er * s, ez
        B[:, 0], B[:, 1], B[:, 2] = br * c, br * s, bz
        return E, B


def invariants(state: ParticleState, interp: FieldInterpolant):
    """(e, p) for every particle."""
    r, z = state.r, state.z
    phi, a = interp.potentials(r, z)
    _, v_phi, _ = state.cylindrical_velocity()
    e = state.gamma + state.sign * phi
    p = r * (v_phi + state.sign * a)
    return e, p


def _vhat(u):
    return u / np.sqrt(1.0 + np.sum(u * u, axis=1))[:, None]


def _cross(a, b):
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _boris(x, u, s, h, F: FieldInterpolant):
    hh = 0.5 * h[:, None]
    x = x + hh * _vhat(u)
    E, B = F.eb(x)
    qs = (s * 0.5 * h)[:, None]
    um = u + qs * E
    g = np.sqrt(1.0 + np.sum(um * um, axis=1))[:, None]
    t = qs * B / g
    up = um + _cross(um, t)
    um = um + _cross(up, 2.0 * t / (1.0 + np.sum(t * t, axis=1))[:, None])
    u = um + qs * E
    x = x + hh * _vhat(u)
    return x, u


def _step(x, u, s, h, F):
    for w in (_W1, _W0, _W1):
        x, u = _boris(x, u, s, w * h, F)
    return x, u


def _outside(x, domain):
    """Signed distance beyond the nearest violated wall (<= 0 inside)."""
    r = np.hypot(x[:, 0], x[:, 1])
    z = x[:, 2]
    parts = [r - domain.r_max, domain.z_min - z, z - domain.z_max]
    if not domain.touches_axis:
        parts.append(domain.r_min - r)
    return np.max(np.stack(parts), axis=0)


def reflect(state: ParticleState, normal, index: int = 0, grid: MeridianGrid = None,
            tol: float = 1e-9) -> ParticleState:
    """Specular reflection of particle ``index`` at a wall with meridian normal (n_r, n_z).

    The normal momentum component is negated; tangential and azimuthal
    components are untouched.
    """
    n_r, n_z = (float(v) for v in normal)
    if abs(np.hypot(n_r, n_z) - 1.0) > 1e-12:
        raise ValueError("normal must be a unit vector")
    if grid is not None:
        d = grid.domain
        r, z = state.r[index], state.z[index]
        on = ((n_r > 0 and abs(r - d.r_max) <= tol) or (n_r < 0 and abs(r - d.r_min) <= tol)
              or (n_z > 0 and abs(z - d.z_max) <= tol) or (n_z < 0 and abs(z - d.z_min) <= tol))
        if not on:
            raise GeometryError("reflect called away from the boundary")
    out = state.copy()
    out.u[index] = _reflect_u(out.x[index], out.u[index], n_r, n_z)
    out.reflections[index] += 1
    return out


def _reflect_u(x, u, n_r, n_z):
    r = np.hypot(x[0], x[1])
    if n_r != 0.0:
        er = np.array([x[0] / r, x[1] / r, 0.0])
        n3 = n_r * er + np.array([0.0, 0.0, n_z])
    else:
        n3 = np.array([0.0, 0.0, n_z])
    return u - 2.0 * np.dot(u, n3) * n3


def _wall_reflect(x, u, domain, tol=1e-9, direction=1.0):
    """Reflect off every wall the particle touches while moving outward; r-face first.

    ``direction`` is -1 when integrating backwards in time, where "outward"
    refers to the reversed motion.
    """
    r = np.hypot(x[0], x[1])
    v_r, _, v_z = _cyl_velocity(x[None, :], u[None, :])
    v_r, v_z = direction * float(v_r[0]), direction * float(v_z[0])
    count = 0
    if r >= domain.r_max - tol and v_r > 0:
        u = _reflect_u(x, u, 1.0, 0.0)
        count += 1
    elif not domain.touches_axis and r <= domain.r_min + tol and v_r < 0:
        u = _reflect_u(x, u, -1.0, 0.0)
        count += 1
    if x[2] >= domain.z_max - tol and v_z > 0:
        u = _reflect_u(x, u, 0.0, 1.0)
        count += 1
    elif x[2] <= domain.z_min + tol and v_z < 0:
        u = _reflect_u(x, u, 0.0, -1.0)
        count += 1
    return u, count


def _locate_wall(x, u, s, h, F, domain, max_iter=100):
    """Largest tau in [0, h] that is still inside, bracketed to WALL_TIME_TOL.

    Vectorized over particles.  Secant estimates from the two latest
    evaluations (bisection when they leave the bracket); each estimate is
    probed at a pair of times straddling it, so the bracket collapses as soon
    as the estimate is accurate.
    """
    m = x.shape[0]
    sgn = np.sign(h)
    lo = np.zeros(m)
    hi = np.abs(h).copy()
    glo = np.minimum(_outside(x, domain), 0.0)
    ghi = _outside(_step(x, u, s, h, F)[0], domain)
    xlo, ulo = x.copy(), u.copy()
    tp, gp = hi.copy(), ghi.copy()
    tc, gc = lo.copy(), glo.copy()
    half = 0.45 * WALL_TIME_TOL
    for _ in range(max_iter):
        a = np.nonzero(hi - lo > WALL_TIME_TOL)[0]
        if a.size == 0:
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            est = tc[a] - gc[a] * (tc[a] - tp[a]) / (gc[a] - gp[a])
        bad = ~np.isfinite(est) | (est <= lo[a]) | (est >= hi[a])
        est = np.where(bad, 0.5 * (lo[a] + hi[a]), est)
        tp[a], gp[a] = tc[a], gc[a]
        for k, tau in enumerate((est - half, est + half)):
            tau = np.clip(tau, lo[a], hi[a])
            live = (tau > lo[a]) & (tau < hi[a])
            b_ = a[live]
            if b_.size == 0:
                continue
            t_ = tau[live]
            xm, um = _step(x[b_], u[b_], s[b_], sgn[b_] * t_, F)
            gm = _outside(xm, domain)
            if k == 0:
                tc[b_], gc[b_] = t_, gm
            inside = gm <= 0.0
            bi, bo = b_[inside], b_[~inside]
            lo[bi], glo[bi], xlo[bi], ulo[bi] = t_[inside], gm[inside], xm[inside], um[inside]
            hi[bo], ghi[bo] = t_[~inside], gm[~inside]
    return lo, xlo, ulo


@dataclass
class InvariantRecord:
    e0: np.ndarray
    p0: np.ndarray
    e_drift: np.ndarray       # max |e(t) - e(0)| / max(1, |e(0)|)
    p_drift: np.ndarray
    times: List[float] = field(default_factory=list)
    reflections: np.ndarray = None

    @property
    def max_drift(self) -> float:
        return float(max(np.max(self.e_drift), np.max(self.p_drift)))


class Tracer:
    """Adaptive integration of a particle ensemble in fixed fields."""

    def __init__(self, grid: MeridianGrid, fields=None, tol: float = 1e-10,
                 dt_init: float = 0.05, dt_max: float = 0.5):
        self.grid = grid
        self.domain = grid.domain
        self.F = FieldInterpolant(grid, fields)
        self.tol = tol
        self.dt_init = dt_init
        self.dt_max = dt_max

    def run(self, state: ParticleState, T: float,
            observer: Optional[Callable] = None) -> tuple:
        """Advance every particle by T (negative T integrates backwards).

        ``observer(idx, t0, x0, u0, t1, x1, u1)`` is called after every accepted
        piece of motion.  Returns the final state and an InvariantRecord.
        """
        st = state.copy()
        if np.any(_outside(st.x, self.domain) > 1e-12):
            raise GeometryError("particle starts outside the domain")
        direction = 1.0 if T >= 0 else -1.0
        T = abs(T)
        e0, p0 = invariants(st, self.F)
        e_dr = np.zeros(st.n)
        p_dr = np.zeros(st.n)
        elapsed = np.zeros(st.n)
        dt = np.full(st.n, self.dt_init)
        while True:
            idx = np.nonzero(elapsed < T * (1.0 - 1e-15))[0]
            if idx.size == 0:
                break
            h = np.minimum(dt[idx], T - elapsed[idx])
            x, u, s = st.x[idx], st.u[idx], st.sign[idx]
            hd = direction * h
            xb, ub = _step(x, u, s, hd, self.F)
            xh, uh = _step(x, u, s, 0.5 * hd, self.F)
            xh, uh = _step(xh, uh, s, 0.5 * hd, self.F)
            scale = np.maximum(1.0, np.linalg.norm(u, axis=1))
            err = np.maximum(np.max(np.abs(xb - xh), axis=1),
                             np.max(np.abs(ub - uh), axis=1) / scale) / 15.0
            fac = np.clip(0.9 * (self.tol / np.maximum(err, 1e-300)) ** 0.2, 0.2, 2.0)
            ok = err <= self.tol
            dt[idx] = np.minimum(np.where(ok, np.maximum(h, dt[idx]), h) * fac, self.dt_max)
            if not np.any(ok):
                if np.any(dt[idx] < 1e-14):
                    raise TrajectoryError("step size underflow")
                continue
            k = idx[ok]
            xn, un, hk = xh[ok], uh[ok], h[ok]
            out = _outside(xn, self.domain) > 0.0
            if np.any(out):
                j = np.nonzero(out)[0]
                tau, xj, uj = _locate_wall(x[ok][j], u[ok][j], s[ok][j], direction * hk[j],
                                           self.F, self.domain)
                for q in range(j.size):
                    uj[q], c = _wall_reflect(xj[q], uj[q], self.domain, direction=direction)
                    st.reflections[k[j[q]]] += c
                    if c == 0 and tau[q] == 0.0:
                        raise TrajectoryError("particle stuck at the wall without reflecting")
                xn[j], un[j], hk[j] = xj, uj, tau
            t_old = elapsed[k].copy()
            x_old, u_old = st.x[k].copy(), st.u[k].copy()
            st.x[k], st.u[k] = xn, un
            elapsed[k] += hk
            st.t[k] += direction * hk
            sub = ParticleState(xn, un, st.sign[k])
            e, p = invariants(sub, self.F)
            e_dr[k] = np.maximum(e_dr[k], np.abs(e - e0[k]) / np.maximum(1.0, np.abs(e0[k])))
            p_dr[k] = np.maximum(p_dr[k], np.abs(p - p0[k]) / np.maximum(1.0, np.abs(p0[k])))
            if observer is not None:
                observer(k, t_old, x_old, u_old, elapsed[k].copy(), xn.copy(), un.copy())
        rec = InvariantRecord(e0, p0, e_dr, p_dr, [T], st.reflections.copy())
        return st, rec


def push(state: ParticleState, fields, dt: float, grid: MeridianGrid, tol: float = 1e-10
         ) -> ParticleState:
    """Advance the ensemble by dt with adaptive substeps and wall reflections."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return Tracer(grid, fields, tol=tol).run(state, dt)[0]


def sample_particles(grid: MeridianGrid, n: int, seed: int = 0, sign: float = 1.0,
                     momentum_scale: float = 1.0, margin: float = 0.02) -> ParticleState:
    """Deterministic random ensemble: uniform in the meridian box, Gaussian momenta."""
    rng = np.random.default_rng(seed)
    d = grid.domain
    wr = (d.r_max - d.r_min) * margin
    wz = (d.z_max - d.z_min) * margin
    r = rng.uniform(max(d.r_min + wr, wr), d.r_max - wr, n)
    z = rng.uniform(d.z_min + wz, d.z_max - wz, n)
    angle = rng.uniform(0.0, 2.0 * np.pi, n)
    v = rng.normal(0.0, momentum_scale, (n, 3))
    return ParticleState.from_cylindrical(r, angle, z, v[:, 0], v[:, 1], v[:, 2], sign)


def trace(grid: MeridianGrid, fields, state: ParticleState, T: float, tol: float = 1e-10,
          record: bool = False):
    """Run and optionally collect per-particle rows (t, r, phi, z, v_r, v_phi, v_z, e, p)."""
    tracer = Tracer(grid, fields, tol=tol)
    rows = [[] for _ in range(state.n)] if record else None

    def row(t, x, u, s):
        sub = ParticleState(x, u, s)
        e, p = invariants(sub, tracer.F)
        vr, vp, vz = sub.cylindrical_velocity()
        return np.column_stack([t, sub.r, sub.angle, sub.z, vr, vp, vz, e, p])

    if record:
        for i, rw in enumerate(row(np.zeros(state.n), state.x, state.u, state.sign)):
            rows[i].append(rw)

    def observer(k, t0, x0, u0, t1, x1, u1):
        for i, rw in zip(k, row(t1, x1, u1, state.sign[k])):
            rows[i].append(rw)

    final, rec = tracer.run(state, T, observer if record else None)
    if record:
        rows = [np.array(r) for r in rows]
    return final, rec, rows


def write_trajectory_csv(path, rows: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rw in rows:
            w.writerow([f"{v:.17g}" for v in rw])


@dataclass
class ProjectionEstimate:
    r: np.ndarray
    z: np.ndarray
    momenta: np.ndarray
    average: np.ndarray        # (1/T) int_0^T vhat_phi h(X) ds
    half_average: np.ndarray   # same over [0, T/2]
    diagnostic: np.ndarray     # |average - half_average|

    @property
    def converged(self) -> np.ndarray:
        return self.diagnostic < 1e-2


def estimate_projection(h: np.ndarray, sign: float, fields, grid: MeridianGrid,
                        samples: int, T: float, seed: int = 0, tol: float = 1e-9,
                        state: ParticleState = None) -> ProjectionEstimate:
    """Trajectory time averages of ``vhat_phi h`` at sampled phase points.

    Advisory only: convergence of these averages to the kernel projection is
    not guaranteed, so the T versus T/2 difference is reported alongside.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    spline = RectBivariateSpline(grid.r, grid.z, np.asarray(h, dtype=float))
    st = sample_particles(grid, samples, seed, sign) if state is None else state
    n = st.n
    total = np.zeros(n)
    half = np.zeros(n)
    half_T = 0.5 * T

    def g(x, u):
        _, vp, _ = _cyl_velocity(x, u)
        gam = np.sqrt(1.0 + np.sum(u * u, axis=1))
        return vp / gam * spline.ev(np.hypot(x[:, 0], x[:, 1]), x[:, 2])

    def observer(k, t0, x0, u0, t1, x1, u1):
        # trapezoid on each accepted piece
        val = 0.5 * (g(x0, u0) + g(x1, u1))
        total[k] += val * (t1 - t0)
        half[k] += val * np.clip(np.minimum(t1, half_T) - t0, 0.0, None)

    Tracer(grid, fields, tol=tol).run(st, T, observer)
    vr, vp, vz = st.cylindrical_velocity()
    avg = total / T
    havg = half / half_T
    return ProjectionEstimate(st.r, st.z, np.column_stack([vr, vp, vz]), avg, havg,
                              np.abs(avg - havg))
