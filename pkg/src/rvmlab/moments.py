"""Velocity moments of mu(e, p) densities over R^3.

The integrands depend on (v_r, v_z) only through ``w = |(v_r, v_z)|``, so
``dv = 2 pi w dw dv_phi`` and every moment is a 2-D integral.  Both directions
use composite Gauss-Legendre rules on geometrically graded panels; in v_phi the
panels are centred on the line p = 0 of each species and the innermost panel
width follows the p-scale of the profile, which keeps strongly p-localized
profiles resolved.  Truncation is certified by the decay bound of the profile.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .distribution import MuFunction


class QuadratureError(RuntimeError):
    def __init__(self, message, tail=None):
        super().__init__(message)
        self.tail = tail


@dataclass(frozen=True)
class MomentQuadrature:
    n_w: int = 6                 # Gauss-Legendre nodes per w panel
    n_vphi: int = 6              # Gauss-Legendre nodes per v_phi panel
    tail_tolerance: float = 1e-6
    w_max: Optional[float] = None      # None: chosen from the decay bound
    vphi_max: Optional[float] = None
    max_refinements: int = 0     # node doublings until results change < tail_tolerance
    chunk: int = 64

    def __post_init__(self):
        if self.n_w < 1 or self.n_vphi < 1:
            raise ValueError("node counts must be positive")
        if not self.tail_tolerance > 0:
            raise ValueError("tail_tolerance must be positive")

    def refined(self) -> "MomentQuadrature":
        return MomentQuadrature(2 * self.n_w, 2 * self.n_vphi, self.tail_tolerance,
                                self.w_max, self.vphi_max, 0, self.chunk)


@dataclass
class MomentFields:
    rho: np.ndarray
    j_phi: np.ndarray
    m1: np.ndarray   # int r vhat_phi (mu+_p + mu-_p)
    m2: np.ndarray   # int vhat_phi (mu+_e + mu-_e)
    m3: np.ndarray   # int r (mu+_p + mu-_p)
    m4: np.ndarray   # int (mu+_e + mu-_e)


def tail_bound(R: float, delta: float, c_mu: float, phi_max: float = 0.0) -> float:
    """Bound on ``c_mu int_{|v| > R} dv / (1 + |e|^delta)`` with ``e >= |v| - phi_max``."""
    if not np.isfinite(delta) or c_mu == 0:
        return 0.0
    Rp = R - phi_max
    if Rp <= 0:
        return np.inf
    return 4.0 * np.pi * c_mu * (Rp ** (3 - delta) / (delta - 3)
                                 + 2 * phi_max * Rp ** (2 - delta) / (delta - 2)
                                 + phi_max ** 2 * Rp ** (1 - delta) / (delta - 1))


def required_cutoff(delta, c_mu, tol, phi_max=0.0) -> float:
    if not np.isfinite(delta) or c_mu == 0:
        return 1.0
    lo = phi_max + 1.0
    if tail_bound(lo, delta, c_mu, phi_max) <= tol:
        return lo
    hi = 2.0 * lo
    while tail_bound(hi, delta, c_mu, phi_max) > tol:
        lo, hi = hi, 2.0 * hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if tail_bound(mid, delta, c_mu, phi_max) > tol:
            lo = mid
        else:
            hi = mid
    return hi


def _panels(breaks, n):
    x, w = np.polynomial.legendre.leggauss(n)
    a = np.asarray(breaks[:-1])[:, None]
    b = np.asarray(breaks[1:])[:, None]
    nodes = 0.5 * (a + b) + 0.5 * (b - a) * x[None, :]
    weights = 0.5 * (b - a) * w[None, :]
    return nodes.ravel(), weights.ravel()


def _geometric_breaks(first, top):
    breaks = [0.0, first]
    while breaks[-1] < top:
        breaks.append(2.0 * breaks[-1])
    return np.array(breaks)


@dataclass
class _Layout:
    w: np.ndarray
    ww: np.ndarray       # includes the 2 pi w Jacobian
    t: np.ndarray        # normalized v_phi offsets from the p = 0 line
    wt: np.ndarray
    w_max: float
    t_max: float


def _layout(mu: MuFunction, quad: MomentQuadrature, r_max: float, phi_max: float,
            a_max: float, weight: float) -> _Layout:
    R = required_cutoff(mu.delta, mu.decay_constant * weight, quad.tail_tolerance, phi_max)
    W = R if quad.w_max is None else quad.w_max
    V = R + a_max if quad.vphi_max is None else quad.vphi_max
    reach = min(W, V - a_max)
    tail = tail_bound(reach, mu.delta, mu.decay_constant * weight, phi_max)
    if tail > quad.tail_tolerance:
        raise QuadratureError(
            f"quadrature cutoff too small: estimated tail {tail:.3e} exceeds "
            f"tolerance {quad.tail_tolerance:.3e}", tail=tail)
    wb = _geometric_breaks(0.5, W)
    w, ww = _panels(wb, quad.n_w)
    ww = 2.0 * np.pi * w * ww
    s_min = _core_width(mu, r_max)
    tb = _geometric_breaks(1.0, V / s_min)
    tb = np.concatenate([-tb[::-1], tb[1:]])
    t, wt = _panels(tb, quad.n_vphi)
    return _Layout(w, ww, t, wt, W, V)


def _core_width(mu: MuFunction, r):
    # v_phi width on which p = r (v_phi + A) changes by one p-scale, capped at 1
    ell = min(mu.p_scale, 1.0)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        s = np.where(r > 0, ell / np.maximum(r, 1e-300), np.inf)
    return np.minimum(s, 1.0)


class Ctx:
    """Integrand context for one chunk of spatial points and one species."""

    def __init__(self, mu, sign, r, phi, a, w, v):
        self.mu = mu
        self.sign = sign
        self.r = r[:, None, None]
        self.gamma = np.sqrt(1.0 + w[None, :, None] ** 2 + v[:, None, :] ** 2)
        self.vphi = v[:, None, :]
        self.vhat_phi = self.vphi / self.gamma
        self.e = self.gamma + sign * phi[:, None, None]
        self.p = self.r * (self.vphi + sign * a[:, None, None])
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn(self.e, self.p)
        return self._cache[key]

    @property
    def f(self):
        return self._get("f", self.mu.eval)

    @property
    def f_e(self):
        return self._get("fe", self.mu.d_e)

    @property
    def f_p(self):
        return self._get("fp", self.mu.d_p)


def species_integrals(r, phi, a, mu: MuFunction, sign: int, quad: MomentQuadrature,
                      kernel: Callable[[Ctx], Sequence[np.ndarray]], n_out: int,
                      weight: float = 1.0, r_max: Optional[float] = None) -> np.ndarray:
    """Integrate ``kernel(ctx)`` over velocity space at each point.

    ``r, phi, a`` are 1-D arrays of point data; returns shape ``(n_out, n_points)``.
    ``weight`` bounds the extra factor in the kernel relative to mu (used in the
    tail certificate).
    """
    r = np.asarray(r, dtype=float).ravel()
    phi = np.asarray(phi, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    out = np.zeros((n_out, r.size))
    if mu.is_zero or r.size == 0:
        return out
    r_top = float(np.max(r)) if r_max is None else r_max
    lay = _layout(mu, quad, r_top, float(np.max(np.abs(phi))), float(np.max(np.abs(a))), weight)
    s = _core_width(mu, r)
    centre = -sign * a
    for lo in range(0, r.size, quad.chunk):
        sl = slice(lo, lo + quad.chunk)
        v = centre[sl, None] + s[sl, None] * lay.t[None, :]
        wv = s[sl, None] * lay.wt[None, :]
        ctx = Ctx(mu, sign, r[sl], phi[sl], a[sl], lay.w, v)
        wts = lay.ww[None, :, None] * wv[:, None, :]
        for k, g in enumerate(kernel(ctx)):
            out[k, sl] = np.sum(g * wts, axis=(1, 2))
    return out


def _moment_kernel(ctx: Ctx):
    f, fe, fp = ctx.f, ctx.f_e, ctx.f_p
    vh = ctx.vhat_phi
    return (f, vh * f, ctx.r * vh * fp, vh * fe, ctx.r * fp, fe)


def _point_moments(r, phi, a, mus, quad, r_max):
    acc = np.zeros((6, np.size(r)))
    weight = max(1.0, r_max)
    for sign, mu in zip((1, -1), mus):
        vals = species_integrals(r, phi, a, mu, sign, quad, _moment_kernel, 6, weight, r_max)
        # rho and j_phi take the species sign, the multipliers add
        acc[0:2] += sign * vals[0:2]
        acc[2:] += vals[2:]
    return acc


def compute_moments(grid, fields, mus, quad: MomentQuadrature, points=None) -> MomentFields:
    """Charge density, azimuthal current and Jacobian multipliers at every node.

    ``fields`` is any object with ``phi`` and ``a_phi`` grid arrays.  With
    ``quad.max_refinements > 0`` the node counts are doubled until the largest
    change is below ``quad.tail_tolerance``.
    """
    R = np.asarray(grid.R, dtype=float)
    phi = np.asarray(fields.phi, dtype=float)
    a = np.asarray(fields.a_phi, dtype=float)
    r_max = grid.domain.r_max
    acc = _point_moments(R.ravel(), phi.ravel(), a.ravel(), mus, quad, r_max)
    q = quad
    for _ in range(quad.max_refinements):
        q = q.refined()
        nxt = _point_moments(R.ravel(), phi.ravel(), a.ravel(), mus, q, r_max)
        change = np.max(np.abs(nxt - acc))
        acc = nxt
        if change < quad.tail_tolerance:
            break
    else:
        if quad.max_refinements:
            raise QuadratureError(f"moments not converged after {quad.max_refinements} "
                                  f"refinements (last change {change:.3e})", tail=change)
    shp = grid.shape
    return MomentFields(*(acc[k].reshape(shp) for k in range(6)))


def moments_at(r, phi, a, mus, quad: MomentQuadrature):
    """(rho, j_phi, m1, m2, m3, m4) at scattered points."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return _point_moments(r, np.broadcast_to(phi, r.shape), np.broadcast_to(a, r.shape),
                          mus, quad, float(np.max(r)))


def brute_force_moments(phi: float, a: float, r: float, mus, n: int = 240,
                        cutoff: float = 30.0, panel_order: int = 8):
    """Direct tensor-product quadrature over (v_r, v_phi, v_z) at one point.

    Returns ``(rho, j_phi, j_r, j_z)``.  Uniform composite Gauss-Legendre panels
    on the cube ``[-cutoff, cutoff]^3``; meant as an independent check of the
    reduced 2-D rule, not for production use.
    """
    n_panels = max(1, n // panel_order)
    breaks = np.linspace(-cutoff, cutoff, n_panels + 1)
    x, wx = _panels(breaks, panel_order)
    out = np.zeros(4)
    vphi = x[None, :, None]
    for sign, mu in zip((1, -1), mus):
        if mu.is_zero:
            continue
        for i in range(x.size):
            vr = x[i]
            g = np.sqrt(1.0 + vr ** 2 + vphi ** 2 + x[None, None, :] ** 2)
            f = mu.eval(g + sign * phi, r * (vphi + sign * a)) * np.ones_like(g)
            wts = wx[i] * wx[None, :, None] * wx[None, None, :]
            fw = f * wts
            out[0] += sign * np.sum(fw)
            out[1] += sign * np.sum(fw * vphi / g)
            out[2] += sign * np.sum(fw * vr / g)
            out[3] += sign * np.sum(fw * x[None, None, :] / g)
    return tuple(out)


def radial_integral(fn: Callable[[np.ndarray], np.ndarray], order: int = 16,
                    top: float = 1e12) -> float:
    """``4 pi int_0^inf u^2 fn(u) du`` on doubling panels; used for isotropic constants."""
    breaks = _geometric_breaks(0.25, top)
    u, wu = _panels(breaks, order)
    return float(4.0 * np.pi * np.sum(u * u * fn(u) * wu))


@dataclass
class IntegralBoundReport:
    upper_margin: np.ndarray   # (bound - integral) / bound, per species sign
    lower_margin: np.ndarray
    c_int1: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.upper_margin >= 0) and np.all(self.lower_margin >= 0))

    def worst(self):
        return float(np.min(self.upper_margin)), float(np.min(self.lower_margin))


def integral_bound_check(fields, delta: float, grid, quad: MomentQuadrature = None
                         ) -> IntegralBoundReport:
    """Two-sided bounds on ``int dv / (1 + |<v> +- phi|^delta + |r (v_phi +- A)|^delta)``.

    Upper: ``(2 + 2^delta |phi|^delta) C_int1``; lower:
    ``C_int2(r) / (2^delta (1 + |phi|^delta + r^delta |A|^delta))``.
    """
    from .distribution import algebraic
    if not delta > 3:
        raise ValueError("delta must exceed 3")
    quad = quad or MomentQuadrature(n_w=8, n_vphi=8, tail_tolerance=1e-7)
    mu = algebraic(1.0, delta)
    R = np.asarray(grid.R, dtype=float).ravel()
    phi = np.asarray(fields.phi, dtype=float).ravel()
    a = np.asarray(fields.a_phi, dtype=float).ravel()
    c1 = radial_integral(lambda u: 1.0 / (1.0 + (1.0 + u * u) ** (delta / 2)))
    c2 = species_integrals(R, np.zeros_like(R), np.zeros_like(R), mu, 1, quad,
                           lambda c: (c.f,), 1)[0]
    up, low = [], []
    for sign in (1, -1):
        val = species_integrals(R, phi, a, mu, sign, quad, lambda c: (c.f,), 1)[0]
        ub = (2.0 + 2.0 ** delta * np.abs(phi) ** delta) * c1
        lb = c2 / (2.0 ** delta * (1.0 + np.abs(phi) ** delta + R ** delta * np.abs(a) ** delta))
        up.append((ub - val) / ub)
        low.append((val - lb) / val)
    return IntegralBoundReport(np.array(up), np.array(low), c1)
