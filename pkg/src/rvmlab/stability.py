"""Brackets for the spectral-stability quadratic form and the instability margin.

For a normalized test function h the quadratic form splits as

    <A2 h, h> = 1 + I + II + III,
    I   = -sum int int p mu_p / <v> |h|^2,
    II  = +sum (+-) int int r A mu_p / <v> |h|^2,
    III = sum ||P(vhat_phi h)||^2  in  [0, int int |mu_e| vhat_phi^2 |h|^2],

where P is an orthogonal projection with no closed form, so only the bracket
``1 + I + II <= <A2 h, h> <= 1 + I + II + int int |mu_e| vhat_phi^2 |h|^2`` is
computed.  The explicit margin of the large-K instability criterion is a sum
of power laws in K.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .distribution import FamilySpec, MuFunction, ParameterError, family_at
from .elliptic import LAPLACE, LAPLACE_INV_R2, SolverError, make_operator
from .geometry import MeridianGrid
from .moments import MomentQuadrature, species_integrals

log = logging.getLogger(__name__)

STABLE_K0 = "certified-stable-at-K0"
UNSTABLE = "certified-unstable"
INDETERMINATE = "indeterminate"


# --- test functions ----------------------------------------------------------

@dataclass
class TestFunction:
    h: np.ndarray
    norm_grad: float     # int |grad h|^2 + h^2 / r^2 dx
    H1: float            # int_{r >= 1} r h^2 dx
    H2: float            # int h^2 dx
    label: str = ""

    __test__ = False     # not a pytest class


def make_test_function(grid: MeridianGrid, h: np.ndarray, label: str = "",
                       normalize: bool = True) -> TestFunction:
    """Wrap a grid field that vanishes on the physical boundary (and on the axis)."""
    h = np.asarray(h, dtype=float).copy()
    op = make_operator(grid, LAPLACE_INV_R2)
    if np.any(h[~op.unknowns] != 0.0):
        raise ValueError("test function must vanish on the boundary")
    x = h[op.unknowns]
    ng = float(x @ (op.matrix @ x))
    if not ng > 0:
        raise ValueError("test function must be nonzero")
    if normalize:
        h /= np.sqrt(ng)
        x = h[op.unknowns]
        ng = float(x @ (op.matrix @ x))
    vol = grid.volume_weights()
    R = grid.R
    H1 = float(np.sum(np.where(R >= 1.0, vol * R * h * h, 0.0)))
    H2 = float(np.sum(vol * h * h))
    return TestFunction(h, ng, H1, H2, label)


def sine_test_bank(grid: MeridianGrid, k_max: int = 4, l_max: int = 4) -> List[TestFunction]:
    d = grid.domain
    R, Z = grid.R, grid.Z
    bank = []
    for k in range(1, k_max + 1):
        for l in range(1, l_max + 1):
            h = (np.sin(k * np.pi * (R - d.r_min) / (d.r_max - d.r_min))
                 * np.sin(l * np.pi * (Z - d.z_min) / (d.z_max - d.z_min)))
            h[grid.kind != 0] = 0.0
            bank.append(make_test_function(grid, h, f"sin({k},{l})"))
    return bank


# --- bracket -------------------------------------------------------------------

def _bracket_kernel(ctx):
    inv_g = 1.0 / ctx.gamma
    fp = ctx.f_p
    return (ctx.p * fp * inv_g, fp * inv_g, ctx.vhat_phi ** 2 * np.abs(ctx.f_e))


@dataclass
class BracketDensities:
    t_I: np.ndarray      # sum int p mu_p / <v> dv
    t_II: np.ndarray     # sum (+-) r A int mu_p / <v> dv
    m5: np.ndarray       # sum int vhat_phi^2 |mu_e| dv


def bracket_densities(grid: MeridianGrid, fields, mus, quad: MomentQuadrature
                      ) -> BracketDensities:
    R = np.asarray(grid.R, dtype=float).ravel()
    phi = np.asarray(fields.phi, dtype=float).ravel()
    a = np.asarray(fields.a_phi, dtype=float)
    if getattr(fields, "a_ext", None) is not None:
        a = a + fields.a_ext
    a = a.ravel()
    acc = np.zeros((3, R.size))
    for sign, mu in zip((1, -1), mus):
        vals = species_integrals(R, phi, a, mu, sign, quad, _bracket_kernel, 3,
                                 max(1.0, grid.domain.r_max), grid.domain.r_max)
        acc[0] += vals[0]
        acc[1] += sign * R * a * vals[1]
        acc[2] += vals[2]
    shp = grid.shape
    return BracketDensities(*(acc[k].reshape(shp) for k in range(3)))


@dataclass
class Bracket:
    q_lower: float
    q_upper: float
    term_I: float
    term_II: float
    projection_bound: float


def a2_bracket(h: TestFunction, fields, mus, grid: MeridianGrid, quad: MomentQuadrature,
               densities: BracketDensities = None) -> Bracket:
    dens = bracket_densities(grid, fields, mus, quad) if densities is None else densities
    w = grid.volume_weights() * h.h * h.h
    I = -float(np.sum(w * dens.t_I))
    II = float(np.sum(w * dens.t_II))
    III = float(np.sum(w * dens.m5))
    lower = h.norm_grad + I + II
    return Bracket(lower, lower + III, I, II, III)


# --- instability margin ----------------------------------------------------------

@dataclass(frozen=True)
class MarginConstants:
    H1: float
    H2: float
    c_P: float
    C_mu: float
    C_mu_prime: float
    C_nu: float
    m: float
    eps: float
    delta: float
    b: float

    def __post_init__(self):
        for name in ("H1", "H2", "c_P", "C_mu", "C_mu_prime", "C_nu", "b"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if not -1.0 < self.m < 1.0:
            raise ParameterError("m must lie in (-1, 1)")
        if not 0.0 < self.eps < 1.0 - abs(self.m):
            raise ParameterError("eps must lie in (0, 1 - |m|)")
        if not self.delta > 4:
            raise ParameterError("delta must exceed 4")

    @property
    def C1(self) -> float:
        return 2.0 ** (-1.0 - 0.5 * self.eps) * self.b ** (-self.eps)

    @property
    def C2(self) -> float:
        return 8.0 * np.pi / 3.0 + 4.0 * np.pi ** 2 / (self.delta - 1.0)

    def coefficients(self):
        """(a0, a1, a2, a3, a4) of the power-law form of the margin."""
        d2 = 2.0 ** self.delta
        return (1.0,
                self.H1 * self.C1 * self.C_nu * self.C_mu_prime,
                120.0 * d2 * np.pi ** 2 * self.b ** 2 * (self.H1 + self.H2) * self.C_mu ** 2,
                d2 * self.H2 * self.C2 * self.C_mu,
                256.0 * np.pi ** 2 * self.c_P * self.C_mu ** 2 * self.H2)


def coefficient_margin(K, coeffs, m: float, eps: float):
    """``a0 - a1 K^(1+m-eps) + a2 K^(2m) + a3 K^m + a4 K^(2m)``."""
    a0, a1, a2, a3, a4 = coeffs
    K = np.asarray(K, dtype=float)
    return a0 - a1 * K ** (1.0 + m - eps) + (a2 + a4) * K ** (2.0 * m) + a3 * K ** m


def margin_terms(K: float, c: MarginConstants) -> Dict[str, float]:
    a0, a1, a2, a3, a4 = c.coefficients()
    return {"one": a0,
            "drive": -a1 * K ** (1.0 + c.m - c.eps),
            "field": a2 * K ** (2.0 * c.m),
            "projection": a3 * K ** c.m,
            "coupling": a4 * K ** (2.0 * c.m)}


def instability_margin(K: float, c: MarginConstants):
    """Margin value and its four-term breakdown; negative means the criterion holds."""
    if K < 0:
        raise ParameterError("K must be >= 0")
    terms = margin_terms(K, c)
    return float(sum(terms.values())), terms


def b_adjoint_norm_bound(C_mu: float, K: float, m: float) -> float:
    """Operator-norm bound ``8 sqrt(2) pi C_mu K^m`` (valid for K >= 1)."""
    return 8.0 * np.sqrt(2.0) * np.pi * C_mu * K ** m


@dataclass
class CriticalK:
    K_star: float        # margin < 0 for every K > K_star (inf if never)
    K_mono: float        # margin strictly decreasing for K >= K_mono


def _margin_derivative(K, coeffs, m, eps):
    a0, a1, a2, a3, a4 = coeffs
    return (-a1 * (1.0 + m - eps) * K ** (m - eps) + (a2 + a4) * 2.0 * m * K ** (2.0 * m - 1.0)
            + a3 * m * K ** (m - 1.0))


def _last_crossing(fn, logs):
    vals = fn(10.0 ** logs)
    nonneg = np.nonzero(vals >= 0)[0]
    if nonneg.size == 0:
        return None
    i = nonneg[-1]
    if i == logs.size - 1:
        return np.inf
    lo, hi = logs[i], logs[i + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fn(10.0 ** mid) >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 10.0 ** hi


def critical_K(c: MarginConstants = None, coeffs=None, m: float = None, eps: float = None,
               log10_range=(-12.0, 150.0), n_scan: int = 4001) -> CriticalK:
    """Bisection (in log K) on the last sign change of the margin."""
    if c is not None:
        coeffs, m, eps = c.coefficients(), c.m, c.eps
    logs = np.linspace(*log10_range, n_scan)
    ks = _last_crossing(lambda K: coefficient_margin(K, coeffs, m, eps), logs)
    km = _last_crossing(lambda K: _margin_derivative(K, coeffs, m, eps), logs)
    K_star = 10.0 ** log10_range[0] if ks is None else ks
    K_mono = 10.0 ** log10_range[0] if km is None else km
    return CriticalK(float(K_star), float(K_mono))


# --- Poincare constant -------------------------------------------------------------

def c_P_estimate(grid: MeridianGrid, rtol: float = 1e-6, max_iter: int = 500) -> float:
    """``1 / lambda_min`` of the Dirichlet Laplacian, by inverse iteration."""
    op = make_operator(grid, LAPLACE)
    S = op.matrix.tocsc()
    W = op.weights
    lu = spla.splu(S)
    x = np.ones(op.n)
    lam = None
    for _ in range(max_iter):
        y = lu.solve(W * x)
        y /= np.sqrt(y @ (W * y))
        new = float(y @ (S @ y))
        x = y
        if lam is not None and abs(new - lam) <= rtol * new:
            return 1.0 / new
        lam = new
    raise SolverError(f"inverse iteration hit its cap of {max_iter} iterations")


# --- hypothesis checks and verdicts ----------------------------------------------

@dataclass
class HypothesisReport:
    checks: Dict[str, bool]
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _samples(grid, n, seed, e_max=30.0):
    rng = np.random.default_rng(seed)
    e = rng.uniform(1.0, e_max, n)
    # |p| >= 1 up to the largest accessible value r |v_phi| <= d <v>
    p = rng.uniform(1.0, max(1.0 + 1e-9, grid.domain.d * e_max), n) * rng.choice((-1.0, 1.0), n)
    return e, p


def check_hypotheses(grid: MeridianGrid, spec: FamilySpec, K: float, c: MarginConstants,
                     n_samples: int = 4000, seed: int = 0) -> HypothesisReport:
    """Sampled checks of the large-K instability hypotheses for the ion species.

    Checked: d > 1, inf r > 0, mu^- = 0, mu^+_e < 0, the lower bound
    ``p mu_p >= C'_mu K^(1+m-eps) |p| <p>^-eps C_nu e^-e`` for |p| >= 1, and the
    decay bound of the base ion profile with constant C_mu and delta > 4.
    """
    dom = grid.domain
    ion, ele = family_at(spec, K)
    e, p = _samples(grid, n_samples, seed)
    checks = {"d>1": dom.d > 1.0, "inf_r>0": dom.r_min > 0.0, "single_species": ele.is_zero,
              "delta>4": c.delta > 4.0}
    details = {}
    if ion.is_zero:
        checks["mu_e<0"] = False
        checks["p_mu_p_lower"] = False
    else:
        checks["mu_e<0"] = bool(np.all(ion.d_e(e, p) < 0))
        lhs = p * ion.d_p(e, p)
        rhs = (c.C_mu_prime * K ** (1.0 + c.m - c.eps) * np.abs(p)
               * (1.0 + p * p) ** (-0.5 * c.eps) * c.C_nu * np.exp(-e))
        ratio = float(np.min(lhs / rhs))
        details["p_mu_p_ratio"] = ratio
        checks["p_mu_p_lower"] = ratio >= 1.0
    base = spec.mu_plus
    if base.is_zero:
        checks["decay"] = False
    else:
        # accessible set: |p| <= d (e + max|phi| + ...) ~ d (1 + e) for bounded fields
        rng = np.random.default_rng(seed + 1)
        eb = rng.uniform(1.0, 40.0, n_samples)
        pb = rng.uniform(-1.0, 1.0, n_samples) * 4.0 * (1.0 + eb)
        size = np.abs(base.eval(eb, pb)) + np.abs(base.d_p(eb, pb)) + np.abs(base.d_e(eb, pb))
        dratio = float(np.max(size * (1.0 + eb ** c.delta) / c.C_mu))
        details["decay_ratio"] = dratio
        checks["decay"] = dratio <= 1.0 and base.delta > 4.0
    return HypothesisReport(checks, details)


def _k0_stable(spec: FamilySpec, K: float, fields, n_samples=2000, seed=0) -> bool:
    if K != 0:
        return False
    if fields is not None and (np.any(fields.phi) or np.any(fields.a_phi)):
        return False
    rng = np.random.default_rng(seed)
    e = rng.uniform(1.0, 40.0, n_samples)
    p = rng.uniform(-50.0, 50.0, n_samples)
    for mu in family_at(spec, 0.0):
        if mu.is_zero:
            continue
        if np.any(mu.d_p(e, p) != 0.0) or np.any(mu.d_e(e, p) >= 0):
            return False
    return True


@dataclass
class StabilityReport:
    K: float
    q_lower: np.ndarray
    q_upper: np.ndarray
    margin: float
    margin_terms: Dict[str, float]
    verdict: str
    hypotheses: Optional[HypothesisReport] = None

    @property
    def q_lower_min(self) -> float:
        return float(np.min(self.q_lower))

    @property
    def q_upper_min(self) -> float:
        return float(np.min(self.q_upper))


def margin_constants_for(h: TestFunction, grid: MeridianGrid, spec: FamilySpec,
                         C_mu: float = None, delta: float = None, c_P: float = None
                         ) -> MarginConstants:
    if spec.instability is None:
        raise ParameterError("family has no instability parameters")
    ip = spec.instability
    base = spec.mu_plus
    return MarginConstants(
        H1=h.H1, H2=h.H2, c_P=c_P_estimate(grid) if c_P is None else c_P,
        C_mu=base.decay_constant if C_mu is None else C_mu,
        C_mu_prime=ip.c_mu_prime, C_nu=ip.c_nu, m=ip.m, eps=ip.eps,
        delta=base.delta if delta is None else delta, b=grid.domain.d)


def assess(K: float, spec: FamilySpec, grid: MeridianGrid, bank: Sequence[TestFunction],
           fields=None, quad: MomentQuadrature = None, C_mu: float = None,
           c_P: float = None) -> StabilityReport:
    """Bracket (when fields are given), margin and verdict at one K."""
    quad = quad or MomentQuadrature()
    if fields is not None:
        dens = bracket_densities(grid, fields, family_at(spec, K), quad)
        br = [a2_bracket(h, fields, None, grid, quad, dens) for h in bank]
        ql = np.array([b.q_lower for b in br])
        qu = np.array([b.q_upper for b in br])
    else:
        ql = qu = np.array([np.nan])
    margin, terms, hyp = np.nan, {}, None
    if spec.instability is not None and K > 0:
        c_P = c_P_estimate(grid) if c_P is None else c_P
        best = None
        for h in bank:
            c = margin_constants_for(h, grid, spec, C_mu, c_P=c_P)
            val, t = instability_margin(K, c)
            if best is None or val < best[0]:
                best = (val, t, c)
        margin, terms, c = best
        hyp = check_hypotheses(grid, spec, K, c)
    if _k0_stable(spec, K, fields) and (fields is None or np.all(ql >= 0)):
        verdict = STABLE_K0
    elif hyp is not None and margin < 0 and hyp.passed:
        verdict = UNSTABLE
    else:
        verdict = INDETERMINATE
    return StabilityReport(K, ql, qu, float(margin), terms, verdict, hyp)


def branch_stability_sweep(branch, spec: FamilySpec, test_bank: Sequence[TestFunction],
                           grid: MeridianGrid, quad: MomentQuadrature = None,
                           C_mu: float = None) -> List[StabilityReport]:
    if not branch.entries:
        raise ValueError("branch is empty")
    c_P = c_P_estimate(grid) if spec.instability is not None else None
    return [assess(e.K, spec, grid, test_bank, e.fields, quad, C_mu, c_P)
            for e in branch.entries]
