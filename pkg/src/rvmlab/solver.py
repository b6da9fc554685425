"""Equilibria of the coupled system for (A_phi, phi) and continuation in K.

With ``L1 = -Delta`` and ``L2 = -Delta + 1/r^2`` (Dirichlet), a solution is a
zero of

    G_u = u - L2^{-1} j_phi(u, w),     G_w = w - L1^{-1} rho(u, w),

where u = A_phi and w = phi.  The Newton step uses the exact Frechet
derivative, whose blocks are the moment multipliers M1..M4 composed with the
two inverse operators.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse.linalg as spla

from .distribution import FamilySpec, family_at
from .elliptic import LAPLACE, LAPLACE_INV_R2, SolverError, make_operator, pcg
from .geometry import MeridianGrid
from .moments import MomentFields, MomentQuadrature, compute_moments

log = logging.getLogger(__name__)

INNER_RTOL = 1e-12
SINGULAR_COND = 1e10


class ConvergenceError(SolverError):
    def __init__(self, message, residual=None, cond=None):
        super().__init__(message)
        self.residual = residual
        self.cond = cond


@dataclass
class FieldPair:
    phi: np.ndarray
    a_phi: np.ndarray
    a_ext: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, grid: MeridianGrid, a_ext=None) -> "FieldPair":
        return cls(grid.zeros(), grid.zeros(), a_ext)

    @property
    def a_total(self) -> np.ndarray:
        return self.a_phi if self.a_ext is None else self.a_phi + self.a_ext

    def inf_norm(self) -> float:
        return max(float(np.max(np.abs(self.phi))), float(np.max(np.abs(self.a_phi))))

    def copy(self) -> "FieldPair":
        return FieldPair(self.phi.copy(), self.a_phi.copy(),
                         None if self.a_ext is None else self.a_ext.copy())


class _MomentView:
    # what the moment routines see: the potential entering p is A_phi + A_ext
    def __init__(self, fields: FieldPair):
        self.phi = fields.phi
        self.a_phi = fields.a_total


@dataclass
class SolveResult:
    fields: FieldPair
    residual: float
    iterations: int
    history: List[float]
    moments: MomentFields
    cond: float = float("nan")


@dataclass
class BranchEntry:
    K: float
    fields: FieldPair
    residual: float
    phi_inf: float
    a_inf: float
    jac_cond: float
    min_phi: float
    max_phi: float
    rho_min: float
    iterations: int


@dataclass
class EquilibriumBranch:
    entries: List[BranchEntry] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def K(self) -> np.ndarray:
        return np.array([e.K for e in self.entries])

    @property
    def phi_inf(self) -> np.ndarray:
        return np.array([e.phi_inf for e in self.entries])

    @property
    def field_inf(self) -> np.ndarray:
        return np.array([max(e.phi_inf, e.a_inf) for e in self.entries])


@dataclass(frozen=True)
class KSchedule:
    start: float = 0.0
    stop: float = 1.0
    initial_step: float = 0.1
    min_step: float = 1e-4
    max_step: float = 1.0

    def __post_init__(self):
        if self.start < 0 or not self.stop > self.start:
            raise ValueError("K schedule must increase from a non-negative start")
        if not 0 < self.min_step <= self.initial_step <= self.max_step:
            raise ValueError("need 0 < min_step <= initial_step <= max_step")


class EquilibriumSolver:
    def __init__(self, grid: MeridianGrid, spec: FamilySpec, quad: MomentQuadrature,
                 tol: float = 1e-8, max_iter: int = 40, picard_max_iter: int = 2000,
                 blowup: float = 1e6):
        self.grid = grid
        self.spec = spec
        self.quad = quad
        self.tol = tol
        self.max_iter = max_iter
        self.picard_max_iter = picard_max_iter
        self.blowup = blowup
        self.L1 = make_operator(grid, LAPLACE)
        self.L2 = make_operator(grid, LAPLACE_INV_R2)
        self.vol = grid.volume_weights()
        self._lu = None

    # --- building blocks ---------------------------------------------------
    def inv(self, op, f, rtol=INNER_RTOL) -> np.ndarray:
        b = op.weights * np.asarray(f)[op.unknowns]
        if not np.any(b):
            return self.grid.zeros()
        x, _, _ = pcg(op.matrix, b, rtol=rtol)
        return op.to_field(x)

    def norm(self, gu, gw) -> float:
        return float(np.sqrt(np.sum(self.vol * (gu * gu + gw * gw))))

    def moments(self, fields: FieldPair, K: float) -> MomentFields:
        return compute_moments(self.grid, _MomentView(fields), family_at(self.spec, K), self.quad)

    def residual(self, fields: FieldPair, K: float, mom: MomentFields = None):
        mom = self.moments(fields, K) if mom is None else mom
        gu = fields.a_phi - self.inv(self.L2, mom.j_phi)
        gw = fields.phi - self.inv(self.L1, mom.rho)
        return gu, gw

    def _split(self, x):
        n2 = self.L2.n
        return self.L2.to_field(x[:n2]), self.L1.to_field(x[n2:])

    def _join(self, fu, fw):
        return np.concatenate([fu[self.L2.unknowns], fw[self.L1.unknowns]])

    def jacobian(self, mom: MomentFields) -> spla.LinearOperator:
        """D_(u,w) G as a linear operator on the stacked unknowns."""
        n = self.L2.n + self.L1.n

        def mv(x):
            du, dw = self._split(np.asarray(x).ravel())
            ou = du - self.inv(self.L2, mom.m1 * du + mom.m2 * dw)
            ow = dw - self.inv(self.L1, mom.m3 * du + mom.m4 * dw)
            return self._join(ou, ow)

        return spla.LinearOperator((n, n), matvec=mv, dtype=float)

    def _factors(self):
        if self._lu is None:
            self._lu = (spla.splu(self.L2.matrix.tocsc()), spla.splu(self.L1.matrix.tocsc()))
        return self._lu

    def condition_estimate(self, mom: MomentFields) -> float:
        """1-norm condition number estimate of the Jacobian (sparse LU based)."""
        lu2, lu1 = self._factors()
        n2, n1 = self.L2.n, self.L1.n
        m = {k: getattr(mom, k) for k in ("m1", "m2", "m3", "m4")}
        u2, u1 = self.L2.unknowns, self.L1.unknowns
        w2, w1 = self.L2.weights, self.L1.weights

        def restrict(f, mask):
            return f[mask]

        # M maps (du, dw) -> (m1 du + m2 dw on u2 nodes, m3 du + m4 dw on u1 nodes)
        def Mx(x):
            du, dw = self._split(x)
            return (restrict(m["m1"] * du + m["m2"] * dw, u2),
                    restrict(m["m3"] * du + m["m4"] * dw, u1))

        def MTx(y):
            fu = self.L2.to_field(y[:n2])
            fw = self.L1.to_field(y[n2:])
            return self._join(m["m1"] * fu + m["m3"] * fw, m["m2"] * fu + m["m4"] * fw)

        def J(x):
            x = np.ravel(x)
            a, b = Mx(x)
            return x - np.concatenate([lu2.solve(w2 * a), lu1.solve(w1 * b)])

        def JT(y):
            y = np.ravel(y)
            # (L^{-1})^T = W S^{-1}
            z = np.concatenate([w2 * lu2.solve(y[:n2]), w1 * lu1.solve(y[n2:])])
            return y - MTx(z)

        # J = I - Linv M = Linv B with B = L - M; so J^{-1} = B^{-1} L
        B = self._block_matrix(mom)
        luB = spla.splu(B.tocsc())
        S2, S1 = self.L2.matrix, self.L1.matrix

        def Jinv(x):
            x = np.ravel(x)
            rhs = np.concatenate([(S2 @ x[:n2]) / w2, (S1 @ x[n2:]) / w1])
            return luB.solve(rhs)

        def JinvT(y):
            z = luB.solve(np.ravel(y), trans="T")
            return np.concatenate([S2 @ (z[:n2] / w2), S1 @ (z[n2:] / w1)])

        n = n2 + n1
        Jop = spla.LinearOperator((n, n), matvec=J, rmatvec=JT, dtype=float)
        Jiop = spla.LinearOperator((n, n), matvec=Jinv, rmatvec=JinvT, dtype=float)
        # onenormest draws random sign vectors from the global generator
        saved = np.random.get_state()
        np.random.seed(0)
        try:
            return float(spla.onenormest(Jop) * spla.onenormest(Jiop))
        except RuntimeError:
            return float("inf")
        finally:
            np.random.set_state(saved)

    def _block_matrix(self, mom: MomentFields):
        import scipy.sparse as sp
        u2, u1 = self.L2.unknowns, self.L1.unknowns
        A2 = sp.diags(1.0 / self.L2.weights) @ self.L2.matrix
        A1 = sp.diags(1.0 / self.L1.weights) @ self.L1.matrix
        # coupling between the two unknown sets through pointwise multipliers
        idx2 = -np.ones(self.grid.shape, dtype=np.int64)
        idx2[u2] = np.arange(self.L2.n)
        idx1 = -np.ones(self.grid.shape, dtype=np.int64)
        idx1[u1] = np.arange(self.L1.n)
        both = u2 & u1
        r2, r1 = idx2[both], idx1[both]
        C12 = sp.csr_matrix((mom.m2[both], (r2, r1)), shape=(self.L2.n, self.L1.n))
        C21 = sp.csr_matrix((mom.m3[both], (r1, r2)), shape=(self.L1.n, self.L2.n))
        B = sp.bmat([[A2 - sp.diags(mom.m1[u2]), -C12],
                     [-C21, A1 - sp.diags(mom.m4[u1])]])
        return B

    # --- nonlinear solves ---------------------------------------------------
    def solve(self, guess: FieldPair, K: float, method: str = "newton",
              estimate_condition: bool = True) -> SolveResult:
        if method == "newton":
            res = self._newton(guess, K)
        elif method == "picard":
            res = self._picard(guess, K)
        else:
            raise ValueError(f"unknown method {method!r}")
        if estimate_condition:
            res.cond = self.condition_estimate(res.moments)
            if res.cond > SINGULAR_COND:
                raise ConvergenceError(
                    f"possible exceptional gamma or fold at K={K}: condition estimate "
                    f"{res.cond:.3e}", residual=res.residual, cond=res.cond)
        return res

    def _newton(self, guess: FieldPair, K: float) -> SolveResult:
        fields = guess.copy()
        mom = self.moments(fields, K)
        gu, gw = self.residual(fields, K, mom)
        norm = self.norm(gu, gw)
        history = [norm]
        it = 0
        while norm > self.tol:
            if it >= self.max_iter:
                raise ConvergenceError(f"Newton did not converge at K={K} "
                                       f"(residual {norm:.3e})", residual=norm)
            it += 1
            J = self.jacobian(mom)
            rhs = -self._join(gu, gw)
            dx, info = spla.gmres(J, rhs, rtol=1e-11, atol=0.0, restart=200,
                                  maxiter=20)
            if info != 0:
                raise ConvergenceError(
                    f"possible exceptional gamma or fold at K={K}: inner linear solve "
                    f"stagnated", residual=norm, cond=float("inf"))
            du, dw = self._split(dx)
            lam = 1.0
            while True:
                trial = FieldPair(fields.phi + lam * dw, fields.a_phi + lam * du, fields.a_ext)
                if not np.all(np.isfinite(trial.phi)) or trial.inf_norm() > 1e3 * self.blowup:
                    t_norm = np.inf
                else:
                    t_mom = self.moments(trial, K)
                    t_gu, t_gw = self.residual(trial, K, t_mom)
                    t_norm = self.norm(t_gu, t_gw)
                if t_norm < (1.0 - 1e-4 * lam) * norm or t_norm <= self.tol:
                    break
                lam *= 0.5
                if lam < 1e-4:
                    raise ConvergenceError(f"Newton line search failed at K={K} "
                                           f"(residual {norm:.3e})", residual=norm)
            fields, mom, gu, gw, norm = trial, t_mom, t_gu, t_gw, t_norm
            history.append(norm)
            log.debug("newton K=%g it=%d residual=%.3e step=%g", K, it, norm, lam)
        return SolveResult(fields, norm, it, history, mom)

    def _picard(self, guess: FieldPair, K: float) -> SolveResult:
        fields = guess.copy()
        history = []
        for it in range(self.picard_max_iter + 1):
            mom = self.moments(fields, K)
            gu, gw = self.residual(fields, K, mom)
            norm = self.norm(gu, gw)
            history.append(norm)
            if norm <= self.tol:
                return SolveResult(fields, norm, it, history, mom)
            if not np.isfinite(norm) or fields.inf_norm() > self.blowup:
                break
            fields = FieldPair(fields.phi - gw, fields.a_phi - gu, fields.a_ext)
        raise ConvergenceError(f"Picard iteration did not converge at K={K} "
                               f"(residual {history[-1]:.3e})", residual=history[-1])

    # --- continuation ---------------------------------------------------------
    def _entry(self, K, res: SolveResult) -> BranchEntry:
        f = res.fields
        return BranchEntry(K=K, fields=f, residual=res.residual,
                           phi_inf=float(np.max(np.abs(f.phi))),
                           a_inf=float(np.max(np.abs(f.a_phi))), jac_cond=res.cond,
                           min_phi=float(np.min(f.phi)), max_phi=float(np.max(f.phi)),
                           rho_min=float(np.min(res.moments.rho)), iterations=res.iterations)

    def continue_branch(self, schedule: KSchedule, method: str = "newton",
                        guess: FieldPair = None) -> EquilibriumBranch:
        branch = EquilibriumBranch()
        fields = FieldPair.zeros(self.grid) if guess is None else guess
        K = schedule.start
        try:
            res = self.solve(fields, K, method)
        except SolverError as exc:
            raise SolverError(f"continuation failed at its first point K={K}: {exc}") from exc
        branch.entries.append(self._entry(K, res))
        fields = res.fields
        step = schedule.initial_step
        streak = 0
        while True:
            if branch.entries[-1].phi_inf > self.blowup or branch.entries[-1].a_inf > self.blowup:
                branch.stop_reason = "blow-up"
                break
            if K >= schedule.stop:
                branch.stop_reason = "reached stop"
                break
            K_try = min(K + step, schedule.stop)
            try:
                res = self.solve(fields, K_try, method)
            except SolverError as exc:
                log.info("step to K=%g failed (%s); halving", K_try, exc)
                if len(branch.entries) == 1 and step <= schedule.min_step:
                    raise SolverError(f"continuation failed at its first step: {exc}") from exc
                step *= 0.5
                streak = 0
                if step < schedule.min_step:
                    branch.stop_reason = "min-step"
                    break
                continue
            K = K_try
            fields = res.fields
            branch.entries.append(self._entry(K, res))
            streak += 1
            if streak == 3:
                step = min(2.0 * step, schedule.max_step)
                streak = 0
        return branch


# --- thin functional wrappers ------------------------------------------------

def residual(fields: FieldPair, K: float, spec: FamilySpec, grid: MeridianGrid,
             quad: MomentQuadrature):
    return EquilibriumSolver(grid, spec, quad).residual(fields, K)


def solve_at_K(guess: FieldPair, K: float, spec: FamilySpec, grid: MeridianGrid,
               quad: MomentQuadrature, method: str = "newton", tol: float = 1e-8) -> FieldPair:
    return EquilibriumSolver(grid, spec, quad, tol=tol).solve(guess, K, method).fields


def continue_branch(spec: FamilySpec, grid: MeridianGrid, quad: MomentQuadrature,
                    schedule: KSchedule, method: str = "newton", tol: float = 1e-8,
                    blowup: float = 1e6) -> EquilibriumBranch:
    return EquilibriumSolver(grid, spec, quad, tol=tol, blowup=blowup).continue_branch(
        schedule, method)
