import numpy as np
import pytest

from rvmlab import distribution as dist
from rvmlab.distribution import FamilySpec, InstabilityParams, ParameterError, a_square
from rvmlab.geometry import MeridianDomain, build_grid
from rvmlab.moments import MomentQuadrature
from rvmlab.solver import EquilibriumSolver, FieldPair, KSchedule
from rvmlab.stability import (INDETERMINATE, STABLE_K0, UNSTABLE, MarginConstants,
                              a2_bracket, assess, b_adjoint_norm_bound, branch_stability_sweep,
                              c_P_estimate, check_hypotheses, coefficient_margin, critical_K,
                              instability_margin, make_test_function, margin_constants_for,
                              sine_test_bank)


@pytest.fixture(scope="module")
def bank(grid):
    return sine_test_bank(grid, 2, 2)


@pytest.fixture(scope="module")
def c_P(grid):
    return c_P_estimate(grid)


def inst_spec(c_prime=0.25):
    return FamilySpec("case1", mu_plus=dist.instability_family(0.0, 0.5, 1.0), a_plus=a_square,
                      instability=InstabilityParams(0.0, 0.5, c_prime, 1.0))


def test_bank_normalized(bank):
    assert len(bank) == 4
    for h in bank:
        assert h.norm_grad == pytest.approx(1.0, rel=1e-12)
        assert h.H1 > 0 and h.H2 > 0


def test_test_function_must_vanish(grid):
    with pytest.raises(ValueError):
        make_test_function(grid, np.ones(grid.shape))
    with pytest.raises(ValueError):
        make_test_function(grid, grid.zeros())


def test_k0_bracket_is_norm_grad(grid, quad, bank):
    spec = FamilySpec("case1", gamma=0.5, mu0=dist.kinetic())
    mus = dist.family_at(spec, 0.0)
    for h in bank:
        br = a2_bracket(h, FieldPair.zeros(grid), mus, grid, quad)
        assert br.q_lower == h.norm_grad
        assert br.q_upper >= br.q_lower


def test_zero_profile_bracket_collapses(grid, quad, bank):
    br = a2_bracket(bank[0], FieldPair.zeros(grid), (dist.ZERO, dist.ZERO), grid, quad)
    assert (br.q_lower, br.q_upper) == (pytest.approx(1.0, rel=1e-12),) * 2


def test_bracket_ordering_on_branch(grid, quad, ion_spec, bank):
    br = EquilibriumSolver(grid, ion_spec, quad).continue_branch(KSchedule(0, 1, 0.5, 0.01, 0.5))
    reports = branch_stability_sweep(br, ion_spec, bank, grid, quad)
    assert len(reports) == len(br.entries)
    for rep in reports:
        assert np.all(rep.q_lower <= rep.q_upper)
    # a_square(0) = 0 switches the skewed part off at K = 0
    assert reports[0].verdict == STABLE_K0
    assert all(rep.verdict == INDETERMINATE for rep in reports[1:])
    with pytest.raises(ValueError):
        branch_stability_sweep(type(br)(), ion_spec, bank, grid, quad)


def test_k0_verdict(grid, quad, bank):
    spec = FamilySpec("case1", gamma=0.5, mu0=dist.kinetic(), mu_plus=dist.skewed(),
                      a_plus=a_square)
    rep = assess(0.0, spec, grid, bank, FieldPair.zeros(grid), quad)
    assert rep.verdict == STABLE_K0
    assert rep.q_lower_min >= 0
    # away from K = 0 the certificate is not issued
    f = EquilibriumSolver(grid, spec, quad).solve(FieldPair.zeros(grid), 0.3).fields
    assert assess(0.3, spec, grid, bank, f, quad).verdict == INDETERMINATE


def test_toy_margin():
    ones = (1.0, 1.0, 1.0, 1.0, 1.0)
    K = np.array([0.0, 4.0, 16.0, 25.0, 100.0])
    assert np.allclose(coefficient_margin(K, ones, 0.0, 0.5), 4.0 - np.sqrt(K))
    crit = critical_K(coeffs=ones, m=0.0, eps=0.5)
    assert crit.K_star == pytest.approx(16.0, rel=1e-10)


def test_adjoint_norm_bound():
    assert b_adjoint_norm_bound(1.0, 1.0, 0.3) == pytest.approx(35.54, abs=0.01)
    assert b_adjoint_norm_bound(2.0, 4.0, 0.5) == pytest.approx(4 * 8 * np.sqrt(2) * np.pi)


def test_margin_constants():
    c = MarginConstants(H1=0.3, H2=0.2, c_P=0.05, C_mu=2.0, C_mu_prime=0.5, C_nu=1.0,
                        m=0.2, eps=0.3, delta=6.0, b=2.0)
    assert c.C1 == pytest.approx(2 ** -1.15 * 2 ** -0.3)
    assert c.C2 == pytest.approx(8 * np.pi / 3 + 4 * np.pi ** 2 / 5)
    val, terms = instability_margin(7.0, c)
    assert set(terms) == {"one", "drive", "field", "projection", "coupling"}
    assert val == pytest.approx(coefficient_margin(7.0, c.coefficients(), c.m, c.eps))
    with pytest.raises(ParameterError):
        MarginConstants(0.3, 0.2, 0.05, 2.0, 0.5, 1.0, 0.5, 0.6, 6.0, 2.0)
    with pytest.raises(ParameterError):
        instability_margin(-1.0, c)


@pytest.mark.parametrize("m,eps", [(0.0, 0.5), (0.5, 0.2), (-0.5, 0.3)])
def test_margin_monotone_beyond_K_mono(m, eps):
    c = MarginConstants(H1=0.3, H2=0.2, c_P=0.05, C_mu=2.0, C_mu_prime=0.5, C_nu=1.0,
                        m=m, eps=eps, delta=6.0, b=2.0)
    crit = critical_K(c)
    assert np.isfinite(crit.K_star)
    K = crit.K_mono * np.logspace(0.01, 6, 200)
    vals = coefficient_margin(K, c.coefficients(), m, eps)
    assert np.all(np.diff(vals) < 0)
    assert coefficient_margin(crit.K_star * 1.001, c.coefficients(), m, eps) < 0
    assert coefficient_margin(crit.K_star * 0.999, c.coefficients(), m, eps) > 0


def test_c_P_values(torus, grid, c_P):
    assert c_P * 2 * np.pi ** 2 == pytest.approx(1.0, rel=0.02)
    fine = c_P_estimate(build_grid(torus, 33, 33))
    assert abs(fine - c_P) / fine < 0.01
    big = c_P_estimate(build_grid(torus.scaled(2.0), 17, 17))
    assert big / c_P == pytest.approx(4.0, rel=1e-6)


def test_hypotheses_instability_family(grid, bank, c_P):
    spec = inst_spec()
    c = margin_constants_for(bank[0], grid, spec, c_P=c_P)
    rep = check_hypotheses(grid, spec, 1e3, c)
    assert rep.passed, rep
    # the base skewed profile does not satisfy the drive bound
    other = FamilySpec("case1", mu_plus=dist.skewed(), a_plus=a_square,
                       instability=InstabilityParams(0.0, 0.5, 0.25, 1.0))
    with pytest.raises(ParameterError):
        margin_constants_for(bank[0], grid, FamilySpec("case1"), c_P=c_P)
    assert not check_hypotheses(grid, other, 1e3, c).passed


def test_instability_flip(grid, bank, c_P):
    spec = inst_spec()
    best = min((critical_K(margin_constants_for(h, grid, spec, c_P=c_P)) for h in bank),
               key=lambda cr: cr.K_star)
    assert np.isfinite(best.K_star)
    for f in (1.01, 10.0):
        rep = assess(best.K_star * f, spec, grid, bank, None, None, c_P=c_P)
        assert rep.margin < 0 and rep.verdict == UNSTABLE
    below = assess(best.K_star * 0.5, spec, grid, bank, None, None, c_P=c_P)
    assert below.verdict == INDETERMINATE
    strong = inst_spec(2.5)
    best10 = min((critical_K(margin_constants_for(h, grid, strong, c_P=c_P)) for h in bank),
                 key=lambda cr: cr.K_star)
    assert best10.K_star < best.K_star
