"""End-to-end acceptance checks.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line (shown even when
output capture is on) and then asserts the same condition.
"""
import numpy as np
import pytest

from rvmlab import cli
from rvmlab import distribution as dist
from rvmlab.distribution import FamilySpec, InstabilityParams, a_square
from rvmlab.elliptic import (LAPLACE, LAPLACE_INV_R2, apply, lifted_laplacian, make_operator,
                             solve_dirichlet)
from rvmlab.geometry import MeridianDomain, build_grid, wall_distance_field
from rvmlab.moments import MomentQuadrature, integral_bound_check
from rvmlab.solver import EquilibriumSolver, FieldPair, KSchedule
from rvmlab.stability import (STABLE_K0, UNSTABLE, assess, c_P_estimate, critical_K,
                              margin_constants_for, sine_test_bank)
from rvmlab.trajectories import sample_particles, trace

TORUS = MeridianDomain(1.0, 2.0, 0.0, 1.0)
CYLINDER = MeridianDomain(0.0, 1.0, 0.0, 1.0)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def grid():
    return build_grid(TORUS, 17, 17)


@pytest.fixture(scope="module")
def quad():
    return MomentQuadrature(n_w=6, n_vphi=6, tail_tolerance=1e-6)


@pytest.fixture(scope="module")
def ion_branch(grid, quad):
    spec = FamilySpec("case1", mu_plus=dist.skewed(), a_plus=a_square)
    solver = EquilibriumSolver(grid, spec, quad)
    return solver, solver.continue_branch(KSchedule(0.0, 1.0, 0.125, 1e-4, 0.25))


def test_01_lift_identity(report):
    g = build_grid(TORUS, 65, 65)
    rng = np.random.default_rng(1)
    worst = 0.0
    fields = [np.sin(np.pi * (g.R - 1)) * np.sin(2 * np.pi * g.Z) * np.exp(g.R),
              rng.standard_normal(g.shape)]
    for f in fields:
        f = np.where(g.interior, f, 0.0)
        ref = apply(make_operator(g, LAPLACE_INV_R2), f)
        lifted = lifted_laplacian(g, f)
        m = g.interior & (ref != 0)
        worst = max(worst, float(np.max(np.abs(lifted[m] - ref[m]) / np.abs(ref[m]))))
    ok = report(1, worst <= 1e-12, f"max relative error {worst:.2e} (<= 1e-12)")
    assert ok


def test_02_elliptic_convergence(report):
    ratios = {}
    for name, dom in (("torus", TORUS), ("cylinder", CYLINDER)):
        for kind in (LAPLACE, LAPLACE_INV_R2):
            errs = []
            for n in (17, 33):
                g = build_grid(dom, n, n)
                u, f = cli.manufactured(g, kind)
                sol = solve_dirichlet(make_operator(g, kind), f, rtol=1e-13)
                errs.append(np.sqrt(np.sum(g.volume_weights() * (sol - u) ** 2)))
            ratios[f"{name}/{kind}"] = errs[0] / errs[1]
    ok = all(3.6 <= q <= 4.4 for q in ratios.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in ratios.items())
    assert report(2, ok, f"L2 error ratios {detail} (in [3.6, 4.4])")


def test_03_trivial_branch(grid, quad, report):
    worst = 0.0
    for gamma in (0.0, 0.5, 2.0):
        spec = FamilySpec("case1", gamma=gamma, mu0=dist.kinetic(), mu_plus=dist.skewed(),
                          a_plus=a_square)
        # start away from zero so convergence to the trivial state is tested
        solver = EquilibriumSolver(grid, spec, quad, tol=1e-12)
        bump = 0.1 * np.sin(np.pi * (grid.R - 1)) * np.sin(np.pi * grid.Z)
        res = solver.solve(FieldPair(bump, -bump), 0.0)
        worst = max(worst, res.fields.inf_norm())
    assert report(3, worst <= 1e-10, f"||(phi, A)||_inf at K=0 is {worst:.2e} (<= 1e-10)")


def test_04_moment_oracle(report):
    cfg = cli.load_config("configs/default.json")
    rows = cli.moments_check(cfg, seed=7, n_samples=5)
    rel = max(r[-1] for r in rows)
    jrz = max(max(abs(r[8]), abs(r[9])) for r in rows)
    ok = rel <= 1e-4 and jrz <= 1e-12
    assert report(4, ok, f"max relative error {rel:.2e} (<= 1e-4), |j_r|,|j_z| <= {jrz:.1e}")


def test_05_integral_bound(grid, report):
    rng = np.random.default_rng(5)
    worst_up, worst_low = np.inf, np.inf
    x = (grid.R - 1.0)
    for _ in range(3):
        phi = np.zeros(grid.shape)
        a = np.zeros(grid.shape)
        for k in range(1, 4):
            for l in range(1, 4):
                mode = np.sin(k * np.pi * x) * np.sin(l * np.pi * grid.Z)
                phi += rng.normal(0, 1.0 / (k * l)) * mode
                a += rng.normal(0, 1.0 / (k * l)) * mode
        rep = integral_bound_check(FieldPair(phi, a), 4.0, grid)
        up, low = rep.worst()
        worst_up, worst_low = min(worst_up, up), min(worst_low, low)
    ok = worst_up >= 0 and worst_low >= 0
    assert report(5, ok, f"smallest relative slack upper {worst_up:.3f}, lower {worst_low:.3f}"
                         " (both >= 0)")


def test_06_sign_property(grid, quad, ion_branch, report):
    _, br = ion_branch
    ion_min = min(e.min_phi for e in br.entries)
    spec = FamilySpec("case1", mu_minus=dist.skewed(), a_minus=a_square)
    ele = EquilibriumSolver(grid, spec, quad).continue_branch(
        KSchedule(0.0, 1.0, 0.125, 1e-4, 0.25))
    ele_max = max(e.max_phi for e in ele.entries)
    ok = (ion_min >= -1e-8 and ele_max <= 1e-8 and br.entries[-1].K == 1.0
          and ele.entries[-1].K == 1.0)
    assert report(6, ok, f"ion min phi {ion_min:.2e} (>= -1e-8), "
                         f"electron max phi {ele_max:.2e} (<= 1e-8)")


def test_07_lower_bound(grid, ion_branch, report):
    _, br = ion_branch
    d2 = wall_distance_field(grid) ** 2 / 6.0
    m = grid.interior
    worst, tight = np.inf, np.inf
    for e in br.entries:
        bound = 0.95 * e.rho_min * d2
        worst = min(worst, float(np.min(e.fields.phi[m] - bound[m])))
        if e.rho_min > 0:
            tight = min(tight, float(np.min(e.fields.phi[m] / bound[m])))
    ok = worst >= 0 and all(e.rho_min >= 0 for e in br.entries)
    assert report(7, ok, f"min of phi - 0.95 rho_min d^2/6 = {worst:.2e} (>= 0), "
                         f"tightest phi/bound {tight:.3f} over {len(br.entries)} entries")


def test_08_invariant_conservation(grid, ion_branch, report):
    _, br = ion_branch
    assert br.entries[-1].K == 1.0
    fields = br.entries[-1].fields
    state = sample_particles(grid, 100, seed=0)
    _, rec, _ = trace(grid, fields, state, 200.0, tol=1e-10)
    n_ref = int(rec.reflections.sum())
    ok = rec.max_drift <= 1e-6 and n_ref > 0
    assert report(8, ok, f"max relative drift {rec.max_drift:.2e} (<= 1e-6), "
                         f"{n_ref} wall reflections")


def test_09_case1_growth(grid, quad, report):
    spec = FamilySpec("case1", mu_plus=dist.skewed(), a_plus=a_square)
    solver = EquilibriumSolver(grid, spec, quad)
    br = solver.continue_branch(KSchedule(0.0, 1.0, 0.05, 1e-4, 0.1))
    K = br.K
    phi = br.phi_inf
    sel = K >= 0.1 - 1e-12
    K, phi = K[sel], phi[sel]
    drops = np.diff(phi)
    ratio = phi[-1] / phi[0]
    ok = np.all(drops >= -1e-9) and ratio >= 10 and K[0] <= 0.1 + 1e-12 and K[-1] == 1.0
    assert report(9, ok, f"K {K[0]:g}..{K[-1]:g}: ||phi|| ratio {ratio:.1f} (>= 10), "
                         f"largest decrease {max(0.0, -drops.min()):.1e} (<= 1e-9)")


def test_10_case2_scaling(grid, quad, report):
    Ks = np.geomspace(1.0, 1000.0, 13)
    half = Ks.size // 2
    slopes = {}
    for m in (-0.5, 0.0, 0.5):
        spec = FamilySpec("case2", mu_plus=dist.confined(), a_plus=dist.make_a_power(m))
        solver = EquilibriumSolver(grid, spec, quad)
        f = FieldPair.zeros(grid)
        norms = []
        for K in Ks:
            f = solver.solve(f, K).fields
            norms.append(f.inf_norm())
        slopes[m] = np.polyfit(np.log(Ks[half:]), np.log(norms[half:]), 1)[0]
    ok = all(abs(s - (m - 1.0)) <= 0.2 for m, s in slopes.items())
    detail = ", ".join(f"m={m:+.1f}: {s:.3f} vs {m - 1:.1f}" for m, s in slopes.items())
    assert report(10, ok, f"slopes {detail} (within 0.2)")


def test_11_stability_flip(grid, quad, report):
    bank = sine_test_bank(grid, 2, 2)
    # K = 0 with a p-independent background
    spec0 = FamilySpec("case1", gamma=0.5, mu0=dist.kinetic(), mu_plus=dist.skewed(),
                       a_plus=a_square)
    f0 = EquilibriumSolver(grid, spec0, quad).solve(FieldPair.zeros(grid), 0.0).fields
    rep0 = assess(0.0, spec0, grid, bank, f0, quad)
    ok0 = rep0.verdict == STABLE_K0 and np.all(rep0.q_lower >= 0)

    c_P = c_P_estimate(grid)

    def family(c_prime):
        return FamilySpec("case1", mu_plus=dist.instability_family(0.0, 0.5, 1.0),
                          a_plus=a_square, instability=InstabilityParams(0.0, 0.5, c_prime, 1.0))

    def k_star(spec):
        return min(critical_K(margin_constants_for(h, grid, spec, c_P=c_P)).K_star
                   for h in bank)

    spec = family(0.25)
    ks = k_star(spec)
    probes = ks * np.array([1.0 + 1e-9, 1.5, 10.0, 1e3])
    verdicts = [assess(K, spec, grid, bank, None, quad, c_P=c_P).verdict for K in probes]
    ks10 = k_star(family(2.5))
    ok = (ok0 and np.isfinite(ks) and all(v == UNSTABLE for v in verdicts) and ks10 < ks)
    assert report(11, ok, f"K=0: {rep0.verdict}, min q_lower {rep0.q_lower_min:.3f}; "
                          f"K*={ks:.3e} -> {ks10:.3e} with 10x C'_mu; "
                          f"verdicts at K>=K*: {sorted(set(verdicts))}")


def test_12_determinism(tmp_path, report):
    blobs = []
    for d in ("first", "second"):
        out = tmp_path / d
        assert cli.main(["continue", "--config", "configs/default.json",
                         "--out", str(out), "--seed", "3"]) == 0
        blobs.append((out / "branch.csv").read_bytes())
    ok = blobs[0] == blobs[1] and len(blobs[0]) > 0
    assert report(12, ok, f"branch.csv identical across runs ({len(blobs[0])} bytes)")
