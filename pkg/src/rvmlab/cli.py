"""Command-line front end: ``rvmlab <command> --config <path> [--out DIR] [--seed N]``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from typing import List

import numpy as np

from . import elliptic, moments, stability, trajectories
from .config import ConfigError, RunConfig, load_config
from .distribution import family_at
from .elliptic import SolverError
from .geometry import GeometryError
from .moments import QuadratureError
from .solver import EquilibriumSolver, FieldPair, KSchedule

log = logging.getLogger("rvmlab")

COMMANDS = ("solve", "continue", "stability", "trajectories", "moments-check", "verify")


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def k_label(K: float) -> str:
    # shortest round-trip form keeps file names readable
    return repr(float(K))


def write_fields(out, grid, K, fields) -> str:
    path = os.path.join(out, f"fields_K{k_label(K)}.csv")
    R, Z = grid.R, grid.Z
    rows = zip(R.ravel(), Z.ravel(), fields.phi.ravel(), fields.a_phi.ravel())
    write_csv(path, ("r", "z", "phi", "a_phi"), rows)
    return path


def _solver(cfg: RunConfig):
    return EquilibriumSolver(cfg.grid(), cfg.spec(), cfg.quad(), tol=cfg.solver.tolerance,
                             blowup=cfg.solver.blowup)


def _branch(cfg: RunConfig, stop: float = None):
    solver = _solver(cfg)
    sched = cfg.schedule()
    if stop is not None:
        sched = KSchedule(sched.start, max(stop, sched.start + sched.min_step),
                          sched.initial_step, sched.min_step, sched.max_step)
    return solver, solver.continue_branch(sched, cfg.solver.method)


def write_branch(out, branch) -> str:
    path = os.path.join(out, "branch.csv")
    rows = []
    for i, e in enumerate(branch.entries):
        last = i == len(branch.entries) - 1
        rows.append((e.K, e.residual, e.phi_inf, e.a_inf, e.min_phi, e.jac_cond,
                     branch.stop_reason if last else ""))
    write_csv(path, ("K", "residual", "phi_inf", "a_inf", "min_phi", "jac_cond", "stop_reason"),
              rows)
    return path


# --- commands --------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: str, seed: int) -> int:
    K = cfg.solver.K
    solver = _solver(cfg)
    if K == cfg.solver.K_start:
        res = solver.solve(FieldPair.zeros(solver.grid), K, cfg.solver.method)
        fields, resid = res.fields, res.residual
    else:
        _, branch = _branch(cfg, stop=K)
        last = branch.entries[-1]
        if last.K != K:
            raise SolverError(f"continuation stopped at K={last.K} ({branch.stop_reason}) "
                              f"before reaching K={K}")
        fields, resid = last.fields, last.residual
    path = write_fields(out, solver.grid, K, fields)
    print(f"K={fmt(K)} residual={fmt(resid)} phi_inf={fmt(np.max(np.abs(fields.phi)))} -> {path}")
    return 0


def cmd_continue(cfg: RunConfig, out: str, seed: int) -> int:
    solver, branch = _branch(cfg)
    for e in branch.entries:
        write_fields(out, solver.grid, e.K, e.fields)
    path = write_branch(out, branch)
    print(f"{len(branch.entries)} entries, stop: {branch.stop_reason} -> {path}")
    return 0


def cmd_stability(cfg: RunConfig, out: str, seed: int) -> int:
    solver, branch = _branch(cfg)
    spec, grid = solver.spec, solver.grid
    bank = stability.sine_test_bank(grid, cfg.stability.k_max, cfg.stability.l_max)
    reports = stability.branch_stability_sweep(branch, spec, bank, grid, solver.quad,
                                               cfg.family.C_mu)
    rows = [(r.K, r.q_lower_min, r.q_upper_min, r.margin, r.verdict) for r in reports]
    if spec.instability is not None:
        c_P = stability.c_P_estimate(grid)
        best = None
        for h in bank:
            c = stability.margin_constants_for(h, grid, spec, cfg.family.C_mu, c_P=c_P)
            crit = stability.critical_K(c)
            if best is None or crit.K_star < best[0].K_star:
                best = (crit, c)
        crit = best[0]
        print(f"K*={fmt(crit.K_star)} K_mono={fmt(crit.K_mono)}")
        if np.isfinite(crit.K_star):
            rep = stability.assess(crit.K_star * (1.0 + 1e-9), spec, grid, bank,
                                   None, solver.quad, cfg.family.C_mu, c_P)
            rows.append((rep.K, np.nan, np.nan, rep.margin, rep.verdict))
    path = os.path.join(out, "stability.csv")
    write_csv(path, ("K", "q_lower_min", "q_upper_min", "margin", "verdict"), rows)
    print(f"{len(rows)} rows -> {path}")
    return 0


def cmd_trajectories(cfg: RunConfig, out: str, seed: int) -> int:
    t = cfg.trajectories
    K = cfg.solver.K
    solver, branch = _branch(cfg, stop=K) if K > cfg.solver.K_start else (_solver(cfg), None)
    grid = solver.grid
    fields = branch.entries[-1].fields if branch is not None else FieldPair.zeros(grid)
    sign = 1.0 if t.species == "ion" else -1.0
    state = trajectories.sample_particles(grid, t.particles, seed, sign, t.momentum_scale)
    final, rec, rows = trajectories.trace(grid, fields, state, t.T, tol=t.tolerance,
                                          record=t.dump > 0)
    for i in range(min(t.dump, state.n)):
        trajectories.write_trajectory_csv(os.path.join(out, f"trajectory_{i}.csv"), rows[i])
    path = os.path.join(out, "invariants.csv")
    write_csv(path, ("particle", "e0", "p0", "e_drift", "p_drift", "reflections"),
              [(i, rec.e0[i], rec.p0[i], rec.e_drift[i], rec.p_drift[i], rec.reflections[i])
               for i in range(state.n)])
    print(f"max drift {fmt(rec.max_drift)}, reflections {int(rec.reflections.sum())} -> {path}")
    return 0


def moments_check(cfg: RunConfig, seed: int, n_samples: int = 5):
    """Reduced quadrature against the 3-D brute force at random (phi, A, r)."""
    rng = np.random.default_rng(seed)
    spec = cfg.spec()
    dom = cfg.grid().domain
    quad = moments.MomentQuadrature(n_w=8, n_vphi=8, tail_tolerance=1e-9)
    rows = []
    for _ in range(n_samples):
        K = float(rng.uniform(0.2, 1.0))
        phi = float(rng.uniform(-0.5, 0.5))
        a = float(rng.uniform(-0.5, 0.5))
        r = float(rng.uniform(max(dom.r_min, 0.1), dom.r_max))
        mus = family_at(spec, K)
        red = moments.moments_at([r], phi, a, mus, quad)[:, 0]
        bf = moments.brute_force_moments(phi, a, r, mus)
        rel_rho = abs(red[0] - bf[0]) / max(abs(bf[0]), 1e-300)
        rel_j = abs(red[1] - bf[1]) / max(abs(bf[1]), abs(bf[0]), 1e-300)
        rows.append((K, phi, a, r, red[0], bf[0], red[1], bf[1], bf[2], bf[3],
                     max(rel_rho, rel_j)))
    return rows


def cmd_moments_check(cfg: RunConfig, out: str, seed: int) -> int:
    rows = moments_check(cfg, seed)
    path = os.path.join(out, "moments_check.csv")
    write_csv(path, ("K", "phi", "a_phi", "r", "rho", "rho_brute", "j_phi", "j_phi_brute",
                     "j_r_brute", "j_z_brute", "rel_err"), rows)
    ok = all(r[-1] <= 1e-4 and abs(r[8]) <= 1e-12 and abs(r[9]) <= 1e-12 for r in rows)
    print(("PASS" if ok else "FAIL") + f" moments-check -> {path}")
    return 0 if ok else 1


def run_verify(cfg: RunConfig, seed: int) -> List[tuple]:
    """Compact invariant suite on the configured domain."""
    from .geometry import MeridianDomain, build_grid
    results = []
    grid = cfg.grid()

    # lift identity on a bubble field
    g = (grid.R - grid.domain.r_min) * (grid.domain.r_max - grid.R) \
        * (grid.Z - grid.domain.z_min) * (grid.domain.z_max - grid.Z)
    op = elliptic.make_operator(grid, elliptic.LAPLACE_INV_R2)
    ref = elliptic.apply(op, g)
    lifted = elliptic.lifted_laplacian(grid, g)
    m = grid.interior & (np.abs(ref) > 0)
    err = float(np.max(np.abs(lifted[m] - ref[m]) / np.abs(ref[m]))) if np.any(m) else 0.0
    results.append(("lift identity", err <= 1e-12, err))

    # manufactured solutions, h versus h/2
    d = grid.domain
    ratios = []
    for kind in (elliptic.LAPLACE, elliptic.LAPLACE_INV_R2):
        errs = []
        for n in (17, 33):
            gr = build_grid(MeridianDomain(d.r_min, d.r_max, d.z_min, d.z_max), n, n)
            u, f = manufactured(gr, kind)
            sol = elliptic.solve_dirichlet(elliptic.make_operator(gr, kind), f, rtol=1e-12)
            w = gr.volume_weights()
            errs.append(np.sqrt(np.sum(w * (sol - u) ** 2)))
        ratios.append(errs[0] / errs[1])
    results.append(("elliptic convergence", all(3.6 <= q <= 4.4 for q in ratios), min(ratios)))

    # trivial branch and sign of phi on a short continuation
    solver = _solver(cfg)
    res = solver.solve(FieldPair.zeros(grid), 0.0)
    results.append(("trivial branch", res.fields.inf_norm() <= 1e-10, res.fields.inf_norm()))

    # moment oracle
    rows = moments_check(cfg, seed, n_samples=2)
    worst = max(r[-1] for r in rows)
    results.append(("moment oracle", worst <= 1e-4, worst))

    # invariants along a short run in solved fields
    K = min(cfg.solver.K, cfg.solver.K_stop)
    fields = FieldPair.zeros(grid)
    if K > cfg.solver.K_start:
        _, branch = _branch(cfg, stop=K)
        fields = branch.entries[-1].fields
        sign_ok = all(e.min_phi >= -1e-8 for e in branch.entries) if \
            cfg.spec().single_species == "ion" else True
        results.append(("sign property", sign_ok, min(e.min_phi for e in branch.entries)))
    state = trajectories.sample_particles(grid, 10, seed)
    _, rec, _ = trajectories.trace(grid, fields, state, 10.0)
    results.append(("invariant conservation", rec.max_drift <= 1e-6, rec.max_drift))
    return results


def manufactured(grid, kind):
    """Exact solution vanishing on the boundary and its right-hand side."""
    d = grid.domain
    R, Z = grid.R, grid.Z
    L, H = d.r_max - d.r_min, d.z_max - d.z_min
    a = np.pi * (R - d.r_min) / L
    b = np.pi * (Z - d.z_min) / H
    u = np.sin(a) * np.sin(b)
    if d.touches_axis and kind == elliptic.LAPLACE:
        a = np.pi * R / (2.0 * d.r_max)
        u = np.cos(a) * np.sin(b)
        # -Delta u for u = cos(k r) sin(l z)
        k, l = np.pi / (2.0 * d.r_max), np.pi / H
        with np.errstate(divide="ignore", invalid="ignore"):
            sr = np.where(R > 0, np.sin(k * R) / np.where(R > 0, R, 1.0), k)
        f = (k * k * np.cos(k * R) + k * sr + l * l * np.cos(k * R)) * np.sin(b)
        return u, f
    k, l = np.pi / L, np.pi / H
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r = np.where(R > 0, 1.0 / np.where(R > 0, R, 1.0), 0.0)
    f = (k * k + l * l) * u - k * np.cos(a) * np.sin(b) * inv_r
    if kind == elliptic.LAPLACE_INV_R2:
        f = f + u * inv_r ** 2
    return u, f


def cmd_verify(cfg: RunConfig, out: str, seed: int) -> int:
    results = run_verify(cfg, seed)
    for name, ok, val in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({fmt(val)})")
    return 0 if all(ok for _, ok, _ in results) else 1


HANDLERS = {"solve": cmd_solve, "continue": cmd_continue, "stability": cmd_stability,
            "trajectories": cmd_trajectories, "moments-check": cmd_moments_check,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rvmlab", description=__doc__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="seed (overrides trajectories.seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"rvmlab: invalid config: {exc}", file=sys.stderr)
        return 2
    seed = cfg.trajectories.seed if args.seed is None else args.seed
    if seed < 0 or seed >= 2 ** 64:
        print("rvmlab: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    out = args.out or cfg.output
    os.makedirs(out, exist_ok=True)
    try:
        return HANDLERS[args.command](cfg, out, seed)
    except (SolverError, QuadratureError, GeometryError, trajectories.TrajectoryError) as exc:
        print(f"rvmlab: {args.command} failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
