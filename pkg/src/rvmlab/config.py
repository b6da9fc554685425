"""Strict JSON run configuration."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields
from typing import Optional

from . import distribution as dist
from .geometry import GeometryError, MeridianDomain, build_grid
from .moments import MomentQuadrature
from .solver import KSchedule


class ConfigError(ValueError):
    pass


@dataclass
class DomainBlock:
    r_min: float
    r_max: float
    z_min: float
    z_max: float
    n_r: int = 17
    n_z: int = 17


@dataclass
class FamilyBlock:
    kind: str = "case1"
    gamma: float = 0.0
    mu0: str = "zero"
    mu_plus: str = "zero"
    mu_minus: str = "zero"
    a_plus: str = "zero"
    a_minus: str = "zero"
    m: float = 0.0
    eps: float = 0.5
    delta: Optional[float] = None
    C_mu: Optional[float] = None
    C_nu: float = 1.0
    C_mu_prime: Optional[float] = None


@dataclass
class QuadratureBlock:
    n_w: int = 6
    n_vphi: int = 6
    w_max: Optional[float] = None
    vphi_max: Optional[float] = None
    tail_tolerance: float = 1e-6


@dataclass
class SolverBlock:
    method: str = "newton"
    tolerance: float = 1e-8
    K: float = 1.0
    K_start: float = 0.0
    K_stop: float = 1.0
    initial_step: float = 0.1
    min_step: float = 1e-4
    max_step: float = 1.0
    blowup: float = 1e6


@dataclass
class StabilityBlock:
    k_max: int = 4
    l_max: int = 4


@dataclass
class TrajectoryBlock:
    particles: int = 100
    T: float = 200.0
    seed: int = 0
    species: str = "ion"
    tolerance: float = 1e-10
    dump: int = 1
    momentum_scale: float = 1.0


@dataclass
class RunConfig:
    domain: DomainBlock
    family: FamilyBlock = field(default_factory=FamilyBlock)
    quadrature: QuadratureBlock = field(default_factory=QuadratureBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    stability: StabilityBlock = field(default_factory=StabilityBlock)
    trajectories: TrajectoryBlock = field(default_factory=TrajectoryBlock)
    output: str = "out"

    # --- derived objects ---
    def grid(self):
        d = self.domain
        return build_grid(MeridianDomain(d.r_min, d.r_max, d.z_min, d.z_max), d.n_r, d.n_z)

    def quad(self) -> MomentQuadrature:
        q = self.quadrature
        return MomentQuadrature(q.n_w, q.n_vphi, q.tail_tolerance, q.w_max, q.vphi_max)

    def schedule(self) -> KSchedule:
        s = self.solver
        return KSchedule(s.K_start, s.K_stop, s.initial_step, s.min_step, s.max_step)

    def spec(self) -> dist.FamilySpec:
        return build_family(self.family)


BLOCKS = {"domain": DomainBlock, "family": FamilyBlock, "quadrature": QuadratureBlock,
          "solver": SolverBlock, "stability": StabilityBlock, "trajectories": TrajectoryBlock}

PROFILE_NAMES = ("zero", "kinetic", "even", "skewed", "algebraic", "confined", "instability")


def _profile(name: str, fam: FamilyBlock, where: str) -> dist.MuFunction:
    if name == "zero":
        return dist.ZERO
    if name == "instability":
        kw = {} if fam.delta is None else {"delta": fam.delta}
        return dist.instability_family(fam.m, fam.eps, fam.C_nu, **kw)
    if name in dist.BUILTINS:
        kw = {} if fam.delta is None else {"delta": fam.delta}
        return dist.BUILTINS[name](**kw)
    raise ConfigError(f"family.{where}: unknown profile {name!r}; choose from {PROFILE_NAMES}")


def build_family(fam: FamilyBlock) -> dist.FamilySpec:
    if fam.kind not in ("case1", "case2"):
        raise ConfigError(f"family.kind: must be 'case1' or 'case2', got {fam.kind!r}")
    amps = {}
    for key in ("a_plus", "a_minus"):
        name = getattr(fam, key)
        if name not in dist.A_FUNCTIONS:
            raise ConfigError(f"family.{key}: unknown amplitude {name!r}; choose from "
                              f"{tuple(dist.A_FUNCTIONS)}")
        amps[key] = dist.A_FUNCTIONS[name](fam.m)
    try:
        mus = {k: _profile(getattr(fam, k), fam, k) for k in ("mu0", "mu_plus", "mu_minus")}
        inst = None
        if fam.C_mu_prime is not None:
            inst = dist.InstabilityParams(fam.m, fam.eps, fam.C_mu_prime, fam.C_nu)
        return dist.FamilySpec(fam.kind, fam.gamma, mus["mu0"], mus["mu_plus"], mus["mu_minus"],
                               amps["a_plus"], amps["a_minus"], inst)
    except dist.ParameterError as exc:
        raise ConfigError(f"family: {exc}") from exc


def _coerce(block: str, cls, raw) -> object:
    if not isinstance(raw, dict):
        raise ConfigError(f"{block}: expected an object")
    known = {f.name: f for f in dc_fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{block}.{key}: unknown key")
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            from dataclasses import MISSING
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(f"{block}.{name}: required field is missing")
            continue
        val = raw[name]
        typ = str(f.type)
        if val is None:
            if "Optional" not in typ:
                raise ConfigError(f"{block}.{name}: must not be null")
        elif "int" in typ and "Optional" not in typ:
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"{block}.{name}: expected an integer")
        elif "float" in typ:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{block}.{name}: expected a number")
            val = float(val)
        elif "str" in typ and not isinstance(val, str):
            raise ConfigError(f"{block}.{name}: expected a string")
        kwargs[name] = val
    return cls(**kwargs)


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    for key in data:
        if key not in BLOCKS and key != "output":
            raise ConfigError(f"{key}: unknown key")
    if "domain" not in data:
        raise ConfigError("domain: required block is missing")
    blocks = {name: _coerce(name, cls, data[name]) for name, cls in BLOCKS.items() if name in data}
    out = data.get("output", "out")
    if not isinstance(out, str):
        raise ConfigError("output: expected a string")
    cfg = RunConfig(output=out, **blocks)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    d = cfg.domain
    try:
        cfg.grid()
    except GeometryError as exc:
        raise ConfigError(f"domain: {exc}") from exc
    s = cfg.solver
    if s.method not in ("newton", "picard"):
        raise ConfigError("solver.method: must be 'newton' or 'picard'")
    if not s.tolerance > 0:
        raise ConfigError("solver.tolerance: must be positive")
    if s.K < 0:
        raise ConfigError("solver.K: must be >= 0")
    try:
        cfg.schedule()
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc
    if not s.blowup > 0:
        raise ConfigError("solver.blowup: must be positive")
    try:
        cfg.quad()
    except ValueError as exc:
        raise ConfigError(f"quadrature: {exc}") from exc
    st = cfg.stability
    if st.k_max < 1 or st.l_max < 1:
        raise ConfigError("stability.k_max/l_max: must be >= 1")
    t = cfg.trajectories
    if t.particles < 1:
        raise ConfigError("trajectories.particles: must be >= 1")
    if not t.T > 0:
        raise ConfigError("trajectories.T: must be positive")
    if t.species not in ("ion", "electron"):
        raise ConfigError("trajectories.species: must be 'ion' or 'electron'")
    if t.seed < 0:
        raise ConfigError("trajectories.seed: must be >= 0")
    if cfg.family.C_mu is not None and not cfg.family.C_mu > 0:
        raise ConfigError("family.C_mu: must be positive")
    cfg.spec()


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)
