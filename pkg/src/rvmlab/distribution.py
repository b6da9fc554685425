"""Particle density profiles mu(e, p) and the parametrized families mu^{K,+-}.

Every profile carries its partial derivatives and the constants of the decay
bound ``|mu| + |mu_p| + |mu_e| <= C / (1 + |e|^delta)``.  All callables are
numpy-vectorized in ``(e, p)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class MuFunction:
    eval: Fn
    d_e: Fn
    d_p: Fn
    delta: float
    decay_constant: float
    # length over which mu varies in p; the moment quadrature refines |p| < p_scale
    p_scale: float = 1.0
    # mu may grow like <p>^p_growth at fixed e (0 for profiles bounded in p)
    p_growth: float = 0.0
    is_zero: bool = False
    even_in_p: bool = False
    name: str = "custom"

    def __call__(self, e, p):
        return self.eval(e, p)

    def __post_init__(self):
        if not self.is_zero and not self.delta > 3:
            raise ParameterError(f"decay exponent must exceed 3, got {self.delta}")
        if self.decay_constant < 0:
            raise ParameterError("decay constant must be non-negative")


def _zero(e, p):
    return np.zeros(np.broadcast(e, p).shape)


ZERO = MuFunction(_zero, _zero, _zero, delta=np.inf, decay_constant=0.0,
                  is_zero=True, even_in_p=True, name="zero")


def _sup_weighted(envelope: Callable[[np.ndarray], np.ndarray], delta: float,
                  e_max: float = 400.0) -> float:
    # max over e >= 0 of (1 + e^delta) * envelope(e): mesh search, then a bounded polish
    e = np.concatenate([np.linspace(0.0, 50.0, 20001), np.linspace(50.0, e_max, 5001)])
    vals = (1.0 + e ** delta) * envelope(e)
    k = int(np.argmax(vals))

    def neg(x):
        return -float((1.0 + x ** delta) * envelope(np.asarray(x)))

    lo, hi = e[max(k - 1, 0)], e[min(k + 1, e.size - 1)]
    if hi > lo:
        res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        return max(float(vals[k]), -float(res.fun))
    return float(vals[k])


# --- built-in profiles -------------------------------------------------------

def kinetic(c_mu: float = 1.0, delta: float = 4.0) -> MuFunction:
    """``c_mu / (1 + |e|^delta)``, independent of p."""
    def f(e, p):
        return c_mu / (1.0 + np.abs(e) ** delta) + 0.0 * p

    def fe(e, p):
        ae = np.abs(e)
        return -c_mu * delta * np.sign(e) * ae ** (delta - 1) / (1.0 + ae ** delta) ** 2 + 0.0 * p

    bound = c_mu * _sup_weighted(
        lambda e: 1.0 / (1 + e ** delta) + delta * e ** (delta - 1) / (1 + e ** delta) ** 2, delta)
    return MuFunction(f, fe, _zero, delta, bound, even_in_p=True, name="kinetic")


def even(c: float = 1.0, delta: float = 6.0) -> MuFunction:
    """``c exp(-e) / (1 + p^2)``; even in p."""
    def f(e, p):
        return c * np.exp(-e) / (1.0 + p * p)

    def fe(e, p):
        return -f(e, p)

    def fp(e, p):
        return -2.0 * c * p * np.exp(-e) / (1.0 + p * p) ** 2

    # |2p/(1+p^2)^2| <= 3 sqrt(3) / 8
    bound = c * (2.0 + 3.0 * np.sqrt(3.0) / 8.0) * _sup_weighted(lambda e: np.exp(-e), delta)
    return MuFunction(f, fe, fp, delta, bound, even_in_p=True, name="even")


def skewed(c: float = 1.0, delta: float = 6.0) -> MuFunction:
    """``c exp(-e) (1 + tanh p) / 2``; carries a net azimuthal drift."""
    def f(e, p):
        return 0.5 * c * np.exp(-e) * (1.0 + np.tanh(p))

    def fe(e, p):
        return -f(e, p)

    def fp(e, p):
        q = np.exp(-2.0 * np.abs(p))
        return 2.0 * c * np.exp(-e) * q / (1.0 + q) ** 2

    bound = c * 2.5 * _sup_weighted(lambda e: np.exp(-e), delta)
    return MuFunction(f, fe, fp, delta, bound, name="skewed")


def confined(c: float = 1.0, delta: float = 6.0) -> MuFunction:
    """``c exp(-e) / (1 + p^4)``; even in p, decays in p like |p|^-4."""
    def f(e, p):
        return c * np.exp(-e) / (1.0 + p ** 4)

    def fe(e, p):
        return -f(e, p)

    def fp(e, p):
        return -4.0 * c * np.exp(-e) * p ** 3 / (1.0 + p ** 4) ** 2

    q = np.linspace(0.0, 4.0, 40001)
    dp_max = float(np.max(4.0 * q ** 3 / (1.0 + q ** 4) ** 2))
    bound = c * (2.0 + dp_max) * _sup_weighted(lambda e: np.exp(-e), delta)
    return MuFunction(f, fe, fp, delta, bound, even_in_p=True, name="confined")


def algebraic(c: float = 1.0, delta: float = 4.0) -> MuFunction:
    """``c / (1 + |e|^delta + |p|^delta)``; decays in both variables."""
    def f(e, p):
        return c / (1.0 + np.abs(e) ** delta + np.abs(p) ** delta)

    def fe(e, p):
        den = 1.0 + np.abs(e) ** delta + np.abs(p) ** delta
        return -c * delta * np.sign(e) * np.abs(e) ** (delta - 1) / den ** 2

    def fp(e, p):
        den = 1.0 + np.abs(e) ** delta + np.abs(p) ** delta
        return -c * delta * np.sign(p) * np.abs(p) ** (delta - 1) / den ** 2

    # at fixed e the p-derivative peaks where |p|^delta ~ (1+|e|^delta)(delta-1)/(delta+1)
    def env(e):
        base = 1.0 + e ** delta
        return (1.0 / base + delta * e ** (delta - 1) / base ** 2
                + delta * base ** (-1.0 - 1.0 / delta))

    bound = c * _sup_weighted(env, delta)
    return MuFunction(f, fe, fp, delta, bound, even_in_p=True, name="algebraic")


def instability_family(m: float, eps: float, c_nu: float, delta: float = 6.0) -> MuFunction:
    """``c_nu exp(-e) <p>^(1-eps)`` with ``p mu_p >= (1-eps) c_nu e^{-e} p^2 <p>^{-1-eps}``."""
    if not -1.0 < m < 1.0:
        raise ParameterError(f"m must lie in (-1, 1), got {m}")
    if not 0.0 < eps < 1.0 - abs(m):
        raise ParameterError(f"eps must lie in (0, 1 - |m|) = (0, {1 - abs(m)}), got {eps}")
    if not c_nu > 0:
        raise ParameterError("C_nu must be positive")
    if not delta > 4:
        raise ParameterError("the instability regime needs delta > 4")

    def f(e, p):
        return c_nu * np.exp(-e) * (1.0 + p * p) ** (0.5 * (1.0 - eps))

    def fe(e, p):
        return -f(e, p)

    def fp(e, p):
        return c_nu * np.exp(-e) * (1.0 - eps) * p * (1.0 + p * p) ** (-0.5 * (1.0 + eps))

    # bounded on the accessible set |p| <= 4 (1 + e)
    def env(e):
        return np.exp(-e) * (3.0 * (1.0 + 16.0 * (1.0 + e) ** 2) ** (0.5 * (1.0 - eps)))

    bound = c_nu * _sup_weighted(env, delta)
    return MuFunction(f, fe, fp, delta, bound, p_growth=1.0 - eps, name="instability")


BUILTINS = {
    "kinetic": kinetic,
    "even": even,
    "skewed": skewed,
    "algebraic": algebraic,
    "confined": confined,
}


# --- amplitude functions a^{+-}(K) ------------------------------------------

def a_square(K):
    return K * K


def make_a_power(m: float):
    """``K^2 / (1 + K^(2-m))``: vanishes to second order at 0, grows like K^m."""
    def a(K):
        return K * K / (1.0 + K ** (2.0 - m))
    return a


def a_zero(K):
    return 0.0


A_FUNCTIONS = {"square": lambda m: a_square, "power_m": make_a_power, "zero": lambda m: a_zero}


@dataclass(frozen=True)
class InstabilityParams:
    m: float
    eps: float
    c_mu_prime: float
    c_nu: float

    def __post_init__(self):
        if not -1.0 < self.m < 1.0:
            raise ParameterError(f"m must lie in (-1, 1), got {self.m}")
        if not 0.0 < self.eps < 1.0 - abs(self.m):
            raise ParameterError("eps must lie in (0, 1 - |m|)")
        if self.c_mu_prime <= 0 or self.c_nu <= 0:
            raise ParameterError("C'_mu and C_nu must be positive")


@dataclass(frozen=True)
class FamilySpec:
    kind: str                      # "case1" | "case2" | "custom"
    gamma: float = 0.0
    mu0: MuFunction = ZERO
    mu_plus: MuFunction = ZERO
    mu_minus: MuFunction = ZERO
    a_plus: Callable[[float], float] = a_zero
    a_minus: Callable[[float], float] = a_zero
    instability: Optional[InstabilityParams] = None
    # custom families supply K -> (ion, electron) directly
    custom: Optional[Callable[[float], tuple]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("case1", "case2", "custom"):
            raise ParameterError(f"unknown family kind {self.kind!r}")
        if self.gamma < 0:
            raise ParameterError("gamma must be >= 0")
        if self.kind == "custom" and self.custom is None:
            raise ParameterError("custom family needs a callable")
        if self.kind != "custom":
            if abs(self.a_plus(0.0)) > 0 or abs(self.a_minus(0.0)) > 0:
                raise ParameterError("a^+(0) and a^-(0) must vanish")
            if not self.mu0.is_zero and not self.mu0.even_in_p:
                raise ParameterError("mu0 must be even in p")

    @property
    def single_species(self) -> Optional[str]:
        """'ion' or 'electron' when one species vanishes identically for every K."""
        if self.kind == "custom":
            return None
        no_bg = self.gamma == 0 or self.mu0.is_zero
        if no_bg and (self.mu_minus.is_zero or self.a_minus is a_zero):
            return "ion"
        if no_bg and (self.mu_plus.is_zero or self.a_plus is a_zero):
            return "electron"
        return None


def _combine(gamma, mu0, a, mu, s, K_scale_name) -> MuFunction:
    parts = []
    if gamma != 0 and not mu0.is_zero:
        parts.append((gamma, mu0))
    if a != 0 and not mu.is_zero:
        parts.append((a, mu))
    if not parts:
        return ZERO

    def f(e, p):
        return sum(c * g.eval(e, s * p) for c, g in parts)

    def fe(e, p):
        return sum(c * g.d_e(e, s * p) for c, g in parts)

    def fp(e, p):
        return s * sum(c * g.d_p(e, s * p) for c, g in parts)

    growth = max(g.p_growth for _, g in parts)
    scale = max(1.0, s) ** (1.0 + growth)
    const = scale * sum(abs(c) * g.decay_constant for c, g in parts)
    delta = min(g.delta for _, g in parts)
    p_scale = min(g.p_scale for _, g in parts) / s if s > 0 else np.inf
    return MuFunction(f, fe, fp, delta, const, p_scale=p_scale, p_growth=growth,
                      even_in_p=all(g.even_in_p for _, g in parts), name=K_scale_name)


def family_at(spec: FamilySpec, K: float):
    """The pair (mu^{K,+}, mu^{K,-}) at parameter K >= 0."""
    if K < 0:
        raise ParameterError("K must be >= 0")
    if spec.kind == "custom":
        return spec.custom(K)
    s = 1.0 if spec.kind == "case1" else K
    ion = _combine(spec.gamma, spec.mu0, spec.a_plus(K), spec.mu_plus, s, f"{spec.kind}+")
    ele = _combine(spec.gamma, spec.mu0, spec.a_minus(K), spec.mu_minus, s, f"{spec.kind}-")
    return ion, ele


@dataclass
class DecayReport:
    max_ratio: float
    worst_e: float
    worst_p: float

    @property
    def holds(self) -> bool:
        return self.max_ratio <= 1.0


def check_decay(mu: MuFunction, sample_box, n_samples: int, seed: int = 0,
                decay_constant: Optional[float] = None) -> DecayReport:
    """Largest sampled value of ``(|mu| + |mu_p| + |mu_e|)(1 + |e|^delta) / C``."""
    if n_samples < 1:
        raise ParameterError("n_samples must be >= 1")
    (e_lo, e_hi), (p_lo, p_hi) = sample_box
    rng = np.random.default_rng(seed)
    e = rng.uniform(e_lo, e_hi, n_samples)
    p = rng.uniform(p_lo, p_hi, n_samples)
    # include the box corners and the p = 0 line endpoints
    e = np.concatenate([e, [e_lo, e_lo, e_hi, e_hi]])
    p = np.concatenate([p, [p_lo, p_hi, p_lo, p_hi]])
    if mu.is_zero:
        return DecayReport(0.0, float(e[0]), float(p[0]))
    c = mu.decay_constant if decay_constant is None else decay_constant
    size = np.abs(mu.eval(e, p)) + np.abs(mu.d_p(e, p)) + np.abs(mu.d_e(e, p))
    ratio = size * (1.0 + np.abs(e) ** mu.delta) / c
    k = int(np.argmax(ratio))
    return DecayReport(float(ratio[k]), float(e[k]), float(p[k]))


def with_decay(mu: MuFunction, delta: float, decay_constant: float) -> MuFunction:
    return replace(mu, delta=delta, decay_constant=decay_constant)
