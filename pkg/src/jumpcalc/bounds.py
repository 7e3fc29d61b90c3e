"""Concentration functions and closed-form probability bounds.

``Gamma(x) = x e^x / 2`` links an exponential moment parameter to its
variance weight.  With ``c`` a bound on jump sizes, ``lambda_c(gamma) =
Gamma^{-1}(c gamma)/c`` is the best exponent for a variance weight
``gamma``, and ``kappa_c(gamma, a) = exp(psi(c gamma) gamma a)`` is the
resulting inverse tail probability for a deviation offset ``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

LOG2 = math.log(2.0)


def gamma_fn(x: float) -> float:
    """``x e^x / 2``."""
    if not (x >= 0 and math.isfinite(x)):
        raise DomainError(f"gamma_fn needs a finite x >= 0, got {x!r}")
    return 0.5 * x * math.exp(x)


def _gamma_inv_bisect(y: float) -> float:
    # x e^x = 2y has its root in [2y e^{-2y}, 2y]
    z = 2.0 * y
    lo, hi = z * math.exp(-z), z
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if mid * math.exp(mid) < z:
            lo = mid
        else:
            hi = mid
    return hi if abs(hi * math.exp(hi) - z) < abs(lo * math.exp(lo) - z) else lo


def gamma_inv(y: float) -> float:
    """Solve ``x e^x / 2 = y`` for ``x >= 0``.

    Newton on ``x + log x = log(2y)`` for ``y >= 1e-2`` (the log form is
    concave so the iteration converges monotonically), bisection below.
    """
    y = float(y)
    if not y >= 0:
        raise DomainError(f"gamma_inv needs y >= 0, got {y!r}")
    if y == 0:
        return 0.0
    if math.isinf(y):
        return math.inf
    if y < 1e-2:
        return _gamma_inv_bisect(y)
    z = 2.0 * y
    lz = math.log(z)
    if z < math.e:
        x = math.log1p(z)
    else:
        x = lz - math.log(lz)
    for _ in range(100):
        g = x + math.log(x) - lz
        nx = x - g * x / (x + 1.0)
        if nx <= 0:
            nx = 0.5 * x
        if abs(nx - x) <= 4e-16 * max(1.0, x):
            x = nx
            break
        x = nx
    # one polish step on the original equation
    ex = math.exp(x)
    r = x * ex - z
    if r != 0:
        x -= r / (ex * (1 + x))
    return x


def psi(y: float) -> float:
    """``Gamma^{-1}(y)/y``, equal to 2 at ``y = 0``; decreasing from 2 towards 0."""
    y = float(y)
    if not y >= 0:
        raise DomainError(f"psi needs y >= 0, got {y!r}")
    if y == 0:
        return 2.0
    if y < 1e-8:
        # Gamma^{-1}(y) = 2y - 4y^2 + O(y^3)
        return 2.0 - 4.0 * y
    return gamma_inv(y) / y


def lambda_c(gamma: float, c: float) -> float:
    """Optimal exponent ``Gamma^{-1}(c gamma)/c``, or ``2 gamma`` when ``c = 0``."""
    if not (gamma >= 0 and c >= 0):
        raise DomainError("lambda_c needs gamma, c >= 0")
    return psi(c * gamma) * gamma


def gamma_c(lam: float, c: float) -> float:
    """Inverse of ``lambda_c``: ``Gamma(c lam)/c``, or ``lam/2`` when ``c = 0``."""
    if not (lam >= 0 and c >= 0):
        raise DomainError("gamma_c needs lam, c >= 0")
    if c == 0:
        return 0.5 * lam
    return gamma_fn(c * lam) / c


@dataclass(frozen=True)
class KappaQuery:
    gamma: float
    a: float
    c_delta: float = 0.0

    def __post_init__(self):
        if not (self.gamma > 0 and self.a > 0):
            raise DomainError("kappa needs gamma > 0 and a > 0")
        if not self.c_delta >= 0:
            raise DomainError("c_delta must be >= 0")


@dataclass(frozen=True)
class KappaResult:
    log_kappa: float
    kappa: float
    lam: float


def kappa(q: KappaQuery) -> KappaResult:
    """``kappa_c(gamma, a)``; ``log_kappa`` stays finite when ``kappa`` overflows."""
    lam = lambda_c(q.gamma, q.c_delta)
    lk = lam * q.a
    return KappaResult(lk, math.exp(lk) if lk < 709 else math.inf, lam)


def log_kappa(gamma: float, a: float, c_delta: float) -> float:
    if a == 0:
        return 0.0
    return kappa(KappaQuery(gamma, a, c_delta)).log_kappa


def envelope(lam: float, a: float, c_delta: float, qvar) -> np.ndarray | float:
    """Deviation gauge ``a + (lam/2) e^{lam c} <X>_t``; exceeded with probability at most ``e^{-lam a}`` per side."""
    if not (lam > 0 and a > 0 and c_delta >= 0):
        raise DomainError("envelope needs lam, a > 0 and c_delta >= 0")
    if np.any(np.asarray(qvar) < 0):
        raise DomainError("quadratic variation must be nonnegative")
    return a + 0.5 * lam * math.exp(lam * c_delta) * qvar


@dataclass(frozen=True)
class Bound:
    """A probability bound, clamped to ``[0, 1]``; ``raw`` keeps the unclamped value."""

    value: float
    raw: float

    @property
    def clamped(self) -> bool:
        return self.raw > 1.0

    @staticmethod
    def of(raw: float) -> "Bound":
        return Bound(min(1.0, raw), raw)


def _exp_bound(log_val: float) -> Bound:
    return Bound.of(math.exp(log_val) if log_val < 709 else math.inf)


@dataclass(frozen=True)
class HorizonBound:
    a: float
    gamma: float
    bound: Bound


def optimize_horizon(delta: float, c_rho: float, T: float, c_delta: float) -> HorizonBound:
    """Offset and weight that minimize the bound on ``sup_{t<=T} |M_t| >= delta`` when ``rho <= c_rho``."""
    if not (delta > 0 and c_rho > 0 and T > 0 and c_delta >= 0):
        raise DomainError("optimize_horizon needs delta, c_rho, T > 0 and c_delta >= 0")
    a = delta / 2
    g = delta / (2 * c_rho * T)
    expo = psi(c_delta * g) * delta**2 / (4 * c_rho * T)
    return HorizonBound(a, g, _exp_bound(-expo))


@dataclass(frozen=True)
class OdeBound:
    radius: float
    bound: Bound


def ode_approx_bound(delta: float, c_rho: float, c_delta: float, T: float, L: float) -> OdeBound:
    """Radius ``e^{LT} delta`` around the flow and the probability of leaving it before ``T``."""
    if not L >= 0:
        raise DomainError("Lipschitz constant must be >= 0")
    hb = optimize_horizon(delta, c_rho, T, c_delta)
    return OdeBound(math.exp(L * T) * delta, hb.bound)


# lemma bounds

@dataclass(frozen=True)
class LinearDrift:
    y: float
    x0: float
    c_delta: float
    C_opt: Optional[float] = None

    @property
    def c_eff(self) -> float:
        return self.c_delta if self.C_opt is None else max(self.C_opt, self.c_delta)


@dataclass(frozen=True)
class DriftBarrier:
    x: float
    c: float
    mu: float
    C_mu: float
    sigma2: float
    k: int = 1


@dataclass(frozen=True)
class DriftEscape:
    x: float
    mu: float
    sigma2: float
    b: float
    eps: float
    c_delta: float


@dataclass(frozen=True)
class DiffusiveBarrier:
    x: float
    qvar_T: float
    c_delta: float


@dataclass(frozen=True)
class DiffusiveEscape:
    x: float
    C_mu: float
    sigma2: float
    rho: float
    b: float
    c_delta: float


def linear_drift_bound(y: float, x0: float, c_eff: float) -> Bound:
    """``exp(-(y - 2) x0 / (4 c))`` for the rescaled supremum reaching ``y``; 1 when ``y <= 2``."""
    if not (x0 > 0 and c_eff > 0):
        raise DomainError("linear_drift_bound needs x0 > 0 and c_eff > 0")
    if y <= 2:
        return Bound(1.0, 1.0)
    return _exp_bound(-(y - 2) * x0 / (4 * c_eff))


@dataclass(frozen=True)
class DriftBarrierResult:
    t0: float
    gamma: float
    a: float
    log_kappa: float
    bound: Bound
    long_horizon_k: float
    long_horizon_time: float
    long_horizon_bound: Bound
    t0_tight: float


def drift_barrier_bound(q: DriftBarrier) -> DriftBarrierResult:
    """Barrier at ``x`` against a drift of at most ``-mu``, starting from at most ``x/2``."""
    if not q.x > q.c:
        raise DomainError("drift barrier needs x > c")
    if not (q.mu > 0 and q.mu <= q.C_mu):
        raise DomainError("drift barrier needs 0 < mu <= C_mu")
    if not q.sigma2 > 0:
        raise DomainError("drift barrier needs sigma2 > 0")
    if int(q.k) != q.k or q.k < 1:
        raise DomainError("k must be a positive integer")
    t0 = (q.x - q.c) / (20 * q.C_mu)
    g = q.mu / q.sigma2
    a = (q.x - q.c) / 2
    lk = log_kappa(g, a, q.c)
    bnd = _exp_bound(math.log(3 * q.k) - lk)
    k_long = math.floor(math.exp(lk / 2)) if lk < 1400 else math.inf
    t0_tight = (q.x - q.c) / (4 * (q.C_mu + 2 * lambda_c(g, q.c) * q.sigma2))
    return DriftBarrierResult(t0, g, a, lk, bnd, k_long, k_long * t0, _exp_bound(math.log(3) - lk / 2), t0_tight)


@dataclass(frozen=True)
class EscapeResult:
    T: float
    gamma: float
    a: float
    log_kappa: float
    bound: Bound


def drift_escape_bound(q: DriftEscape) -> EscapeResult:
    """Probability of not reaching ``x`` by ``T = (1+b) x / ((1-eps) mu)`` under drift at least ``mu``."""
    if not 0 < q.eps < 1:
        raise DomainError("drift escape needs 0 < eps < 1")
    if not (q.b > 0 and q.x > 0 and q.mu > 0 and q.sigma2 > 0 and q.c_delta >= 0):
        raise DomainError("drift escape needs b, x, mu, sigma2 > 0 and c_delta >= 0")
    T = (1 + q.b) * q.x / ((1 - q.eps) * q.mu)
    g = q.eps * q.mu / q.sigma2
    a = q.b * q.x
    lk = log_kappa(g, a, q.c_delta)
    return EscapeResult(T, g, a, lk, _exp_bound(-lk))


@dataclass(frozen=True)
class BarrierResult:
    gamma: float
    a: float
    log_kappa: float
    bound: Bound


def diffusive_barrier_bound(q: DiffusiveBarrier) -> BarrierResult:
    """Barrier at ``x`` against a nonpositive drift given the quadratic variation up to ``T``."""
    if not (q.qvar_T > 0 and q.x > 0 and q.c_delta >= 0):
        raise DomainError("diffusive barrier needs qvar_T > 0, x > 0 and c_delta >= 0")
    g = q.x / (2 * q.qvar_T)
    a = q.x / 2
    lk = log_kappa(g, a, q.c_delta)
    return BarrierResult(g, a, lk, _exp_bound(-lk))


def diffusive_escape_bound(q: DiffusiveEscape) -> EscapeResult:
    """Probability that ``|X|`` stays below ``x`` until ``T = 4 (b+1) (x/sigma)^2``."""
    if not q.x > 0:
        raise DomainError("diffusive escape needs x > 0")
    if not 4 * q.x * q.C_mu > 0:
        raise DomainError("diffusive escape needs 4 x C_mu > 0")
    if not q.sigma2 >= 4 * q.x * q.C_mu:
        raise DomainError("diffusive escape needs sigma2 >= 4 x C_mu")
    if not q.rho >= q.sigma2:
        raise DomainError("diffusive escape needs rho >= sigma2")
    if not (q.b >= 0 and q.c_delta >= 0):
        raise DomainError("diffusive escape needs b >= 0 and c_delta >= 0")
    T = 4 * (q.b + 1) * q.x**2 / q.sigma2
    g = (q.sigma2 / 4) / ((2 * q.x + q.c_delta) ** 2 * q.rho)
    a = q.b * q.x**2
    lk = log_kappa(g, a, q.c_delta)
    return EscapeResult(T, g, a, lk, _exp_bound(-lk))


# scaling sweep

@dataclass(frozen=True)
class SweepRow:
    c_delta: float
    c_q: float
    log_kappa_lower: float
    scaled: float
    valid: bool


SWEEP_ITEMS = ("drift_barrier", "drift_escape", "diffusive_barrier", "diffusive_escape")


def scaling_sweep(alpha: float, C: float, item: str, params: dict, c_grid: Sequence[float]) -> list[SweepRow]:
    """Lower bounds on ``log kappa`` when the rate scales as ``c_q = C / c^alpha``.

    ``scaled`` is ``c * log_kappa`` for ``alpha = 1`` (tends to a positive
    constant) and ``log_kappa`` itself otherwise.  Items and their params:

    - ``drift_barrier``: ``x``, ``mu``
    - ``drift_escape``: ``x``, ``mu``, ``b``, ``eps``
    - ``diffusive_barrier``: ``x``, ``T``
    - ``diffusive_escape``: ``x``, ``b``, ``sigma2``; rows with ``sigma2 > rho`` are invalid
    """
    if not 1 <= alpha <= 2:
        raise DomainError("alpha must lie in [1, 2]")
    if not C > 0:
        raise DomainError("C must be positive")
    if item not in SWEEP_ITEMS:
        raise DomainError(f"unknown sweep item {item!r}")
    rows = []
    for c in c_grid:
        c = float(c)
        if not c > 0:
            raise DomainError("c_delta grid values must be positive")
        cq = C / c**alpha
        valid = True
        p = params
        if item == "drift_barrier":
            x, mu = p["x"], p["mu"]
            if not x > c:
                valid, val = False, math.nan
            else:
                val = (x - c) * gamma_inv(mu * c ** (alpha - 1) / C) / (2 * c)
        elif item == "drift_escape":
            x, mu, b, eps = p["x"], p["mu"], p["b"], p["eps"]
            val = b * x * gamma_inv(eps * mu * c ** (alpha - 1) / C) / c
        elif item == "diffusive_barrier":
            x, T = p["x"], p["T"]
            val = gamma_inv(x * c ** (alpha - 1) / (2 * C * T)) * x / (2 * c)
        else:
            x, b, s2 = p["x"], p["b"], p["sigma2"]
            rho = C * c ** (2 - alpha)
            valid = s2 <= rho
            g = (s2 / 4) / ((2 * x + c) ** 2 * rho)
            val = log_kappa(g, b * x * x, c) if valid else math.nan
        scaled = c * val if alpha == 1 else val
        rows.append(SweepRow(c, cq, val, scaled, valid))
    return rows
