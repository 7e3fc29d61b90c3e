"""Built-in process specs: counters, birth-death chains, SIS epidemics and density dependent chains."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import DiscreteKernel, ProcessSpec, rescale_time
from .errors import ContractViolation, DomainError

Array = np.ndarray


def _const_rates(rates: Sequence[float]):
    row = np.asarray(rates, dtype=float)

    def weights(x: Array) -> Array:
        return np.broadcast_to(row, (x.shape[0], row.size)).copy()

    return weights


def poisson_counter(rate: float) -> ProcessSpec:
    """Counts events of a Poisson process with the given rate."""
    if not rate >= 0:
        raise DomainError("rate must be nonnegative")
    return ProcessSpec(DiscreteKernel(_const_rates([rate]), [[1.0]]), c_delta=1.0,
                       name="poisson_counter", params={"rate": float(rate)})


def birth_death(b: float, d: float, step: float = 1.0) -> ProcessSpec:
    """Random walk stepping ``+step`` at rate ``b`` and ``-step`` at rate ``d``."""
    if not (b >= 0 and d >= 0):
        raise DomainError("birth and death rates must be nonnegative")
    if not step > 0:
        raise DomainError("step must be positive")
    return ProcessSpec(DiscreteKernel(_const_rates([b, d]), [[step], [-step]]), c_delta=float(step),
                       name="birth_death", params={"b": float(b), "d": float(d), "step": float(step)})


def yule(ell: float) -> ProcessSpec:
    """Pure birth chain with rate ``ell * X`` and unit jumps."""
    if not ell >= 0:
        raise DomainError("ell must be nonnegative")

    def weights(x: Array) -> Array:
        return ell * np.maximum(x[:, :1], 0.0)

    return ProcessSpec(DiscreteKernel(weights, [[1.0]]), c_delta=1.0, name="yule", params={"ell": float(ell)})


@dataclass(frozen=True)
class SisParams:
    """SIS epidemic on ``n`` individuals with infection parameter ``lam``; recovery rate is 1."""

    n: int
    lam: float
    rescaled: bool = True

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError("n must be a positive integer")
        if not self.lam >= 0:
            raise DomainError("lam must be nonnegative")

    @property
    def delta(self) -> float:
        return 1.0 - self.lam

    @property
    def delta0(self) -> float:
        return math.sqrt(self.n) * self.delta


def sis_drift(x, lam: float):
    """Drift of the rescaled SIS process, ``lam x (1 - x) - x``."""
    return lam * x * (1 - x) - x


def sis(params: SisParams) -> ProcessSpec:
    """SIS chain: infection at rate ``lam X (n - X)/n``, recovery at rate ``X``.

    The rescaled version tracks ``x = X/n`` with jumps ``+-1/n``.  State 0
    is absorbing.
    """
    n, lam = params.n, params.lam
    if params.rescaled:
        def weights(x: Array) -> Array:
            v = np.clip(x[:, 0], 0.0, 1.0)
            return np.stack([lam * n * v * (1 - v), n * v], axis=1)

        step = 1.0 / n
    else:
        def weights(x: Array) -> Array:
            v = np.clip(x[:, 0], 0.0, n)
            return np.stack([lam * v * (n - v) / n, v], axis=1)

        step = 1.0
    return ProcessSpec(DiscreteKernel(weights, [[step], [-step]]), c_delta=step, name="sis",
                       params={"n": int(n), "lam": float(lam), "rescaled": bool(params.rescaled)})


def sis_deviation_process(params: SisParams, time_change: bool = False) -> ProcessSpec:
    """Rescaled SIS together with its deterministic flow.

    State is ``(y, phi, t)`` with ``x = y + phi``: ``phi`` solves
    ``phi' = f(phi)``, ``t`` is elapsed time and ``y = x - phi`` is the
    deviation, so ``mu(y) = f(x) - f(phi) = -y (delta + lam (x + phi))``.
    With ``time_change`` the process runs on the clock
    ``delta + lam (x + phi)``, which turns the drift of ``y`` into ``-y``.
    Start it at ``(0, x0, 0)``.
    """
    n, lam, delta = params.n, params.lam, params.delta
    if not params.rescaled:
        raise DomainError("the deviation process is defined for the rescaled chain")
    if time_change and not delta > 0:
        raise DomainError("the time change needs delta = 1 - lam > 0")

    def weights(s: Array) -> Array:
        v = np.clip(s[:, 0] + s[:, 1], 0.0, 1.0)
        return np.stack([lam * n * v * (1 - v), n * v], axis=1)

    def derivative(s: Array) -> Array:
        fp = sis_drift(s[:, 1], lam)
        return np.stack([-fp, fp, np.ones_like(fp)], axis=1)

    disp = [[1.0 / n, 0.0, 0.0], [-1.0 / n, 0.0, 0.0]]
    spec = ProcessSpec(DiscreteKernel(weights, disp), c_delta=1.0 / n, dim=3, derivative=derivative,
                       name="sis_deviation", params={"n": int(n), "lam": float(lam), "time_change": time_change})
    if time_change:
        def clock(s: Array) -> Array:
            return delta + lam * (s[:, 0] + 2 * s[:, 1])

        spec = rescale_time(spec, clock)
    return spec


def density_dependent(q_fn: Callable[[Array, Array], Array], n: int, r: float, c_q: float,
                      directions: Sequence[Sequence[float]], debug: bool = False,
                      name: str = "density_dependent") -> ProcessSpec:
    """Rescaled chain ``x = X/n`` jumping by ``l/n`` at rate ``n q(x, l)`` for each direction ``l``.

    ``q_fn(x, l)`` takes states ``(m, d)`` and one direction ``(d,)`` and
    returns ``(m,)`` rates.  Directions must have l1 norm at most ``r``, so
    ``c_delta = r/n`` and ``rho <= c_q r / n`` whenever the total rate
    ``sum_l q(x, l)`` stays below ``c_q``.  With ``debug`` the rate bound is
    checked at every evaluation.
    """
    dirs = np.asarray(directions, dtype=float)
    if dirs.ndim != 2 or dirs.shape[0] == 0:
        raise DomainError("directions must be a nonempty (K, d) array")
    if int(n) != n or n < 1 or not (r > 0 and c_q > 0):
        raise DomainError("need a positive integer n and positive r, c_q")
    if np.any(np.abs(dirs).sum(axis=1) > r):
        raise DomainError("every direction must have l1 norm at most r")

    def weights(x: Array) -> Array:
        w = np.stack([np.asarray(q_fn(x, l), dtype=float).reshape(x.shape[0]) for l in dirs], axis=1)
        if debug and np.any(w.sum(axis=1) > c_q * (1 + 1e-12)):
            i = int(np.argmax(w.sum(axis=1)))
            raise ContractViolation(f"total rate {w.sum(axis=1)[i]!r} exceeds c_q={c_q} at {x[i].tolist()}")
        return n * w

    return ProcessSpec(DiscreteKernel(weights, dirs / n), c_delta=r / n, dim=dirs.shape[1], name=name,
                       params={"n": int(n), "r": float(r), "c_q": float(c_q), "directions": dirs.tolist()})


def sis_density_dependent(n: int, lam: float, debug: bool = False) -> ProcessSpec:
    """Rescaled SIS written as a density dependent chain (``c_q = 1 + lam/4``, ``r = 1``)."""

    def q_fn(x, l):
        v = np.clip(x[:, 0], 0.0, 1.0)
        return lam * v * (1 - v) if l[0] > 0 else v

    return density_dependent(q_fn, n, 1.0, 1.0 + lam / 4, [[1.0], [-1.0]], debug=debug, name="sis_dd")
