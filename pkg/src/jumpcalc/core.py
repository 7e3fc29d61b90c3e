"""Process descriptions and the drift calculus of hybrid jump processes.

A hybrid jump process (hjp) is described by a jump rate ``q``, a derivative
``D`` followed between jumps, and a jump function ``Delta(x, u)`` of the
pre-jump state and a uniform mark ``u``.  All callables in this module are
vectorized: states are arrays of shape ``(m, d)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Union

import numpy as np

from .errors import (
    CouplingError,
    DomainError,
    EvaluationError,
    TimeChangeError,
    TransformError,
)

Array = np.ndarray
StateFn = Callable[[Array], Array]

DEFAULT_NODES = 256


@dataclass(frozen=True)
class DiscreteKernel:
    """Markov-chain embedding: jump ``displacements[i]`` at rate ``weights[i]``.

    ``weights(x)`` maps ``(m, d)`` states to ``(m, K)`` nonnegative rates.
    ``displacements`` is either a constant ``(K, d)`` array or a callable
    returning ``(m, K, d)``.  The total rate is the sum of the weights, and a
    mark ``u`` selects entry ``i`` when ``c[i-1] < u <= c[i]`` for the
    normalized cumulative weights ``c``.
    """

    weights: StateFn
    displacements: Union[Array, StateFn]

    def __post_init__(self):
        if not callable(self.displacements):
            disp = np.array(self.displacements, dtype=float)
            if disp.ndim == 1:
                disp = disp[:, None]
            if disp.ndim != 2 or not np.all(np.isfinite(disp)):
                raise DomainError("displacements must be a finite (K, d) array")
            disp.setflags(write=False)
            object.__setattr__(self, "displacements", disp)

    def evaluate(self, x: Array) -> tuple[Array, Array]:
        w = np.asarray(self.weights(x), dtype=float)
        if callable(self.displacements):
            disp = np.asarray(self.displacements(x), dtype=float)
        else:
            disp = np.broadcast_to(self.displacements, (x.shape[0],) + self.displacements.shape)
        return w, disp


@dataclass(frozen=True)
class ContinuousKernel:
    """Jump ``jump(x, u)`` for a mark ``u`` in (0, 1).

    ``jump`` must broadcast: ``x`` of shape ``(..., d)`` and ``u`` of shape
    ``(...)`` give jumps of shape ``(..., d)``.  Mean jumps are computed by
    the composite midpoint rule on ``nodes`` points.
    """

    jump: Callable[[Array, Array], Array]
    nodes: int = DEFAULT_NODES

    def __post_init__(self):
        if self.nodes < 2:
            raise DomainError("continuous kernels need at least 2 quadrature nodes")

    def grid(self) -> Array:
        return (np.arange(self.nodes) + 0.5) / self.nodes

    def sample_all(self, x: Array) -> Array:
        """Jumps at every quadrature node, shape ``(m, nodes, d)``."""
        u = self.grid()
        xb = x[:, None, :]
        return np.asarray(self.jump(np.broadcast_to(xb, (x.shape[0], self.nodes, x.shape[1])),
                                    np.broadcast_to(u, (x.shape[0], self.nodes))), dtype=float)


Kernel = Union[DiscreteKernel, ContinuousKernel]


@dataclass(frozen=True)
class ProcessSpec:
    """Data ``(q, D, Delta)`` of a time-homogeneous hjp.

    ``rate`` is required for continuous kernels; for discrete kernels the
    rate is the sum of the weights and an explicit ``rate`` is only used as a
    consistency check.  ``derivative=None`` means ``D == 0`` (a pure jump
    process).  With a ``clock`` attached, rate and derivative are divided by
    ``clock(x)``, which runs the process on a rescaled time axis.
    """

    kernel: Kernel
    c_delta: float
    dim: int = 1
    rate: Optional[StateFn] = None
    derivative: Optional[StateFn] = None
    clock: Optional[StateFn] = None
    name: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.c_delta > 0:
            raise DomainError(f"c_delta must be positive, got {self.c_delta}")
        if self.dim < 1:
            raise DomainError("dim must be a positive integer")
        if isinstance(self.kernel, ContinuousKernel) and self.rate is None:
            raise DomainError("a continuous kernel needs an explicit rate")

    @property
    def pure_jump(self) -> bool:
        return self.derivative is None

    def fingerprint(self) -> str:
        """Stable hash of the declared model identity."""

        def fname(f):
            if f is None:
                return None
            return getattr(f, "__qualname__", type(f).__name__)

        doc = {
            "name": self.name,
            "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
            "c_delta": repr(float(self.c_delta)),
            "dim": self.dim,
            "kernel": type(self.kernel).__name__,
            "pure_jump": self.pure_jump,
            "clock": self.clock is not None,
        }
        if self.name == "custom":
            doc["functions"] = [fname(self.rate), fname(self.derivative), fname(self.clock)]
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _jsonable(v):
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(i) for i in v]
    return repr(v)


@dataclass(frozen=True)
class DriftReport:
    mu: Array
    sigma2: Array
    rho: Array
    cov: Optional[Array] = None


def as_states(spec: ProcessSpec, x) -> tuple[Array, bool]:
    """Coerce ``x`` to shape ``(m, dim)``; the flag says whether it was a single state."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
        single = True
    elif arr.ndim == 1:
        if spec.dim == 1 and arr.shape[0] != 1:
            arr = arr[:, None]
            single = False
        else:
            arr = arr[None, :]
            single = True
    else:
        single = False
    if arr.shape[-1] != spec.dim:
        raise DomainError(f"state has {arr.shape[-1]} coordinates, spec expects {spec.dim}")
    return arr, single


class LocalData:
    """Everything the calculus needs at a batch of states.

    ``q`` has shape ``(m,)``, ``D`` is ``(m, d)`` or None and ``weights`` is
    ``(m, K)`` for discrete kernels.  Jumps are ``(m, K, d)`` (discrete) or
    ``(m, nodes, d)`` (continuous); a constant discrete table is kept as
    ``table`` of shape ``(K, d)`` and only broadcast on request.
    """

    __slots__ = ("q", "D", "weights", "table", "_jumps")

    def __init__(self, q: Array, D: Optional[Array], weights: Optional[Array], jumps: Optional[Array] = None,
                 table: Optional[Array] = None):
        self.q = q
        self.D = D
        self.weights = weights
        self.table = table
        self._jumps = jumps

    @property
    def jumps(self) -> Array:
        if self._jumps is None:
            self._jumps = np.broadcast_to(self.table, (self.q.shape[0],) + self.table.shape)
        return self._jumps

    def subset(self, sel) -> "LocalData":
        return LocalData(self.q[sel], None if self.D is None else self.D[sel],
                         None if self.weights is None else self.weights[sel],
                         None if self._jumps is None else self._jumps[sel], self.table)

    def mean_jump_rate(self) -> Array:
        """``q * E[Delta]`` per coordinate."""
        if self.table is not None:
            return _table_sum(self.weights, self.table)
        if self.weights is not None:
            return _weighted_sum(self.weights, self.jumps)
        return self.q[:, None] * self.jumps.mean(axis=1)

    def square_jump_rate(self) -> Array:
        if self.table is not None:
            return _table_sum(self.weights, self.table * self.table)
        if self.weights is not None:
            return _weighted_sum(self.weights, self.jumps * self.jumps)
        return self.q[:, None] * (self.jumps * self.jumps).mean(axis=1)

    def drift(self) -> Array:
        mj = self.mean_jump_rate()
        return mj if self.D is None else self.D + mj

    def local_cdelta(self) -> Array:
        """Largest jump norm in the support at each state (``c_{Delta,t}``)."""
        norms = np.abs(self.jumps).sum(axis=-1)
        if self.weights is not None:
            norms = np.where(self.weights > 0, norms, 0.0)
        return norms.max(axis=1) if norms.shape[1] else np.zeros(norms.shape[0])


def _weighted_sum(w: Array, vals: Array) -> Array:
    # sequential sum over the K entries, in kernel order
    acc = w[:, 0, None] * vals[:, 0, :]
    for i in range(1, w.shape[1]):
        acc = acc + w[:, i, None] * vals[:, i, :]
    return acc


def _table_sum(w: Array, table: Array) -> Array:
    # same arithmetic as _weighted_sum with a constant table
    acc = w[:, 0, None] * table[0]
    for i in range(1, w.shape[1]):
        acc = acc + w[:, i, None] * table[i]
    return acc


def row_sum(w: Array) -> Array:
    """Sequential sum over columns, in kernel order."""
    acc = w[:, 0].copy() if w.shape[1] else np.zeros(w.shape[0])
    for i in range(1, w.shape[1]):
        acc += w[:, i]
    return acc


def _all_finite(a: Array) -> bool:
    # one reduction in the common case; the sum can only overflow for huge entries
    return bool(np.isfinite(a.sum())) or bool(np.all(np.isfinite(a)))


def local_data(spec: ProcessSpec, x: Array, check: bool = True) -> LocalData:
    """Evaluate rate, derivative and jump table at states ``x`` of shape ``(m, d)``."""
    kern = spec.kernel
    table = None
    jumps = None
    if isinstance(kern, DiscreteKernel):
        w = np.asarray(kern.weights(x), dtype=float)
        if w.ndim != 2 or w.shape[0] != x.shape[0]:
            raise EvaluationError(f"weights returned shape {w.shape}, expected ({x.shape[0]}, K)")
        if callable(kern.displacements):
            jumps = np.asarray(kern.displacements(x), dtype=float)
        else:
            table = kern.displacements
            if table.shape[0] != w.shape[1]:
                raise EvaluationError(f"{w.shape[1]} weights for {table.shape[0]} displacements")
        q = row_sum(w)
    else:
        w = None
        jumps = kern.sample_all(x)
        q = np.asarray(spec.rate(x), dtype=float).reshape(x.shape[0])
    D = None
    if spec.derivative is not None:
        D = np.asarray(spec.derivative(x), dtype=float).reshape(x.shape)
    if spec.clock is not None:
        c = np.asarray(spec.clock(x), dtype=float).reshape(x.shape[0])
        if check and not np.all(c > 0):
            bad = x[np.argmax(~(c > 0))]
            raise TimeChangeError(f"clock is not positive at state {bad.tolist()}")
        q = q / c
        if w is not None:
            w = w / c[:, None]
        if D is not None:
            D = D / c[:, None]
    if check and x.shape[0]:
        if not _all_finite(q):
            raise EvaluationError("rate q is not finite at " + _first_bad(x, q))
        if q.min() < 0 or (w is not None and w.size and w.min() < 0):
            neg = q < 0 if w is None else (w < 0).any(axis=1)
            raise EvaluationError("rate q is negative at " + _first_bad(x, np.where(neg, np.nan, 0.0)))
        if D is not None and not _all_finite(D):
            raise EvaluationError("derivative D is not finite at " + _first_bad(x, D.sum(axis=1)))
        if jumps is not None and not _all_finite(jumps):
            raise EvaluationError("jump function is not finite at " + _first_bad(x, jumps.sum(axis=(1, 2))))
    return LocalData(q=q, D=D, weights=w, jumps=jumps, table=table)


def _first_bad(x: Array, vals: Array) -> str:
    i = int(np.argmax(~np.isfinite(vals)))
    return f"state {x[i].tolist()}"


def _out(arr: Array, single: bool):
    return arr[0] if single else arr


def rate(spec: ProcessSpec, x):
    xs, single = as_states(spec, x)
    q = local_data(spec, xs).q
    return float(q[0]) if single else q


def drift(spec: ProcessSpec, x):
    """Drift ``D(x) + q(x) E[Delta(x, u)]``, coordinatewise."""
    xs, single = as_states(spec, x)
    return _out(local_data(spec, xs).drift(), single)


def diffusivity(spec: ProcessSpec, x):
    """Diffusivity ``q(x) E[Delta(x, u)^2]`` per coordinate."""
    xs, single = as_states(spec, x)
    return _out(local_data(spec, xs).square_jump_rate(), single)


def covariability_matrix(spec: ProcessSpec, x):
    """Matrix of ``q E[Delta_i Delta_j]`` over coordinates of one spec."""
    xs, single = as_states(spec, x)
    loc = local_data(spec, xs)
    J = loc.jumps
    prod = J[:, :, :, None] * J[:, :, None, :]
    if loc.weights is not None:
        cov = np.einsum("mk,mkij->mij", loc.weights, prod)
    else:
        cov = loc.q[:, None, None] * prod.mean(axis=1)
    return _out(cov, single)


def covariability(spec_x: ProcessSpec, spec_y: ProcessSpec, x, i: int = 0, j: int = 0):
    """``sigma(X, Y) = q E[Delta(X) Delta(Y)]`` for two processes driven by the same marks.

    Both specs are evaluated at the same joint state ``x``; coordinate ``i``
    of ``X`` is paired with coordinate ``j`` of ``Y``.
    """
    if type(spec_x.kernel) is not type(spec_y.kernel):
        raise CouplingError("coupled processes need kernels of the same kind")
    xs, single = as_states(spec_x, x)
    lx = local_data(spec_x, xs)
    ly = local_data(spec_y, xs)
    if lx.jumps.shape[1] != ly.jumps.shape[1]:
        raise CouplingError("coupled kernels must have the same number of entries")
    if not np.allclose(lx.q, ly.q, rtol=1e-12, atol=0.0):
        raise CouplingError("coupled processes must share the jump rate q")
    if lx.weights is not None and not np.allclose(lx.weights, ly.weights, rtol=1e-12, atol=0.0):
        raise CouplingError("coupled discrete kernels must share their weights")
    prod = lx.jumps[:, :, i] * ly.jumps[:, :, j]
    if lx.weights is not None:
        out = _weighted_sum(lx.weights, prod[:, :, None])[:, 0]
    else:
        out = lx.q * prod.mean(axis=1)
    return float(out[0]) if single else out


def drift_report(spec: ProcessSpec, x) -> DriftReport:
    xs, single = as_states(spec, x)
    loc = local_data(spec, xs)
    mu = loc.drift()
    s2 = loc.square_jump_rate()
    rho = loc.q * spec.c_delta**2
    cov = None
    if spec.dim > 1:
        cov = covariability_matrix(spec, xs)
    if single:
        return DriftReport(mu[0], s2[0], rho[0], None if cov is None else cov[0])
    return DriftReport(mu, s2, rho, cov)


def product_drift(mu_x, mu_y, x_val, y_val, sigma_xy):
    """Product rule: ``mu(XY) = mu(X) Y + X mu(Y) + sigma(X, Y)``."""
    vals = [mu_x, mu_y, x_val, y_val, sigma_xy]
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise EvaluationError("product_drift needs finite inputs")
    return mu_x * y_val + x_val * mu_y + sigma_xy


def transform_process(spec: ProcessSpec, f: Callable[[Array], Array], fprime: Callable[[Array], Array],
                      c_delta: float = math.inf) -> ProcessSpec:
    """The process ``f(X)`` with ``f`` applied to every coordinate.

    The returned spec is indexed by the state of the *driving* process:
    its rate, derivative ``f'(x) D(x)`` and jumps ``f(x + Delta) - f(x)``
    are all evaluated at ``x``.  It is meant for drift and diffusivity
    evaluation, not for simulation in its own coordinates.
    """

    def checked(v, what):
        if not np.all(np.isfinite(v)):
            raise TransformError(f"transform {what} is not finite on an evaluated state")
        return v

    def new_jumps_discrete(x):
        w, J = spec.kernel.evaluate(x)
        base = x[:, None, :]
        return checked(f(base + J), "f(x + Delta)") - checked(f(base), "f(x)")

    def new_jump_cont(x, u):
        return checked(f(x + spec.kernel.jump(x, u)), "f(x + Delta)") - checked(f(x), "f(x)")

    if isinstance(spec.kernel, DiscreteKernel):
        kernel: Kernel = DiscreteKernel(weights=spec.kernel.weights, displacements=new_jumps_discrete)
    else:
        kernel = ContinuousKernel(jump=new_jump_cont, nodes=spec.kernel.nodes)

    deriv = None
    if spec.derivative is not None:
        base_d = spec.derivative

        def deriv(x):
            return checked(fprime(x), "f'(x)") * base_d(x)

    return replace(spec, kernel=kernel, derivative=deriv, c_delta=c_delta,
                   name=f"transform({spec.name})", params=dict(spec.params))


def taylor_drift_gap_bound(sigma2: float, f_second_sup: float) -> float:
    """Bound ``sigma^2 sup|f''| / 2`` on ``|mu(f(X)) - f'(X) mu(X)|``."""
    if sigma2 < 0 or f_second_sup < 0:
        raise DomainError("taylor_drift_gap_bound needs nonnegative inputs")
    return 0.5 * sigma2 * f_second_sup


def rescale_time(spec: ProcessSpec, clock: StateFn) -> ProcessSpec:
    """Run ``spec`` on the clock ``ds = clock(x) dt``.

    Rate and derivative are divided by ``clock(x)``; the ratio of drift to
    diffusivity is unchanged.  Clocks compose multiplicatively.  Explicit
    time dependence is expressed by carrying time in the state.
    """
    if spec.clock is None:
        new_clock = clock
    else:
        old = spec.clock

        def new_clock(x):
            return np.asarray(old(x), dtype=float) * np.asarray(clock(x), dtype=float)

    return replace(spec, clock=new_clock)
