"""Monte Carlo checks of martingale identities and concentration bounds.

Every check runs one path ensemble through the engine with observers that
record per-path statistics into arrays indexed by path number.  Reductions
happen afterwards in path order, so results do not depend on chunking or
thread count.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import bounds as bc
from .core import ContinuousKernel, DiscreteKernel, LocalData, ProcessSpec, local_data, transform_process
from .engine import (
    BatchResult,
    Kind,
    Observer,
    SimConfig,
    Terminal,
    first_passage,
    run_ensemble,
)
from .errors import DomainError
from .models import SisParams, sis, sis_drift
from .report import McReport, MeanResult, QueryResult, wilson

Array = np.ndarray


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, per-path simulation settings and parallelism."""

    n_paths: int
    sim: SimConfig
    threads: int = 1
    chunk_size: int = 16384

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError("n_paths must be at least 1")
        if self.threads < 1 or self.chunk_size < 1:
            raise DomainError("threads and chunk_size must be positive")

    def with_horizon(self, T: float) -> "EnsembleConfig":
        sim = self.sim
        dt = None if sim.dt_grid == sim.T / 1e4 else sim.dt_grid
        step = None if dt is None and sim.ode_step == sim.dt_grid / 4 else sim.ode_step
        return replace(self, sim=replace(sim, T=T, dt_grid=dt, ode_step=step))


def _run(spec, x0, ens: EnsembleConfig, observers=(), stop=None, integrands=()) -> BatchResult:
    return run_ensemble(spec, x0, ens.sim, ens.n_paths, observers, stop, integrands,
                        threads=ens.threads, chunk_size=ens.chunk_size)


def _censored(res: BatchResult) -> Array:
    return (res.terminal == Terminal.TRUNCATED_RATE) | (res.terminal == Terminal.TRUNCATED_NORM)


def bound_verdict(estimate: float, half: float, bound: float, n_valid: int, audit_failures: int) -> str:
    if n_valid == 0:
        return "inconclusive"
    if audit_failures:
        return "invalid"
    return "respected" if estimate <= bound + 3 * half else "violated"


def _query(name, params, hits: Array, censored: Array, bound: bc.Bound, audit_failures=0, **extra) -> QueryResult:
    n = hits.size
    k = int(np.count_nonzero(hits | censored))
    p, lo, hi = wilson(k, n)
    half = 0.5 * (hi - lo)
    n_valid = int(n - np.count_nonzero(censored))
    return QueryResult(
        name=name, params=params, n=n, count=k, estimate=p, lo=lo, hi=hi, half_width=half,
        bound=bound.value, raw_bound=bound.raw,
        verdict=bound_verdict(p, half, bound.value, n_valid, audit_failures),
        censored_fraction=float(np.count_nonzero(censored)) / n, audit_failures=int(audit_failures), extra=extra)


def _mean_result(name, params, vals: Array, target: float, mode: str, flags: int = 0, **extra) -> MeanResult:
    """``mode`` is ``two_sided`` (``|mean - target| <= 4 se``) or ``upper`` (``mean <= target + 4 se``)."""
    ok = np.isfinite(vals)
    v = vals[ok]
    n = v.size
    mean = float(v.mean()) if n else math.nan
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    if n < 2:
        verdict = "inconclusive"
    elif mode == "two_sided":
        verdict = "respected" if abs(mean - target) <= 4 * se else "violated"
    else:
        verdict = "respected" if mean <= target + 4 * se else "violated"
    return MeanResult(name=name, params=params, n=int(vals.size), mean=mean, stderr=se, target=target,
                      mode=mode, verdict=verdict, flagged=int(flags + (vals.size - n)), extra=extra)


# observers

class _PerPath(Observer):
    def __init__(self, n_paths: int, first_index: int = 0):
        self.n = n_paths
        self.first = first_index
        self.x0 = None

    def rows(self, idx):
        # contiguous index runs become slices, which avoids gather/scatter copies
        if idx.size and int(idx[-1]) - int(idx[0]) + 1 == idx.size:
            lo = int(idx[0]) - self.first
            return slice(lo, lo + idx.size)
        return idx - self.first


class SampleEnvelopeObserver(_PerPath):
    """Marks paths where ``sign * M_t >= a + (lam/2) e^{lam c} <X>_t`` at some recorded point.

    In pure jump mode ``M`` and ``<X>`` are linear between jumps, so checking
    segment endpoints (start, both sides of every jump, end) is exact.
    """

    def __init__(self, n_paths, lams, a_vals, signs, c_delta, coordinate=0, first_index=0):
        super().__init__(n_paths, first_index)
        lams = np.asarray(lams, float)
        self.a = np.asarray(a_vals, float)
        sign = np.asarray(signs, float)
        coef = 0.5 * lams * np.exp(lams * c_delta)
        # queries sharing (sign, coef) share one running max of sign*M - coef*<X>
        pairs = sorted(set(zip(sign.tolist(), coef.tolist())))
        self.col = np.array([pairs.index(p) for p in zip(sign.tolist(), coef.tolist())])
        self.sign = np.array([p[0] for p in pairs])
        self.coef = np.array([p[1] for p in pairs])
        self.coord = coordinate
        # one row per (sign, coef) pair keeps the updates on contiguous vectors
        self.sup = np.full((len(pairs), n_paths), -np.inf)
        self.x0 = np.zeros(n_paths)

    @property
    def hit(self) -> Array:
        return self.sup[self.col].T >= self.a[None, :]

    def start(self, idx, t, x, snap):
        r = self.rows(idx)
        self.x0[r] = x[:, self.coord]
        self.point(Kind.START, idx, t, x, snap)

    def point(self, kind, idx, t, x, snap):
        r = self.rows(idx)
        M = x[:, self.coord] - self.x0[r] - snap.int_mu[:, self.coord]
        qv = snap.qvar[:, self.coord]
        for j in range(self.sign.size):
            val = (M if self.sign[j] > 0 else -M) - self.coef[j] * qv
            row = self.sup[j]
            if isinstance(r, slice):
                np.maximum(row[r], val, out=row[r])
            else:
                row[r] = np.maximum(row[r], val)


class HypothesisAudit(Observer):
    """Counts states where ``predicate(t, x, mu, sigma2, loc)`` is false."""

    def __init__(self, predicate, label: str):
        self.predicate = predicate
        self.label = label
        self.failures = 0
        self.example = None

    def state(self, idx, t, x, loc, mu, s2):
        ok = np.asarray(self.predicate(t, x, mu, s2, loc), dtype=bool)
        bad = int(np.count_nonzero(~ok))
        if bad:
            self.failures += bad
            if self.example is None:
                i = int(np.argmax(~ok))
                self.example = {"path": int(idx[i]), "t": float(t[i]), "x": x[i].tolist(),
                                "mu": mu[i].tolist(), "sigma2": s2[i].tolist()}

    def describe(self) -> dict:
        return {"hypothesis": self.label, "failures": self.failures, "example": self.example}


class _SupObserver(_PerPath):
    """Running maximum of ``fn(t, x, snap)`` over recorded points."""

    def __init__(self, n_paths, fn, first_index=0):
        super().__init__(n_paths, first_index)
        self.fn = fn
        self.sup = np.full(n_paths, -np.inf)
        self.x0 = None

    def start(self, idx, t, x, snap):
        self._upd(idx, t, x, snap)

    def point(self, kind, idx, t, x, snap):
        self._upd(idx, t, x, snap)

    def _upd(self, idx, t, x, snap):
        r = self.rows(idx)
        self.sup[r] = np.maximum(self.sup[r], self.fn(r, t, x, snap))


# martingale and sample-path checks

def _exp_integrand(spec: ProcessSpec, lam: float):
    """``x -> e^{-lam x} mu(e^{lam X})(x)`` on the first coordinate.

    For discrete kernels this is ``sum_k w_k (e^{lam Delta_k} - 1) + lam D``,
    evaluated from the jump table without forming ``e^{lam x}``; other
    kernels go through the transformed spec.
    """
    if isinstance(spec.kernel, DiscreteKernel) and not callable(spec.kernel.displacements):
        fac = np.expm1(lam * spec.kernel.displacements[:, 0])

        def g_fast(x, loc=None):
            if loc is None:
                loc = local_data(spec, x)
            w = loc.weights
            out = w[:, 0] * fac[0]
            for k in range(1, fac.size):
                out = out + w[:, k] * fac[k]
            if loc.D is not None:
                out = out + lam * loc.D[:, 0]
            return out

        g_fast.uses_local_data = True
        return g_fast
    tspec = transform_process(spec, lambda v: np.exp(lam * v), lambda v: lam * np.exp(lam * v))

    def g(x):
        loc = local_data(tspec, x)
        return loc.drift()[:, 0] * np.exp(-lam * x[:, 0])

    return g


def ensemble_checks(spec: ProcessSpec, x0, ens: EnsembleConfig, exp_lambda: Optional[float] = None,
                    sample_path: Optional[dict] = None, coordinate: int = 0, label: str = "") -> dict:
    """Run one ensemble and evaluate martingale means and sample-path exceedances together.

    ``sample_path`` has keys ``lams``, ``a_vals`` and ``signs`` (grids whose
    product is checked).  Returns a dict of McReports keyed by check name.
    """
    t_start = time.perf_counter()
    observers = []
    env = None
    if sample_path is not None:
        lams, avals, signs = sample_path["lams"], sample_path["a_vals"], sample_path["signs"]
        if len(lams) == 0 or len(avals) == 0 or len(signs) == 0:
            raise DomainError("sample-path grids must be nonempty")
        if any(not l > 0 for l in lams) or any(not a > 0 for a in avals):
            raise DomainError("lambda and a values must be positive")
        if any(s not in (1, -1) for s in signs):
            raise DomainError("signs must be +1 or -1")
        grid = [(l, a, s) for l in lams for a in avals for s in signs]
        env = SampleEnvelopeObserver(ens.n_paths, [g[0] for g in grid], [g[1] for g in grid],
                                     [g[2] for g in grid], spec.c_delta, coordinate)
        observers.append(env)
    integrands = []
    if exp_lambda is not None and exp_lambda != 0:
        integrands.append(_exp_integrand(spec, exp_lambda))
    res = _run(spec, x0, ens, observers, integrands=integrands)
    runtime = time.perf_counter() - t_start

    x0arr = np.asarray(x0, float)
    if x0arr.size == spec.dim:
        x0a = np.full(ens.n_paths, x0arr.reshape(spec.dim)[coordinate])
    else:
        x0a = x0arr.reshape(ens.n_paths, spec.dim)[:, coordinate]
    X = res.x_end[:, coordinate]
    M = X - x0a - res.int_mu[:, coordinate]
    qv = res.qvar[:, coordinate]
    cens = _censored(res)
    viol = int(res.cdelta_violations.sum())
    meta = {"model": spec.name, "params": dict(spec.params), "fingerprint": spec.fingerprint(),
            "x0": np.asarray(x0, float).ravel()[:spec.dim].tolist(), "T": ens.sim.T, "n_paths": ens.n_paths,
            "seed": ens.sim.seed, "label": label}
    out = {}
    out["martingale"] = McReport("martingale", [_mean_result("M_T", {}, M, 0.0, "two_sided")], runtime, meta)
    out["quadratic"] = McReport("quadratic", [_mean_result("M_T^2-<X>_T", {}, M * M - qv, 0.0, "two_sided",
                                                           mean_M2=float(np.mean(M * M)))], runtime, meta)
    if exp_lambda is not None:
        if exp_lambda == 0:
            logE = np.zeros(ens.n_paths)
        else:
            logE = exp_lambda * (X - x0a) - res.extra[:, 0]
        with np.errstate(over="ignore"):
            E = np.exp(logE)
        overflow = int(np.count_nonzero(~np.isfinite(E)))
        items = [_mean_result("E_T", {"lambda": exp_lambda}, E, 1.0, "two_sided", overflow),
                 _mean_result("E_T", {"lambda": exp_lambda}, E, 1.0, "upper", overflow)]
        out["exponential"] = McReport("exponential", items, runtime, meta)
    if env is not None:
        items = []
        for j, (l, a, s) in enumerate(grid):
            b = bc.Bound.of(math.exp(-l * a))
            items.append(_query("sample_path", {"lambda": l, "a": a, "sign": s}, env.hit[:, j], cens, b, viol))
        out["sample_path"] = McReport("sample_path", items, runtime, meta,
                                      audits=[{"hypothesis": "jump size <= c_delta", "failures": viol}])
    return out


def verify_sample_path(spec, x0, ens, lams, a_vals, signs=(1, -1)) -> McReport:
    return ensemble_checks(spec, x0, ens, sample_path={"lams": lams, "a_vals": a_vals, "signs": signs})["sample_path"]


def exponential_martingale_check(spec, x0, ens, lam: float) -> McReport:
    return ensemble_checks(spec, x0, ens, exp_lambda=lam)["exponential"]


def quadratic_martingale_check(spec, x0, ens) -> McReport:
    return ensemble_checks(spec, x0, ens)["quadratic"]


# lemma checks

def _within(x, lo, hi):
    return (x > lo) & (x < hi)


def verify_lemma(spec: ProcessSpec, x0, ens: EnsembleConfig, query, ell: Optional[float] = None,
                 tol: float = 1e-12) -> McReport:
    """Empirical probability of the event bounded by one of the lemma queries.

    ``x0`` is one state or per-path initial values.  The lemma hypotheses
    are audited at every state a path occupies before its stopping time; any
    violation marks the report invalid.  ``ell`` is the growth rate in the
    linear drift lemma.  The horizon of ``ens`` is replaced by the lemma's
    own horizon where the lemma fixes one.
    """
    t_start = time.perf_counter()
    x0 = np.asarray(x0, float)
    x0_paths = np.broadcast_to(x0.reshape(-1), (ens.n_paths,)) if x0.size in (1, ens.n_paths) else None
    if x0_paths is None or spec.dim != 1:
        raise DomainError("lemma checks need a one-dimensional spec and one x0 or one per path")
    audits = []
    observers = []
    stop = None
    extra = {}
    cd = spec.c_delta
    T = ens.sim.T
    name = type(query).__name__

    def jumps_bounded(t, x, mu, s2, loc):
        return loc.local_cdelta() <= cd * (1 + tol)

    if isinstance(query, bc.LinearDrift):
        if ell is None or not ell >= 0:
            raise DomainError("the linear drift lemma needs a growth rate ell >= 0")
        if np.any(x0_paths <= 0):
            raise DomainError("the linear drift lemma needs x0 > 0")
        if query.C_opt is None:
            def hyp(t, x, mu, s2, loc):
                nondecr = np.all(np.where(loc.weights > 0, loc.jumps[:, :, 0] >= 0, True), axis=1) \
                    if loc.weights is not None else np.all(loc.jumps[:, :, 0] >= 0, axis=1)
                return (mu[:, 0] <= ell * x[:, 0] * (1 + tol)) & nondecr & (x[:, 0] >= 0)
            label = "nondecreasing, mu <= ell X"
        else:
            C = query.C_opt

            def hyp(t, x, mu, s2, loc):
                return (mu[:, 0] <= ell * x[:, 0] * (1 + tol)) & (s2[:, 0] <= C * mu[:, 0] * (1 + tol))
            label = "mu <= ell X, sigma2 <= C mu"
        x0p = x0_paths

        def yfn(r, t, x, snap):
            return x[:, 0] / (x0p[r] * np.exp(ell * t))

        sup = _SupObserver(ens.n_paths, yfn)
        observers.append(sup)
        y = query.y
        kernels = np.array([bc.linear_drift_bound(y, float(v), query.c_eff).raw for v in x0_paths])
        bound = bc.Bound.of(float(kernels.mean()))
        audit = HypothesisAudit(hyp, label)
        run_T = T

        def event(res):
            return sup.sup >= y
    elif isinstance(query, bc.DriftBarrier):
        r = bc.drift_barrier_bound(query)
        if np.any(x0_paths > query.x / 2):
            raise DomainError("the drift barrier lemma conditions on X0 <= x/2")
        if cd > query.c * (1 + tol):
            raise DomainError("c must bound the jump size c_delta")
        xb = query.x

        def hyp(t, x, mu, s2, loc):
            inside = _within(x[:, 0], 0.0, xb)
            ok = (mu[:, 0] <= -query.mu * (1 - tol)) & (np.abs(mu[:, 0]) <= query.C_mu * (1 + tol)) \
                & (s2[:, 0] <= query.sigma2 * (1 + tol))
            return ~inside | ok
        label = "0 < X < x implies mu <= -mu, |mu| <= C_mu, sigma2 <= sigma2"
        audit = HypothesisAudit(hyp, label)
        run_T = query.k * r.t0
        bound = r.bound
        extra = {"t0": r.t0, "log_kappa": r.log_kappa, "t0_tight": r.t0_tight}

        def stop(t, x):
            return x[:, 0] >= xb

        def event(res):
            return res.terminal == Terminal.STOPPED
    elif isinstance(query, bc.DriftEscape):
        r = bc.drift_escape_bound(query)
        if np.any(x0_paths < 0):
            raise DomainError("the drift escape lemma conditions on X0 >= 0")
        if cd > query.c_delta * (1 + tol):
            raise DomainError("query c_delta must bound the spec's jump size")

        def hyp(t, x, mu, s2, loc):
            return (mu[:, 0] >= query.mu * (1 - tol)) & (s2[:, 0] <= query.sigma2 * (1 + tol))
        label = "mu >= mu, sigma2 <= sigma2 before T_x"
        audit = HypothesisAudit(hyp, label)
        run_T = r.T
        bound = r.bound
        extra = {"T": r.T, "log_kappa": r.log_kappa}
        xb = query.x

        def stop(t, x):
            return x[:, 0] >= xb

        def event(res):
            return res.terminal == Terminal.HORIZON
    elif isinstance(query, bc.DiffusiveBarrier):
        r = bc.diffusive_barrier_bound(query)
        if np.any(x0_paths > 0):
            raise DomainError("the diffusive barrier lemma conditions on X0 <= 0")
        if cd > query.c_delta * (1 + tol):
            raise DomainError("query c_delta must bound the spec's jump size")

        def hyp(t, x, mu, s2, loc):
            return mu[:, 0] <= tol
        label = "mu <= 0 before T_x"
        audit = HypothesisAudit(hyp, label)
        run_T = T
        bound = r.bound
        extra = {"log_kappa": r.log_kappa, "gamma": r.gamma, "a": r.a}
        xb = query.x

        def stop(t, x):
            return x[:, 0] >= xb

        def event(res):
            return res.terminal == Terminal.STOPPED
    elif isinstance(query, bc.DiffusiveEscape):
        r = bc.diffusive_escape_bound(query)
        if np.any(x0_paths < 0):
            raise DomainError("the diffusive escape lemma conditions on X0 >= 0")
        if cd > query.c_delta * (1 + tol):
            raise DomainError("query c_delta must bound the spec's jump size")

        def hyp(t, x, mu, s2, loc):
            rho = loc.q * cd**2
            return (np.abs(mu[:, 0]) <= query.C_mu * (1 + tol)) & (s2[:, 0] >= query.sigma2 * (1 - tol)) \
                & (rho <= query.rho * (1 + tol))
        label = "|mu| <= C_mu, sigma2 >= sigma2, rho <= rho before T_x"
        audit = HypothesisAudit(hyp, label)
        run_T = r.T
        bound = r.bound
        extra = {"T": r.T, "log_kappa": r.log_kappa, "gamma": r.gamma, "a": r.a}
        xb = query.x

        def stop(t, x):
            return np.abs(x[:, 0]) >= xb

        def event(res):
            return res.terminal == Terminal.HORIZON
    else:
        raise DomainError(f"unsupported lemma query {query!r}")

    observers.append(audit)
    jump_audit = HypothesisAudit(jumps_bounded, "jump size <= c_delta")
    observers.append(jump_audit)
    run_ens = ens.with_horizon(run_T)
    res = _run(spec, x0_paths if x0.size > 1 else float(x0.reshape(-1)[0]), run_ens, observers, stop)
    hits = event(res)
    post_audit = 0
    if isinstance(query, bc.DiffusiveBarrier):
        # the weight uses <X>_T, so the realized quadratic variation must stay below it
        over = res.qvar[:, 0] > query.qvar_T * (1 + tol)
        post_audit = int(np.count_nonzero(over))
        audits.append({"hypothesis": "<X>_T <= qvar_T", "failures": post_audit})
    audits = [audit.describe(), jump_audit.describe()] + audits
    failures = audit.failures + jump_audit.failures + post_audit
    params = {k: getattr(query, k) for k in query.__dataclass_fields__}
    if ell is not None:
        params["ell"] = ell
    extra["horizon"] = run_T
    q = _query(name, params, np.asarray(hits, bool), _censored(res), bound, failures, **extra)
    meta = {"model": spec.name, "params": dict(spec.params), "fingerprint": spec.fingerprint(),
            "n_paths": ens.n_paths, "seed": ens.sim.seed}
    return McReport(f"lemma:{name}", [q], time.perf_counter() - t_start, meta, audits=audits)


# deterministic flows

class FlowSolution:
    """RK4 solution of ``x' = field(x)`` on a uniform grid with cubic Hermite interpolation."""

    def __init__(self, t: Array, x: Array, dx: Array):
        self.t, self.x, self.dx = t, x, dx

    def __call__(self, t) -> Array:
        t = np.asarray(t, float)
        h = self.t[1] - self.t[0]
        i = np.clip(np.floor(t / h).astype(np.int64), 0, self.t.size - 2)
        s = ((t - self.t[i]) / h)[:, None]
        x0, x1 = self.x[i], self.x[i + 1]
        d0, d1 = self.dx[i] * h, self.dx[i + 1] * h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * x0 + h10 * d0 + h01 * x1 + h11 * d1


def deterministic_spec(drift_field: Callable[[Array], Array], dim: int = 1, name: str = "flow") -> ProcessSpec:
    """A spec with no jumps that follows ``x' = drift_field(x)``."""
    kern = DiscreteKernel(lambda x: np.zeros((x.shape[0], 1)), np.zeros((1, dim)))
    return ProcessSpec(kern, c_delta=1.0, dim=dim, derivative=drift_field, name=name)


def solve_flow(drift_field: Callable[[Array], Array], x0, T: float, dt: float, dim: int = 1) -> FlowSolution:
    """Integrate the flow with the engine's RK4 and record every ``dt``."""
    from .engine import simulate
    spec = deterministic_spec(drift_field, dim)
    steps = int(math.ceil(T / dt - 1e-9))
    Tg = steps * dt
    path = simulate(spec, x0, SimConfig(T=Tg, dt_grid=dt, ode_step=dt))
    keep = (path.kind == Kind.START) | (path.kind == Kind.GRID) | (path.kind == Kind.END)
    t, x = path.t[keep], path.x[keep]
    _, idx = np.unique(t, return_index=True)
    t, x = t[idx], x[idx]
    dx = np.asarray(drift_field(x), float).reshape(x.shape)
    return FlowSolution(t, x, dx)


def verify_ode_approx(spec: ProcessSpec, x0, ens: EnsembleConfig, delta: float, L: float,
                      c_rho: float, drift_field: Callable[[Array], Array], flow_dt: Optional[float] = None
                      ) -> McReport:
    """Probability that ``sup_t |x_t - phi_t(x0)|`` reaches ``e^{LT} delta`` before ``T``.

    ``phi`` is computed by the engine's integrator with the jumps switched
    off.  Deviations are measured in the l1 norm at every recorded point;
    between jumps ``x`` is constant, so endpoints are exact whenever each
    coordinate of ``phi`` is monotone on the segment.
    """
    t_start = time.perf_counter()
    T = ens.sim.T
    ob = bc.ode_approx_bound(delta, c_rho, spec.c_delta, T, L)
    x0a = np.asarray(x0, float).reshape(spec.dim)
    phi = solve_flow(drift_field, x0a, T, flow_dt or min(1e-3, T / 1000), spec.dim)
    if not spec.pure_jump:
        raise DomainError("verify_ode_approx expects a pure jump spec")

    def dev(r, t, x, snap):
        return np.abs(x - phi(t)).sum(axis=1)

    sup = _SupObserver(ens.n_paths, dev)
    res = _run(spec, x0a, ens, [sup])
    hits = sup.sup >= ob.radius
    viol = int(res.cdelta_violations.sum())
    q = _query("ode_approx", {"delta": delta, "L": L, "c_rho": c_rho, "T": T}, hits, _censored(res), ob.bound,
               viol, radius=ob.radius, max_deviation=float(sup.sup.max()),
               mean_sup_deviation=float(sup.sup.mean()))
    meta = {"model": spec.name, "params": dict(spec.params), "fingerprint": spec.fingerprint(),
            "x0": x0a.tolist(), "n_paths": ens.n_paths, "seed": ens.sim.seed}
    return McReport("ode_approx", [q], time.perf_counter() - t_start, meta,
                    audits=[{"hypothesis": "jump size <= c_delta", "failures": viol}])


# logistic model

def flow_time(x0: float, x: float, lam: float, delta: float) -> float:
    """Time for the flow ``x' = -x (delta + lam x)`` to move from ``x0`` down to ``x``."""
    if not delta > 0:
        raise DomainError("flow_time needs delta > 0")
    if not lam >= 0:
        raise DomainError("flow_time needs lam >= 0")
    if not 0 < x <= x0:
        raise DomainError("flow_time needs 0 < x <= x0")
    return (math.log(x0 / x) - math.log((delta + lam * x0) / (delta + lam * x))) / delta


def flow_time_rk4(x0: float, x: float, lam: float, delta: float, steps: int = 4000) -> float:
    """Same time by RK4 quadrature of ``dt/du = 1/(delta + lam e^u)`` with ``u = log x``."""
    if not (delta > 0 and 0 < x <= x0):
        raise DomainError("flow_time_rk4 needs delta > 0 and 0 < x <= x0")
    u0, u1 = math.log(x), math.log(x0)
    h = (u1 - u0) / steps
    g = lambda u: 1.0 / (delta + lam * math.exp(u))
    t = 0.0
    u = u0
    for _ in range(steps):
        t += h / 6 * (g(u) + 4 * g(u + h / 2) + g(u + h))
        u += h
    return t


@dataclass(frozen=True)
class IntermediatePhase:
    x_star: float
    t_star: float
    eps: float
    gamma: float
    a: float
    log_kappa: float
    kappa: float
    raw_bound: float


def intermediate_phase_params(n: int, lam: float, x0: float) -> IntermediatePhase:
    p = SisParams(n, lam)
    delta, d0 = p.delta, p.delta0
    if not delta > 0:
        raise DomainError("the intermediate phase needs lam < 1")
    if not lam > 0:
        raise DomainError("the intermediate phase needs lam > 0")
    lo, hi = d0 ** 0.25 / math.sqrt(n), d0 ** 1.25 / math.sqrt(n)
    if not lo <= x0 <= hi:
        raise DomainError(f"x0={x0!r} is outside the intermediate band [{lo!r}, {hi!r}]")
    x_star = lo
    t_star = flow_time(x0, x_star, lam, delta)
    eps = d0 ** (1 / 6) / math.sqrt(n) / 2
    g = n * eps * lam / (1 + lam)
    a = (eps - 1 / n) / 2
    if not a > 0:
        raise DomainError("n is too small for a positive deviation offset")
    k = bc.kappa(bc.KappaQuery(g, a, 1.0 / n))
    return IntermediatePhase(x_star, t_star, eps, g, a, k.log_kappa, k.kappa, 6.0 * math.exp(-k.log_kappa / 2))


def logistic_intermediate_phase(n: int, lam: float, ens: EnsembleConfig, x0: Optional[float] = None) -> McReport:
    """Deviation of the SIS density from ``x*`` at the time the flow from ``x0`` reaches ``x*``.

    ``x0`` defaults to ``delta0^{3/4} n^{-1/2}``.  The horizon of ``ens`` is
    replaced by ``t*``.
    """
    t_start = time.perf_counter()
    p = SisParams(n, lam)
    if x0 is None:
        x0 = p.delta0 ** 0.75 / math.sqrt(n)
    ip = intermediate_phase_params(n, lam, x0)
    # start on the lattice
    x0_lat = round(x0 * n) / n
    t_star = flow_time(x0_lat, ip.x_star, lam, p.delta)
    spec = sis(p)
    res = _run(spec, x0_lat, ens.with_horizon(t_star))
    dev = np.abs(res.x_end[:, 0] - ip.x_star)
    hits = dev > 2 * ip.eps
    q = _query("intermediate_phase", {"n": n, "lam": lam, "x0": x0_lat}, hits, _censored(res),
               bc.Bound.of(ip.raw_bound), int(res.cdelta_violations.sum()),
               x_star=ip.x_star, t_star=t_star, eps=ip.eps, gamma=ip.gamma, a=ip.a,
               log_kappa=ip.log_kappa, kappa=ip.kappa, mean_x_end=float(res.x_end[:, 0].mean()))
    meta = {"model": spec.name, "params": dict(spec.params), "fingerprint": spec.fingerprint(),
            "n_paths": ens.n_paths, "seed": ens.sim.seed}
    return McReport("intermediate_phase", [q], time.perf_counter() - t_start, meta)


def flow_time_engine(x0: float, x: float, lam: float, delta: float, ode_step: float = 1e-3) -> float:
    """Flow time measured by the engine: first passage of the jump-free SIS flow below ``x``."""
    spec = deterministic_spec(lambda v: -v * (delta + lam * v), name="sis_flow")
    horizon = 2 * flow_time(x0, x, lam, delta) + 1.0
    steps = math.ceil(horizon / ode_step)
    cfg = SimConfig(T=steps * ode_step, dt_grid=ode_step, ode_step=ode_step, hazard_tol=1e-13)
    fp = first_passage(spec, x0, cfg, level=x, direction=-1)
    if fp.time is None:
        raise DomainError("flow did not reach the level")
    return fp.time
