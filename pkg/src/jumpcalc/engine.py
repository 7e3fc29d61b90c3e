"""Event-driven simulation of hybrid jump processes.

Paths are advanced in lockstep batches.  Between jumps the state follows
``x' = D(x)`` (classical RK4 with fixed steps) while the hazard
``Lambda = int q ds`` accumulates; a jump fires when the hazard crosses a
unit exponential threshold, localized by bisection on the last step.  For
pure jump specs (``D == 0``) the hazard is linear between jumps and the jump
time is computed in closed form.

The compensator ``int mu ds``, the predictable quadratic variation
``int sigma^2 ds`` and any extra integrands are integrated by the same rule
as the hazard, so ``M = X - X_0 - int mu ds`` is consistent at event times.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .core import LocalData, ProcessSpec, as_states, local_data, row_sum
from .errors import ContractViolation, DomainError, EvaluationError, SimulationError, SpecMismatchError

Array = np.ndarray


class Terminal(enum.IntEnum):
    HORIZON = 0
    STOPPED = 1
    TRUNCATED_RATE = 2
    TRUNCATED_NORM = 3


class Kind(enum.IntEnum):
    """Role of a recorded point along a path."""

    START = 0
    GRID = 1
    PRE = 2
    POST = 3
    STEP = 4
    END = 5


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; ``dt_grid`` defaults to ``T/1e4`` and ``ode_step`` to ``dt_grid/4``."""

    T: float
    dt_grid: Optional[float] = None
    ode_step: Optional[float] = None
    hazard_tol: float = 1e-10
    q_max: float = math.inf
    x_max: float = math.inf
    seed: int = 0
    path_index: int = 0
    debug: bool = False

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError("horizon T must be positive and finite")
        dt = self.T / 1e4 if self.dt_grid is None else float(self.dt_grid)
        step = dt / 4 if self.ode_step is None else float(self.ode_step)
        object.__setattr__(self, "dt_grid", dt)
        object.__setattr__(self, "ode_step", step)
        if not (dt > 0 and step > 0 and self.hazard_tol > 0 and self.q_max > 0 and self.x_max > 0):
            raise DomainError("dt_grid, ode_step, hazard_tol, q_max and x_max must be positive")
        if step > dt * (1 + 1e-12):
            raise DomainError("ode_step must not exceed dt_grid")
        if self.path_index < 0:
            raise DomainError("path_index must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("T", "dt_grid", "ode_step", "hazard_tol", "q_max", "x_max", "seed", "path_index", "debug")}


@dataclass(frozen=True)
class JumpEvent:
    t: float
    u: float
    pre: Array
    post: Array


@dataclass
class Path:
    """One simulated trajectory.

    ``grid`` holds every recorded point: the start, grid times, both sides
    of each jump and the end.  Columns are time, state, accumulated
    ``int mu ds`` and accumulated ``int sigma^2 ds``.
    """

    x0: Array
    events: list
    t: Array
    x: Array
    int_mu: Array
    qvar: Array
    kind: Array
    terminal: Terminal
    spec_fingerprint: str
    config: SimConfig

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def x_end(self) -> Array:
        return self.x[-1]


@dataclass
class PathStatistics:
    t: Array
    X: Array
    Xbar: Array
    M: Array
    qvar: Array
    kind: Array


class Snapshot:
    """Accumulated integrals handed to observers at a point, gathered on first access."""

    __slots__ = ("_src", "_rows", "_cache", "u")

    def __init__(self, int_mu=None, qvar=None, extra=None, n_jumps=None, u=None, src=None, rows=None):
        self._src = src
        self._rows = rows
        self._cache = {} if src is not None else {"int_mu": int_mu, "qvar": qvar, "extra": extra,
                                                  "n_jumps": n_jumps}
        self.u = u

    def _get(self, name):
        v = self._cache.get(name)
        if v is None:
            v = getattr(self._src, name)[self._rows]
            self._cache[name] = v
        return v

    @property
    def int_mu(self) -> Array:
        return self._get("int_mu")

    @property
    def qvar(self) -> Array:
        return self._get("qvar")

    @property
    def extra(self) -> Array:
        return self._get("extra")

    @property
    def n_jumps(self) -> Array:
        return self._get("n_jumps")


class Observer:
    """Receives points of many paths; ``idx`` are global path indices."""

    def start(self, idx: Array, t: Array, x: Array, snap: Snapshot) -> None:
        pass

    def state(self, idx: Array, t: Array, x: Array, loc: LocalData, mu: Array, s2: Array) -> None:
        """Local data at a state the path occupies from time ``t`` on."""

    def point(self, kind: Kind, idx: Array, t: Array, x: Array, snap: Snapshot) -> None:
        pass


@dataclass
class BatchResult:
    path_index: Array
    terminal: Array
    t_end: Array
    x_end: Array
    int_mu: Array
    qvar: Array
    extra: Array
    n_jumps: Array
    cdelta_violations: Array

    @staticmethod
    def concat(parts: Sequence["BatchResult"]) -> "BatchResult":
        return BatchResult(*[np.concatenate([getattr(p, f) for p in parts])
                             for f in BatchResult.__dataclass_fields__])


StopFn = Callable[[Array, Array], Array]
Integrand = Callable[[Array], Array]


def _as_slice(rows: Array):
    """Contiguous index runs as slices, so that gathers are views."""
    if rows.size and int(rows[-1]) - int(rows[0]) + 1 == rows.size:
        return slice(int(rows[0]), int(rows[0]) + rows.size)
    return rows


def _norm1(v: Array) -> Array:
    return np.abs(v).sum(axis=-1)


def _select_jumps(loc: LocalData, rows, u: Array) -> Optional[Array]:
    """Displacements chosen by marks ``u`` for the local rows ``rows``.

    Entry ``i`` is chosen when ``c[i-1] < u q <= c[i]`` for the cumulative
    weights ``c``; continuous kernels return None (the caller evaluates the
    jump at ``u``).
    """
    if loc.weights is None:
        return None
    w = loc.weights[rows]
    K = w.shape[1]
    target = u * row_sum(w)
    acc = w[:, 0].copy()
    k = np.zeros(w.shape[0], dtype=np.intp)
    for i in range(1, K):
        k += acc < target
        acc += w[:, i]
    if loc.table is not None:
        return loc.table[k]
    return loc.jumps[rows][np.arange(k.size), k, :]


class _Run:
    """State of one batch of paths."""

    def __init__(self, spec, x0, cfg, path_indices, observers, stop, integrands):
        self.spec = spec
        self.cfg = cfg
        self.gidx = np.asarray(path_indices, dtype=np.int64)
        m = self.gidx.size
        d = spec.dim
        x0 = np.asarray(x0, dtype=float)
        if x0.ndim == 1 and d == 1 and x0.size == m and m > 1:
            x0 = x0[:, None]
        elif x0.ndim <= 1 or (x0.ndim == 2 and x0.shape[0] == 1):
            if x0.size != d:
                raise DomainError(f"initial state has {x0.size} coordinates, spec expects {d}")
            x0 = np.repeat(x0.reshape(1, d), m, axis=0)
        if x0.shape != (m, d):
            raise DomainError(f"initial states have shape {x0.shape}, expected {(m, d)}")
        self.x = x0.copy()
        self.t = np.zeros(m)
        self.imu = np.zeros((m, d))
        self.is2 = np.zeros((m, d))
        self.k = len(integrands)
        self.ext = np.zeros((m, self.k))
        self.nj = np.zeros(m, dtype=np.int64)
        self.term = np.full(m, int(Terminal.HORIZON), dtype=np.int64)
        self.viol = np.zeros(m, dtype=np.int64)
        self.keys = rng.stream_keys(cfg.seed, self.gidx)
        self.observers = list(observers)
        self.stop = stop
        self.integrands = list(integrands)
        # a constant jump table within c_delta needs no per-jump check
        disp = getattr(spec.kernel, "displacements", None)
        self.table_ok = isinstance(disp, np.ndarray) and bool(
            np.all(_norm1(disp) <= spec.c_delta * (1 + 1e-9)))

    # observer fan-out
    @property
    def int_mu(self):
        return self.imu

    @property
    def qvar(self):
        return self.is2

    @property
    def extra(self):
        return self.ext

    @property
    def n_jumps(self):
        return self.nj

    def snap(self, rows, u=None):
        return Snapshot(src=self, rows=_as_slice(rows), u=u)

    def emit(self, kind, rows, x=None, u=None):
        if not self.observers or rows.size == 0:
            return
        s = self.snap(rows, u)
        xx = self.x[_as_slice(rows)] if x is None else x
        for ob in self.observers:
            ob.point(kind, self.gidx[rows], self.t[rows], xx, s)

    def extras(self, xs, loc=None):
        if not self.k:
            return np.zeros((xs.shape[0], 0))
        vals = []
        for g in self.integrands:
            v = g(xs, loc) if loc is not None and getattr(g, "uses_local_data", False) else g(xs)
            vals.append(np.asarray(v, dtype=float).reshape(xs.shape[0]))
        return np.stack(vals, axis=1)

    def begin(self) -> Array:
        rows = np.arange(self.gidx.size)
        if self.observers:
            s = self.snap(rows)
            for ob in self.observers:
                ob.start(self.gidx, self.t.copy(), self.x.copy(), s)
        return self.filter_stops(rows)

    def filter_stops(self, rows):
        if rows.size == 0 or (self.stop is None and self.cfg.x_max == math.inf):
            return rows
        keep = np.ones(rows.size, dtype=bool)
        if self.stop is not None:
            st = np.asarray(self.stop(self.t[rows], self.x[rows]), dtype=bool).reshape(rows.size)
            self.term[rows[st]] = Terminal.STOPPED
            keep &= ~st
        big = _norm1(self.x[rows]) >= self.cfg.x_max
        newly = big & keep
        self.term[rows[newly]] = Terminal.TRUNCATED_NORM
        keep &= ~big
        self.emit(Kind.END, rows[~keep])
        return rows[keep]

    def check_jumps(self, rows, disp):
        if self.table_ok:
            return
        bad = _norm1(disp) > self.spec.c_delta * (1 + 1e-9)
        if bad.any():
            self.viol[rows[bad]] += 1
            if self.cfg.debug:
                i = rows[bad][0]
                raise ContractViolation(
                    f"jump {disp[bad][0].tolist()} exceeds c_delta={self.spec.c_delta} "
                    f"at path {int(self.gidx[i])}, t={self.t[i]!r}")

    def truncate_rate(self, rows, q):
        over = q >= self.cfg.q_max
        if np.any(over):
            self.term[rows[over]] = Terminal.TRUNCATED_RATE
            self.emit(Kind.END, rows[over])
        return ~over

    def result(self) -> BatchResult:
        return BatchResult(self.gidx, self.term, self.t, self.x, self.imu, self.is2, self.ext,
                           self.nj, self.viol)


def _apply_jump(run: _Run, loc: LocalData, lrows, rows: Array, u: Array, xpre: Array) -> Array:
    disp = _select_jumps(loc, lrows, u)
    if disp is None:
        disp = np.asarray(run.spec.kernel.jump(xpre, u), dtype=float).reshape(xpre.shape)
    run.check_jumps(rows, disp)
    xpost = xpre + disp
    if not np.isfinite(xpost.sum()) and not np.all(np.isfinite(xpost)):
        i = int(np.argmax(~np.all(np.isfinite(xpost), axis=1)))
        raise SimulationError("jump produced a non-finite state", float(run.t[rows[i]]))
    return xpost


def _emit_grid_points(run: _Run, rows, t_old, t_new, mu, s2, ex):
    # x is constant on the segment, integrals are linear in time
    dt = run.cfg.dt_grid
    for j, r in enumerate(rows):
        k0 = math.floor(t_old[j] / dt) + 1
        while k0 * dt < t_new[j]:
            g = k0 * dt
            tau = g - t_old[j]
            snap = Snapshot((run.imu[r] + mu[j] * tau)[None], (run.is2[r] + s2[j] * tau)[None],
                            (run.ext[r] + ex[j] * tau)[None], run.nj[r:r + 1])
            for ob in run.observers:
                ob.point(Kind.GRID, run.gidx[r:r + 1], np.array([g]), run.x[r:r + 1], snap)
            k0 += 1


def _run_pure_jump(run: _Run, emit_grid: bool, rate_bound: Optional[float]) -> None:
    cfg, spec = run.cfg, run.spec
    T = cfg.T
    thinning = rate_bound is not None
    # draw pairs consumed per path; equals the jump count unless thinning rejects candidates
    draws = run.nj.copy()
    act = run.begin()
    while act.size:
        sl = _as_slice(act)
        xa = run.x[sl]
        loc = local_data(spec, xa)
        if cfg.q_max < math.inf:
            ok = run.truncate_rate(act, loc.q)
            if not ok.all():
                act, xa, loc = act[ok], xa[ok], loc.subset(ok)
                if act.size == 0:
                    break
                sl = _as_slice(act)
        mu = loc.drift()
        s2 = loc.square_jump_rate()
        ex = run.extras(xa, loc)
        for ob in run.observers:
            ob.state(run.gidx[sl], run.t[sl], xa, loc, mu, s2)
        keys = run.keys[sl]
        ctr = draws[sl]
        E = rng.exponential(keys, 2 * ctr)
        if thinning:
            if loc.q.max() > rate_bound:
                raise DomainError(f"rate {loc.q.max()!r} exceeds the thinning bound {rate_bound!r}")
            dt = E / rate_bound
        else:
            with np.errstate(divide="ignore"):
                dt = E / loc.q
        t_old = run.t[sl]
        tj = t_old + dt
        jump = tj < T
        tn = np.where(jump, tj, T)
        tau = (tn - t_old)[:, None]
        if emit_grid and run.observers:
            _emit_grid_points(run, act, t_old, tn, mu, s2, ex)
        run.imu[sl] += mu * tau
        run.is2[sl] += s2 * tau
        if run.k:
            run.ext[sl] += ex * tau
        run.t[sl] = tn
        all_jump = bool(jump.all())
        if not all_jump:
            run.emit(Kind.END, act[~jump])
            lrows = np.nonzero(jump)[0]
            rows = act[lrows]
        else:
            lrows = slice(None)
            rows = act
        if rows.size == 0:
            break
        rsl = _as_slice(rows)
        u = rng.uniform(run.keys[rsl], 2 * draws[rsl] + 1)
        draws[rsl] += 1
        rejected = None
        if thinning:
            # accept with probability q/B and reuse the scaled mark
            qj = loc.q[lrows]
            scaled = u * rate_bound
            acc = scaled <= qj
            if not acc.all():
                rejected = rows[~acc]
                lrows = np.nonzero(jump)[0][acc] if not all_jump else np.nonzero(acc)[0]
                rows = rows[acc]
                rsl = _as_slice(rows)
            u = scaled[acc] / qj[acc]
        xpre = run.x[rsl]
        xpost = _apply_jump(run, loc, lrows, rows, u, xpre)
        run.emit(Kind.PRE, rows)
        run.x[rsl] = xpost
        run.nj[rsl] += 1
        run.emit(Kind.POST, rows, u=u)
        cont = run.filter_stops(rows)
        act = cont if rejected is None else np.sort(np.concatenate([cont, rejected]))


def _rk4_parts(spec: ProcessSpec, run: _Run, x: Array):
    loc = local_data(spec, x)
    D = loc.D if loc.D is not None else np.zeros_like(x)
    return loc, D, loc.q, loc.drift(), loc.square_jump_rate(), run.extras(x, loc)


def _rk4(spec, run, x, k1, h):
    """One RK4 step of the augmented system from ``x`` with per-path steps ``h``."""
    _, D1, q1, m1, s1, e1 = k1
    hh = h[:, None]
    x2 = x + 0.5 * hh * D1
    _, D2, q2, m2, s2, e2 = _rk4_parts(spec, run, x2)
    x3 = x + 0.5 * hh * D2
    _, D3, q3, m3, s3, e3 = _rk4_parts(spec, run, x3)
    x4 = x + hh * D3
    _, D4, q4, m4, s4, e4 = _rk4_parts(spec, run, x4)
    c = hh / 6.0
    dx = c * (D1 + 2 * D2 + 2 * D3 + D4)
    dlam = h / 6.0 * (q1 + 2 * q2 + 2 * q3 + q4)
    dmu = c * (m1 + 2 * m2 + 2 * m3 + m4)
    ds2 = c * (s1 + 2 * s2 + 2 * s3 + s4)
    dex = c * (e1 + 2 * e2 + 2 * e3 + e4)
    return x + dx, dlam, dmu, ds2, dex


def _take(k1, sel):
    loc, D, q, m, s, e = k1
    return loc.subset(sel), D[sel], q[sel], m[sel], s[sel], e[sel]


def _bisect(spec, run, x, k1, h, lo, hi, n_iter, test):
    """Shrink ``[lo, hi]`` (fractions of ``h``) keeping ``test`` false at lo and true at hi."""
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        res = _rk4(spec, run, x, k1, mid * h)
        cond = test(mid, res)
        hi = np.where(cond, mid, hi)
        lo = np.where(cond, lo, mid)
    return hi


def _run_flow(run: _Run) -> None:
    cfg, spec = run.cfg, run.spec
    T = cfg.T
    m = run.gidx.size
    lam = np.zeros(m)
    thresh = np.zeros(m)
    gk = np.zeros(m, dtype=np.int64)
    n_iter = max(1, math.ceil(math.log2(cfg.ode_step / cfg.hazard_tol)) + 1)
    act = run.begin()
    thresh[act] = rng.exponential(run.keys[act], 2 * run.nj[act])
    while act.size:
        xa = run.x[act]
        try:
            k1 = _rk4_parts(spec, run, xa)
        except EvaluationError as e:
            if not np.any(run.t[act] > 0):
                raise
            raise SimulationError(f"integrator left the evaluable region: {e}", float(run.t[act].min())) from e
        ok = run.truncate_rate(act, k1[2])
        if not np.all(ok):
            act, xa, k1 = act[ok], xa[ok], _take(k1, ok)
            if act.size == 0:
                break
        for ob in run.observers:
            ob.state(run.gidx[act], run.t[act], xa, k1[0], k1[3], k1[4])
        ta = run.t[act]
        gnext = (gk[act] + 1) * cfg.dt_grid
        h = np.minimum(np.minimum(cfg.ode_step, gnext - ta), T - ta)
        h = np.maximum(h, 0.0)
        try:
            xn, dlam, dmu, ds2, dex = _rk4(spec, run, xa, k1, h)
        except EvaluationError as e:
            # a stage state left the region where the model is finite
            raise SimulationError(f"integrator step failed: {e}", float(ta.min())) from e
        if not np.all(np.isfinite(xn)):
            i = int(np.argmax(~np.all(np.isfinite(xn), axis=1)))
            raise SimulationError("integrator produced a non-finite state", float(ta[i]))
        frac = np.ones(act.size)
        cross = lam[act] + dlam >= thresh[act]
        if np.any(cross):
            ci = np.nonzero(cross)[0]
            lam0, th0 = lam[act[ci]], thresh[act[ci]]
            kc = _take(k1, ci)
            frac[ci] = _bisect(spec, run, xa[ci], kc, h[ci], np.zeros(ci.size), np.ones(ci.size), n_iter,
                               lambda mid, res: lam0 + res[1] >= th0)
            xc, dl, dm, dsv, de = _rk4(spec, run, xa[ci], kc, frac[ci] * h[ci])
            xn[ci], dlam[ci], dmu[ci], ds2[ci], dex[ci] = xc, dl, dm, dsv, de
        stopped = np.zeros(act.size, dtype=bool)
        if run.stop is not None:
            tend = ta + frac * h
            st = np.asarray(run.stop(tend, xn), dtype=bool).reshape(act.size)
            if np.any(st):
                si = np.nonzero(st)[0]
                ks = _take(k1, si)
                x0s, t0s = xa[si], ta[si]
                stop = run.stop
                frac[si] = _bisect(spec, run, x0s, ks, h[si], np.zeros(si.size), frac[si], n_iter,
                                   lambda mid, res: np.asarray(stop(t0s + mid * h[si], res[0]), dtype=bool))
                xs_, dl, dm, dsv, de = _rk4(spec, run, x0s, ks, frac[si] * h[si])
                xn[si], dlam[si], dmu[si], ds2[si], dex[si] = xs_, dl, dm, dsv, de
                stopped[si] = True
                cross[si] = False
        # advance
        run.x[act] = xn
        run.t[act] = np.where(frac >= 1.0, np.minimum(ta + h, T), ta + frac * h)
        lam[act] += dlam
        run.imu[act] += dmu
        run.is2[act] += ds2
        if run.k:
            run.ext[act] += dex
        on_grid = (frac >= 1.0) & (h == gnext - ta) & ~stopped
        gk[act[on_grid]] += 1
        plain = ~cross & ~stopped
        run.emit(Kind.GRID, act[plain & on_grid])
        run.emit(Kind.STEP, act[plain & ~on_grid])
        if np.any(stopped):
            run.term[act[stopped]] = Terminal.STOPPED
            run.emit(Kind.END, act[stopped])
        done = plain & (run.t[act] >= T)
        run.emit(Kind.END, act[done])
        # jumps
        ci = np.nonzero(cross)[0]
        rows = act[ci]
        cont = act[plain & ~done]
        if rows.size:
            loc_pre = local_data(spec, run.x[rows])
            u = rng.uniform(run.keys[rows], 2 * run.nj[rows] + 1)
            xpost = _apply_jump(run, loc_pre, np.arange(rows.size), rows, u, run.x[rows])
            run.emit(Kind.PRE, rows)
            run.x[rows] = xpost
            run.nj[rows] += 1
            run.emit(Kind.POST, rows, u=u)
            lam[rows] = 0.0
            thresh[rows] = rng.exponential(run.keys[rows], 2 * run.nj[rows])
            rows = run.filter_stops(rows)
        if cont.size:
            big = _norm1(run.x[cont]) >= cfg.x_max
            if np.any(big):
                run.term[cont[big]] = Terminal.TRUNCATED_NORM
                run.emit(Kind.END, cont[big])
                cont = cont[~big]
        act = np.sort(np.concatenate([cont, rows]))


def run_paths(spec: ProcessSpec, x0, cfg: SimConfig, path_indices, observers: Sequence[Observer] = (),
              stop: Optional[StopFn] = None, integrands: Sequence[Integrand] = (),
              emit_grid: bool = False, rate_bound: Optional[float] = None) -> BatchResult:
    """Simulate the paths ``path_indices`` of an ensemble in one lockstep batch.

    Each path draws from its own stream keyed by ``(cfg.seed, path_index)``:
    draw ``2j`` is the exponential threshold and draw ``2j+1`` the mark of
    jump ``j``.  Results for a path do not depend on which batch it runs in.
    ``rate_bound`` switches pure jump specs to thinning against a constant
    dominating rate, as an independent cross-check.
    """
    run = _Run(spec, x0, cfg, path_indices, observers, stop, integrands)
    if spec.pure_jump:
        _run_pure_jump(run, emit_grid, rate_bound)
    else:
        if rate_bound is not None:
            raise DomainError("thinning is only available for pure jump specs")
        _run_flow(run)
    return run.result()


def run_ensemble(spec: ProcessSpec, x0, cfg: SimConfig, n_paths: int, observers: Sequence[Observer] = (),
                 stop: Optional[StopFn] = None, integrands: Sequence[Integrand] = (), threads: int = 1,
                 chunk_size: int = 16384, first_index: int = 0,
                 rate_bound: Optional[float] = None) -> BatchResult:
    """Run ``n_paths`` paths in chunks, optionally on several threads.

    ``x0`` is one state or an ``(n_paths, d)`` array of per-path states.
    Observers must tolerate concurrent calls on disjoint path indices.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1 and spec.dim == 1 and x0.size == n_paths and n_paths > 1:
        x0 = x0[:, None]
    per_path = x0.ndim == 2 and x0.shape[0] > 1
    if per_path and x0.shape[0] != n_paths:
        raise DomainError(f"got {x0.shape[0]} initial states for {n_paths} paths")
    starts = list(range(0, n_paths, chunk_size))

    def job(s):
        e = min(s + chunk_size, n_paths)
        idx = np.arange(first_index + s, first_index + e)
        xs = x0[s:e] if per_path else x0
        return run_paths(spec, xs, cfg, idx, observers, stop, integrands, rate_bound=rate_bound)

    if threads <= 1 or len(starts) == 1:
        parts = [job(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, starts))
    return BatchResult.concat(parts)


class _Recorder(Observer):
    def __init__(self):
        self.rows = []
        self.events = []
        self._pre = None

    def _add(self, kind, t, x, snap):
        self.rows.append((float(t[0]), x[0].copy(), snap.int_mu[0].copy(), snap.qvar[0].copy(), int(kind)))

    def start(self, idx, t, x, snap):
        self._add(Kind.START, t, x, snap)

    def point(self, kind, idx, t, x, snap):
        if kind == Kind.STEP:
            return
        self._add(kind, t, x, snap)
        if kind == Kind.PRE:
            self._pre = x[0].copy()
        elif kind == Kind.POST:
            self.events.append(JumpEvent(float(t[0]), float(snap.u[0]), self._pre, x[0].copy()))


def simulate(spec: ProcessSpec, x0, cfg: SimConfig, stop: Optional[StopFn] = None,
             rate_bound: Optional[float] = None) -> Path:
    """Simulate path ``cfg.path_index`` and record it on the grid and at every jump."""
    xs, _ = as_states(spec, x0)
    rec = _Recorder()
    res = run_paths(spec, xs[0], cfg, [cfg.path_index], [rec], stop, emit_grid=True, rate_bound=rate_bound)
    t = np.array([r[0] for r in rec.rows])
    return Path(
        x0=xs[0].copy(),
        events=rec.events,
        t=t,
        x=np.array([r[1] for r in rec.rows]),
        int_mu=np.array([r[2] for r in rec.rows]),
        qvar=np.array([r[3] for r in rec.rows]),
        kind=np.array([r[4] for r in rec.rows], dtype=np.int64),
        terminal=Terminal(int(res.terminal[0])),
        spec_fingerprint=spec.fingerprint(),
        config=cfg,
    )


def compensated_path(spec: ProcessSpec, path: Path) -> PathStatistics:
    """Compensator, martingale part and predictable quadratic variation along ``path``."""
    if path.spec_fingerprint != spec.fingerprint():
        raise SpecMismatchError("path was generated from a different spec")
    xbar = path.x0[None, :] + path.int_mu
    return PathStatistics(t=path.t, X=path.x, Xbar=xbar, M=path.x - xbar, qvar=path.qvar, kind=path.kind)


@dataclass
class FirstPassage:
    time: Optional[float]
    path: Path

    @property
    def censored(self) -> bool:
        return self.time is None


def first_passage(spec: ProcessSpec, x0, cfg: SimConfig, level: Optional[float] = None,
                  region: Optional[Callable[[Array], Array]] = None, direction: int = 1,
                  coordinate: int = 0) -> FirstPassage:
    """First time ``x[coordinate]`` reaches ``level`` (``direction=+1`` up, ``-1`` down) or enters ``region``.

    Crossings at jumps are reported at the jump time; crossings during the
    flow are localized by bisection to ``cfg.hazard_tol``.  Returns
    ``time=None`` when the horizon is reached first.
    """
    if (level is None) == (region is None):
        raise DomainError("give exactly one of level or region")
    if region is None:
        if direction not in (1, -1):
            raise DomainError("direction must be +1 or -1")

        def stop(t, x):
            return direction * (x[:, coordinate] - level) >= 0
    else:
        def stop(t, x):
            return region(x)

    path = simulate(spec, x0, cfg, stop)
    hit = path.t_end if path.terminal == Terminal.STOPPED else None
    return FirstPassage(hit, path)
