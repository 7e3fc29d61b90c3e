"""Command line front end: ``jumpcalc {simulate,verify,bounds,sweep}``.

Runs are described by one JSON document with ``model``, ``sim`` and
``query`` sections.  Exit status is 0 on success, 1 when a verification
fails and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path as FsPath
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from . import bounds as bc
from . import harness as hs
from . import models
from .core import DiscreteKernel, ProcessSpec
from .engine import SimConfig, simulate
from .errors import JumpcalcError
from .pathio import path_to_csv, write_manifest
from .report import McReport, reports_to_csv, summary_line

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["name"],
    "properties": {
        "name": {"enum": ["poisson_counter", "birth_death", "yule", "sis", "linear_flow"]},
        "rate": _NONNEG, "b": _NONNEG, "d": _NONNEG, "step": _POS, "ell": _NONNEG,
        "n": {"type": "integer", "minimum": 1}, "lam": _NONNEG, "rescaled": {"type": "boolean"},
        "slope": _NUM, "intercept": _NUM,
    },
    "additionalProperties": False,
}

SIM_SCHEMA = {
    "type": "object",
    "required": ["T"],
    "properties": {
        "T": _POS, "dt_grid": _POS, "ode_step": _POS, "hazard_tol": _POS, "q_max": _POS, "x_max": _POS,
        "seed": {"type": "integer", "minimum": 0}, "path_index": {"type": "integer", "minimum": 0},
        "x0": {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]},
        "n_paths": {"type": "integer", "minimum": 1}, "debug": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_GRID = {"type": "array", "items": _NUM, "minItems": 1}

QUERY_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["sample_path", "exponential", "quadratic", "martingale", "lemma", "ode_approx",
                          "intermediate_phase", "sweep"]},
        "lams": _GRID, "a_vals": _GRID, "signs": {"type": "array", "items": {"enum": [1, -1]}, "minItems": 1},
        "negate_a": {"type": "boolean"},
        "lam": _NUM,
        "lemma": {"enum": ["linear_drift", "drift_barrier", "drift_escape", "diffusive_barrier",
                           "diffusive_escape"]},
        "params": {"type": "object"},
        "ell": _NONNEG,
        "delta": _POS, "L": _NONNEG, "c_rho": _POS,
        "n": {"type": "integer", "minimum": 1}, "x0": _POS,
        "alpha": {"oneOf": [_NUM, _GRID]}, "C": _POS,
        "item": {"enum": list(bc.SWEEP_ITEMS)}, "c_grid": _GRID,
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {"model": MODEL_SCHEMA, "sim": SIM_SCHEMA, "query": QUERY_SCHEMA},
    "additionalProperties": False,
}


class UsageError(Exception):
    pass


def validate_config(cfg: dict, need: tuple = ()) -> None:
    """Check ``cfg`` against the schema; messages name the offending field."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errs]
        raise UsageError("invalid config:\n  " + "\n  ".join(msgs))
    for sec in need:
        if sec not in cfg:
            raise UsageError(f"invalid config: missing section '{sec}'")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    command: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "RunManifest":
        return RunManifest(**json.loads(text))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def build_model(m: dict) -> ProcessSpec:
    name = m["name"]

    def need(*keys):
        miss = [k for k in keys if k not in m]
        if miss:
            raise UsageError(f"model {name} needs {', '.join(miss)}")

    if name == "poisson_counter":
        need("rate")
        return models.poisson_counter(m["rate"])
    if name == "birth_death":
        need("b", "d")
        return models.birth_death(m["b"], m["d"], m.get("step", 1.0))
    if name == "yule":
        need("ell")
        return models.yule(m["ell"])
    if name == "sis":
        need("n", "lam")
        return models.sis(models.SisParams(m["n"], m["lam"], m.get("rescaled", True)))
    slope, icpt = float(m.get("slope", 0.0)), float(m.get("intercept", 0.0))
    kern = DiscreteKernel(lambda x: np.zeros((x.shape[0], 1)), [[1.0]])
    return ProcessSpec(kern, c_delta=1.0, derivative=lambda x: slope * x + icpt, name="linear_flow",
                       params={"slope": slope, "intercept": icpt})


def _sim_config(sim: dict, seed: Optional[int]) -> SimConfig:
    keys = ("T", "dt_grid", "ode_step", "hazard_tol", "q_max", "x_max", "path_index", "debug")
    kw = {k: sim[k] for k in keys if k in sim}
    kw["seed"] = seed if seed is not None else sim.get("seed", 0)
    return SimConfig(**kw)


def _threads(arg: Optional[int]) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("JUMPCALC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"JUMPCALC_THREADS must be an integer, got {env!r}")
    return 1


def _load(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise UsageError(f"cannot read config: {e}")
    except json.JSONDecodeError as e:
        raise UsageError(f"config is not valid JSON: {e}")


def _write_outputs(out_dir: FsPath, files: dict) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, data in files.items():
        p = out_dir / name
        if isinstance(data, bytes):
            p.write_bytes(data)
        else:
            p.write_text(data)
        written.append(str(p))
    return written


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    validate_config(cfg, ("model", "sim"))
    spec = build_model(cfg["model"])
    sc = _sim_config(cfg["sim"], args.seed)
    manifest = RunManifest(config_hash(cfg), sc.seed, __version__, "simulate", _now())
    x0 = cfg["sim"].get("x0", 0.0)
    path = simulate(spec, x0, sc)
    files = {"path.csv": path_to_csv(path), "path.manifest": write_manifest(path)}
    manifest.outputs = [str(FsPath(args.out) / n) for n in files] + [str(FsPath(args.out) / "run_manifest.json")]
    manifest.finished = _now()
    files["run_manifest.json"] = manifest.to_json()
    _write_outputs(FsPath(args.out), files)
    print(f"{len(path.events)} events, terminal {path.terminal.name}, wrote {args.out}/path.csv")
    return EXIT_OK


_LEMMAS = {
    "linear_drift": bc.LinearDrift, "drift_barrier": bc.DriftBarrier, "drift_escape": bc.DriftEscape,
    "diffusive_barrier": bc.DiffusiveBarrier, "diffusive_escape": bc.DiffusiveEscape,
}


def run_verify(cfg: dict, seed: Optional[int], threads: int) -> list:
    """Run the verification described by ``cfg``; returns McReports."""
    validate_config(cfg, ("sim", "query"))
    q = cfg["query"]
    kind = q["kind"]
    sim = cfg["sim"]
    sc = _sim_config(sim, seed)
    n_paths = sim.get("n_paths", 10000)
    ens = hs.EnsembleConfig(n_paths, sc, threads=threads)
    if kind == "intermediate_phase":
        if "n" not in q or "lam" not in q:
            raise UsageError("intermediate_phase needs n and lam")
        return [hs.logistic_intermediate_phase(q["n"], q["lam"], ens, q.get("x0"))]
    if "model" not in cfg:
        raise UsageError("invalid config: missing section 'model'")
    spec = build_model(cfg["model"])
    x0 = sim.get("x0", 0.0)
    if kind == "sample_path":
        for k in ("lams", "a_vals"):
            if k not in q:
                raise UsageError(f"sample_path needs {k}")
        signs = q.get("signs", [1, -1])
        if q.get("negate_a"):
            # self-test of the failure path: the envelope offset is flipped, the bound is not
            rep = _negated_sample_path(spec, x0, ens, q["lams"], q["a_vals"], signs)
            return [rep]
        return [hs.verify_sample_path(spec, x0, ens, q["lams"], q["a_vals"], signs)]
    if kind in ("exponential", "quadratic", "martingale"):
        lam = q.get("lam", 0.5) if kind == "exponential" else None
        out = hs.ensemble_checks(spec, x0, ens, exp_lambda=lam)
        return [out[kind]]
    if kind == "lemma":
        if "lemma" not in q:
            raise UsageError("lemma query needs 'lemma'")
        try:
            query = _LEMMAS[q["lemma"]](**q.get("params", {}))
        except TypeError as e:
            raise UsageError(f"bad lemma params: {e}")
        return [hs.verify_lemma(spec, x0, ens, query, ell=q.get("ell"))]
    if kind == "ode_approx":
        if spec.name != "sis" or not spec.params.get("rescaled"):
            raise UsageError("ode_approx is available for the rescaled sis model")
        n, lam = spec.params["n"], spec.params["lam"]
        if "delta" not in q:
            raise UsageError("ode_approx needs delta")
        # sup over [0, 1] of |f'(x)| = |lam (1 - 2x) - 1|
        L = q.get("L", max(abs(lam - 1), abs(-lam - 1)))
        c_rho = q.get("c_rho", _sis_c_rho(n, lam))
        return [hs.verify_ode_approx(spec, x0, ens, q["delta"], L, c_rho, lambda v: models.sis_drift(v, lam))]
    raise UsageError(f"query kind {kind!r} is not a verification")


def _sis_c_rho(n: int, lam: float) -> float:
    # max over [0, 1] of lam x (1 - x) + x, divided by n
    xs = min(1.0, (1 + lam) / (2 * lam)) if lam > 0 else 1.0
    return (lam * xs * (1 - xs) + xs) / n


def _negated_sample_path(spec, x0, ens, lams, a_vals, signs) -> McReport:
    grid = [(l, a, s) for l in lams for a in a_vals for s in signs]
    ob = hs.SampleEnvelopeObserver(ens.n_paths, [g[0] for g in grid], [-g[1] for g in grid],
                                   [g[2] for g in grid], spec.c_delta)
    t0 = time.perf_counter()
    res = hs._run(spec, x0, ens, [ob])
    items = [hs._query("sample_path", {"lambda": l, "a": a, "sign": s, "negate_a": True}, ob.hit[:, j],
                       hs._censored(res), bc.Bound.of(math.exp(-l * a)))
             for j, (l, a, s) in enumerate(grid)]
    return McReport("sample_path", items, time.perf_counter() - t0, {"model": spec.name, "negate_a": True})


def cmd_verify(args) -> int:
    cfg = _load(args.config)
    reports = run_verify(cfg, args.seed, _threads(args.threads))
    seed = args.seed if args.seed is not None else cfg["sim"].get("seed", 0)
    manifest = RunManifest(config_hash(cfg), seed, __version__, "verify", _now())
    if args.format == "json":
        name = "report.json"
        data = json.dumps([r.to_dict() for r in reports], sort_keys=True, indent=1)
    else:
        name = "report.csv"
        data = reports_to_csv(reports)
    manifest.outputs = [str(FsPath(args.out) / name), str(FsPath(args.out) / "run_manifest.json")]
    manifest.finished = _now()
    _write_outputs(FsPath(args.out), {name: data, "run_manifest.json": manifest.to_json()})
    for r in reports:
        print(summary_line(r))
    ok = all(r.passed for r in reports)
    print("all bounds respected" if ok else "verification FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def _kv(tokens, required=(), optional=()) -> dict:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise UsageError(f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        try:
            out[k] = float(v)
        except ValueError:
            raise UsageError(f"value of {k} is not a number: {v!r}")
    miss = [k for k in required if k not in out]
    extra = [k for k in out if k not in required and k not in optional]
    if miss:
        raise UsageError(f"missing {', '.join(miss)}")
    if extra:
        raise UsageError(f"unknown keys {', '.join(extra)}")
    return out


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, int, np.floating)) else str(v)


def bounds_table(args) -> list[tuple[str, str]]:
    rows = []
    if args.gamma is not None:
        kv = _kv(args.gamma, ("x",))
        rows.append(("Gamma", _fmt(bc.gamma_fn(kv["x"]))))
    if args.gamma_inv is not None:
        kv = _kv(args.gamma_inv, ("y",))
        rows.append(("gamma_inv", _fmt(bc.gamma_inv(kv["y"]))))
    if args.psi is not None:
        kv = _kv(args.psi, ("y",))
        rows.append(("psi", _fmt(bc.psi(kv["y"]))))
    if args.kappa is not None:
        kv = _kv(args.kappa, ("gamma", "a"), ("c",))
        k = bc.kappa(bc.KappaQuery(kv["gamma"], kv["a"], kv.get("c", 0.0)))
        rows += [("log_kappa", _fmt(k.log_kappa)), ("kappa", _fmt(k.kappa)), ("lambda_c", _fmt(k.lam))]
    if args.envelope is not None:
        kv = _kv(args.envelope, ("lam", "a", "qvar"), ("c",))
        rows.append(("envelope", _fmt(bc.envelope(kv["lam"], kv["a"], kv.get("c", 0.0), kv["qvar"]))))
    if args.horizon is not None:
        kv = _kv(args.horizon, ("delta", "c_rho", "T"), ("c",))
        h = bc.optimize_horizon(kv["delta"], kv["c_rho"], kv["T"], kv.get("c", 0.0))
        rows += [("a", _fmt(h.a)), ("gamma", _fmt(h.gamma)), ("bound", _fmt(h.bound.value))]
    if args.ode is not None:
        kv = _kv(args.ode, ("delta", "c_rho", "T", "L"), ("c",))
        o = bc.ode_approx_bound(kv["delta"], kv["c_rho"], kv.get("c", 0.0), kv["T"], kv["L"])
        rows += [("radius", _fmt(o.radius)), ("bound", _fmt(o.bound.value))]
    if args.lemma is not None:
        name, *toks = args.lemma
        if name not in _LEMMAS:
            raise UsageError(f"unknown lemma {name!r}; choose from {', '.join(_LEMMAS)}")
        fields = list(_LEMMAS[name].__dataclass_fields__)
        kv = _kv(toks, (), fields)
        try:
            q = _LEMMAS[name](**kv)
        except TypeError as e:
            raise UsageError(str(e))
        if name == "linear_drift":
            b = bc.linear_drift_bound(q.y, q.x0, q.c_eff)
            rows += [("bound", _fmt(b.value)), ("raw_bound", _fmt(b.raw))]
        else:
            fn = {"drift_barrier": bc.drift_barrier_bound, "drift_escape": bc.drift_escape_bound,
                  "diffusive_barrier": bc.diffusive_barrier_bound,
                  "diffusive_escape": bc.diffusive_escape_bound}[name]
            if name == "drift_barrier":
                kv["k"] = int(kv.get("k", 1))
                q = bc.DriftBarrier(**kv)
            r = fn(q)
            for k, v in asdict(r).items():
                if isinstance(v, dict):
                    rows += [(k, _fmt(v["value"])), (f"{k}_raw", _fmt(v["raw"]))]
                else:
                    rows.append((k, _fmt(v)))
    if not rows:
        raise UsageError("no query given; see jumpcalc bounds --help")
    return rows


def cmd_bounds(args) -> int:
    rows = bounds_table(args)
    if args.format == "json":
        print(json.dumps({k: v for k, v in rows}, indent=1))
    else:
        w = max(len(k) for k, _ in rows)
        for k, v in rows:
            print(f"{k.ljust(w)}  {v}")
    return EXIT_OK


SWEEP_FIELDS = ["alpha", "item", "c_delta", "c_q", "log_kappa_lower", "scaled", "valid"]


def sweep_csv(q: dict) -> str:
    for k in ("alpha", "C", "item", "c_grid"):
        if k not in q:
            raise UsageError(f"sweep needs {k}")
    alphas = q["alpha"] if isinstance(q["alpha"], list) else [q["alpha"]]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_FIELDS)
    for a in alphas:
        try:
            rows = bc.scaling_sweep(float(a), q["C"], q["item"], q.get("params", {}), q["c_grid"])
        except KeyError as e:
            raise UsageError(f"sweep item {q['item']} needs param {e}")
        for r in rows:
            w.writerow([repr(float(a)), q["item"], repr(r.c_delta), repr(r.c_q), repr(r.log_kappa_lower),
                        repr(r.scaled), int(r.valid)])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    cfg = _load(args.config)
    validate_config(cfg, ("query",))
    data = sweep_csv(cfg["query"])
    manifest = RunManifest(config_hash(cfg), 0, __version__, "sweep", _now())
    manifest.outputs = [str(FsPath(args.out) / "sweep.csv"), str(FsPath(args.out) / "run_manifest.json")]
    manifest.finished = _now()
    _write_outputs(FsPath(args.out), {"sweep.csv": data, "run_manifest.json": manifest.to_json()})
    sys.stdout.write(data)
    return EXIT_OK


def _u64(s: str) -> int:
    v = int(s, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _pos_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="jumpcalc", description="Simulate hybrid jump processes and check concentration bounds.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="JSON run description")
        sp.add_argument("--seed", type=_u64, help="overrides sim.seed")
        sp.add_argument("--threads", type=_pos_int, help="worker threads (default JUMPCALC_THREADS or 1)")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    common(sub.add_parser("simulate", help="simulate one path and write it as CSV"))
    common(sub.add_parser("verify", help="run a Monte Carlo verification"))
    b = sub.add_parser("bounds", help="evaluate concentration functions and lemma bounds")
    common(b, config=False)
    b.add_argument("--gamma", nargs="+", metavar="x=", help="Gamma(x) = x e^x / 2")
    b.add_argument("--gamma-inv", nargs="+", metavar="y=", help="inverse of Gamma")
    b.add_argument("--psi", nargs="+", metavar="y=")
    b.add_argument("--kappa", nargs="+", metavar="KEY=V", help="gamma= a= [c=]")
    b.add_argument("--envelope", nargs="+", metavar="KEY=V", help="lam= a= qvar= [c=]")
    b.add_argument("--horizon", nargs="+", metavar="KEY=V", help="delta= c_rho= T= [c=]")
    b.add_argument("--ode", nargs="+", metavar="KEY=V", help="delta= c_rho= T= L= [c=]")
    b.add_argument("--lemma", nargs="+", metavar="NAME KEY=V", help="lemma name followed by its parameters")
    common(sub.add_parser("sweep", help="tabulate log kappa lower bounds over a c_delta grid"))
    return p


def main(argv=None) -> int:
    try:
        args = make_parser().parse_args(argv)
        handler = {"simulate": cmd_simulate, "verify": cmd_verify, "bounds": cmd_bounds,
                   "sweep": cmd_sweep}[args.command]
        return handler(args)
    except UsageError as e:
        print(f"jumpcalc: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (JumpcalcError, ValueError) as e:
        print(f"jumpcalc: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
