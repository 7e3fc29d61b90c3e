"""Monte Carlo reports: Wilson intervals, verdicts and JSON/CSV serialization."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

SCHEMA_VERSION = 1
Z95 = 1.959963984540054


def wilson(k: int, n: int, z: float = Z95) -> tuple[float, float, float]:
    """Point estimate and Wilson score interval for ``k`` successes in ``n`` trials."""
    if n <= 0:
        return math.nan, 0.0, 1.0
    p = k / n
    z2 = z * z
    den = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # keep p inside the interval despite rounding at the edges
    return p, min(lo, p), max(hi, p)


@dataclass
class QueryResult:
    """Empirical frequency of one event against its bound."""

    name: str
    params: dict
    n: int
    count: int
    estimate: float
    lo: float
    hi: float
    half_width: float
    bound: float
    raw_bound: float
    verdict: str
    censored_fraction: float
    audit_failures: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict == "respected"


@dataclass
class MeanResult:
    """Sample mean of a per-path statistic against its target."""

    name: str
    params: dict
    n: int
    mean: float
    stderr: float
    target: float
    mode: str
    verdict: str
    flagged: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict == "respected"


def _clean(v: Any) -> Any:
    # JSON has no inf/nan; encode them as strings
    if isinstance(v, float):
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item"):
        return _clean(v.item())
    return v


def _restore(v: Any) -> Any:
    if v in ("inf", "-inf", "nan"):
        return float(v)
    if isinstance(v, dict):
        return {k: _restore(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_restore(x) for x in v]
    return v


@dataclass
class McReport:
    title: str
    results: list
    runtime: float
    meta: dict = field(default_factory=dict)
    audits: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.results)

    @property
    def audit_failures(self) -> int:
        return sum(int(a.get("failures", 0)) for a in self.audits)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "title": self.title,
            "meta": self.meta,
            "audits": self.audits,
            "results": [dict(kind=type(r).__name__, **asdict(r)) for r in self.results],
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return _clean(d)

    def to_json(self, include_runtime: bool = True) -> str:
        return json.dumps(self.to_dict(include_runtime), sort_keys=True, indent=1)

    def fingerprint(self) -> str:
        """Hash of everything except the runtime."""
        return hashlib.sha256(self.to_json(include_runtime=False).encode()).hexdigest()

    @staticmethod
    def from_json(text: str) -> "McReport":
        d = _restore(json.loads(text))
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema_version')!r}")
        res = []
        for r in d["results"]:
            kind = r.pop("kind")
            res.append((QueryResult if kind == "QueryResult" else MeanResult)(**r))
        return McReport(d["title"], res, d.get("runtime", math.nan), d["meta"], d["audits"])

    def csv_rows(self) -> list[dict]:
        rows = []
        for r in self.results:
            row = {"report": self.title, "name": r.name, "params": json.dumps(_clean(r.params), sort_keys=True),
                   "verdict": r.verdict, "n": r.n}
            if isinstance(r, QueryResult):
                row.update(estimate=r.estimate, lo=r.lo, hi=r.hi, bound=r.bound, raw_bound=r.raw_bound,
                           censored_fraction=r.censored_fraction, audit_failures=r.audit_failures)
            else:
                row.update(estimate=r.mean, lo=r.mean - 4 * r.stderr, hi=r.mean + 4 * r.stderr, bound=r.target,
                           raw_bound=r.target, censored_fraction=0.0, audit_failures=r.flagged)
            rows.append(row)
        return rows


CSV_FIELDS = ["report", "name", "params", "verdict", "n", "estimate", "lo", "hi", "bound", "raw_bound",
              "censored_fraction", "audit_failures"]


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        for row in rep.csv_rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def summary_line(rep: McReport) -> str:
    parts = []
    for r in rep.results:
        if isinstance(r, QueryResult):
            parts.append(f"{r.name} {r.params}: p={r.estimate:.4g} [{r.lo:.4g},{r.hi:.4g}] "
                         f"bound={r.bound:.4g} -> {r.verdict}")
        else:
            parts.append(f"{r.name} {r.params} ({r.mode}): mean={r.mean:.5g} se={r.stderr:.3g} "
                         f"target={r.target:g} -> {r.verdict}")
    return "\n".join(parts)
