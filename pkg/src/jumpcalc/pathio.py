"""Path export: CSV with shortest round-trip floats and a compact binary manifest."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import Kind, Path

MANIFEST_MAGIC = b"JCPM"
MANIFEST_VERSION = 1
_HEADER = struct.Struct("<4sH16sQQI")


def path_rows(path: Path, x0: Optional[np.ndarray] = None) -> list[list]:
    """Rows ``t, x..., M, qvar, event_flag`` with one column block per coordinate.

    ``event_flag`` is 1 on the pre-jump row, 2 on the post-jump row and 0
    otherwise.
    """
    x0 = path.x0 if x0 is None else x0
    M = path.x - x0[None, :] - path.int_mu
    flags = np.where(path.kind == Kind.PRE, 1, np.where(path.kind == Kind.POST, 2, 0))
    rows = []
    for i in range(path.t.size):
        rows.append([float(path.t[i]), *map(float, path.x[i]), *map(float, M[i]), *map(float, path.qvar[i]),
                     int(flags[i])])
    return rows


def path_header(dim: int) -> list[str]:
    if dim == 1:
        return ["t", "x", "M", "qvar", "event_flag"]
    return (["t"] + [f"x{i}" for i in range(dim)] + [f"M{i}" for i in range(dim)]
            + [f"qvar{i}" for i in range(dim)] + ["event_flag"])


def path_to_csv(path: Path) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(path_header(path.x.shape[1]))
    for row in path_rows(path):
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


@dataclass
class PathTable:
    t: np.ndarray
    x: np.ndarray
    M: np.ndarray
    qvar: np.ndarray
    event_flag: np.ndarray


def read_path_csv(text: str) -> PathTable:
    rows = list(csv.reader(io.StringIO(text)))
    head, body = rows[0], rows[1:]
    d = (len(head) - 2) // 3
    arr = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), 1 + 3 * d)
    flags = np.array([int(r[-1]) for r in body], dtype=np.int64)
    return PathTable(arr[:, 0], arr[:, 1:1 + d], arr[:, 1 + d:1 + 2 * d], arr[:, 1 + 2 * d:], flags)


@dataclass
class PathManifest:
    spec_fingerprint: str
    seed: int
    path_index: int
    config: dict


def write_manifest(path: Path) -> bytes:
    """Header (magic, version, spec fingerprint, seed, path index) followed by the config as JSON."""
    cfg = path.config.to_dict()
    blob = json.dumps(cfg, sort_keys=True).encode()
    fp = bytes.fromhex(path.spec_fingerprint.ljust(32, "0")[:32])
    head = _HEADER.pack(MANIFEST_MAGIC, MANIFEST_VERSION, fp, path.config.seed & (2**64 - 1),
                        path.config.path_index, len(blob))
    return head + blob


def read_manifest(data: bytes) -> PathManifest:
    magic, version, fp, seed, idx, n = _HEADER.unpack_from(data)
    if magic != MANIFEST_MAGIC:
        raise ValueError("not a path manifest")
    if version != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {version}")
    cfg = json.loads(data[_HEADER.size:_HEADER.size + n].decode())
    return PathManifest(fp.hex()[:16], seed, idx, cfg)
