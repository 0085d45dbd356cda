"""Snapshot and report file formats.

Snapshots: CSV with header ``k,chain_id,x_0..x_{d-1}`` or the binary "W2L1"
layout: 4-byte magic, little-endian uint64 row and column counts, then
row-major little-endian float64 rows ``[k, chain_id, x_0, ..., x_{d-1}]``.
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .chain import EnsembleSnapshot

MAGIC = b"W2L1"
REPORT_COLUMNS = ("experiment", "grid_value", "k", "w2", "stderr", "method", "seed")


class FormatError(ValueError):
    pass


def _atomic_write(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _snapshot_table(snapshots: Iterable[EnsembleSnapshot]) -> np.ndarray:
    rows = []
    for snap in snapshots:
        n = snap.points.shape[0]
        rows.append(np.column_stack([np.full(n, snap.k, float), np.arange(n, dtype=float), snap.points]))
    if not rows:
        raise FormatError("no snapshots to write")
    return np.vstack(rows)


def _table_to_snapshots(table: np.ndarray) -> list[EnsembleSnapshot]:
    out = []
    ks = table[:, 0]
    for k in dict.fromkeys(ks.tolist()):
        block = table[ks == k]
        block = block[np.argsort(block[:, 1], kind="stable")]
        out.append(EnsembleSnapshot(int(k), block[:, 2:]))
    return out


def write_snapshots_binary(path, snapshots: Iterable[EnsembleSnapshot]):
    table = np.ascontiguousarray(_snapshot_table(snapshots), dtype="<f8")
    header = MAGIC + struct.pack("<QQ", *table.shape)
    _atomic_write(Path(path), header + table.tobytes(order="C"))


def read_snapshots_binary(path) -> list[EnsembleSnapshot]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    rows, cols = struct.unpack("<QQ", raw[4:20])
    body = raw[20:]
    if len(body) != rows * cols * 8:
        raise FormatError(f"{path}: expected {rows * cols * 8} payload bytes, found {len(body)}")
    table = np.frombuffer(body, dtype="<f8").reshape(rows, cols)
    return _table_to_snapshots(table)


def write_snapshots_csv(path, snapshots: Iterable[EnsembleSnapshot]):
    table = _snapshot_table(snapshots)
    d = table.shape[1] - 2
    lines = [",".join(["k", "chain_id"] + [f"x_{i}" for i in range(d)])]
    for row in table:
        lines.append(",".join([str(int(row[0])), str(int(row[1]))] + [repr(float(v)) for v in row[2:]]))
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def read_snapshots_csv(path) -> list[EnsembleSnapshot]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["k", "chain_id"]:
            raise FormatError(f"{path}: unexpected header {header}")
        table = np.array([[float(v) for v in row] for row in reader])
    return _table_to_snapshots(table)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_report_csv(path, rows: Iterable[dict]):
    lines = [",".join(REPORT_COLUMNS)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c)) for c in REPORT_COLUMNS))
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode())


def read_report_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj):
    _atomic_write(Path(path), (json.dumps(obj, indent=2) + "\n").encode())


def write_lemma_reports(path, reports):
    """One JSON object per line, fields in declaration order."""
    text = "".join(json.dumps(r.to_dict()) + "\n" for r in reports)
    _atomic_write(Path(path), text.encode())


def read_lemma_reports(path):
    from .analysis import LemmaCheckReport

    with open(path) as fh:
        return [LemmaCheckReport.from_dict(json.loads(line)) for line in fh if line.strip()]
