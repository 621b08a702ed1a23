"""CSV emission, binary field dumps, and study manifests.

All numeric CSV output is written in full double precision with
locale-independent formatting, and iteration orders are fixed, so identical
configurations produce bit-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .grid import DomainLabels, Field, Grid

_MAGIC = b"GLF1"


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path, header, rows):
    """Write rows (sequences or dicts keyed by header) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            row = [row[h] for h in header]
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_field_dump(path, domain: DomainLabels, field: Field):
    """Flat binary field dump: header (dims, spacing, origin, periodicity),
    then the label map and the cell values."""
    g = field.grid
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", g.ndim))
        fh.write(np.asarray(g.dims, dtype="<i8").tobytes())
        fh.write(np.asarray(g.spacing, dtype="<f8").tobytes())
        fh.write(np.asarray(g.origin, dtype="<f8").tobytes())
        fh.write(np.asarray(g.periodic, dtype="<u1").tobytes())
        fh.write(np.asarray(domain.labels, dtype="<i1").tobytes())
        fh.write(np.asarray(field.values, dtype="<f8").tobytes())


def read_field_dump(path):
    """Read a field dump; returns (grid, labels, values)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a field dump")
    off = 4
    (d,) = struct.unpack_from("<I", raw, off)
    off += 4
    dims = np.frombuffer(raw, dtype="<i8", count=d, offset=off)
    off += 8 * d
    spacing = np.frombuffer(raw, dtype="<f8", count=d, offset=off)
    off += 8 * d
    origin = np.frombuffer(raw, dtype="<f8", count=d, offset=off)
    off += 8 * d
    periodic = np.frombuffer(raw, dtype="<u1", count=d, offset=off)
    off += d
    n = int(np.prod(dims))
    labels = np.frombuffer(raw, dtype="<i1", count=n, offset=off).copy()
    off += n
    values = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
    grid = Grid(dims=tuple(int(v) for v in dims),
                spacing=tuple(float(v) for v in spacing),
                origin=tuple(float(v) for v in origin),
                periodic=tuple(bool(v) for v in periodic))
    return grid, labels, values


def config_hash(items: dict) -> str:
    """Stable hash of a nested section->key->value configuration dict."""
    canonical = []
    for section in sorted(items):
        for key in sorted(items[section]):
            canonical.append(f"{section}.{key}={items[section][key]}")
    return hashlib.sha256("\n".join(canonical).encode()).hexdigest()


def write_manifest(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               default=format_value) + "\n")
