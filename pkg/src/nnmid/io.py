"""File formats shared by the command-line tools.

CSV files use full double precision in scientific notation, '.' as decimal
separator and LF line endings. Comment lines starting with ``#`` carry
metadata. JSON documents carry ``schema_version``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1
FLOAT_FMT = "%.17e"


def _fmt(v):
    return FLOAT_FMT % v


def config_hash(config):
    """SHA-256 of the canonical JSON form of a configuration mapping."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


def write_json(path, payload, **meta):
    """Write ``payload`` plus ``schema_version`` and extra metadata."""
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(meta)
    doc.update(payload)
    Path(path).write_text(json.dumps(_clean(doc), indent=2, default=_jsonable) + "\n")
    return Path(path)


def read_json(path):
    return json.loads(Path(path).read_text())


def write_table_csv(path, columns, header=None, meta=None):
    """Write named columns of equal length.

    Parameters
    ----------
    columns : dict of name -> 1-D array
    meta : dict, optional
        Written as ``# key=value`` comment lines before the header row.
    """
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float).ravel() for n in names]
    n_rows = {d.size for d in data}
    if len(n_rows) > 1:
        raise ValueError("columns must have equal lengths")
    lines = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(",".join(header or names))
    if data:
        table = np.column_stack(data)
        lines.extend(",".join(_fmt(v) for v in row) for row in table)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return Path(path)


def read_table_csv(path):
    """Read a file written by :func:`write_table_csv`.

    Returns
    -------
    columns : dict of name -> ndarray
    meta : dict of str -> str
    """
    meta = {}
    header = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif header is None:
                header = line.split(",")
            else:
                rows.append(line.split(","))
    if header is None:
        raise ValueError(f"{path}: missing header row")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}, meta


def write_matrix_csv(path, matrix, meta=None):
    """Row-major dense matrix with a ``# rows=..,cols=..`` header line."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    lines = [f"# rows={matrix.shape[0]},cols={matrix.shape[1]}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}={value}")
    lines.extend(",".join(_fmt(v) for v in row) for row in matrix)
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return Path(path)


def read_matrix_csv(path):
    rows = []
    shape = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# rows="):
                parts = dict(p.split("=") for p in line[2:].split(","))
                shape = (int(parts["rows"]), int(parts["cols"]))
            elif line and not line.startswith("#"):
                rows.append([float(v) for v in line.split(",")])
    out = np.array(rows, dtype=float)
    if shape is not None:
        out = out.reshape(shape)
    return out
