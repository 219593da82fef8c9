"""Deterministic file output: header blocks, atomic writes, CSV helpers.

Every data file starts with ``#``-prefixed header lines (config hash, seed,
package version, timestamp).  Only the timestamp line varies between
identical runs; :func:`strip_timestamp` removes it for comparisons.
"""
import csv
import io
import json
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

TIMESTAMP_KEY = "generated"


def format_float(x):
    """Shortest round-tripping representation, stable across runs."""
    return repr(float(x))


def make_header(config_hash="", seed=None, extra=None):
    head = {
        "config_hash": config_hash,
        "seed": "" if seed is None else str(seed),
        "version": __version__,
        TIMESTAMP_KEY: datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        head.update({k: str(v) for k, v in extra.items()})
    return head


def header_lines(header):
    return [f"{k}: {v}" for k, v in header.items()]


def atomic_write_text(path, text):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, columns, rows, header=None):
    buf = io.StringIO()
    for line in header_lines(header or {}):
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_csv(path):
    """``(header dict, column names, rows as lists of strings)``."""
    header, lines = {}, []
    with open(path, newline="") as fh:
        for ln in fh:
            if ln.startswith("#"):
                key, _, val = ln[1:].strip().partition(": ")
                header[key] = val
            else:
                lines.append(ln)
    reader = csv.reader(lines)
    columns = next(reader)
    return header, columns, [r for r in reader]


def write_json(path, payload, header=None):
    body = {"header": header or {}, **payload}
    return atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    import numpy as np
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def strip_timestamp(text):
    """Drop timestamp header lines (CSV ``#`` header or JSON key) for byte comparisons."""
    out = []
    for ln in text.splitlines(keepends=True):
        stripped = ln.lstrip("# ").strip()
        if stripped.startswith(f"{TIMESTAMP_KEY}:") or stripped.startswith(f'"{TIMESTAMP_KEY}":'):
            continue
        out.append(ln)
    return "".join(out)
