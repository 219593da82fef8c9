"""Trace serialisation (CSV and JSON)."""
import numpy as np

from ..io import read_csv, write_csv, write_json

TRACE_COLUMNS = ["iteration", "loss", "elbo", "sup_norm", "alpha", "forward_solves", "probes"]


def write_trace_csv(path, trace, header=None, include_timing=False):
    """One row per iteration; ``stop_reason`` goes into the header block.

    Wall time is machine dependent, so it is only written on request.
    """
    cols = TRACE_COLUMNS + (["wall_time"] if include_timing else [])
    head = dict(header or {})
    head["method"] = trace.method
    head["stop_reason"] = trace.stop_reason
    rows = [[int(r[c]) if c in ("iteration", "forward_solves", "probes") else float(r[c])
             for c in cols] for r in trace.rows]
    return write_csv(path, cols, rows, header=head)


def write_trace_json(path, trace, header=None, include_timing=False):
    keep = TRACE_COLUMNS + (["wall_time"] if include_timing else [])
    rows = [{k: (None if isinstance(r[k], float) and not np.isfinite(r[k]) else r[k]) for k in keep}
            for r in trace.rows]
    return write_json(path, {"method": trace.method, "stop_reason": trace.stop_reason, "rows": rows},
                      header=header)


def read_trace_csv(path):
    """``(header, {column: array})``."""
    header, cols, rows = read_csv(path)
    arr = np.array([[float(v) for v in r] for r in rows]).reshape(-1, len(cols))
    return header, {c: arr[:, k] for k, c in enumerate(cols)}
