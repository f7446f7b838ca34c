"""File formats: coherence CSV, JSON records, matrix blobs, spline caches.

Trace CSV
    Leading ``# key=value`` comment lines carry the meta record, followed by a
    header row ``t,re,im,stderr_re,stderr_im`` and one row per grid point.
    Floats are written with 17 significant digits so files round-trip exactly.

Matrix blob
    One JSON header line (``dimension``, ``kind``, ``seed``, ``dtype``,
    ``order``) terminated by ``\\n``, then the matrix as column-major
    complex128 little-endian bytes.
"""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from . import __version__
from .echo import CoherenceTrace, TimeGrid
from .errors import ConfigError, ValidationError
from .theory import SplineModel, TheoryCurve

TRACE_COLUMNS = ("t", "re", "im", "stderr_re", "stderr_im")


def ensure_dir(path: str) -> str:
    """Create ``path`` if needed and check that it is writable."""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {path!r}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path!r} is not writable")
    return path


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _meta_value(v) -> str:
    if isinstance(v, str):
        return v
    return json.dumps(v, sort_keys=True)


def _parse_meta_value(s: str):
    try:
        return json.loads(s)
    except ValueError:
        return s


def write_trace_csv(path: str, trace, extra_meta: dict | None = None) -> str:
    """Write a :class:`CoherenceTrace` or :class:`TheoryCurve` as CSV."""
    if isinstance(trace, TheoryCurve):
        trace = trace.as_trace()
    meta = {"version": __version__, **trace.meta, **(extra_meta or {})}
    try:
        with open(path, "w", newline="") as fh:
            for key in sorted(meta):
                fh.write(f"# {key}={_meta_value(meta[key])}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in zip(trace.t, trace.values.real, trace.values.imag,
                           trace.stderr_re, trace.stderr_im):
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise ConfigError(f"cannot write {path!r}: {exc}") from None
    return path


def read_trace_csv(path: str) -> CoherenceTrace:
    meta = {}
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path!r}: {exc}") from None
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = _parse_meta_value(val)
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader, None)
    if header is None or tuple(header) != TRACE_COLUMNS:
        raise ValidationError(f"{path!r} is not a coherence CSV (header {header})")
    rows = np.array([[float(x) for x in r] for r in reader])
    grid = TimeGrid(rows[:, 0])
    return CoherenceTrace(grid, rows[:, 1] + 1j * rows[:, 2], rows[:, 3], rows[:, 4], meta)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path: str, obj) -> str:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path!r}: {exc}") from None
    return path


def write_sweep_csv(path: str, rows) -> str:
    """Fit table with columns ``lambda, n_env, Gamma_nominal, Gamma_fit, residual, stderr``."""
    cols = ("lambda", "n_env", "Gamma_nominal", "Gamma_fit", "residual", "stderr")
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([r[c] if c == "n_env" else _fmt(r[c]) for c in cols])
    except OSError as exc:
        raise ConfigError(f"cannot write {path!r}: {exc}") from None
    return path


def read_sweep_csv(path: str) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            return [{k: (int(v) if k == "n_env" else float(v)) for k, v in row.items()}
                    for row in csv.DictReader(fh)]
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read fit table {path!r}: {exc}") from None


def write_matrix_blob(path: str, M: np.ndarray, kind: str, seed: int) -> str:
    M = np.asarray(M, dtype="<c16")
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError("matrix blob needs a square matrix")
    header = {"dimension": M.shape[0], "kind": str(kind), "seed": int(seed),
              "dtype": "complex128", "order": "F"}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(M.tobytes(order="F"))
    return path


def read_matrix_blob(path: str):
    """Return ``(matrix, header)``."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = fh.read()
    n = int(header["dimension"])
    if len(data) != 16 * n * n:
        raise ValidationError(f"matrix blob {path!r} has {len(data)} bytes, expected {16 * n * n}")
    M = np.frombuffer(data, dtype="<c16").reshape((n, n), order="F").copy()
    return M, header


def save_spline(path: str, spline: SplineModel) -> str:
    np.savez(path, knots=spline.knots, coefficients=spline.coefficients)
    return path


def load_spline(path: str) -> SplineModel:
    with np.load(path) as z:
        return SplineModel(z["knots"], z["coefficients"])
