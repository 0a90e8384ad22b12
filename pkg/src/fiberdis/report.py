"""Byte-stable CSV and JSON output.

Floats are written with 17 significant digits, JSON keys are sorted and
lines end in LF.  Files are written to a temporary sibling and renamed into
place, so a failed run never leaves a partial artifact.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import tempfile

import numpy as np


class ReportError(ValueError):
    pass


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise ReportError("non-finite value in report")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def plain(obj):
    """Convert dataclasses, numpy scalars and arrays to plain Python values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return plain(obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _json(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_json(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt(obj)
    if obj is None:
        return "null"
    return json.dumps(obj)


def to_json(report) -> str:
    return _json(plain(report)) + "\n"


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt(v)
    if v is None:
        return ""
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def to_csv(rows, columns=None) -> str:
    """Rows of dicts to CSV; ``columns`` fixes the header order."""
    rows = [plain(r) for r in rows]
    if columns is None:
        columns = list(rows[0]) if rows else []
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_cell(r.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def write_atomic(path, text: str):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    except OSError as e:
        raise ReportError(f"cannot write {path}: {e.strerror}") from None
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise ReportError(f"cannot write {path}: {e.strerror}") from None


def emit_report(report, format: str = "json", path=None, columns=None) -> str:
    """Render ``report`` and, when ``path`` is given, write it atomically.

    For CSV, ``report`` is a sequence of row dicts.  The rendered text is
    returned either way; nothing is written if rendering fails.
    """
    if format == "json":
        text = to_json(report)
    elif format == "csv":
        text = to_csv(report, columns)
    else:
        raise ReportError(f"unknown format {format!r}")
    if path is not None:
        write_atomic(path, text)
    return text
