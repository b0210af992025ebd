"""Write-then-rename helpers and fixed-precision serialization."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

FLOAT_DECIMALS = 6


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def fmt_float(x) -> str:
    if x is None:
        return ""
    return f"{x:.{FLOAT_DECIMALS}f}"


def round_floats(obj):
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj}")
        return round(obj, FLOAT_DECIMALS)
    if isinstance(obj, dict):
        return {str(k): round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj


def dumps_json(obj, indent=2) -> str:
    """JSON with every float rounded to six decimals, so output is reproducible."""
    return json.dumps(round_floats(obj), indent=indent, sort_keys=False, ensure_ascii=False) + (
        "\n" if indent is not None else ""
    )


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt_float(v) if isinstance(v, float) else ("" if v is None else v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, render_csv(header, rows))
