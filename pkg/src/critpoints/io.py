"""Table output: CSV with 12 significant digits, JSON at full precision."""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

__all__ = ["format_csv", "format_json", "write_table"]

CSV_DIGITS = 12


def _plain(value):
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _csv_cell(value) -> str:
    value = _plain(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.{CSV_DIGITS}g}"
    if value is None:
        return ""
    if isinstance(value, list):
        return ";".join(_csv_cell(v) for v in value)
    return str(value)


def _columns(records: Sequence[Mapping]) -> list[str]:
    cols: list[str] = []
    for rec in records:
        for key in rec:
            if key not in cols:
                cols.append(key)
    return cols


def format_csv(records: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    cols = list(columns) if columns is not None else _columns(records)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for rec in records:
        writer.writerow([_csv_cell(rec.get(c)) for c in cols])
    return buf.getvalue()


def format_json(payload) -> str:
    # repr-based float output is the shortest string that round-trips,
    # i.e. never fewer digits than needed for full double precision
    def clean(obj):
        if isinstance(obj, Mapping):
            return {str(k): clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        obj = _plain(obj)
        if isinstance(obj, float) and not math.isfinite(obj):
            return None
        return obj

    return json.dumps(clean(payload), indent=2) + "\n"


def write_table(records: Iterable[Mapping], fmt: str = "csv", out: str | Path | TextIO | None = None,
                columns: Sequence[str] | None = None, meta: Mapping | None = None) -> str:
    """Render records as CSV or JSON and write them to ``out`` (stdout if None).

    In JSON the records go under ``"records"`` next to any ``meta`` keys.
    """
    records = list(records)
    if fmt == "csv":
        text = format_csv(records, columns)
    elif fmt == "json":
        payload = dict(meta or {})
        payload["records"] = records
        text = format_json(payload)
    else:
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    if out is None:
        sys.stdout.write(text)
    elif hasattr(out, "write"):
        out.write(text)
    else:
        Path(out).write_text(text)
    return text
