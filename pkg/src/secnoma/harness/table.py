"""Result tables and their CSV form."""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        # %-formatting ignores the locale, so the decimal point is always '.'
        return "%.12g" % v
    if hasattr(v, "item"):
        return _fmt(v.item())
    return str(v)


def columns_of(table: list) -> list:
    cols = []
    for row in table:
        for key in row:
            if key not in cols:
                cols.append(key)
    return cols


def to_csv_text(table: list) -> str:
    if not table:
        raise ValueError("refusing to write an empty table")
    cols = columns_of(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in table:
        w.writerow([_fmt(row[c]) if c in row else "" for c in cols])
    return buf.getvalue()


def emit_csv(table: list, path) -> Path:
    """Write ``table`` (a list of dicts) as UTF-8 CSV with LF endings and 12 significant digits."""
    text = to_csv_text(table)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
