"""CSV emission shared by every report type.

Floats are written with 17 significant digits so that values round-trip
exactly and repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    try:
        import numpy as np

        if isinstance(value, np.integer):
            return str(int(value))
        if isinstance(value, np.floating):
            return fmt(float(value))
        if isinstance(value, np.bool_):
            return fmt(bool(value))
    except ImportError:  # pragma: no cover
        pass
    return str(value)


def csv_text(header, rows, footer=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    if footer is not None:
        writer.writerow([fmt(v) for v in footer])
    return buf.getvalue()


def write_csv(path, header, rows, footer=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows, footer), encoding="utf-8")
    return path


def read_csv(path):
    """Return ``(header, rows)`` with every cell left as a string."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]
