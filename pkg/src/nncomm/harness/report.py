"""CSV tables and plain-text plot data from result rows."""
from __future__ import annotations

import csv
import io
import os

import numpy as np

from ..datagen import _atomic_write
from ..errors import DataError

ROW_COLUMNS = ("metric", "coordinate", "descriptor", "value", "low", "high", "samples", "seed",
               "remaining", "storage_bytes")
FORMATS = ("csv", "plotdata")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(ROW_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in ROW_COLUMNS])
    return buf.getvalue()


def write_rows_csv(rows, path):
    _atomic_write(path, rows_to_csv(rows).encode("utf-8"))
    return path


def read_rows_csv(path):
    from .pipeline import ResultRow
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != ROW_COLUMNS:
            raise DataError(f"{path}: expected header {','.join(ROW_COLUMNS)}")
        rows = []
        for rec in reader:
            rows.append(ResultRow(
                rec["metric"], float(rec["coordinate"]), rec["descriptor"], float(rec["value"]),
                int(rec["samples"]), int(rec["seed"]),
                float(rec["low"]) if rec["low"] else None,
                float(rec["high"]) if rec["high"] else None,
                float(rec["remaining"]), int(rec["storage_bytes"])))
    return rows


def series(rows, metric):
    """``(xs, descriptors, {descriptor: {x: value}})`` in first-appearance order."""
    xs, descs, table = [], [], {}
    for r in rows:
        if r.metric != metric:
            continue
        if r.coordinate not in xs:
            xs.append(r.coordinate)
        if r.descriptor not in descs:
            descs.append(r.descriptor)
            table[r.descriptor] = {}
        table[r.descriptor][r.coordinate] = r
    return sorted(xs), descs, table


def plotdata_text(rows, metric):
    """Whitespace-separated columns: x, then one column per descriptor (``nan`` if missing)."""
    xs, descs, table = series(rows, metric)
    lines = ["# " + " ".join(["x", *descs])]
    for x in xs:
        vals = [repr(float(table[d][x].value)) if x in table[d] else "nan" for d in descs]
        lines.append(" ".join([f"{x:g}", *vals]))
    return "\n".join(lines) + "\n"


def nmse_table(rows):
    """Descriptor rows by CR columns; each cell ``NMSE(remaining%)``."""
    xs, descs, table = series(rows, "NMSE_dB")
    width = 16
    lines = ["".join(s.ljust(width) for s in ["", *(f"CR={x:g}" for x in xs)]).rstrip()]
    for d in descs:
        cells = [d]
        for x in xs:
            r = table[d].get(x)
            cells.append("-" if r is None else f"{r.value:.2f}({100 * r.remaining:.2f}%)")
        lines.append("".join(c.ljust(width) for c in cells).rstrip())
    return "\n".join(lines) + "\n"


def emit_report(rows, cost_reports, fmt, out_dir):
    """Write ``results.csv`` plus cost CSVs (``csv``) or per-metric plot files (``plotdata``).

    Returns the list of written paths.
    """
    if not rows:
        raise DataError("no result rows to report")
    if fmt not in FORMATS:
        raise DataError(f"report format must be one of {FORMATS}")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if fmt == "csv":
        written.append(write_rows_csv(rows, os.path.join(out_dir, "results.csv")))
        if cost_reports:
            os.makedirs(os.path.join(out_dir, "costs"), exist_ok=True)
        for name, report in cost_reports.items():
            path = os.path.join(out_dir, "costs", f"{name}.csv")
            _atomic_write(path, report.to_csv().encode("utf-8"))
            written.append(path)
        return written
    for metric in dict.fromkeys(r.metric for r in rows):
        stem = {"BER": "ber_vs_snr", "NMSE_dB": "nmse_vs_cr"}.get(metric, metric.lower())
        path = os.path.join(out_dir, f"{stem}.dat")
        _atomic_write(path, plotdata_text(rows, metric).encode("utf-8"))
        written.append(path)
        if metric == "NMSE_dB":
            path = os.path.join(out_dir, "nmse_table.txt")
            _atomic_write(path, nmse_table(rows).encode("utf-8"))
            written.append(path)
    return written
