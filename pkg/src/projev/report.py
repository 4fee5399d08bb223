"""
CSV and JSON-lines writers for experiment results.

Floats are written with 17 significant digits, so a table read back with
``float()`` reproduces the computed numbers bit for bit. No timestamps or
other run-dependent fields are written: equal inputs give equal bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .experiment import ExperimentResult

HISTOGRAM_HEADER = ["t", "channel", "probability"]
FIDELITY_HEADER = ["s", "fidelity"]


def fmt_float(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"cannot write non-finite value {v}")
    return format(v, ".17g")


def fmt_label(lab) -> str:
    """``3`` -> ``3``; ``(1, 4)`` -> ``1:4``; ``(5, 'a')`` -> ``5:a``."""
    if isinstance(lab, tuple):
        return ":".join(fmt_label(x) for x in lab)
    if isinstance(lab, (float, np.floating)):
        return fmt_float(lab)
    return str(lab)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if v is None:
        return ""
    if isinstance(v, (list, tuple)):
        return ";".join(_cell(x) for x in v)
    return str(v)


def to_json(v) -> str:
    """Minimal JSON encoder with fixed float formatting and insertion-ordered keys."""
    if v is None:
        return "null"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if isinstance(v, dict):
        return "{" + ",".join(f"{to_json(str(k))}:{to_json(x)}" for k, x in v.items()) + "}"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(to_json(x) for x in v) + "]"
    raise TypeError(f"cannot encode {type(v).__name__}")


def _json_label(lab):
    if isinstance(lab, tuple):
        return [_json_label(x) for x in lab]
    return lab


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def jsonl_text(header, rows, label_cols: int = 0) -> str:
    lines = []
    for row in rows:
        obj = {}
        for i, (h, x) in enumerate(zip(header, row)):
            obj[h] = _json_label(x) if i < label_cols else x
        lines.append(to_json(obj))
    return "".join(line + "\n" for line in lines)


def path_rows_text(result: ExperimentResult, fmt: str) -> str:
    header = result.path_header
    rows = [tuple(fmt_label(x) for x in r[:-1]) + (r[-1],) for r in result.path_rows] if fmt == "csv" else result.path_rows
    if fmt == "csv":
        return csv_text(header, rows)
    return jsonl_text(header, rows, label_cols=len(header) - 1)


def histogram_text(result: ExperimentResult, fmt: str) -> str:
    rows = result.histogram_rows
    if fmt == "csv":
        return csv_text(HISTOGRAM_HEADER, rows)
    return jsonl_text(HISTOGRAM_HEADER, [(None if t == "" else t, ch, p) for t, ch, p in rows])


def summary_text(result: ExperimentResult, fmt: str) -> str:
    if fmt == "csv":
        return csv_text(["key", "value"], list(result.summary.items()))
    return to_json(result.summary) + "\n"


def write_result(result: ExperimentResult, out_dir, fmt: str = "csv") -> list[Path]:
    """Write the tables of ``result`` into ``out_dir``; returns the written paths."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    if result.path_header:
        files["paths"] = path_rows_text(result, fmt)
        files["histogram"] = histogram_text(result, fmt)
    if "fidelities" in result.extra:
        files["fidelities"] = (
            csv_text(FIDELITY_HEADER, result.extra["fidelities"])
            if fmt == "csv"
            else jsonl_text(FIDELITY_HEADER, result.extra["fidelities"])
        )
    files["summary"] = summary_text(result, fmt)
    written = []
    for name, text in files.items():
        p = out / f"{name}.{fmt}"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(p)
    return written


def read_csv_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
