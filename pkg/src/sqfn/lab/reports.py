"""Report bundles and their on-disk form: report.json, tables/*.csv and log.txt.

Everything written here is a pure function of the bundle. Floats are printed
with 12 significant digits and JSON keys are sorted, so equal bundles give
byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .._validation import ArgumentError

FLOAT_DIGITS = 12


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, **row) -> None:
        unknown = set(row) - set(self.columns)
        if unknown:
            raise ArgumentError(f"unknown columns {sorted(unknown)}")
        self.rows.append(row)


@dataclass
class ReportBundle:
    report: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    log: list = field(default_factory=list)

    def table(self, name: str, columns) -> Table:
        if name not in self.tables:
            self.tables[name] = Table(list(columns))
        return self.tables[name]

    def note(self, message: str) -> None:
        self.log.append(message)


def canonical(value):
    """JSON-ready copy with numpy scalars unwrapped and floats rounded."""
    if isinstance(value, dict):
        return {str(k): canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [canonical(v) for v in value]
    if isinstance(value, np.ndarray):
        return [canonical(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(f"{value:.{FLOAT_DIGITS}g}")
    return value


def _cell(value) -> str:
    value = canonical(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_json(report: dict) -> str:
    return json.dumps(canonical(report), indent=2, sort_keys=True) + "\n"


def render_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([_cell(row.get(c)) for c in table.columns])
    return buf.getvalue()


def emit_reports(bundle: ReportBundle, out_dir) -> dict:
    """Write the bundle under ``out_dir`` and return the paths written."""
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    paths = {"report": out / "report.json", "log": out / "log.txt", "tables": {}}
    paths["report"].write_text(render_json(bundle.report))
    for name in sorted(bundle.tables):
        path = out / "tables" / f"{name}.csv"
        path.write_text(render_csv(bundle.tables[name]))
        paths["tables"][name] = path
    paths["log"].write_text("".join(line + "\n" for line in bundle.log))
    return paths
