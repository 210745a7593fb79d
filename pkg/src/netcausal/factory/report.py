"""Aggregation and persistence of factorial results.

Two CSV files are written, each opening with a ``# columns:`` comment that
lists the column order:

    replications.csv   one row per (cell, replication, estimand)
    cells.csv          one row per (cell, estimand) aggregate

plus ``summary.json`` holding the aggregates and, when requested, an ANOVA
table. Floats are written with ``repr`` so reading back is bit-exact. Run
times stay out of these files so that reruns produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..errors import DataError
from .plan import FACTOR_ORDER
from .runner import ROW_FIELDS

REPLICATION_COLUMNS = (*FACTOR_ORDER, *ROW_FIELDS)
CELL_COLUMNS = (
    *FACTOR_ORDER, "cell_index", "cell_id", "estimand", "replications", "failures",
    "imse_mean", "imse_se", "width_mean", "coverage", "estimate_mean", "truth_mean",
)
INT_COLUMNS = {"size", "cell_index", "replication", "treated", "covered", "replications", "failures"}
FLOAT_COLUMNS = {
    "density", "community_exponent", "block_scale", "alpha", "resource", "truth", "estimate",
    "imse", "lower", "upper", "width", "imse_mean", "imse_se", "width_mean", "coverage",
    "estimate_mean", "truth_mean",
}


@dataclass(frozen=True)
class CellResult:
    """Per-replication measures of one (cell, estimand) with aggregates."""

    levels: Mapping
    cell_index: int
    cell_id: str
    estimand: str
    imse: tuple[float, ...]
    width: tuple[float, ...]
    covered: tuple[int, ...]
    estimates: tuple[float, ...]
    truths: tuple[float, ...]
    failures: int

    @property
    def replications(self) -> int:
        return len(self.imse) + self.failures

    @property
    def imse_mean(self) -> float:
        return float(np.mean(self.imse)) if self.imse else math.nan

    @property
    def imse_se(self) -> float:
        if len(self.imse) < 2:
            return math.nan
        return float(np.std(self.imse, ddof=1) / math.sqrt(len(self.imse)))

    @property
    def width_mean(self) -> float:
        w = [v for v in self.width if not math.isnan(v)]
        return float(np.mean(w)) if w else math.nan

    @property
    def coverage(self) -> float:
        return float(np.mean(self.covered)) if self.covered else math.nan

    def as_row(self) -> dict:
        return {
            **{f: self.levels[f] for f in FACTOR_ORDER}, "cell_index": self.cell_index,
            "cell_id": self.cell_id, "estimand": self.estimand,
            "replications": self.replications, "failures": self.failures,
            "imse_mean": self.imse_mean, "imse_se": self.imse_se, "width_mean": self.width_mean,
            "coverage": self.coverage,
            "estimate_mean": float(np.mean(self.estimates)) if self.estimates else math.nan,
            "truth_mean": float(np.mean(self.truths)) if self.truths else math.nan,
        }


def aggregate(rows: Iterable[Mapping]) -> list[CellResult]:
    """Fold replication rows into per-(cell, estimand) results, in first-seen order."""
    groups: dict[tuple, list[Mapping]] = {}
    for r in rows:
        groups.setdefault((r["cell_id"], r["estimand"]), []).append(r)
    out = []
    for (cell_id, estimand), rs in groups.items():
        rs = sorted(rs, key=lambda r: r["replication"])
        ok = [r for r in rs if r["status"] == "ok"]
        out.append(CellResult(
            levels={f: rs[0][f] for f in FACTOR_ORDER}, cell_index=rs[0]["cell_index"],
            cell_id=cell_id, estimand=estimand,
            imse=tuple(float(r["imse"]) for r in ok),
            width=tuple(float(r["width"]) if r["width"] is not None else math.nan for r in ok),
            covered=tuple(int(r["covered"]) for r in ok if r["covered"] is not None),
            estimates=tuple(float(r["estimate"]) for r in ok),
            truths=tuple(float(r["truth"]) for r in ok),
            failures=len(rs) - len(ok),
        ))
    return out


def coverage_summary(results: Iterable[Mapping], level: float | None = None) -> list[dict]:
    """Coverage rate, mean interval width and IMSE for each (cell, estimand)."""
    out = []
    for c in aggregate(results):
        out.append({"cell_id": c.cell_id, "estimand": c.estimand, "level": level,
                    "coverage": c.coverage, "width": c.width_mean, "imse": c.imse_mean,
                    "replications": c.replications})
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(columns: Sequence[str], rows: Iterable[Mapping]) -> str:
    buf = io.StringIO()
    buf.write("# columns: " + ",".join(columns) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    return v


def emit_report(
    rows: Iterable[Mapping],
    out_dir: str | Path,
    formats: Sequence[str] = ("csv", "json"),
    anova_table=None,
) -> dict[str, Path]:
    """Write replication and cell CSVs and a JSON summary; returns the paths."""
    rows = list(rows)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: cannot create report directory ({exc})") from exc
    cells = [c.as_row() for c in aggregate(rows)]
    paths = {}
    try:
        if "csv" in formats:
            paths["replications"] = out / "replications.csv"
            paths["replications"].write_text(_csv_text(REPLICATION_COLUMNS, rows), encoding="utf-8")
            paths["cells"] = out / "cells.csv"
            paths["cells"].write_text(_csv_text(CELL_COLUMNS, cells), encoding="utf-8")
        if "json" in formats:
            doc = {"columns": list(CELL_COLUMNS), "cells": cells}
            if anova_table is not None:
                doc["anova"] = anova_table.as_dicts()
            paths["summary"] = out / "summary.json"
            paths["summary"].write_text(
                json.dumps(_json_safe(doc), indent=1, sort_keys=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{out}: cannot write report ({exc})") from exc
    return paths


def _parse(column: str, text: str):
    if text == "":
        return None
    if column in INT_COLUMNS:
        return int(text)
    if column in FLOAT_COLUMNS:
        return float(text)
    return text


def read_csv(path: str | Path) -> list[dict]:
    """Read a CSV written by :func:`emit_report`, restoring numeric types."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# columns: "):
        raise DataError(f"{path}: missing column header comment")
    columns = lines[0][len("# columns: "):].split(",")
    reader = csv.reader(lines[1:])
    header = next(reader, None)
    if header != columns:
        raise DataError(f"{path}: header does not match documented columns")
    return [{c: _parse(c, v) for c, v in zip(columns, rec)} for rec in reader]


__all__ = [
    "CellResult", "aggregate", "coverage_summary", "emit_report", "read_csv",
    "REPLICATION_COLUMNS", "CELL_COLUMNS",
]
