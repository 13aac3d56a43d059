"""Tabular reports: one block per metric, datasets as rows and models as columns."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

from ..metrics import AggregateReport, MetricRecord, aggregate

REPORT_BLOCKS = ("mase", "pce", "cce", "siw", "wql")
BEST_RULES = {"mase": "min", "pce": "min", "wql": "min", "cce": "abs"}
BEST_MARK = "*"
MISSING = "-"


def best_model(metric: str, cells: dict) -> str | None:
    """Column holding the best value of a row, or None if the metric has no rule."""
    rule = BEST_RULES.get(metric)
    scored = {m: st.mean for m, st in cells.items() if st is not None and not st.missing}
    if rule is None or not scored:
        return None
    key = (lambda m: abs(scored[m])) if rule == "abs" else (lambda m: scored[m])
    return min(sorted(scored), key=key)


def _cell(st, digits: int) -> str:
    if st is None or st.missing or math.isnan(st.mean):
        return MISSING
    return f"{st.mean:.{digits}f} ± {st.sem:.{digits}f}"


def _table(reports: Sequence[AggregateReport]):
    rows = sorted({r.key[0] for r in reports})
    cols = sorted({r.key[1] if len(r.key) > 1 else "" for r in reports})
    cells = {(r.key[0], r.key[1] if len(r.key) > 1 else ""): r for r in reports}
    return rows, cols, cells


def format_report(reports: Sequence[AggregateReport], digits: int = 3) -> str:
    rows, cols, cells = _table(reports)
    lines = []
    for metric in REPORT_BLOCKS:
        grid = [[metric.upper()] + cols]
        for ds in rows:
            row_stats = {m: cells[(ds, m)].stats.get(metric) if (ds, m) in cells else None for m in cols}
            best = best_model(metric, row_stats)
            grid.append([ds] + [_cell(row_stats[m], digits) + (BEST_MARK if m == best else "") for m in cols])
        widths = [max(len(r[i]) for r in grid) for i in range(len(grid[0]))]
        for i, r in enumerate(grid):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        lines.append("")
    repairs = [(r.key, r.repaired) for r in reports if r.repaired]
    if repairs:
        lines.append("quantile crossings repaired:")
        lines.extend(f"  {'/'.join(k)}: {n}" for k, n in repairs)
    else:
        lines.append("quantile crossings repaired: 0")
    lines.append(f"{BEST_MARK} best in row (lowest MASE, PCE, WQL; CCE closest to zero)")
    return "\n".join(lines) + "\n"


def emit_report(
    records: Sequence[MetricRecord] | Sequence[AggregateReport],
    out_dir,
    group_by: Sequence[str] = ("dataset", "model"),
    pooling: str = "pooled",
    stem: str = "report",
) -> dict:
    """Write ``report.csv`` (long form, plot-ready) and ``report.txt`` (aligned blocks)."""
    records = list(records)
    if not records:
        raise ValueError("no records to report")
    reports = records if isinstance(records[0], AggregateReport) else aggregate(records, group_by, pooling)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, cols, cells = _table(reports)
    csv_path, txt_path = out / f"{stem}.csv", out / f"{stem}.txt"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "dataset", "model", "mean", "sem", "n_series", "best", "repaired"])
        for metric in REPORT_BLOCKS:
            for ds in rows:
                row_stats = {m: cells[(ds, m)].stats.get(metric) if (ds, m) in cells else None for m in cols}
                best = best_model(metric, row_stats)
                for m in cols:
                    st = row_stats[m]
                    if st is None:
                        continue
                    mean = "" if st.missing else repr(st.mean)
                    sem = "" if st.missing else repr(st.sem)
                    w.writerow([metric, ds, m, mean, sem, st.n, int(m == best), cells[(ds, m)].repaired])
    txt_path.write_text(format_report(reports), encoding="utf-8")
    return {"report_csv": csv_path, "report_txt": txt_path}
