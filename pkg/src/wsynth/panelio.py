"""CSV ingestion and emission for panels and plain sample files."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .measures import EmpiricalMeasure, PanelDataset, from_samples


class SchemaError(ValueError):
    """Input file does not follow the expected layout."""


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _period_sort(labels: list[str]) -> list[str]:
    # numeric labels sort numerically, anything else keeps first-appearance order
    if all(_is_number(p) for p in labels):
        return sorted(labels, key=float)
    return labels


def read_panel(
    path,
    treated: str,
    cutoff: str,
    period_order: Sequence[str] | None = None,
) -> PanelDataset:
    """Long-format CSV with columns unit,period,<one column per outcome dimension>.

    ``cutoff`` names the LAST pre-treatment period. Unit order after the
    treated unit follows first appearance in the file.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "unit" or header[1] != "period":
            raise SchemaError(f"{path}: header must be unit,period,v1[,v2...], got {','.join(header)}")
        rows = defaultdict(list)
        units, periods = [], []
        seen_units, seen_periods = set(), set()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            u, p = row[0].strip(), row[1].strip()
            try:
                vals = [float(c) for c in row[2:]]
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric outcome value") from None
            if not np.all(np.isfinite(vals)):
                raise SchemaError(f"{path}:{lineno}: non-finite outcome value")
            if u not in seen_units:
                seen_units.add(u)
                units.append(u)
            if p not in seen_periods:
                seen_periods.add(p)
                periods.append(p)
            rows[(u, p)].append(vals)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    if period_order is not None:
        order = [str(p) for p in period_order]
        missing = set(periods) - set(order)
        if missing:
            raise SchemaError(f"period order omits periods present in the data: {sorted(missing)}")
        periods = order
    else:
        periods = _period_sort(periods)
    if treated not in units:
        raise SchemaError(f"treated unit {treated!r} not found in {path}")
    if cutoff not in periods:
        raise SchemaError(f"cutoff period {cutoff!r} not found in {path}")
    t0 = periods.index(cutoff) + 1
    if t0 >= len(periods):
        raise SchemaError(f"cutoff {cutoff!r} leaves no post-treatment period")
    ordered = [treated] + [u for u in units if u != treated]
    cells = {}
    for u in ordered:
        for p in periods:
            if (u, p) not in rows:
                raise SchemaError(f"no observations for unit {u!r} in period {p!r}")
            cells[(u, p)] = from_samples(rows[(u, p)])
    return PanelDataset(tuple(ordered), tuple(periods), t0, cells)


def write_panel(panel: PanelDataset, path) -> Path:
    """Inverse of read_panel for uniform-weight cells; floats written with repr."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["unit", "period", *[f"v{k + 1}" for k in range(panel.dim)]])
        for u in panel.units:
            for p in panel.periods:
                m = panel.cell(u, p)
                if not np.allclose(m.weights, 1.0 / m.size, rtol=0, atol=1e-15):
                    raise ValueError("only uniform-weight cells can be written as samples")
                for pt in m.points:
                    w.writerow([u, p, *[repr(float(v)) for v in pt]])
    return path


def read_samples(path) -> EmpiricalMeasure:
    """One atom per row; an optional non-numeric header line is skipped."""
    path = Path(path)
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and not all(_is_number(c) for c in row):
                continue
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise SchemaError(f"{path}: no samples")
    try:
        return from_samples(rows)
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
