"""CSV / Markdown renderings of the metric tables, plus metric dumps."""
from __future__ import annotations

import csv
import io
from decimal import ROUND_HALF_UP, Decimal

from .analysis import ChannelStatsRow, MetricRow

LOW_TO_HIGH = "low to high"
HIGH_TO_LOW = "high to low"
DIRECTIONS = (LOW_TO_HIGH, HIGH_TO_LOW)
TABLES = ("change", "similarity", "colour")


def fmt(x, places: int) -> str:
    """Half-up decimal rounding, so 1046.5 shows as 1047."""
    if x is None:
        return "n/a"
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def _group(rows):
    """label -> {direction: row}, labels in order of first appearance."""
    out = {}
    for r in rows:
        out.setdefault(r.label, {})[r.direction] = r
    return out


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return sum(vals) / len(vals) if vals else None


def _change_table(rows):
    header = ["", "Low to high", "High to low"]
    body = []
    for label, by_dir in _group(rows).items():
        cells = [label]
        for d in DIRECTIONS:
            r = by_dir.get(d)
            cells.append("" if r is None else fmt(100 * r.change_proportion, 1) + "%")
        body.append(cells)
    return [header], body


SIM_COLUMNS = ("MSE", "PSNR", "SSIM")


def _similarity_table(rows):
    groups = ("Low to high", "High to low", "Average")
    top = [""] + [g for g in groups for _ in SIM_COLUMNS]
    sub = [""] + list(SIM_COLUMNS) * 3
    body = []
    for label, by_dir in _group(rows).items():
        cells = [label]
        present = [by_dir.get(d) for d in DIRECTIONS]
        for r in present:
            cells += ["", "", ""] if r is None else [fmt(r.mse, 0), fmt(r.psnr, 1), fmt(r.ssim, 2)]
        have = [r for r in present if r is not None]
        cells += [fmt(_mean([r.mse for r in have]), 0), fmt(_mean([r.psnr for r in have]), 1),
                  fmt(_mean([r.ssim for r in have]), 2)]
        body.append(cells)
    return [top, sub], body


def _colour_table(rows):
    groups = ("Original", "Translated", "Difference (%)")
    chans = ("Red", "Green", "Blue")
    top = [""] + [g for g in groups for _ in chans]
    sub = [""] + list(chans) * 3
    body = []
    for r in rows:
        body.append([r.label] + [fmt(v, 0) for v in r.original] + [fmt(v, 0) for v in r.translated]
                    + [fmt(v, 1) for v in r.difference_pct])
    return [top, sub], body


def _csv_header(headers):
    if len(headers) == 1:
        return ["label"] + [h.lower().replace(" ", "_") for h in headers[0][1:]]
    top, sub = headers
    return ["label"] + [
        f"{t.lower().replace(' (%)', '_pct').replace(' ', '_')}_{s.lower()}" for t, s in zip(top[1:], sub[1:])
    ]


def render_report(rows, format: str = "markdown", table: str | None = None) -> str:
    """Render rows as one of the three tables.

    ``table`` is ``change`` (changed-pixel proportions), ``similarity``
    (MSE/PSNR/SSIM with per-direction and average groups) or ``colour``
    (average-image channel means); by default it follows the row type.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to render")
    if table is None:
        table = "colour" if isinstance(rows[0], ChannelStatsRow) else "similarity"
    if table not in TABLES:
        raise ValueError(f"table must be one of {TABLES}")
    builder = {"change": _change_table, "similarity": _similarity_table, "colour": _colour_table}[table]
    headers, body = builder(rows)
    if format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_csv_header(headers))
        w.writerows(body)
        return buf.getvalue()
    if format != "markdown":
        raise ValueError(f"unknown format {format!r}")
    lines = []
    for i, h in enumerate(headers):
        if i == 0 or len(headers) == 1:
            lines.append("| " + " | ".join(h) + " |")
            lines.append("|" + "|".join("---" if j == 0 else "---:" for j in range(len(h))) + "|")
        else:
            lines.append("| " + " | ".join(h) + " |")
    lines += ["| " + " | ".join(r) + " |" for r in body]
    return "\n".join(lines) + "\n"


def _num(s):
    if s in ("", "n/a"):
        return None
    return float(s.rstrip("%"))


def parse_report(text: str, table: str):
    """Parse CSV produced by :func:`render_report` back into rows.

    Values come back at display precision; change proportions return as
    fractions. Average columns are derived values and are not returned.
    """
    reader = csv.reader(io.StringIO(text))
    next(reader)
    rows = []
    for cells in reader:
        label = cells[0]
        if table == "change":
            for d, c in zip(DIRECTIONS, cells[1:3]):
                if c:
                    rows.append(MetricRow(label, d, _num(c) / 100, float("nan"), float("nan"), float("nan")))
        elif table == "similarity":
            for i, d in enumerate(DIRECTIONS):
                m, p, s = cells[1 + 3 * i : 4 + 3 * i]
                if m:
                    rows.append(MetricRow(label, d, float("nan"), _num(m), _num(p), _num(s)))
        elif table == "colour":
            v = [_num(c) for c in cells[1:]]
            rows.append(ChannelStatsRow(label, tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9])))
        else:
            raise ValueError(f"table must be one of {TABLES}")
    return rows


def metric_dump(rows) -> str:
    """Line-delimited ``direction,metric,value`` records at full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "metric", "value"])
    for r in rows:
        if isinstance(r, MetricRow):
            name = f"{r.label}: {r.direction}" if r.label else r.direction
            for k in ("change_proportion", "mse", "psnr", "ssim", "n_pairs"):
                w.writerow([name, k, repr(getattr(r, k))])
        else:
            for c, ch in enumerate("rgb"):
                w.writerow([r.label, f"original_{ch}", repr(r.original[c])])
                w.writerow([r.label, f"translated_{ch}", repr(r.translated[c])])
                d = r.difference_pct[c]
                w.writerow([r.label, f"difference_pct_{ch}", "n/a" if d is None else repr(d)])
    return buf.getvalue()


def read_metric_dump(text: str) -> list[tuple[str, str, float | None]]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append((r["direction"], r["metric"], None if r["value"] == "n/a" else float(r["value"])))
    return out
