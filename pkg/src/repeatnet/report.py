"""Metrics files (CSV / JSON lines) and a dependency-free SVG line chart.

Outputs are byte-stable: identical inputs produce identical files.
"""
from __future__ import annotations

import csv
import io
import json
from html import escape
from pathlib import Path

METRIC_FIELDS = ("epoch", "train_loss", "train_acc", "test_acc", "lr")


def _row(record) -> dict:
    d = record if isinstance(record, dict) else record.__dict__
    return {k: d[k] for k in METRIC_FIELDS}


def emit_metrics(records, path, fmt: str = "csv") -> Path:
    """Write per-epoch records as ``csv`` (header always present) or ``jsonl``."""
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in records:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in _row(r).items()})
        text = buf.getvalue()
    elif fmt == "jsonl":
        text = "".join(json.dumps(_row(r), sort_keys=True) + "\n" for r in records)
    else:
        raise ValueError(f"unknown metrics format {fmt!r}")
    path.write_text(text)
    return path


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def _fmt(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def emit_plot(series: dict[str, list[tuple[float, float]]], path, title: str = "",
              xlabel: str = "x", ylabel: str = "y", width: int = 640, height: int = 400) -> Path:
    """Line chart of ``{label: [(x, y), ...]}`` written as SVG."""
    margin_l, margin_r, margin_t, margin_b = 60, 130, 40, 50
    pts = [p for s in series.values() for p in s]
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - margin_l - margin_r, height - margin_t - margin_b

    def sx(x):
        return margin_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return margin_t + ph - (y - y0) / (y1 - y0) * ph

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15" font-family="sans-serif">{escape(title)}</text>',
        f'<line x1="{margin_l}" y1="{margin_t + ph}" x2="{margin_l + pw}" y2="{margin_t + ph}" stroke="black"/>',
        f'<line x1="{margin_l}" y1="{margin_t}" x2="{margin_l}" y2="{margin_t + ph}" stroke="black"/>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{margin_t + ph + 16}" text-anchor="middle" font-size="11" '
                   f'font-family="sans-serif">{_fmt(xv)}</text>')
        out.append(f'<text x="{margin_l - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" font-size="11" '
                   f'font-family="sans-serif">{_fmt(yv)}</text>')
    out.append(f'<text x="{margin_l + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="13" '
               f'font-family="sans-serif">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{margin_t + ph / 2:.1f}" text-anchor="middle" font-size="13" font-family="sans-serif" '
               f'transform="rotate(-90 16 {margin_t + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, s) in enumerate(series.items()):
        color = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        if coords:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{coords}"/>')
        ly = margin_t + 14 + 18 * i
        out.append(f'<line x1="{margin_l + pw + 10}" y1="{ly}" x2="{margin_l + pw + 30}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{margin_l + pw + 35}" y="{ly + 4}" font-size="11" font-family="sans-serif">'
                   f'{escape(label)}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path
