"""Result aggregation: summary tables and self-contained SVG plots.

Plots are plain hand-written SVG with the underlying data table embedded
in an XML comment, so artifacts stay inspectable and diffable without a
plotting dependency.
"""

from __future__ import annotations

import csv
import json
import os
import xml.etree.ElementTree as ET

import numpy as np

__all__ = [
    "summarize_runs",
    "write_summary",
    "convergence_svg",
    "box_plot_svg",
    "check_svg",
]


def summarize_runs(results_by_method: dict[str, list]) -> list[dict]:
    """Table-3-style rows: per method, stats of best aggregate/criteria."""
    rows = []
    for method, results in results_by_method.items():
        aggs = np.array([r.best.aggregate for r in results])
        crits = np.stack([r.best.criteria for r in results])
        sims = [len(r.dataset) for r in results]
        row = {
            "method": method,
            "runs": len(results),
            "agg_median": float(np.median(aggs)),
            "agg_mean": float(aggs.mean()),
            "agg_std": float(aggs.std()),
            "simulations": int(np.median(sims)),
        }
        for k in range(crits.shape[1]):
            row[f"obj{k + 1}_median"] = float(np.median(crits[:, k]))
            row[f"obj{k + 1}_mean"] = float(crits[:, k].mean())
            row[f"obj{k + 1}_std"] = float(crits[:, k].std())
        rows.append(row)
    return rows


def write_summary(rows: list[dict], out_dir: str, stem: str = "summary") -> dict[str, str]:
    """Write CSV + aligned text + JSON forms of a summary table."""
    paths = {}
    if not rows:
        return paths
    fields = list(rows[0].keys())

    csv_path = os.path.join(out_dir, f"{stem}.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    paths["csv"] = csv_path

    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    widths = {f: max(len(f), max(len(fmt(r[f])) for r in rows)) for f in fields}
    txt_path = os.path.join(out_dir, f"{stem}.txt")
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write("  ".join(f.ljust(widths[f]) for f in fields) + "\n")
        for r in rows:
            fh.write("  ".join(fmt(r[f]).ljust(widths[f]) for f in fields) + "\n")
    paths["txt"] = txt_path

    json_path = os.path.join(out_dir, f"{stem}.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["json"] = json_path
    return paths


_SVG_NS = "http://www.w3.org/2000/svg"
_PALETTE = ("#1965b0", "#dc050c", "#4eb265", "#f7a600", "#882e72", "#777777")


def _svg_header(width, height, x_max, y_lo, y_hi):
    return (
        f'<svg xmlns="{_SVG_NS}" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" data-x-max="{x_max}" '
        f'data-y-min="{repr(float(y_lo))}" data-y-max="{repr(float(y_hi))}">\n'
    )


def convergence_svg(
    curves: dict[str, list[tuple[int, float]]],
    path: str,
    x_max: int,
    width: int = 640,
    height: int = 420,
) -> None:
    """Best-so-far vs simulations, one polyline per method.

    curves: method -> [(simulations, best_so_far), ...] sorted by x.
    """
    margin = 50
    ys = [v for pts in curves.values() for _, v in pts]
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if y_hi - y_lo < 1e-12:
        y_hi = y_lo + 1.0
    span_x = max(x_max, 1)

    def sx(x):
        return margin + (width - 2 * margin) * x / span_x

    def sy(y):
        return height - margin - (height - 2 * margin) * (y - y_lo) / (y_hi - y_lo)

    parts = [_svg_header(width, height, x_max, y_lo, y_hi)]
    parts.append(f"<!-- data: {json.dumps({m: pts for m, pts in curves.items()})} -->\n")
    parts.append(
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="#333"/>\n'
    )
    parts.append(
        f'<text x="{width / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">simulations (max {x_max})</text>\n'
    )
    parts.append(
        f'<text x="14" y="{height / 2:.1f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {height / 2:.1f})">best aggregate</text>\n'
    )
    for i, (method, pts) in enumerate(curves.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(
            f'<polyline id="{method}" points="{coords}" fill="none" '
            f'stroke="{color}" stroke-width="1.5"/>\n'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 16 * i + 10}" '
            f'font-size="11" fill="{color}">{method}</text>\n'
        )
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(parts))


def box_plot_svg(
    distributions: dict[str, list[float]],
    path: str,
    title: str = "",
    width: int = 480,
    height: int = 360,
) -> None:
    """Median/quartile/whisker boxes, one per labeled distribution."""
    margin = 50
    vals = [v for d in distributions.values() for v in d]
    y_lo, y_hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if y_hi - y_lo < 1e-12:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sy(y):
        return height - margin - (height - 2 * margin) * (y - y_lo) / (y_hi - y_lo)

    n = max(len(distributions), 1)
    slot = (width - 2 * margin) / n
    parts = [_svg_header(width, height, n, y_lo, y_hi)]
    parts.append(f"<!-- data: {json.dumps(distributions)} -->\n")
    if title:
        parts.append(
            f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="13">{title}</text>\n'
        )
    parts.append(
        f'<rect x="{margin}" y="{margin}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="#333"/>\n'
    )
    for i, (label, data) in enumerate(distributions.items()):
        color = _PALETTE[i % len(_PALETTE)]
        arr = np.asarray(sorted(data), dtype=np.float64)
        q1, med, q3 = (float(np.percentile(arr, q)) for q in (25, 50, 75))
        lo, hi = float(arr[0]), float(arr[-1])
        cx = margin + slot * (i + 0.5)
        bw = slot * 0.4
        parts.append(
            f'<line x1="{cx:.1f}" y1="{sy(lo):.1f}" x2="{cx:.1f}" y2="{sy(hi):.1f}" stroke="{color}"/>\n'
        )
        parts.append(
            f'<rect x="{cx - bw / 2:.1f}" y="{sy(q3):.1f}" width="{bw:.1f}" '
            f'height="{max(sy(q1) - sy(q3), 0.5):.1f}" fill="{color}" fill-opacity="0.25" stroke="{color}"/>\n'
        )
        parts.append(
            f'<line x1="{cx - bw / 2:.1f}" y1="{sy(med):.1f}" x2="{cx + bw / 2:.1f}" '
            f'y2="{sy(med):.1f}" stroke="{color}" stroke-width="2"/>\n'
        )
        parts.append(
            f'<text x="{cx:.1f}" y="{height - margin + 16}" text-anchor="middle" '
            f'font-size="11">{label}</text>\n'
        )
    parts.append("</svg>\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(parts))


def check_svg(path: str) -> bool:
    """Minimal well-formedness check used by the test suite.

    Requires parseable XML, an svg root in the SVG namespace, explicit
    width/height, and at least one drawable element.
    """
    tree = ET.parse(path)
    root = tree.getroot()
    if root.tag != f"{{{_SVG_NS}}}svg":
        raise ValueError(f"root element is {root.tag}, not svg")
    if "width" not in root.attrib or "height" not in root.attrib:
        raise ValueError("svg missing width/height")
    drawables = root.findall(f".//{{{_SVG_NS}}}polyline") + root.findall(
        f".//{{{_SVG_NS}}}rect"
    ) + root.findall(f".//{{{_SVG_NS}}}line")
    if not drawables:
        raise ValueError("svg has no drawable elements")
    return True
