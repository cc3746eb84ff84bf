"""Report and plot emission from a completed run directory.

Reports re-read the per-cell files, so every number they carry can be traced
back to (and recomputed from) a stored accuracy matrix.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import SCHEMA_VERSION
from .errors import ConfigError, StateError

PLOT_WIDTH = 640
PLOT_HEIGHT = 420
MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
           "#8c564b", "#17becf", "#7f7f7f")


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def load_run_dir(run_dir):
    """Manifest, per-cell payloads, failures; corrupt cells are listed, not fatal."""
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"no manifest.json under {run_dir}")
    manifest = _load_json(manifest_path)
    failures = []
    fail_path = os.path.join(run_dir, "failures.json")
    if os.path.exists(fail_path):
        failures = _load_json(fail_path)
    cells, corrupt = {}, []
    for cid in manifest.get("cells", []):
        cell_dir = os.path.join(run_dir, f"cell-{cid}")
        try:
            payload = _load_json(os.path.join(cell_dir, "result.json"))
            timing_path = os.path.join(cell_dir, "timing.json")
            payload["_timing"] = _load_json(timing_path) if os.path.exists(timing_path) else None
            cells[cid] = payload
        except (OSError, json.JSONDecodeError) as exc:
            corrupt.append({"cell_id": cid, "reason": str(exc)})
    if not cells and not failures:
        raise StateError(f"no cells found under {run_dir}")
    return manifest, cells, failures, corrupt


def config_hash(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload.get("config", {}), sort_keys=True).encode()
    ).hexdigest()


def _cell_rows(manifest, cid, payload):
    axes = manifest.get("cell_axes", {}).get(cid, {})
    chash = config_hash(payload)
    timing = payload.get("_timing")
    rows = []
    for r, seed in enumerate(payload["replicate_seeds"]):
        met = payload["replicate_metrics"][r]
        steps = int(np.sum(payload["steps_per_task"][r]))
        wall = ""
        if timing is not None:
            wall = repr(float(np.sum(timing["wall_seconds_per_task"][r])))
        rows.append({
            "cell_id": cid,
            "strategy": axes.get("strategy", payload["config"]["strategy"]["kind"]),
            "axis": manifest.get("axis") or "",
            "axis_value": axes.get(manifest.get("axis"), ""),
            "replicate": r,
            "seed": seed,
            "acc": met["acc"],
            "bwt": "" if met["bwt"] is None else met["bwt"],
            "steps_total": steps,
            "wall_seconds": wall,
            "config_sha256": chash,
        })
    return rows


CSV_COLUMNS = ("cell_id", "strategy", "axis", "axis_value", "replicate", "seed",
               "acc", "bwt", "steps_total", "wall_seconds", "config_sha256")


def emit_report(run_dir, fmt: str = "csv"):
    """Write report.csv or report.json next to the cells; returns the path."""
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r} (csv or json)")
    manifest, cells, failures, corrupt = load_run_dir(run_dir)
    if fmt == "csv":
        lines = [",".join(CSV_COLUMNS)]
        for cid in sorted(cells):
            for row in _cell_rows(manifest, cid, cells[cid]):
                lines.append(",".join(str(row[c]) for c in CSV_COLUMNS))
        path = os.path.join(run_dir, "report.csv")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")
        return path
    doc = {
        "schema_version": SCHEMA_VERSION,
        "protocol": manifest.get("protocol"),
        "axis": manifest.get("axis"),
        "cells": {
            cid: {
                "axes": manifest.get("cell_axes", {}).get(cid, {}),
                "config_sha256": config_hash(payload),
                "mean": payload["metrics"],
                "replicates": [
                    {"seed": payload["replicate_seeds"][r], **payload["replicate_metrics"][r]}
                    for r in range(len(payload["replicate_seeds"]))
                ],
            }
            for cid, payload in sorted(cells.items())
        },
        "failures": failures,
        "corrupt_cells": corrupt,
        "trends": manifest.get("trends", []),
    }
    path = os.path.join(run_dir, "report.json")
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")
    return path


# -- plotting ---------------------------------------------------------------


def _series_for_axis(manifest, cells, axis):
    """strategy -> sorted [(x, mean, lo, hi)] for each metric."""
    series = {"acc": {}, "bwt": {}}
    categorical = False
    xvals = set()
    for cid, payload in cells.items():
        axes = manifest.get("cell_axes", {}).get(cid, {})
        if axis not in axes:
            continue
        x = axes[axis]
        if not isinstance(x, (int, float)) or isinstance(x, bool):
            categorical = True
        xvals.add(x)
        strat = axes.get("strategy", payload["config"]["strategy"]["kind"])
        for metric in ("acc", "bwt"):
            vals = [m[metric] for m in payload["replicate_metrics"] if m[metric] is not None]
            if not vals:
                continue
            series[metric].setdefault(strat, []).append(
                (x, float(np.mean(vals)), float(np.min(vals)), float(np.max(vals)))
            )
    if not xvals:
        available = sorted({k for cid in cells for k in manifest.get("cell_axes", {}).get(cid, {})})
        raise ConfigError(f"axis {axis!r} not present; available: {', '.join(available)}")
    order = sorted(xvals, key=lambda v: (str(type(v)), v))
    xpos = {v: i for i, v in enumerate(order)} if categorical else None
    for metric in series:
        for strat in series[metric]:
            series[metric][strat].sort(key=lambda p: (xpos[p[0]] if xpos else p[0]))
    return series, order, xpos


def _svg_chart(title, xlabel, series, order, xpos):
    """Minimal line chart: one polyline per strategy, min/max whisker bars."""
    left, right = MARGIN, PLOT_WIDTH - 16
    top, bottom = 28, PLOT_HEIGHT - MARGIN
    xs_numeric = [(xpos[v] if xpos else v) for v in order]
    x_lo, x_hi = min(xs_numeric), max(xs_numeric)
    span_x = (x_hi - x_lo) or 1.0
    ys = [v for pts in series.values() for p in pts for v in (p[2], p[3])]
    y_lo, y_hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if y_hi - y_lo < 1e-9:
        y_lo, y_hi = y_lo - 0.05, y_hi + 0.05
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return left + (x - x_lo) / span_x * (right - left)

    def sy(y):
        return bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_WIDTH}" height="{PLOT_HEIGHT}">',
        f'<text x="{PLOT_WIDTH / 2:.1f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="#333"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="#333"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{PLOT_HEIGHT - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
    ]
    for v in order:
        x = sx(xpos[v] if xpos else v)
        out.append(f'<line x1="{x:.1f}" y1="{bottom}" x2="{x:.1f}" y2="{bottom + 4}" stroke="#333"/>')
        out.append(
            f'<text x="{x:.1f}" y="{bottom + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{v}</text>'
        )
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        out.append(
            f'<text x="{left - 6}" y="{sy(yv) + 3:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{yv:.2f}</text>'
        )
    for i, strat in enumerate(sorted(series)):
        color = PALETTE[i % len(PALETTE)]
        pts = series[strat]
        coords = " ".join(
            f"{sx(xpos[p[0]] if xpos else p[0]):.1f},{sy(p[1]):.1f}" for p in pts
        )
        out.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
            f'points="{coords}" data-strategy="{strat}"/>'
        )
        for p in pts:
            x = sx(xpos[p[0]] if xpos else p[0])
            out.append(
                f'<line x1="{x:.1f}" y1="{sy(p[2]):.1f}" x2="{x:.1f}" y2="{sy(p[3]):.1f}" '
                f'stroke="{color}" stroke-width="0.8"/>'
            )
            out.append(f'<circle cx="{x:.1f}" cy="{sy(p[1]):.1f}" r="2.5" fill="{color}"/>')
        out.append(
            f'<text x="{right - 4}" y="{top + 14 * (i + 1)}" text-anchor="end" fill="{color}" '
            f'font-family="sans-serif" font-size="11">{strat}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot_data(run_dir, axis: str | None = None):
    """SVG line chart per metric plus the mirroring TSV; returns written paths."""
    manifest, cells, _failures, _corrupt = load_run_dir(run_dir)
    if axis is None:
        axis = manifest.get("axis")
    if not axis:
        raise ConfigError("run has no plot axis; pass one explicitly")
    series, order, xpos = _series_for_axis(manifest, cells, axis)
    plot_dir = os.path.join(run_dir, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    paths = []
    for metric in ("acc", "bwt"):
        if not series[metric]:
            continue
        svg = _svg_chart(f"{metric.upper()} vs {axis}", axis, series[metric], order, xpos)
        svg_path = os.path.join(plot_dir, f"{metric}.svg")
        with open(svg_path, "w") as f:
            f.write(svg)
        tsv_path = os.path.join(plot_dir, f"{metric}.tsv")
        with open(tsv_path, "w") as f:
            f.write(f"{axis}\tstrategy\tmean\tmin\tmax\n")
            for strat in sorted(series[metric]):
                for x, mean, lo, hi in series[metric][strat]:
                    f.write(f"{x}\t{strat}\t{mean!r}\t{lo!r}\t{hi!r}\n")
        paths.extend([svg_path, tsv_path])
    return paths
