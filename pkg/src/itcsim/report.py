"""Static text and SVG reports of a finished study."""
from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .estimators import METHODS
from .harness import ReplicateRecord

LABELS = {"bucher": "Bucher", "maic": "MAIC", "gcomp": "G-computation"}


def _cell(value, mcse) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "NA"
    if mcse is None or (isinstance(mcse, float) and math.isnan(mcse)):
        return f"{value:.3f} (NA)"
    return f"{value:.3f} ({mcse:.3f})"


def render_text(summary: dict) -> str:
    """Fixed-width results table: each measure followed by its MCSE in parentheses."""
    lines = [
        f"itcsim report (engine {summary.get('version', '?')}, seed {summary.get('seed', '?')}, "
        f"profile {summary.get('profile', '?')})",
        f"family: {summary.get('family', '?')}   replicates: {summary.get('replicates', '?')}   "
        f"bootstrap: {summary.get('bootstrap', '?')}   truth: {summary['summaries'][0]['truth']:.3f}",
        "",
        f"{'Method':<15}{'Bias':>18}{'MSE':>18}{'Coverage':>18}{'n_valid':>9}",
    ]
    for row in summary["summaries"]:
        lines.append(
            f"{LABELS.get(row['method'], row['method']):<15}"
            f"{_cell(row['bias'], row['bias_mcse']):>18}"
            f"{_cell(row['mse'], row['mse_mcse']):>18}"
            f"{_cell(row['coverage'], row['coverage_mcse']):>18}"
            f"{row['n_valid']:>9d}"
        )
    return "\n".join(lines) + "\n"


def render_svg(records: Sequence[ReplicateRecord], summary: dict, bins: int = 40) -> str:
    """One histogram strip of point estimates per method on a shared axis."""
    methods = [m for m in METHODS if records and m in records[0].estimates]
    values = {
        m: np.array([r.estimates[m].delta_hat for r in records if r.estimates[m].valid and m in r.estimates])
        for m in methods
    }
    truth = float(summary["summaries"][0]["truth"])
    pooled = np.concatenate([v for v in values.values() if v.size] or [np.array([truth])])
    lo, hi = float(min(pooled.min(), truth)), float(max(pooled.max(), truth))
    if hi - lo < 1e-9:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    edges = np.linspace(lo, hi, bins + 1)

    width, left, right, strip, top = 720, 130, 20, 90, 40
    plot_w = width - left - right
    height = top + strip * len(methods) + 50

    def sx(v):
        return left + (v - lo) / (hi - lo) * plot_w

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f"<desc>itcsim {escape(str(summary.get('version', '?')))} seed={escape(str(summary.get('seed', '?')))} "
        f"profile={escape(str(summary.get('profile', '?')))}</desc>",
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{left}" y="20">Point estimates over {len(records)} replicates</text>',
    ]
    for i, m in enumerate(methods):
        y0 = top + strip * (i + 1) - 10
        counts, _ = np.histogram(values[m], bins=edges)
        peak = max(int(counts.max()) if counts.size else 0, 1)
        out.append(f'<text x="10" y="{y0 - strip / 2 + 15:.1f}">{escape(LABELS.get(m, m))}</text>')
        out.append(f'<line x1="{left}" y1="{y0}" x2="{width - right}" y2="{y0}" stroke="#999"/>')
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            if c == 0:
                continue
            h = (strip - 20) * c / peak
            out.append(
                f'<rect x="{sx(a):.2f}" y="{y0 - h:.2f}" width="{sx(b) - sx(a):.2f}" '
                f'height="{h:.2f}" fill="#4a7ab5" stroke="white" stroke-width="0.5"/>'
            )
    axis_y = top + strip * len(methods) + 5
    out.append(f'<line x1="{left}" y1="{axis_y}" x2="{width - right}" y2="{axis_y}" stroke="black"/>')
    for tick in np.linspace(lo, hi, 6):
        out.append(f'<line x1="{sx(tick):.2f}" y1="{axis_y}" x2="{sx(tick):.2f}" y2="{axis_y + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(tick):.2f}" y="{axis_y + 18}" text-anchor="middle">{tick:.2f}</text>')
    out.append(
        f'<line x1="{sx(truth):.2f}" y1="{top}" x2="{sx(truth):.2f}" y2="{axis_y}" '
        f'stroke="#c0392b" stroke-dasharray="4,3"/>'
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
