"""Minimal SVG line charts (polyline plot with axes and legend), no plotting
dependency."""

from __future__ import annotations

import numpy as np

PALETTE = ("#1f6fb2", "#d1495b", "#3a9d5d", "#8b5fbf", "#e0902e", "#3bb3c3")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / max(n - 1, 1)
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s for s in (1.0, 2.0, 2.5, 5.0, 10.0) if s * mag >= raw) * mag
    start = np.ceil(lo / step) * step
    return [float(start + i * step) for i in range(int((hi - start) / step) + 1)]


def render_line_chart(series, title: str = "", x_label: str = "", y_label: str = "",
                      width: int = 640, height: int = 400) -> str:
    """SVG text for a chart of (label, xs, ys) series."""
    ml, mr, mt, mb = 60, 16, 30, 42
    pw, ph = width - ml - mr, height - mt - mb
    xs_all = np.concatenate([np.asarray(xs, dtype=float) for _, xs, _ in series])
    ys_all = np.concatenate([np.asarray(ys, dtype=float) for _, _, ys in series])
    ys_all = ys_all[np.isfinite(ys_all)]
    x0, x1 = float(xs_all.min()), float(xs_all.max())
    y0, y1 = (float(ys_all.min()), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{title}</text>',
    ]
    axis = 'stroke="#444" stroke-width="1"'
    parts.append(f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" {axis}/>')
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" {axis}/>')
    for tx in _ticks(x0, x1):
        if x0 <= tx <= x1:
            parts.append(f'<line x1="{px(tx):.1f}" y1="{mt + ph}" x2="{px(tx):.1f}" '
                         f'y2="{mt + ph + 4}" {axis}/>')
            parts.append(f'<text x="{px(tx):.1f}" y="{mt + ph + 16}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="10">{tx:g}</text>')
    for ty in _ticks(y0, y1):
        if y0 <= ty <= y1:
            parts.append(f'<line x1="{ml - 4}" y1="{py(ty):.1f}" x2="{ml}" '
                         f'y2="{py(ty):.1f}" {axis}/>')
            parts.append(f'<text x="{ml - 7}" y="{py(ty) + 3:.1f}" text-anchor="end" '
                         f'font-family="sans-serif" font-size="10">{ty:g}</text>')
    if x_label:
        parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11" '
                     f'transform="rotate(-90 14 {mt + ph / 2:.1f})">{y_label}</text>')
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(ys)
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs[ok], ys[ok]))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = mt + 14 + 14 * i
        parts.append(f'<line x1="{ml + pw - 120}" y1="{ly - 4}" x2="{ml + pw - 100}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw - 95}" y="{ly}" font-family="sans-serif" '
                     f'font-size="10">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def save_line_chart(series, path, **kwargs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_line_chart(series, **kwargs) + "\n")
