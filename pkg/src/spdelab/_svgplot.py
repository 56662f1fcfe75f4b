"""Minimal dependency-free SVG line plots for experiment outputs."""

from __future__ import annotations

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def line_plot(path, x, ys, labels=None, title="", xlabel="", ylabel="",
              logx=False, logy=False, width=640, height=420) -> None:
    """Write a simple multi-series line plot as an SVG file."""
    x = np.asarray(x, dtype=float)
    series = [np.asarray(y, dtype=float) for y in ys]
    labels = labels or [f"series {i}" for i in range(len(series))]

    def tx(v):
        return np.log10(v) if logx else v

    def ty(v):
        return np.log10(v) if logy else v

    xs = tx(x)
    all_y = np.concatenate([ty(y) for y in series])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y
    L, R, T, B = 70, 20, 40, 50

    def px(v):
        return L + (v - x_lo) / (x_hi - x_lo) * (width - L - R)

    def py(v):
        return height - B - (v - y_lo) / (y_hi - y_lo) * (height - T - B)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
        f'<line x1="{L}" y1="{height - B}" x2="{width - R}" y2="{height - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{height - B}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="16" y="{height / 2:.0f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {height / 2:.0f})">{ylabel}</text>',
    ]
    for i, xv in enumerate(np.linspace(x_lo, x_hi, 5)):
        label = f"{10 ** xv:.3g}" if logx else f"{xv:.3g}"
        parts.append(f'<text x="{px(xv):.1f}" y="{height - B + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{label}</text>')
    for yv in np.linspace(y_lo, y_hi, 5):
        label = f"{10 ** yv:.3g}" if logy else f"{yv:.3g}"
        parts.append(f'<text x="{L - 6}" y="{py(yv) + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{label}</text>')
    for i, y in enumerate(series):
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ty(y)))
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.6"/>')
        parts.append(f'<text x="{width - R - 6}" y="{T + 14 + 14 * i}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="11" fill="{color}">{labels[i]}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
