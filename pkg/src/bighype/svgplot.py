"""Minimal SVG line charts with a log-scale y axis."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _fmt(v):
    return f"{v:.2f}"


def _log_ticks(lo, hi):
    a, b = math.floor(lo), math.ceil(hi)
    step = max(1, (b - a) // 6)
    return list(range(a, b + 1, step))


def _lin_ticks(lo, hi, count=5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-9 * step:
        out.append(t)
        t += step
    return out


def panel(series, x0, y0, w, h, title, xlabel, ylabel, floor=1e-16):
    """SVG fragment for one chart; ``series`` is a list of ``(label, xs, ys)``."""
    pts = [(x, max(y, floor)) for _, xs, ys in series for x, y in zip(xs, ys) if math.isfinite(y)]
    parts = [f'<g font-family="sans-serif" font-size="11">']
    parts.append(f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 - 8)}" text-anchor="middle" font-size="13">{escape(title)}</text>')
    parts.append(f'<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#444"/>')
    if not pts:
        parts.append("</g>")
        return "\n".join(parts)
    xmin = min(p[0] for p in pts)
    xmax = max(p[0] for p in pts)
    if xmax == xmin:
        xmax = xmin + 1
    lmin = math.log10(min(p[1] for p in pts))
    lmax = math.log10(max(p[1] for p in pts))
    if lmax - lmin < 1e-9:
        lmin, lmax = lmin - 1, lmax + 1

    def sx(v):
        return x0 + (v - xmin) / (xmax - xmin) * w

    def sy(v):
        return y0 + h - (math.log10(max(v, floor)) - lmin) / (lmax - lmin) * h

    for e in _log_ticks(lmin, lmax):
        if lmin - 1e-9 <= e <= lmax + 1e-9:
            yy = y0 + h - (e - lmin) / (lmax - lmin) * h
            parts.append(f'<line x1="{x0}" y1="{_fmt(yy)}" x2="{x0 + w}" y2="{_fmt(yy)}" stroke="#ddd"/>')
            parts.append(f'<text x="{x0 - 4}" y="{_fmt(yy + 4)}" text-anchor="end">1e{e}</text>')
    for t in _lin_ticks(xmin, xmax):
        xx = sx(t)
        label = f"{t:g}"
        parts.append(f'<line x1="{_fmt(xx)}" y1="{y0 + h}" x2="{_fmt(xx)}" y2="{y0 + h + 4}" stroke="#444"/>')
        parts.append(f'<text x="{_fmt(xx)}" y="{y0 + h + 16}" text-anchor="middle">{label}</text>')
    parts.append(f'<text x="{_fmt(x0 + w / 2)}" y="{y0 + h + 32}" text-anchor="middle">{escape(xlabel)}</text>')
    parts.append(
        f'<text x="{x0 - 44}" y="{_fmt(y0 + h / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 {x0 - 44} {_fmt(y0 + h / 2)})">{escape(ylabel)}</text>'
    )
    for idx, (label, xs, ys) in enumerate(series):
        coords = [f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys) if math.isfinite(y)]
        color = COLORS[idx % len(COLORS)]
        if coords:
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(coords)}"/>')
        if len(series) > 1 or label:
            ly = y0 + 14 + 14 * idx
            parts.append(f'<line x1="{x0 + w - 110}" y1="{ly - 4}" x2="{x0 + w - 90}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{x0 + w - 86}" y="{ly}">{escape(label)}</text>')
    parts.append("</g>")
    return "\n".join(parts)


def figure(panels, width=900, height=360):
    """Side-by-side panels; each entry is a dict of :func:`panel` keyword arguments."""
    n = max(len(panels), 1)
    pw = width / n
    body = []
    for j, p in enumerate(panels):
        body.append(panel(x0=pw * j + 70, y0=30, w=pw - 100, h=height - 80, **p))
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )


def relative_suboptimality(phi, phi_ref=None):
    """``|phi_k - phi_ref| / |phi_ref|`` with ``phi_ref`` defaulting to the best value seen."""
    if phi_ref is None:
        phi_ref = min(phi)
    scale = abs(phi_ref) if phi_ref != 0 else 1.0
    return [abs(p - phi_ref) / scale for p in phi]


def convergence_svg(phi, inner_iters, phi_ref=None, label=""):
    """Relative suboptimality versus outer iterations and cumulative inner iterations."""
    rel = relative_suboptimality(phi, phi_ref)
    ks = list(range(len(phi)))
    cum, tot = [], 0
    for it in inner_iters:
        tot += it
        cum.append(tot)
    return figure(
        [
            dict(series=[(label, ks, rel)], title="Relative suboptimality", xlabel="outer iteration k", ylabel="relative suboptimality"),
            dict(series=[(label, cum, rel)], title="Relative suboptimality", xlabel="cumulative inner iterations", ylabel="relative suboptimality"),
        ]
    )
