"""Dependency-free SVG emission for experiment figures.

Every renderer is a pure function of (data, style), so the same inputs
always produce the same bytes. No timestamps, no generated ids, fixed
float formatting throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

HISTOGRAM = "histogram"
SCATTER = "scatter"
SPECTRUM = "spectrum"
RECOVERY = "recovery"

KINDS = (HISTOGRAM, SCATTER, SPECTRUM, RECOVERY)

# matplotlib tab10 ordering, nothing fancy
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


class SchemaMismatch(Exception):
    """Data shape does not match the requested plot kind."""


@dataclass(frozen=True)
class PlotStyle:
    width: int = 640
    height: int = 420
    title: str = ""
    x_label: str = ""
    y_label: str = ""
    bins: int = 30
    palette: tuple = field(default=PALETTE)


def _fmt(x: float) -> str:
    # %.6g inside path data keeps files small and byte-stable
    s = f"{float(x):.6g}"
    return "0" if s == "-0" else s


def _nice_ticks(lo: float, hi: float, target: int = 5):
    """Tick positions at multiples of a 1/2/5 step covering [lo, hi]."""
    if not (math.isfinite(lo) and math.isfinite(hi)):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / target))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= target:
            step *= mult
            break
    k0 = math.ceil(lo / step - 1e-9)
    k1 = math.floor(hi / step + 1e-9)
    return [k * step for k in range(k0, k1 + 1)]


def _as_series(data, expect_cols: int | None) -> dict:
    """Normalize input to an ordered {name: float array} mapping.

    expect_cols None means 1-D series; 2 means (n, 2) point sets.
    """
    if not isinstance(data, dict):
        data = {"": data}
    out = {}
    for name, vals in data.items():
        arr = np.asarray(vals, dtype=float)
        if expect_cols is None:
            if arr.ndim != 1:
                raise SchemaMismatch(f"series {name!r}: expected 1-D, got shape {arr.shape}")
        else:
            if arr.ndim != 2 or arr.shape[1] != expect_cols:
                raise SchemaMismatch(
                    f"series {name!r}: expected (n, {expect_cols}), got shape {arr.shape}")
        out[str(name)] = arr
    return out


@dataclass
class _Frame:
    """Pixel-space plot frame with data-space limits."""
    style: PlotStyle
    x_lo: float
    x_hi: float
    y_lo: float
    y_hi: float
    ml: int = 56
    mr: int = 14
    mt: int = 30
    mb: int = 44

    def x_px(self, x: float) -> float:
        w = self.style.width - self.ml - self.mr
        return self.ml + (x - self.x_lo) / (self.x_hi - self.x_lo) * w

    def y_px(self, y: float) -> float:
        h = self.style.height - self.mt - self.mb
        return self.style.height - self.mb - (y - self.y_lo) / (self.y_hi - self.y_lo) * h


def _pad_limits(lo: float, hi: float):
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return 0.0, 1.0
    if hi <= lo:
        pad = abs(lo) * 0.05 + 1.0
        return lo - pad, hi + pad
    pad = (hi - lo) * 0.05
    return lo - pad, hi + pad


def _frame_svg(fr: _Frame) -> list:
    """Axis lines, ticks, tick labels, axis labels, title."""
    st = fr.style
    x0, x1 = fr.ml, st.width - fr.mr
    y0, y1 = st.height - fr.mb, fr.mt
    parts = [
        f'<rect x="0" y="0" width="{st.width}" height="{st.height}" fill="white"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black" stroke-width="1"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black" stroke-width="1"/>',
    ]
    for t in _nice_ticks(fr.x_lo, fr.x_hi):
        px = fr.x_px(t)
        if px < x0 - 0.5 or px > x1 + 0.5:
            continue
        parts.append(f'<line x1="{_fmt(px)}" y1="{y0}" x2="{_fmt(px)}" y2="{y0 + 5}" '
                     f'stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{y0 + 18}" font-size="11" '
                     f'text-anchor="middle" font-family="sans-serif">{_fmt(t)}</text>')
    for t in _nice_ticks(fr.y_lo, fr.y_hi):
        py = fr.y_px(t)
        if py > y0 + 0.5 or py < y1 - 0.5:
            continue
        parts.append(f'<line x1="{x0 - 5}" y1="{_fmt(py)}" x2="{x0}" y2="{_fmt(py)}" '
                     f'stroke="black" stroke-width="1"/>')
        parts.append(f'<text x="{x0 - 8}" y="{_fmt(py + 4)}" font-size="11" '
                     f'text-anchor="end" font-family="sans-serif">{_fmt(t)}</text>')
    if st.title:
        parts.append(f'<text x="{st.width // 2}" y="{fr.mt - 10}" font-size="14" '
                     f'text-anchor="middle" font-family="sans-serif">{escape(st.title)}</text>')
    if st.x_label:
        parts.append(f'<text x="{(x0 + x1) // 2}" y="{st.height - 8}" font-size="12" '
                     f'text-anchor="middle" font-family="sans-serif">{escape(st.x_label)}</text>')
    if st.y_label:
        cx, cy = 14, (y0 + y1) // 2
        parts.append(f'<text x="{cx}" y="{cy}" font-size="12" text-anchor="middle" '
                     f'font-family="sans-serif" transform="rotate(-90 {cx} {cy})">'
                     f'{escape(st.y_label)}</text>')
    return parts


def _legend_svg(fr: _Frame, names) -> list:
    named = [n for n in names if n]
    if not named:
        return []
    st = fr.style
    lx = st.width - fr.mr - 150
    ly = fr.mt + 8
    parts = [f'<rect x="{lx - 6}" y="{ly - 6}" width="150" height="{len(named) * 16 + 10}" '
             f'fill="white" stroke="#999" stroke-width="0.5"/>']
    for i, name in enumerate(named):
        color = st.palette[i % len(st.palette)]
        yy = ly + 16 * i + 5
        parts.append(f'<rect x="{lx}" y="{yy - 8}" width="12" height="8" fill="{color}"/>')
        parts.append(f'<text x="{lx + 18}" y="{yy}" font-size="11" '
                     f'font-family="sans-serif">{escape(name)}</text>')
    return parts


def _document(style: PlotStyle, body: list) -> str:
    head = ('<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" '
            f'height="{style.height}" viewBox="0 0 {style.width} {style.height}">')
    return head + "\n" + "\n".join(body) + "\n</svg>\n"


def _no_data(style: PlotStyle) -> str:
    fr = _Frame(style, 0.0, 1.0, 0.0, 1.0)
    body = _frame_svg(fr)
    body.append(f'<text x="{style.width // 2}" y="{style.height // 2}" font-size="14" '
                f'text-anchor="middle" font-family="sans-serif" fill="#777">no data</text>')
    return _document(style, body)


def _render_histogram(series: dict, style: PlotStyle) -> str:
    finite = {n: v[np.isfinite(v)] for n, v in series.items()}
    finite = {n: v for n, v in finite.items() if v.size}
    if not finite:
        return _no_data(style)
    allv = np.concatenate(list(finite.values()))
    edges = np.histogram_bin_edges(allv, bins=style.bins)
    counts = {n: np.histogram(v, bins=edges)[0] for n, v in finite.items()}
    top = max(int(c.max()) for c in counts.values())
    x_lo, x_hi = _pad_limits(float(edges[0]), float(edges[-1]))
    fr = _Frame(style, x_lo, x_hi, 0.0, max(top, 1) * 1.05)
    body = _frame_svg(fr)
    y_base = fr.y_px(0.0)
    for i, (name, c) in enumerate(counts.items()):
        color = style.palette[i % len(style.palette)]
        for b in range(len(c)):
            if c[b] == 0:
                continue
            px0, px1 = fr.x_px(float(edges[b])), fr.x_px(float(edges[b + 1]))
            py = fr.y_px(float(c[b]))
            body.append(f'<rect x="{_fmt(px0)}" y="{_fmt(py)}" width="{_fmt(px1 - px0)}" '
                        f'height="{_fmt(y_base - py)}" fill="{color}" fill-opacity="0.55"/>')
    body += _legend_svg(fr, list(counts.keys()))
    return _document(style, body)


def _render_scatter(series: dict, style: PlotStyle) -> str:
    finite = {}
    for n, v in series.items():
        keep = np.all(np.isfinite(v), axis=1) if v.size else np.zeros(0, dtype=bool)
        v = v[keep]
        if v.size:
            finite[n] = v
    if not finite:
        return _no_data(style)
    allp = np.concatenate(list(finite.values()), axis=0)
    x_lo, x_hi = _pad_limits(float(allp[:, 0].min()), float(allp[:, 0].max()))
    y_lo, y_hi = _pad_limits(float(allp[:, 1].min()), float(allp[:, 1].max()))
    fr = _Frame(style, x_lo, x_hi, y_lo, y_hi)
    body = _frame_svg(fr)
    for i, (name, pts) in enumerate(finite.items()):
        color = style.palette[i % len(style.palette)]
        for k in range(pts.shape[0]):
            body.append(f'<circle cx="{_fmt(fr.x_px(pts[k, 0]))}" '
                        f'cy="{_fmt(fr.y_px(pts[k, 1]))}" r="2" fill="{color}" '
                        f'fill-opacity="0.7"/>')
    body += _legend_svg(fr, list(finite.keys()))
    return _document(style, body)


def _render_lines(series: dict, style: PlotStyle, x_start: int) -> str:
    for n, v in series.items():
        if v.size and not np.all(np.isfinite(v)):
            raise SchemaMismatch(f"series {n!r} contains non-finite values")
    finite = {n: v for n, v in series.items() if v.size}
    if not finite:
        return _no_data(style)
    y_all = np.concatenate(list(finite.values()))
    longest = max(v.size for v in finite.values())
    x_lo, x_hi = _pad_limits(float(x_start), float(x_start + longest - 1))
    y_lo, y_hi = _pad_limits(float(y_all.min()), float(y_all.max()))
    fr = _Frame(style, x_lo, x_hi, y_lo, y_hi)
    body = _frame_svg(fr)
    for i, (name, v) in enumerate(finite.items()):
        color = style.palette[i % len(style.palette)]
        pts = " ".join(f"{_fmt(fr.x_px(x_start + k))},{_fmt(fr.y_px(v[k]))}"
                       for k in range(v.size))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                    f'stroke-width="1.5"/>')
        for k in range(v.size):
            body.append(f'<circle cx="{_fmt(fr.x_px(x_start + k))}" '
                        f'cy="{_fmt(fr.y_px(v[k]))}" r="2.5" fill="{color}"/>')
    body += _legend_svg(fr, list(finite.keys()))
    return _document(style, body)


def emit_plot(kind: str, data, style: PlotStyle | None = None) -> str:
    """Render one figure to a self-contained SVG document string.

    kind: histogram (1-D value series), scatter ((n, 2) point sets),
    spectrum (1-D series indexed from 1), recovery (1-D series indexed
    from 0). data is one array or a {name: array} mapping; names feed
    the legend.
    """
    style = style or PlotStyle()
    if kind == HISTOGRAM:
        return _render_histogram(_as_series(data, None), style)
    if kind == SCATTER:
        return _render_scatter(_as_series(data, 2), style)
    if kind == SPECTRUM:
        return _render_lines(_as_series(data, None), style, x_start=1)
    if kind == RECOVERY:
        return _render_lines(_as_series(data, None), style, x_start=0)
    raise SchemaMismatch(f"unknown plot kind {kind!r}")
