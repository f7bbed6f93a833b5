"""Static SVG plots (line, scatter, heatmap) written from CSV tables."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

W, H = 640, 440
ML, MR, MT, MB = 70, 150, 30, 50  # margins; the right one holds the legend
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")
REQUIRED = {"line": ("x", "y"), "scatter": ("x", "y"), "heatmap": ("x", "y", "value")}


class SchemaError(ValueError):
    pass


def read_csv(path) -> tuple:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        return list(r.fieldnames or []), list(r)


def _check(kind, header, cols: dict):
    if kind not in REQUIRED:
        raise SchemaError(f"unknown plot kind {kind!r}; expected one of {sorted(REQUIRED)}")
    for role in REQUIRED[kind] + (("series",) if cols.get("series") else ()):
        name = cols.get(role)
        if name is None:
            raise SchemaError(f"{kind} plot needs a column for {role!r}")
        for part in name.split("+"):
            if part not in header:
                raise SchemaError(f"missing column {part!r} for {kind} plot")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _label(v: float) -> str:
    return f"{v:.3g}"


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


class _Frame:
    def __init__(self, xlo, xhi, ylo, yhi):
        if not xhi > xlo:
            xlo, xhi = xlo - 0.5, xhi + 0.5
        if not yhi > ylo:
            ylo, yhi = ylo - 0.5, yhi + 0.5
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def px(self, x):
        return ML + (x - self.xlo) / (self.xhi - self.xlo) * (W - ML - MR)

    def py(self, y):
        return H - MB - (y - self.ylo) / (self.yhi - self.ylo) * (H - MT - MB)


def _axes(fr: _Frame, xlabel, ylabel, title) -> list:
    out = [f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#000"/>']
    for t in _ticks(fr.xlo, fr.xhi):
        x = _fmt(fr.px(t))
        out.append(f'<line x1="{x}" y1="{H - MB}" x2="{x}" y2="{H - MB + 5}" stroke="#000"/>')
        out.append(f'<text x="{x}" y="{H - MB + 18}" text-anchor="middle" font-size="11">{_label(t)}</text>')
    for t in _ticks(fr.ylo, fr.yhi):
        y = _fmt(fr.py(t))
        out.append(f'<line x1="{ML - 5}" y1="{y}" x2="{ML}" y2="{y}" stroke="#000"/>')
        out.append(f'<text x="{ML - 8}" y="{y}" text-anchor="end" dominant-baseline="middle" font-size="11">{_label(t)}</text>')
    out.append(f'<text x="{(ML + W - MR) / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{(MT + H - MB) / 2}" text-anchor="middle" font-size="12" '
               f'transform="rotate(-90 15 {(MT + H - MB) / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>')
    return out


def _doc(body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">'
            f'<rect width="{W}" height="{H}" fill="#fff"/>')
    return "\n".join([head] + body + ["</svg>"]) + "\n"


def _series_key(row, spec):
    return " ".join(f"{p}={row[p]}" for p in spec.split("+")) if spec else ""


def _grouped(rows, cols):
    """{series: sorted [(x, mean y)]}; repeated x within a series are averaged."""
    acc: dict = {}
    for r in rows:
        s = _series_key(r, cols.get("series"))
        acc.setdefault(s, {}).setdefault(float(r[cols["x"]]), []).append(float(r[cols["y"]]))
    return {s: sorted((x, float(np.mean(v))) for x, v in d.items()) for s, d in sorted(acc.items())}


def _finite_bounds(vals):
    v = [x for x in vals if math.isfinite(x)]
    return (min(v), max(v)) if v else (0.0, 1.0)


def _legend(names) -> list:
    out = []
    for i, name in enumerate(names):
        y = MT + 10 + 16 * i
        c = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - MR + 10}" y="{y - 5}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{W - MR + 24}" y="{y}" dominant-baseline="middle" font-size="10">{escape(name)}</text>')
    return out


def line_svg(rows, cols, xlabel="", ylabel="", title="") -> str:
    groups = _grouped(rows, cols)
    xs = [x for g in groups.values() for x, _ in g]
    ys = [y for g in groups.values() for _, y in g]
    fr = _Frame(*_finite_bounds(xs), *_finite_bounds(ys))
    body = _axes(fr, xlabel or cols["x"], ylabel or cols["y"], title)
    for i, (name, pts) in enumerate(groups.items()):
        pts = [(x, y) for x, y in pts if math.isfinite(x) and math.isfinite(y)]
        d = " ".join(f"{_fmt(fr.px(x))},{_fmt(fr.py(y))}" for x, y in pts)
        body.append(f'<polyline fill="none" stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5" points="{d}"/>')
    if any(groups):
        body += _legend(list(groups))
    return _doc(body)


def scatter_svg(rows, cols, xlabel="", ylabel="", title="") -> str:
    """Points drawn in ascending x (cost) order, ties by y, for a stable layout."""
    pts = sorted(((float(r[cols["x"]]), float(r[cols["y"]]), _series_key(r, cols.get("series"))) for r in rows),
                 key=lambda p: (p[0], p[1], p[2]))
    pts = [p for p in pts if math.isfinite(p[0]) and math.isfinite(p[1])]
    fr = _Frame(*_finite_bounds([p[0] for p in pts]), *_finite_bounds([p[1] for p in pts]))
    names = sorted({p[2] for p in pts})
    body = _axes(fr, xlabel or cols["x"], ylabel or cols["y"], title)
    for x, y, s in pts:
        c = PALETTE[names.index(s) % len(PALETTE)]
        body.append(f'<circle cx="{_fmt(fr.px(x))}" cy="{_fmt(fr.py(y))}" r="3" fill="{c}"/>')
    if any(names):
        body += _legend(names)
    return _doc(body)


def colour(t: float) -> str:
    """Dark blue (t = 0) to yellow (t = 1)."""
    t = min(max(t, 0.0), 1.0)
    lo, hi = np.array([48, 18, 59]), np.array([250, 230, 40])
    r, g, b = np.rint(lo + t * (hi - lo)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap_svg(rows, cols, xlabel="", ylabel="", title="", log: bool = True) -> str:
    """Cell colours span the data min..max (on a log scale when log and all values > 0)."""
    xs = sorted({float(r[cols["x"]]) for r in rows})
    ys = sorted({float(r[cols["y"]]) for r in rows})
    vals = np.array([float(r[cols["value"]]) for r in rows]) if rows else np.zeros(0)
    use_log = log and len(vals) and np.all(vals > 0)
    tv = np.log10(vals) if use_log else vals
    vlo, vhi = (float(tv.min()), float(tv.max())) if len(tv) else (0.0, 1.0)
    dx = xs[1] - xs[0] if len(xs) > 1 else 1.0
    dy = ys[1] - ys[0] if len(ys) > 1 else 1.0
    fr = _Frame(xs[0] - dx / 2, xs[-1] + dx / 2, ys[0] - dy / 2, ys[-1] + dy / 2) if xs else _Frame(0, 1, 0, 1)
    body = []
    cw = abs(fr.px(dx) - fr.px(0))
    ch = abs(fr.py(dy) - fr.py(0))
    for r, v in zip(rows, tv):
        x, y = float(r[cols["x"]]), float(r[cols["y"]])
        t = (v - vlo) / (vhi - vlo) if vhi > vlo else 0.0
        body.append(f'<rect x="{_fmt(fr.px(x - dx / 2))}" y="{_fmt(fr.py(y + dy / 2))}" width="{_fmt(cw)}" '
                    f'height="{_fmt(ch)}" fill="{colour(t)}"/>')
    body += _axes(fr, xlabel or cols["x"], ylabel or cols["y"], title)
    if len(vals):
        # colour bar labelled with the data extremes
        x0, y0, hb = W - MR + 20, MT, H - MT - MB
        for k in range(50):
            body.append(f'<rect x="{x0}" y="{_fmt(y0 + hb * (1 - (k + 1) / 50))}" width="16" '
                        f'height="{_fmt(hb / 50 + 0.5)}" fill="{colour(k / 49)}"/>')
        body.append(f'<text class="vmax" x="{x0 + 22}" y="{y0 + 8}" font-size="10">{_label(vals.max())}</text>')
        body.append(f'<text class="vmin" x="{x0 + 22}" y="{y0 + hb}" font-size="10">{_label(vals.min())}</text>')
    return _doc(body)


RENDER = {"line": line_svg, "scatter": scatter_svg, "heatmap": heatmap_svg}


def emit_svg(csv_path, kind: str, out_path=None, **cols) -> Path:
    """Render csv_path as kind; cols maps roles (x, y, value, series) to column names.

    A series spec may join several columns with '+'. Labels: xlabel, ylabel, title.
    """
    labels = {k: cols.pop(k) for k in ("xlabel", "ylabel", "title") if k in cols}
    header, rows = read_csv(csv_path)
    _check(kind, header, cols)
    out = Path(out_path) if out_path else Path(csv_path).with_suffix(".svg")
    out.write_text(RENDER[kind](rows, cols, **labels), encoding="utf-8", newline="\n")
    return out
