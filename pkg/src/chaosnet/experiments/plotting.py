"""Dependency-free SVG rendering of heat maps, ridgelines and scatter plots.

Output is a pure function of the input tables: coordinates are printed with
fixed precision and nothing time- or platform-dependent is embedded.
"""

from __future__ import annotations

import csv
import math
from xml.sax.saxutils import escape

import numpy as np


class CsvParseError(ValueError):
    def __init__(self, message, row, path=None):
        super().__init__(f"{path or '<csv>'}: row {row}: {message}")
        self.row = row


def read_table(path, numeric=()):
    """Header and rows of a CSV; ``numeric`` columns are parsed as floats (blank -> nan)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CsvParseError("empty file", 1, path)
    header = rows[0]
    missing = [c for c in numeric if c not in header]
    if missing:
        raise CsvParseError(f"missing columns {missing}", 1, path)
    idx = {c: header.index(c) for c in numeric}
    out = []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CsvParseError(f"expected {len(header)} fields, got {len(row)}", r, path)
        rec = dict(zip(header, row))
        for c, k in idx.items():
            try:
                rec[c] = float(row[k]) if row[k] != "" else math.nan
            except ValueError:
                raise CsvParseError(f"column {c!r}: {row[k]!r} is not a number", r, path) from None
        out.append(rec)
    return header, out


_STOPS = [(0.0, (68, 1, 84)), (0.25, (59, 82, 139)), (0.5, (33, 145, 140)),
          (0.75, (94, 201, 98)), (1.0, (253, 231, 37))]


def colormap(t):
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_STOPS, _STOPS[1:]):
        if t <= t1:
            w = (t - t0) / (t1 - t0)
            return "#%02x%02x%02x" % tuple(round(a + w * (b - a)) for a, b in zip(c0, c1))
    return "#%02x%02x%02x" % _STOPS[-1][1]


def diverging(t):
    """Blue below 0, white at 0, orange above; ``t`` in [-1, 1]."""
    t = min(max(t, -1.0), 1.0)
    if t < 0:
        c = (round(255 + t * (255 - 49)), round(255 + t * (255 - 104)), round(255 + t * (255 - 155)))
    else:
        c = (round(255 - t * (255 - 230)), round(255 - t * (255 - 97)), round(255 - t * 255))
    return "#%02x%02x%02x" % c


def _f(v):
    return f"{v:.3f}"


def _svg(width, height, body, title):
    return ("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
            f"<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" "
            f"viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
            f"<title>{escape(title)}</title>\n" + "\n".join(body) + "\n</svg>\n")


def _axis_position(values, v, origin, step):
    """Pixel coordinate of ``v`` on an axis whose cell centres sit at the sorted ``values``."""
    vals = np.asarray(values, dtype=float)
    centres = origin + step * (np.arange(len(vals)) + 0.5)
    if len(vals) == 1:
        return float(centres[0])
    return float(np.interp(v, vals, centres, left=centres[0] - step / 2, right=centres[-1] + step / 2))


def heatmap_svg(grid_csv, value="loglabel", lyapunov_csv=None, title=None, cell=36):
    """Grid CSV (axis1, axis2, metrics, status) to an SVG heat map.

    Rows are axis-1 values, columns axis-2 values. Diverged cells are grey.
    With ``lyapunov_csv`` the Lyapunov time of each axis-1 value is drawn as
    a red marker placed at that horizon.
    """
    header, _ = read_table(grid_csv)
    a1, a2 = header[0], header[1]
    _, rows = read_table(grid_csv, numeric=(a1, a2, value))
    v1 = sorted({r[a1] for r in rows})
    v2 = sorted({r[a2] for r in rows})
    vals = [r[value] for r in rows if r.get("status", "ok") == "ok" and not math.isnan(r[value])]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    left, top = 70, 40
    width = left + cell * len(v2) + 90
    height = top + cell * len(v1) + 50
    body = [f"<text x=\"{left}\" y=\"20\">{escape(title or f'{value} over {a1} x {a2}')}</text>"]
    for r in sorted(rows, key=lambda r: (r[a1], r[a2])):
        i, j = v1.index(r[a1]), v2.index(r[a2])
        x, y = left + j * cell, top + (len(v1) - 1 - i) * cell
        ok = r.get("status", "ok") == "ok" and not math.isnan(r[value])
        fill = colormap((r[value] - lo) / span) if ok else "#9e9e9e"
        label = _f(r[value]) if ok else "diverged"
        body.append(f"<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" "
                    f"fill=\"{fill}\" data-{escape(a1)}=\"{r[a1]!r}\" data-{escape(a2)}=\"{r[a2]!r}\" "
                    f"data-value=\"{label}\"/>")
    for j, v in enumerate(v2):
        body.append(f"<text x=\"{left + j * cell + cell / 2}\" y=\"{top + cell * len(v1) + 14}\" "
                    f"text-anchor=\"middle\">{v:g}</text>")
    for i, v in enumerate(v1):
        body.append(f"<text x=\"{left - 6}\" y=\"{top + (len(v1) - 1 - i) * cell + cell / 2 + 4}\" "
                    f"text-anchor=\"end\">{v:g}</text>")
    body.append(f"<text x=\"{left + cell * len(v2) / 2}\" y=\"{height - 10}\" text-anchor=\"middle\">"
                f"{escape(a2)}</text>")
    body.append(f"<text x=\"14\" y=\"{top + cell * len(v1) / 2}\" "
                f"transform=\"rotate(-90 14 {top + cell * len(v1) / 2})\" text-anchor=\"middle\">{escape(a1)}</text>")
    for k in range(5):
        y = top + k * 16
        body.append(f"<rect x=\"{width - 70}\" y=\"{y}\" width=\"12\" height=\"16\" fill=\"{colormap(1 - k / 4)}\"/>")
        body.append(f"<text x=\"{width - 54}\" y=\"{y + 12}\">{_f(hi - k / 4 * span)}</text>")
    if lyapunov_csv:
        _, lrows = read_table(lyapunov_csv, numeric=(a1, "mle", "lyapunov_time"))
        pts = []
        for r in sorted(lrows, key=lambda r: r[a1]):
            t = r["lyapunov_time"]
            if not math.isfinite(t) or r[a1] not in v1:
                continue
            px = _axis_position(v2, t, left, cell)
            py = top + (len(v1) - 1 - v1.index(r[a1])) * cell + cell / 2
            pts.append((px, py))
            body.append(f"<circle class=\"lyapunov\" cx=\"{_f(px)}\" cy=\"{_f(py)}\" r=\"3\" fill=\"red\" "
                        f"data-{escape(a1)}=\"{r[a1]!r}\" data-t=\"{t!r}\"/>")
        if len(pts) > 1:
            body.append("<polyline fill=\"none\" stroke=\"red\" stroke-width=\"2\" points=\""
                        + " ".join(f"{_f(x)},{_f(y)}" for x, y in pts) + "\"/>")
    return _svg(width, height, body, title or value)


def ridgeline_svg(ftmle_csv, bins=40, title="FTMLE distributions"):
    """One histogram row per layer of an FTMLE table (sample_id, layer, lambda)."""
    _, rows = read_table(ftmle_csv, numeric=("lambda",))
    layers = []
    for r in rows:
        if r["layer"] not in layers:
            layers.append(r["layer"])
    lam = np.array([r["lambda"] for r in rows if math.isfinite(r["lambda"])])
    lo, hi = (float(lam.min()), float(lam.max())) if len(lam) else (-1.0, 1.0)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    left, top, w, h = 90, 40, 400, 60
    body = [f"<text x=\"{left}\" y=\"20\">{escape(title)}</text>"]
    edges = np.linspace(lo, hi, bins + 1)
    for k, name in enumerate(layers):
        vals = np.array([r["lambda"] for r in rows if r["layer"] == name and math.isfinite(r["lambda"])])
        counts, _ = np.histogram(vals, edges)
        peak = max(int(counts.max()), 1) if len(counts) else 1
        base = top + (k + 1) * h
        pts = [f"{_f(left)},{_f(base)}"]
        for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
            x0 = left + (e0 - lo) / (hi - lo) * w
            x1 = left + (e1 - lo) / (hi - lo) * w
            y = base - 0.9 * h * c / peak
            pts += [f"{_f(x0)},{_f(y)}", f"{_f(x1)},{_f(y)}"]
        pts.append(f"{_f(left + w)},{_f(base)}")
        mean = float(vals.mean()) if len(vals) else 0.0
        fill = diverging(mean / max(abs(lo), abs(hi), 1e-12))
        body.append(f"<polygon class=\"ridge\" data-layer=\"{escape(name)}\" fill=\"{fill}\" stroke=\"black\" "
                    f"points=\"{' '.join(pts)}\"/>")
        body.append(f"<text x=\"{left - 6}\" y=\"{base - 4}\" text-anchor=\"end\">{escape(name)}</text>")
    zero = left + (0 - lo) / (hi - lo) * w
    if left <= zero <= left + w:
        body.append(f"<line x1=\"{_f(zero)}\" y1=\"{top}\" x2=\"{_f(zero)}\" y2=\"{top + (len(layers) + 1) * h}\" "
                    f"stroke=\"grey\" stroke-dasharray=\"4 3\"/>")
    bottom = top + (len(layers) + 1) * h
    body.append(f"<text x=\"{left}\" y=\"{bottom + 16}\">{_f(lo)}</text>")
    body.append(f"<text x=\"{left + w}\" y=\"{bottom + 16}\" text-anchor=\"end\">{_f(hi)}</text>")
    return _svg(left + w + 30, bottom + 30, body, title)


def scatter_svg(csv_path, x, y, color=None, title=None, size=420):
    """Scatter of two numeric columns; ``color`` is a categorical or numeric column."""
    header, _ = read_table(csv_path)
    numeric = [x, y]
    _, rows = read_table(csv_path, numeric=numeric)
    rows = [r for r in rows if math.isfinite(r[x]) and math.isfinite(r[y])]
    xs = np.array([r[x] for r in rows]) if rows else np.zeros(1)
    ys = np.array([r[y] for r in rows]) if rows else np.zeros(1)
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(ys.min()), float(ys.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    pad = 50
    body = [f"<text x=\"{pad}\" y=\"20\">{escape(title or f'{y} vs {x}')}</text>"]
    cats, cvals = None, None
    if color and color in header:
        raw = [r[color] for r in rows]
        try:
            cvals = np.array([float(v) for v in raw])
            lo, hi = float(np.nanmin(cvals)), float(np.nanmax(cvals))
            m = max(abs(lo), abs(hi), 1e-12)
        except ValueError:
            cats = sorted(set(raw))
    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
    for k, r in enumerate(rows):
        px = pad + (r[x] - x0) / (x1 - x0) * size
        py = pad + size - (r[y] - y0) / (y1 - y0) * size
        if cvals is not None:
            fill = diverging(cvals[k] / m) if math.isfinite(cvals[k]) else "#9e9e9e"
        elif cats is not None:
            fill = palette[cats.index(r[color]) % len(palette)]
        else:
            fill = "#1f77b4"
        body.append(f"<circle class=\"point\" cx=\"{_f(px)}\" cy=\"{_f(py)}\" r=\"1.6\" fill=\"{fill}\"/>")
    body.append(f"<text x=\"{pad}\" y=\"{pad + size + 18}\">{_f(x0)}</text>")
    body.append(f"<text x=\"{pad + size}\" y=\"{pad + size + 18}\" text-anchor=\"end\">{_f(x1)}</text>")
    body.append(f"<text x=\"{pad + size / 2}\" y=\"{pad + size + 34}\" text-anchor=\"middle\">{escape(x)}</text>")
    body.append(f"<text x=\"{pad - 4}\" y=\"{pad + size}\" text-anchor=\"end\">{_f(y0)}</text>")
    body.append(f"<text x=\"{pad - 4}\" y=\"{pad + 8}\" text-anchor=\"end\">{_f(y1)}</text>")
    return _svg(size + 2 * pad, size + 2 * pad, body, title or y)


def detect_kind(csv_path):
    with open(csv_path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if "layer" in header and "lambda" in header:
        return "ridgeline"
    if "status" in header and "loglabel" in header:
        return "heatmap"
    return "scatter"


def plot(csv_path, out_path, kind=None, value="loglabel", lyapunov_csv=None, x=None, y=None, color=None):
    kind = kind or detect_kind(csv_path)
    if kind == "heatmap":
        svg = heatmap_svg(csv_path, value, lyapunov_csv)
    elif kind == "ridgeline":
        svg = ridgeline_svg(csv_path)
    elif kind == "scatter":
        header, _ = read_table(csv_path)
        x = x or header[0]
        y = y or header[1]
        if color is None and len(header) > 2:
            color = "lambda" if "lambda" in header else ("label" if "label" in header else header[2])
        svg = scatter_svg(csv_path, x, y, color)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    with open(out_path, "w", newline="\n") as fh:
        fh.write(svg)
    return out_path
