"""Self-contained SVG output: log-log study figures and partition debug views."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .study import StudyError, read_records, summarize

WIDTH, HEIGHT = 640, 480
MARGIN = dict(left=80, right=150, top=40, bottom=60)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
METRICS = {
    "errL2": ("L2 error", lambda p: p + 1),
    "errH1": ("H1 seminorm error", lambda p: p),
    "cond_raw": ("condition number", lambda p: -2),
    "cond_diag": ("condition number (diagonal scaling)", lambda p: -2),
}


class LogLogFrame:
    """Maps data coordinates to SVG pixels on logarithmic axes."""

    def __init__(self, xs, ys, width=WIDTH, height=HEIGHT):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        self.x0, self.x1 = self._decades(xs)
        self.y0, self.y1 = self._decades(ys)
        self.width, self.height = width, height
        self.px0 = MARGIN["left"]
        self.px1 = width - MARGIN["right"]
        self.py0 = height - MARGIN["bottom"]
        self.py1 = MARGIN["top"]

    @staticmethod
    def _decades(v):
        lo, hi = math.log10(v.min()), math.log10(v.max())
        lo, hi = math.floor(lo), math.ceil(hi)
        if hi == lo:
            hi += 1
        return lo, hi

    def x(self, v):
        return self.px0 + (math.log10(v) - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def y(self, v):
        return self.py0 + (math.log10(v) - self.y0) / (self.y1 - self.y0) * (self.py1 - self.py0)

    def axes(self, xlabel, ylabel):
        out = [f'<rect x="{self.px0}" y="{self.py1}" width="{self.px1 - self.px0}" '
               f'height="{self.py0 - self.py1}" fill="none" stroke="black"/>']
        for k in range(self.x0, self.x1 + 1):
            px = self.x(10.0 ** k)
            out.append(f'<line x1="{px:.2f}" y1="{self.py0}" x2="{px:.2f}" y2="{self.py0 + 5}" stroke="black"/>')
            out.append(f'<text x="{px:.2f}" y="{self.py0 + 20}" text-anchor="middle" '
                       f'font-size="12">1e{k}</text>')
        for k in range(self.y0, self.y1 + 1):
            py = self.y(10.0 ** k)
            out.append(f'<line x1="{self.px0 - 5}" y1="{py:.2f}" x2="{self.px0}" y2="{py:.2f}" stroke="black"/>')
            out.append(f'<text x="{self.px0 - 8}" y="{py + 4:.2f}" text-anchor="end" '
                       f'font-size="12">1e{k}</text>')
        cx = (self.px0 + self.px1) / 2
        cy = (self.py0 + self.py1) / 2
        out.append(f'<text x="{cx:.1f}" y="{self.height - 15}" text-anchor="middle" '
                   f'font-size="14">{escape(xlabel)}</text>')
        out.append(f'<text x="20" y="{cy:.1f}" text-anchor="middle" font-size="14" '
                   f'transform="rotate(-90 20 {cy:.1f})">{escape(ylabel)}</text>')
        return out

    def polyline(self, xs, ys, color, dash=None, cls="series"):
        pts = " ".join(f"{self.x(a):.3f},{self.y(b):.3f}" for a, b in zip(xs, ys))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        return (f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{color}" '
                f'stroke-width="2"{extra}/>')


def guide_line(h, v, slope):
    """Reference line of the given log-log slope through the finest point of a series."""
    h = np.asarray(h, dtype=float)
    k = int(np.argmin(h))
    return h, v[k] * (h / h[k]) ** slope


def svg_document(body, width=WIDTH, height=HEIGHT):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def loglog_svg(series, xlabel, ylabel, title=""):
    """``series``: list of dicts with keys label, h, v and optional slope (guide line)."""
    if not series or all(len(s["h"]) == 0 for s in series):
        raise StudyError("no data to plot")
    xs = np.concatenate([s["h"] for s in series])
    ys = np.concatenate([s["v"] for s in series])
    guides = []
    for s in series:
        if s.get("slope") is not None and len(s["h"]) > 1:
            guides.append(guide_line(s["h"], np.asarray(s["v"]), s["slope"]))
    if guides:
        ys = np.concatenate([ys] + [g[1] for g in guides])
    frame = LogLogFrame(xs, ys)
    body = frame.axes(xlabel, ylabel)
    if title:
        body.append(f'<text x="{frame.px0}" y="25" font-size="15">{escape(title)}</text>')
    gi = 0
    for i, s in enumerate(series):
        color = COLORS[i % len(COLORS)]
        order = np.argsort(s["h"])
        hx = np.asarray(s["h"])[order]
        vy = np.asarray(s["v"])[order]
        body.append(frame.polyline(hx, vy, color))
        for a, b in zip(hx, vy):
            body.append(f'<circle cx="{frame.x(a):.3f}" cy="{frame.y(b):.3f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 20 * i + 10
        lx = frame.px1 + 10
        label = s["label"]
        if s.get("slope") is not None and len(s["h"]) > 1:
            gh, gv = guides[gi]
            gi += 1
            o = np.argsort(gh)
            body.append(frame.polyline(gh[o], gv[o], color, dash="6,4", cls="guide"))
            label += f" (ref {s['slope']:+g})"
        body.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{lx + 25}" y="{ly + 4}" font-size="12">{escape(label)}</text>')
    return svg_document(body)


def emit_plots(csv_path, out_dir=None):
    """One SVG per measured metric of a study CSV; returns the written paths."""
    csv_path = Path(csv_path)
    records = read_records(csv_path)
    if not records:
        raise StudyError(f"{csv_path}: no data rows")
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    summary = summarize(records)
    figures = {}
    for metric, (ylabel, ref) in METRICS.items():
        groups = {}
        for row in summary:
            v = row[metric]
            if isinstance(v, float) and math.isfinite(v) and v > 0:
                groups.setdefault((row["p"], row["gamma"]), []).append((row["h"], v))
        if not groups:
            continue
        series = []
        for (p, g), pts in sorted(groups.items()):
            h, v = map(np.array, zip(*pts))
            series.append(dict(label=f"p={p}, gamma={g:g}", h=h, v=v, slope=ref(p)))
        study = records[0].study
        figures[f"{csv_path.stem}_{metric}.svg"] = loglog_svg(series, "h", ylabel, f"{study}: worst case over shifts")
    if not figures:
        raise StudyError(f"{csv_path}: no finite positive values to plot")
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in figures.items():
        path = out_dir / name
        path.write_text(text)
        paths.append(path)
    return paths


def partition_svg(ext, dom, path, scale=None, show_support=None):
    """Large (grey) and small (orange) elements, S_h arrows and the boundary polygon.

    ``show_support`` optionally lists large-dof positions whose extended
    supports are outlined.
    """
    active = ext.active
    mesh = active.space.mesh
    x0, y0, x1, y1 = dom.bbox
    pad = mesh.h
    x0, y0, x1, y1 = x0 - pad, y0 - pad, x1 + pad, y1 + pad
    scale = scale or 600.0 / max(x1 - x0, y1 - y0)
    W, H = (x1 - x0) * scale, (y1 - y0) * scale

    def tx(x):
        return (x - x0) * scale

    def ty(y):
        return H - (y - y0) * scale

    body = []
    boxes = np.array([mesh.element_box(e) for e in active.elements])
    for k, (a, b, c, d) in enumerate(boxes):
        fill = "#d0d0d0" if ext.part.large[k] else "#ffb060"
        body.append(f'<rect x="{tx(a):.2f}" y="{ty(d):.2f}" width="{(c - a) * scale:.2f}" '
                    f'height="{(d - b) * scale:.2f}" fill="{fill}" stroke="#808080" stroke-width="0.5"/>')
    if show_support is not None:
        from .extension import extended_supports

        S = extended_supports(ext).tocsc()
        for j in np.atleast_1d(show_support):
            for k in S.indices[S.indptr[j]:S.indptr[j + 1]]:
                a, b, c, d = boxes[k]
                body.append(f'<rect x="{tx(a):.2f}" y="{ty(d):.2f}" width="{(c - a) * scale:.2f}" '
                            f'height="{(d - b) * scale:.2f}" fill="none" stroke="#2060c0" stroke-width="2"/>')
    v = np.vstack([dom.vertices, dom.vertices[:1]])
    pts = " ".join(f"{tx(a):.2f},{ty(b):.2f}" for a, b in v)
    body.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="1.5"/>')
    cen = dom.centroid[active.elements]
    for k in np.nonzero(~ext.part.large)[0]:
        t = ext.part.target[k]
        (a, b), (c, d) = cen[k], cen[t]
        body.append(f'<line x1="{tx(a):.2f}" y1="{ty(b):.2f}" x2="{tx(c):.2f}" y2="{ty(d):.2f}" '
                    f'stroke="#c02020" stroke-width="1"/>')
        body.append(f'<circle cx="{tx(c):.2f}" cy="{ty(d):.2f}" r="2" fill="#c02020"/>')
    text = svg_document(body, int(math.ceil(W)), int(math.ceil(H)))
    Path(path).write_text(text)
    return Path(path)
