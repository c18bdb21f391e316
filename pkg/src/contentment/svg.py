"""Self-contained SVG contour maps of P(M, C), optionally with drift arrows.

Filled bands are drawn as merged runs of grid cells; isolines between bands
come from marching squares on the cell-centre lattice. All coordinates are
printed with fixed precision so identical input gives identical bytes.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyFieldError, InvalidParametersError
from .grid import PdfField
from .rates import RateField

# a short perceptual ramp (dark blue -> teal -> yellow)
_RAMP = np.array([
    [68, 1, 84], [59, 82, 139], [33, 145, 140], [94, 201, 98], [253, 231, 37],
], dtype=float)

# marching-squares edge pairs keyed by the 4-bit corner code
# corners: 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1); edges: 0 bottom 1 right 2 top 3 left
_SEGMENTS = {
    1: [(3, 0)], 2: [(0, 1)], 3: [(3, 1)], 4: [(1, 2)], 5: [(3, 2), (0, 1)],
    6: [(0, 2)], 7: [(3, 2)], 8: [(2, 3)], 9: [(2, 0)], 10: [(2, 1), (0, 3)],
    11: [(2, 1)], 12: [(1, 3)], 13: [(1, 0)], 14: [(0, 3)],
}


def _colour(x: float) -> str:
    x = min(max(x, 0.0), 1.0) * (len(_RAMP) - 1)
    k = min(int(x), len(_RAMP) - 2)
    rgb = _RAMP[k] + (x - k) * (_RAMP[k + 1] - _RAMP[k])
    return "#{:02x}{:02x}{:02x}".format(*np.rint(rgb).astype(int))


def band_indices(values: np.ndarray, n_levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Band index of every cell and the level values separating bands."""
    vmax = float(values.max())
    if not vmax > 0:
        raise EmptyFieldError("field has no positive values")
    vmin = float(min(values.min(), 0.0))
    levels = np.linspace(vmin, vmax, n_levels + 1)[1:-1]
    if np.ptp(values) <= 1e-12 * vmax:
        return np.zeros(values.shape, dtype=int), np.array([])
    return np.searchsorted(levels, values, side="right"), levels


def _isolines(values: np.ndarray, x: np.ndarray, y: np.ndarray, level: float) -> list[tuple]:
    """Line segments of ``values == level`` on the lattice (x[i], y[j])."""
    v = values
    a, b, c, d = v[:-1, :-1], v[1:, :-1], v[1:, 1:], v[:-1, 1:]
    code = ((a > level) * 1 + (b > level) * 2 + (c > level) * 4 + (d > level) * 8)
    segs = []
    for i, j in zip(*np.nonzero((code > 0) & (code < 15))):
        corners = [(x[i], y[j], a[i, j]), (x[i + 1], y[j], b[i, j]),
                   (x[i + 1], y[j + 1], c[i, j]), (x[i], y[j + 1], d[i, j])]

        def edge_point(e):
            (x0, y0, v0), (x1, y1, v1) = corners[e], corners[(e + 1) % 4]
            s = 0.5 if v1 == v0 else (level - v0) / (v1 - v0)
            return x0 + s * (x1 - x0), y0 + s * (y1 - y0)

        for e0, e1 in _SEGMENTS[int(code[i, j])]:
            segs.append((*edge_point(e0), *edge_point(e1)))
    return segs


def render_contour_svg(snapshot: PdfField, rates: RateField | None = None, n_levels: int = 10,
                       width: int = 720, height: int = 360, arrow_stride: int = 12,
                       title: str | None = None) -> str:
    """Filled-contour SVG of a density snapshot.

    ``rates`` adds arrows of the (u_M, u_C) drift on a subsampled lattice,
    scaled so the longest arrow spans ``arrow_stride`` cells.
    """
    values = np.asarray(snapshot.values, dtype=float)
    if values.ndim != 2 or min(values.shape) < 2:
        raise InvalidParametersError("snapshot must be at least 2x2")
    if n_levels < 2:
        raise InvalidParametersError("need at least two contour levels")
    g = snapshot.grid
    bands, levels = band_indices(values, n_levels)
    n_m, n_c = values.shape
    margin = 40
    pw, ph = width - 2 * margin, height - 2 * margin
    sx, sy = pw / g.m_max, ph / 1.0

    def px(m):
        return margin + m * sx

    def py(c):
        return margin + (1.0 - c) * sy

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<title>{title or f"P(M,C) at t={snapshot.time:.3f}"}</title>',
        '<g shape-rendering="crispEdges">',
    ]
    top = max(int(bands.max()), 1)
    for j in range(n_c):
        row = bands[:, j]
        start = 0
        for i in range(1, n_m + 1):
            if i == n_m or row[i] != row[start]:
                x0, x1 = px(start * g.dm), px(i * g.dm)
                y0, y1 = py((j + 1) * g.dc), py(j * g.dc)
                out.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{x1 - x0:.2f}" '
                           f'height="{y1 - y0:.2f}" fill="{_colour(row[start] / top)}"/>')
                start = i
    out.append("</g>")

    if levels.size:
        mc, cc = g.m_centers, g.c_centers
        out.append('<g stroke="#000000" stroke-width="0.6" fill="none">')
        for level in levels:
            d = "".join(f"M{px(x0):.2f} {py(y0):.2f}L{px(x1):.2f} {py(y1):.2f}"
                        for x0, y0, x1, y1 in _isolines(values, mc, cc, level))
            if d:
                out.append(f'<path data-level="{level:.6e}" d="{d}"/>')
        out.append("</g>")

    if rates is not None:
        um, uc = rates.u_m, rates.u_c
        idx_m = np.arange(arrow_stride // 2, n_m, arrow_stride)
        idx_c = np.arange(arrow_stride // 2, n_c, max(arrow_stride // 2, 1))
        sub_m = um[np.ix_(idx_m, idx_c)] * sx
        sub_c = uc[np.ix_(idx_m, idx_c)] * sy
        speed = np.hypot(sub_m, sub_c)
        peak = speed.max()
        if peak > 0:
            scale = arrow_stride * g.dm * sx / peak
            out.append('<g stroke="#ffffff" stroke-width="0.8" fill="#ffffff">')
            for a, i in enumerate(idx_m):
                for b, j in enumerate(idx_c):
                    x0, y0 = px(g.m_centers[i]), py(g.c_centers[j])
                    dx, dy = sub_m[a, b] * scale, -sub_c[a, b] * scale
                    if np.hypot(dx, dy) < 0.5:
                        continue
                    x1, y1 = x0 + dx, y0 + dy
                    ang = np.arctan2(dy, dx)
                    h = 3.0
                    hx1, hy1 = x1 - h * np.cos(ang - 0.4), y1 - h * np.sin(ang - 0.4)
                    hx2, hy2 = x1 - h * np.cos(ang + 0.4), y1 - h * np.sin(ang + 0.4)
                    out.append(f'<path d="M{x0:.2f} {y0:.2f}L{x1:.2f} {y1:.2f}"/>'
                               f'<path d="M{x1:.2f} {y1:.2f}L{hx1:.2f} {hy1:.2f}L{hx2:.2f} {hy2:.2f}Z"/>')
            out.append("</g>")

    # frame and axis labels
    out.append(f'<rect x="{margin}" y="{margin}" width="{pw}" height="{ph}" fill="none" stroke="#333333"/>')
    for m in range(0, int(g.m_max) + 1, 2):
        out.append(f'<text x="{px(m):.2f}" y="{height - margin + 14}" font-size="10" '
                   f'text-anchor="middle">{m}</text>')
    for c in (0.0, 0.5, 1.0):
        out.append(f'<text x="{margin - 6}" y="{py(c) + 3:.2f}" font-size="10" '
                   f'text-anchor="end">{c:g}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="{height - 6}" font-size="11" text-anchor="middle">M</text>')
    out.append(f'<text x="12" y="{height / 2:.1f}" font-size="11">C</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
