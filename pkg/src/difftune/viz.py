"""Dependency-free SVG renders: trajectory overlays and vote-region maps."""

from __future__ import annotations

import numpy as np

from .env import LEFT, RIGHT, EnvConfig

_MODE_COLORS = {LEFT: "#2e8b57", RIGHT: "#c0392b"}  # preferred green, other red
_UNDEF_COLOR = "#888888"


def _svg_header(w, h):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
            f'viewBox="0 0 {w} {h}">')


def trajectory_svg(path, config: EnvConfig, trajectories, title: str = "") -> None:
    """Overlay of rollout paths colored by behavior mode."""
    size = 500
    xmin, ymin, xmax, ymax = config.bounds
    sx = size / (xmax - xmin)
    sy = size / (ymax - ymin)

    def px(p):  # workspace -> svg (y up)
        return (p[0] - xmin) * sx, size - (p[1] - ymin) * sy

    parts = [_svg_header(size, size + 20),
             f'<rect x="0" y="0" width="{size}" height="{size}" fill="#fbfbf8" '
             'stroke="#333"/>']
    gy = px((xmin, config.goal_line_y))[1]
    parts.append(f'<line x1="0" y1="{gy:.1f}" x2="{size}" y2="{gy:.1f}" '
                 'stroke="#2a7d2a" stroke-width="3" stroke-dasharray="8,4"/>')
    for cx, cy, r in config.obstacles:
        x, y = px((cx, cy))
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{r * sx:.1f}" '
                     'fill="#b0b7c0" stroke="#555"/>')
    for traj in trajectories:
        pts = traj.positions()
        coords = " ".join(f"{px(p)[0]:.1f},{px(p)[1]:.1f}" for p in pts)
        color = _MODE_COLORS.get(traj.mode, _UNDEF_COLOR)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" '
                     'stroke-width="1.2" opacity="0.55"/>')
    if title:
        parts.append(f'<text x="6" y="{size + 15}" font-size="13" '
                     f'font-family="monospace">{title}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def vote_region_svg(path, grid, counts: np.ndarray, cuts, theta_h,
                    gamma: float = None, title: str = "") -> None:
    """Heatmap of per-point vote counts on a 2D grid, with cut boundaries
    and the true-parameter marker. Row runs of equal count are merged
    into single rects to keep files small."""
    if grid.dim != 2:
        raise ValueError("vote-region rendering needs a 2D grid")
    size = 500
    nx, ny = grid.resolution
    field = counts.reshape(nx, ny)
    n = len(cuts)
    lo = (grid.lows[0], grid.lows[1])
    span = (grid.highs[0] - grid.lows[0], grid.highs[1] - grid.lows[1])

    def px(p):
        return ((p[0] - lo[0]) / span[0] * size,
                size - (p[1] - lo[1]) / span[1] * size)

    def shade(c):
        t = c / max(n, 1)
        r = int(245 - 150 * t)
        g = int(245 - 60 * t)
        return f"rgb({r},{g},245)"

    parts = [_svg_header(size, size + 20)]
    cw, ch = size / nx, size / ny
    for i in range(nx):
        j = 0
        while j < ny:
            j2 = j
            while j2 + 1 < ny and field[i, j2 + 1] == field[i, j]:
                j2 += 1
            y_top = size - (j2 + 1) * ch
            parts.append(f'<rect x="{i * cw:.2f}" y="{y_top:.2f}" width="{cw + 0.5:.2f}" '
                         f'height="{(j2 - j + 1) * ch + 0.5:.2f}" '
                         f'fill="{shade(field[i, j])}"/>')
            j = j2 + 1
    for cut in cuts:
        seg = _clip_line(cut, lo, span)
        if seg is not None:
            (x1, y1), (x2, y2) = px(seg[0]), px(seg[1])
            dash = ' stroke-dasharray="6,4"' if cut.flipped else ""
            parts.append(f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                         f'stroke="#333" stroke-width="1.5"{dash}/>')
    tx, ty = px(theta_h)
    parts.append(f'<circle cx="{tx:.1f}" cy="{ty:.1f}" r="5" fill="#d4a017" '
                 'stroke="#000" stroke-width="1.5"/>')
    label = title or (f"votes out of {n}" + (f", gamma={gamma}" if gamma is not None else ""))
    parts.append(f'<text x="6" y="{size + 15}" font-size="13" '
                 f'font-family="monospace">{label}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))


def _clip_line(cut, lo, span):
    """Intersect the cut boundary w.x + b = 0 with the grid rectangle."""
    w, b = cut.w, cut.b
    corners_t = []
    hi = (lo[0] + span[0], lo[1] + span[1])
    # param the line as p0 + t*d with d orthogonal to w
    if abs(w[0]) < 1e-15 and abs(w[1]) < 1e-15:
        return None
    p0 = -b * w / (w @ w)
    d = np.array([-w[1], w[0]])
    for axis, (a_lo, a_hi) in enumerate(((lo[0], hi[0]), (lo[1], hi[1]))):
        if abs(d[axis]) > 1e-15:
            corners_t += [(a_lo - p0[axis]) / d[axis], (a_hi - p0[axis]) / d[axis]]
    ts = []
    for t in corners_t:
        p = p0 + t * d
        if lo[0] - 1e-9 <= p[0] <= hi[0] + 1e-9 and lo[1] - 1e-9 <= p[1] <= hi[1] + 1e-9:
            ts.append(t)
    if len(ts) < 2:
        return None
    t1, t2 = min(ts), max(ts)
    return p0 + t1 * d, p0 + t2 * d
