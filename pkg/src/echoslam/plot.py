"""Minimal SVG rendering for ESS heatmaps, trajectory overlays and error CDFs.

The figures are plain SVG text so that plotting needs no graphics library.
Every function returns the document as a string.
"""

import numpy as np

_W, _H, _PAD = 480, 360, 40
COLORS = {"truth": "#222222", "dead_reckoned": "#d62728", "optimized": "#1f77b4", "cdf": "#1f77b4"}


def _doc(body, width=_W, height=_H, title=""):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n')
    t = f'<title>{title}</title>\n' if title else ""
    return head + t + '<rect width="100%" height="100%" fill="white"/>\n' + "".join(body) + "</svg>\n"


def _axes(width=_W, height=_H):
    x0, y0, x1, y1 = _PAD, height - _PAD, width - _PAD, _PAD
    return [f'<g class="axes" stroke="black" stroke-width="1">'
            f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/>'
            f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>\n']


def _gray(v):
    level = int(round(255 * (1.0 - float(np.clip(v, 0.0, 1.0)))))
    return f"#{level:02x}{level:02x}{level:02x}"


def ess_heatmap(M, cell=3):
    """One ``rect`` per matrix cell, darker for higher similarity."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    n_r, n_c = M.shape if M.size else (0, 0)
    width, height = max(n_c * cell, 1) + 2 * _PAD, max(n_r * cell, 1) + 2 * _PAD
    body = ['<g class="heatmap">\n']
    for i in range(n_r):
        for j in range(n_c):
            body.append(f'<rect x="{_PAD + j * cell}" y="{_PAD + i * cell}" width="{cell}" height="{cell}" '
                        f'fill="{_gray(M[i, j])}"/>\n')
    body.append("</g>\n")
    return _doc(body, width, height, "ESS matrix")


def _scaler(points, width=_W, height=_H, equal=True):
    P = np.concatenate([p for p in points if len(p)]) if any(len(p) for p in points) else np.zeros((0, 2))
    if len(P) == 0:
        return None
    lo, hi = P.min(axis=0), P.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    sx = (width - 2 * _PAD) / span[0]
    sy = (height - 2 * _PAD) / span[1]
    if equal:
        sx = sy = min(sx, sy)

    def f(p):
        p = np.asarray(p, dtype=np.float64)
        return np.column_stack([_PAD + (p[:, 0] - lo[0]) * sx, height - _PAD - (p[:, 1] - lo[1]) * sy])
    return f


def _polyline(pts, color, name):
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    return f'<polyline class="{name}" points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>\n'


def trajectory_overlay(truth, dead_reckoned, optimized):
    """Ground-truth, dead-reckoned and optimised node paths on common axes."""
    series = {"truth": truth, "dead_reckoned": dead_reckoned, "optimized": optimized}
    series = {k: np.asarray(v, dtype=np.float64).reshape(-1, 2) for k, v in series.items() if v is not None}
    series = {k: v[np.all(np.isfinite(v), axis=1)] for k, v in series.items()}
    f = _scaler(list(series.values()))
    body = _axes()
    if f is not None:
        for name, pts in series.items():
            if len(pts):
                body.append(_polyline(f(pts), COLORS[name], name))
    return _doc(body, title="trajectories")


def error_cdf(errors):
    """Empirical CDF of localization errors as a step polyline."""
    e = np.sort(np.asarray(errors, dtype=np.float64).reshape(-1))
    body = _axes()
    if len(e):
        y = np.arange(1, len(e) + 1) / len(e)
        xs = np.repeat(e, 2)[1:]
        ys = np.repeat(y, 2)[:-1]
        pts = np.column_stack([np.concatenate([[0.0], xs]), np.concatenate([[0.0], ys])])
        f = _scaler([pts, np.array([[0.0, 0.0], [max(e[-1], 1e-6), 1.0]])], equal=False)
        body.append(_polyline(f(pts), COLORS["cdf"], "cdf"))
    return _doc(body, title="error CDF")
