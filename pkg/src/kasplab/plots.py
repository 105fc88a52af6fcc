"""Deterministic hand-written SVG: eigenvalue ladders, singular-value decay
curves and counting staircases. Fixed viewport, fixed number formatting and no
timestamps, so identical data gives identical bytes."""
from __future__ import annotations

import logging
import math

log = logging.getLogger(__name__)

WIDTH, HEIGHT = 360, 240
MARGIN = 40


def _f(v: float) -> str:
    return f"{v:.2f}"


def _axes(x0: float, y0: float, title: str) -> list[str]:
    w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    return [
        f'<g transform="translate({_f(x0)},{_f(y0)})">',
        f'<text x="{_f(WIDTH / 2)}" y="20" text-anchor="middle" font-size="12">{title}</text>',
        f'<line x1="{MARGIN}" y1="{MARGIN + h}" x2="{MARGIN + w}" y2="{MARGIN + h}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{MARGIN + h}" stroke="black"/>',
    ]


def _scale(values, lo=None, hi=None):
    lo = min(values) if lo is None else lo
    hi = max(values) if hi is None else hi
    if hi == lo:
        hi = lo + 1.0
    return lo, hi


def _ladder(eigs) -> list[str]:
    out = []
    if not eigs:
        return out
    lo, hi = _scale(eigs)
    w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    for v in eigs:
        y = MARGIN + h - (v - lo) / (hi - lo) * h
        out.append(f'<line x1="{_f(MARGIN + 0.25 * w)}" y1="{_f(y)}" x2="{_f(MARGIN + 0.75 * w)}" '
                   f'y2="{_f(y)}" stroke="navy"/>')
    out.append(f'<text x="{MARGIN - 4}" y="{MARGIN + h}" text-anchor="end" font-size="9">{lo:.3g}</text>')
    out.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 8}" text-anchor="end" font-size="9">{hi:.3g}</text>')
    return out


def _polyline(xs, ys, color) -> str:
    pts = " ".join(f"{_f(x)},{_f(y)}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" points="{pts}"/>'


def _decay(curves) -> list[str]:
    out = []
    logs = [[math.log10(s) for s in c if s > 0] for c in curves]
    flat = [v for c in logs for v in c]
    if not flat:
        return out
    lo, hi = _scale(flat)
    w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    colors = ["navy", "darkred", "darkgreen", "purple"]
    for j, c in enumerate(logs):
        if not c:
            continue
        n = max(len(c) - 1, 1)
        xs = [MARGIN + i / n * w for i in range(len(c))]
        ys = [MARGIN + h - (v - lo) / (hi - lo) * h for v in c]
        out.append(_polyline(xs, ys, colors[j % len(colors)]))
    out.append(f'<text x="{MARGIN - 4}" y="{MARGIN + h}" text-anchor="end" font-size="9">1e{lo:.1f}</text>')
    out.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 8}" text-anchor="end" font-size="9">1e{hi:.1f}</text>')
    return out


def _staircase(points) -> list[str]:
    out = []
    if not points:
        return out
    pts = sorted(points)
    xs_raw = [math.log2(max(p[0], 1e-300)) for p in pts]
    ys_raw = [p[1] for p in pts]
    xlo, xhi = _scale(xs_raw)
    ylo, yhi = _scale(ys_raw, lo=0)
    w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    xs, ys = [], []
    prev = None
    for xr, yr in zip(xs_raw, ys_raw):
        x = MARGIN + (xr - xlo) / (xhi - xlo) * w
        y = MARGIN + h - (yr - ylo) / (yhi - ylo) * h
        if prev is not None:
            xs.append(x)
            ys.append(prev)
        xs.append(x)
        ys.append(y)
        prev = y
    out.append(_polyline(xs, ys, "darkgreen"))
    out.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 8}" text-anchor="end" font-size="9">{yhi:g}</text>')
    return out


def render(eigenvalues=None, decay_curves=None, counting=None) -> str:
    """Three panels side by side; missing data leaves the panel with axes only."""
    if eigenvalues is None:
        log.warning("no spectral data: ladder panel left empty")
    if not decay_curves:
        log.warning("no singular-value data: decay panel left empty")
    if not counting:
        log.warning("no counting data: staircase panel left empty")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{3 * WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {3 * WIDTH} {HEIGHT}">']
    panels = [("eigenvalue ladder", _ladder(list(eigenvalues or []))),
              ("singular-value decay", _decay([list(c) for c in (decay_curves or [])])),
              ("counting function", _staircase(list(counting or [])))]
    for j, (title, body) in enumerate(panels):
        parts += _axes(j * WIDTH, 0, title)
        parts += body
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_plot(report: dict) -> str:
    """SVG for a report dictionary (see kasplab.cli)."""
    checks = report.get("checks", {})
    eigs = checks.get("spectrum", {}).get("eigenvalues")
    curves = []
    kas = checks.get("kasparov", {})
    for prof in kas.get("certificate", {}).get("local_compactness", {}).values():
        curves.append(prof["singular_values"])
    if "perturbation" in kas:
        curves.append(kas["perturbation"]["singular_values"])
    counting = None
    cr = checks.get("multiplier", {}).get("compact_resolvent")
    if cr:
        counting = [(float(k), v) for k, v in cr["counting_function"].items()]
    return render(eigs, curves, counting)
