"""Small dependency-free SVG emitter for run reports: line charts and
empirical CDFs. Output is deterministic for identical input."""
from __future__ import annotations

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 60, 16, 28, 44
PALETTE = ("#1f6fb2", "#d1495b", "#3a7d44", "#8654a1", "#c77f2e", "#4d4d4d")


def _ticks(lo: float, hi: float, n: int = 5):
    if hi == lo:
        hi = lo + 1.0
    raw = np.linspace(lo, hi, n)
    return [float(t) for t in raw]


def _fmt(v: float) -> str:
    return f"{v:.4g}"


class _Frame:
    def __init__(self, x_lo, x_hi, y_lo, y_hi):
        if x_hi == x_lo:
            x_hi = x_lo + 1.0
        if y_hi == y_lo:
            y_hi = y_lo + 1.0
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi
        self.plot_w = WIDTH - MARGIN_L - MARGIN_R
        self.plot_h = HEIGHT - MARGIN_T - MARGIN_B

    def px(self, x: float) -> float:
        return MARGIN_L + (x - self.x_lo) / (self.x_hi - self.x_lo) * self.plot_w

    def py(self, y: float) -> float:
        return MARGIN_T + self.plot_h - (y - self.y_lo) / (self.y_hi - self.y_lo) * self.plot_h


def _axes(f: _Frame, title: str, x_label: str, y_label: str) -> list:
    parts = [
        f'<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{f.plot_w}" height="{f.plot_h}" '
        'fill="none" stroke="#888" stroke-width="1"/>',
        f'<text x="{WIDTH / 2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{MARGIN_L + f.plot_w / 2:.0f}" y="{HEIGHT - 8}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="14" y="{MARGIN_T + f.plot_h / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {MARGIN_T + f.plot_h / 2:.0f})">{y_label}</text>',
    ]
    for t in _ticks(f.x_lo, f.x_hi):
        x = f.px(t)
        parts.append(f'<line x1="{x:.1f}" y1="{MARGIN_T + f.plot_h}" x2="{x:.1f}" '
                     f'y2="{MARGIN_T + f.plot_h + 4}" stroke="#888"/>')
        parts.append(f'<text x="{x:.1f}" y="{MARGIN_T + f.plot_h + 18}" '
                     f'text-anchor="middle" font-size="11">{_fmt(t)}</text>')
    for t in _ticks(f.y_lo, f.y_hi):
        y = f.py(t)
        parts.append(f'<line x1="{MARGIN_L - 4}" y1="{y:.1f}" x2="{MARGIN_L}" '
                     f'y2="{y:.1f}" stroke="#888"/>')
        parts.append(f'<text x="{MARGIN_L - 8}" y="{y + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{_fmt(t)}</text>')
    return parts


def _legend(names) -> list:
    parts = []
    for i, name in enumerate(names):
        y = MARGIN_T + 14 + 16 * i
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<line x1="{WIDTH - 150}" y1="{y}" x2="{WIDTH - 126}" y2="{y}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{WIDTH - 120}" y="{y + 4}" font-size="11">{name}</text>')
    return parts


def _document(body: list) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
            'font-family="sans-serif">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def line_plot(series: dict, path, title: str = "", x_label: str = "",
              y_label: str = ""):
    """series maps name -> (xs, ys)."""
    all_x = np.concatenate([np.asarray(xs, dtype=float) for xs, _ in series.values()])
    all_y = np.concatenate([np.asarray(ys, dtype=float) for _, ys in series.values()])
    f = _Frame(all_x.min(), all_x.max(), min(all_y.min(), 0.0), all_y.max())
    body = _axes(f, title, x_label, y_label)
    for i, (name, (xs, ys)) in enumerate(series.items()):
        pts = " ".join(f"{f.px(float(x)):.1f},{f.py(float(y)):.1f}"
                       for x, y in zip(xs, ys))
        body.append(f'<polyline points="{pts}" fill="none" '
                    f'stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5"/>')
    body += _legend(series.keys())
    with open(path, "w") as fh:
        fh.write(_document(body))


def cdf_plot(series: dict, path, title: str = "", x_label: str = ""):
    """series maps name -> sample values; plots empirical CDFs."""
    all_v = np.concatenate([np.asarray(v, dtype=float) for v in series.values()])
    f = _Frame(all_v.min(), all_v.max(), 0.0, 1.0)
    body = _axes(f, title, x_label, "cumulative fraction")
    for i, (name, values) in enumerate(series.items()):
        v = np.sort(np.asarray(values, dtype=float))
        p = np.arange(1, len(v) + 1) / len(v)
        pts = " ".join(f"{f.px(float(x)):.1f},{f.py(float(y)):.1f}"
                       for x, y in zip(v, p))
        body.append(f'<polyline points="{pts}" fill="none" '
                    f'stroke="{PALETTE[i % len(PALETTE)]}" stroke-width="1.5"/>')
    body += _legend(series.keys())
    with open(path, "w") as fh:
        fh.write(_document(body))
