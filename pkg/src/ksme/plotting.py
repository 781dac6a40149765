"""Two-panel gap plots: a dependency-free SVG writer and a matplotlib PNG."""

import math

from ksme.bounds import GAP_KINDS

COLORS = {"ksme": "#1f77b4", "pi_bisim": "#d62728", "mico": "#2ca02c"}
LABELS = {"ksme": "KSMe", "pi_bisim": "pi-bisim", "mico": "MICo"}
PANELS = (("min_gap", "Minimum gap"), ("mean_gap", "Average gap"))

_W, _H = 440, 320
_LEFT, _RIGHT, _TOP, _BOTTOM = 60, 15, 30, 45


def series(summary):
    """{(stat, kind): [(sigma, value), ...]} from per-sigma aggregates."""
    out = {}
    for stat, _ in PANELS:
        for kind in GAP_KINDS:
            pts = [(s["sigma"], s[f"{stat}_{kind}"]) for s in summary]
            out[stat, kind] = [(x, y) for x, y in pts if math.isfinite(y)]
    return out


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    step = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        if raw <= mult * step:
            step *= mult
            break
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(ticks[-1] + step, 10))
    return ticks


def _fmt(v):
    return f"{v:.2f}"


def _panel(x0, title, curves):
    xs = [x for pts in curves.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in curves.values() for _, y in pts] or [0.0, 1.0]
    xt = _nice_ticks(min(xs), max(xs))
    yt = _nice_ticks(min(ys), max(ys))
    pw, ph = _W - _LEFT - _RIGHT, _H - _TOP - _BOTTOM

    def sx(x):
        return x0 + _LEFT + (x - xt[0]) / (xt[-1] - xt[0]) * pw

    def sy(y):
        return _TOP + ph - (y - yt[0]) / (yt[-1] - yt[0]) * ph

    parts = [f'<text x="{_fmt(x0 + _W / 2)}" y="18" text-anchor="middle">'
             f"{title}</text>",
             f'<rect x="{_fmt(x0 + _LEFT)}" y="{_TOP}" width="{pw}" '
             f'height="{ph}" fill="none" stroke="black"/>']
    for t in xt:
        parts.append(f'<line x1="{_fmt(sx(t))}" y1="{_TOP + ph}" '
                     f'x2="{_fmt(sx(t))}" y2="{_TOP + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{_fmt(sx(t))}" y="{_TOP + ph + 18}" '
                     f'text-anchor="middle">{t:g}</text>')
    for t in yt:
        parts.append(f'<line x1="{_fmt(x0 + _LEFT - 5)}" y1="{_fmt(sy(t))}" '
                     f'x2="{_fmt(x0 + _LEFT)}" y2="{_fmt(sy(t))}" '
                     'stroke="black"/>')
        parts.append(f'<text x="{_fmt(x0 + _LEFT - 8)}" y="{_fmt(sy(t) + 4)}" '
                     f'text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{_fmt(x0 + _LEFT + pw / 2)}" y="{_H - 6}" '
                 'text-anchor="middle">sigma</text>')
    for kind, pts in curves.items():
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        parts.append(f'<polyline class="series" data-kind="{kind}" '
                     f'points="{coords}" fill="none" '
                     f'stroke="{COLORS[kind]}" stroke-width="2"/>')
    return parts


def render_svg(summary):
    """Deterministic SVG text with one polyline per (panel, kind)."""
    data = series(summary)
    width = 2 * _W
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{_H + 30}" font-family="sans-serif" font-size="12">',
             f'<rect width="{width}" height="{_H + 30}" fill="white"/>']
    for i, (stat, title) in enumerate(PANELS):
        curves = {kind: data[stat, kind] for kind in GAP_KINDS}
        lines.extend(_panel(i * _W, title, curves))
    for j, kind in enumerate(GAP_KINDS):
        x = _LEFT + 150 * j
        lines.append(f'<line x1="{x}" y1="{_H + 15}" x2="{x + 25}" '
                     f'y2="{_H + 15}" stroke="{COLORS[kind]}" '
                     'stroke-width="2"/>')
        lines.append(f'<text x="{x + 30}" y="{_H + 19}">{LABELS[kind]}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_svg(summary, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(summary))


def write_png(summary, path):
    """Raster version of the same figure via matplotlib (Agg backend)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    data = series(summary)
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5), constrained_layout=True)
    for ax, (stat, title) in zip(axes, PANELS):
        for kind in GAP_KINDS:
            pts = data[stat, kind]
            ax.plot([x for x, _ in pts], [y for _, y in pts], marker="o",
                    markersize=3, color=COLORS[kind], label=LABELS[kind])
        ax.axhline(0.0, color="grey", linewidth=0.8, linestyle=":")
        ax.set_title(title)
        ax.set_xlabel("sigma")
    axes[0].legend(frameon=False)
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
