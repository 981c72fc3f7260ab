"""Plain-string SVG for reliability diagrams and weight-spread charts.

Only ``<rect>`` elements carry data (one per nonempty bin per panel, or
none at all in the weight chart); axes, frames and reference lines are
``<line>``/``<path>`` so the output is easy to check structurally.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

from .metrics import EceReport

PANEL = 300.0  # pixels per unit on both axes of the reliability panels
MARGIN = 50.0
GAP = 60.0
MASS_H = 120.0

_FONT = 'font-family="Helvetica, Arial, sans-serif"'


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _text(x, y, s, size=12, anchor="middle", extra=""):
    return (
        f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" text-anchor="{anchor}" '
        f'{_FONT}{extra}>{escape(s)}</text>'
    )


def _frame(x0, y0, w, h):
    return (
        f'<path d="M{_fmt(x0)},{_fmt(y0)} h{_fmt(w)} v{_fmt(h)} h{_fmt(-w)} Z" '
        'fill="none" stroke="#444" stroke-width="1"/>'
    )


def _ticks(x0, y_base, w, labels_y):
    out = []
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        x = x0 + t * w
        out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(y_base)}" x2="{_fmt(x)}" y2="{_fmt(y_base + 4)}" stroke="#444"/>')
        out.append(_text(x, labels_y, f"{t:g}", 10))
    return out


def reliability_svg(report: EceReport, title: str = "Reliability diagram") -> str:
    """Two stacked panels sharing the confidence axis.

    Top: per-bin accuracy bars on ``[0, 1]^2`` with the diagonal for
    reference; the bar top of a perfectly calibrated bin sits on the
    diagonal at the bin's mean confidence.  Bottom: per-bin share of the
    examples.
    """
    x0 = MARGIN
    top_y0 = MARGIN + 20
    mass_y0 = top_y0 + PANEL + GAP
    width = x0 + PANEL + MARGIN
    height = mass_y0 + MASS_H + MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        _text(width / 2, MARGIN - 10, f"{title} (ECE {report.ece:.4f}, over-confident {report.overconfident_ece:.4f})", 13),
        '<g class="accuracy-panel">',
    ]
    for b, mean_conf, acc, mass in report.rows():
        lo, hi = report.edges[b], report.edges[b + 1]
        h = acc * PANEL
        parts.append(
            f'<rect class="acc-bar" data-bin="{b}" data-mean-conf="{mean_conf!r}" data-accuracy="{acc!r}" '
            f'x="{_fmt(x0 + lo * PANEL)}" y="{_fmt(top_y0 + PANEL - h)}" width="{_fmt((hi - lo) * PANEL)}" '
            f'height="{_fmt(h)}" fill="#3b75af" fill-opacity="0.8" stroke="#1d3a57"/>'
        )
    parts += [
        f'<line class="diagonal" x1="{_fmt(x0)}" y1="{_fmt(top_y0 + PANEL)}" x2="{_fmt(x0 + PANEL)}" '
        f'y2="{_fmt(top_y0)}" stroke="#c0392b" stroke-dasharray="5,4" stroke-width="1.5"/>',
        _frame(x0, top_y0, PANEL, PANEL),
        *_ticks(x0, top_y0 + PANEL, PANEL, top_y0 + PANEL + 16),
        _text(x0 - 32, top_y0 + PANEL / 2, "accuracy", 11, extra=f' transform="rotate(-90 {_fmt(x0 - 32)} {_fmt(top_y0 + PANEL / 2)})"'),
        "</g>",
        '<g class="mass-panel">',
    ]
    for b, _, _, mass in report.rows():
        lo, hi = report.edges[b], report.edges[b + 1]
        h = mass * MASS_H
        parts.append(
            f'<rect class="mass-bar" data-bin="{b}" data-mass="{mass!r}" x="{_fmt(x0 + lo * PANEL)}" '
            f'y="{_fmt(mass_y0 + MASS_H - h)}" width="{_fmt((hi - lo) * PANEL)}" height="{_fmt(h)}" '
            'fill="#7f8c8d" stroke="#4d5656"/>'
        )
    parts += [
        _frame(x0, mass_y0, PANEL, MASS_H),
        *_ticks(x0, mass_y0 + MASS_H, PANEL, mass_y0 + MASS_H + 16),
        _text(x0 + PANEL / 2, mass_y0 + MASS_H + 34, "confidence", 11),
        _text(x0 - 32, mass_y0 + MASS_H / 2, "share", 11, extra=f' transform="rotate(-90 {_fmt(x0 - 32)} {_fmt(mass_y0 + MASS_H / 2)})"'),
        "</g>",
        "</svg>",
    ]
    return "\n".join(parts) + "\n"


def weight_spread_svg(rows, title: str = "Estimated importance weights") -> str:
    """Box-style chart: a min-max whisker and a median tick per example.

    ``rows`` are dicts with ``rank, index, median, min, max`` as returned
    by :func:`shiftcal.metrics.iw_distribution_report`.
    """
    rows = list(rows)
    row_h = 24.0
    left, plot_w = 110.0, 420.0
    top = MARGIN + 10
    width = left + plot_w + MARGIN
    height = top + row_h * max(len(rows), 1) + MARGIN
    hi = max([r["max"] for r in rows], default=1.0)
    hi = hi if hi > 0 else 1.0

    def xpos(v):
        return left + v / hi * plot_w

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        _text(width / 2, MARGIN - 15, title, 13),
    ]
    for i, r in enumerate(rows):
        y = top + (i + 0.5) * row_h
        parts += [
            f'<g class="example" data-rank="{r["rank"]}" data-index="{r["index"]}">',
            _text(left - 8, y + 4, f'#{r["rank"]} (x{r["index"]})', 10, anchor="end"),
            f'<line class="whisker" x1="{_fmt(xpos(r["min"]))}" y1="{_fmt(y)}" x2="{_fmt(xpos(r["max"]))}" '
            f'y2="{_fmt(y)}" stroke="#3b75af" stroke-width="6" stroke-linecap="round"/>',
            f'<line class="median" x1="{_fmt(xpos(r["median"]))}" y1="{_fmt(y - 8)}" x2="{_fmt(xpos(r["median"]))}" '
            f'y2="{_fmt(y + 8)}" stroke="#c0392b" stroke-width="2"/>',
            "</g>",
        ]
    base = top + row_h * max(len(rows), 1)
    parts += [
        f'<line x1="{_fmt(left)}" y1="{_fmt(base)}" x2="{_fmt(left + plot_w)}" y2="{_fmt(base)}" stroke="#444"/>',
        _text(left, base + 16, "0", 10),
        _text(left + plot_w, base + 16, f"{hi:.4g}", 10),
        _text(left + plot_w / 2, base + 32, "estimated weight (min, median, max across runs)", 11),
        "</svg>",
    ]
    return "\n".join(parts) + "\n"
