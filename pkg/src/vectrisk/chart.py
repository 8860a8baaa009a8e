"""Standalone SVG bar chart of variable presence percentages.

Two side-by-side panels share one layout: the left panel shows presence
under the minimum-deviance penalty rule, the right one under the
deviance-plus-std rule.  Each variable is one vertical band whose height is
its presence percentage across the outer folds (0-100 axis), with a dashed
horizontal rule at the frequent-variable threshold.  The output is a
self-contained SVG document; no plotting library is involved.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .errors import ValidationError

_PANEL_HEIGHT = 240
_MARGIN_LEFT = 46
_MARGIN_TOP = 34
_MARGIN_BOTTOM = 26
_GAP = 40
_MIN_BAR = 3.0
_MAX_PANEL_WIDTH = 720.0


def emit_frequency_chart(names, percent_min, percent_1se, w: float = 100.0) -> str:
    """Render the two-panel presence chart; returns the SVG document text."""
    names = list(names)
    pmin = np.asarray(percent_min, dtype=np.float64)
    p1se = np.asarray(percent_1se, dtype=np.float64)
    if not names:
        raise ValidationError("empty report: no variables to chart")
    if len(names) != pmin.size or len(names) != p1se.size:
        raise ValidationError("presence percentages do not match the variable list")
    if np.any(pmin < 0) or np.any(pmin > 100) or np.any(p1se < 0) or np.any(p1se > 100):
        raise ValidationError("presence percentages must lie in [0, 100]")

    n = len(names)
    bar = max(_MIN_BAR, min(8.0, _MAX_PANEL_WIDTH / n))
    panel_w = bar * n
    total_w = _MARGIN_LEFT * 2 + panel_w * 2 + _GAP
    total_h = _MARGIN_TOP + _PANEL_HEIGHT + _MARGIN_BOTTOM
    scale = _PANEL_HEIGHT / 100.0

    def y_of(pct: float) -> float:
        return _MARGIN_TOP + _PANEL_HEIGHT - pct * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.0f}" '
        f'height="{total_h:.0f}" viewBox="0 0 {total_w:.0f} {total_h:.0f}">',
        '<style>text{font-family:sans-serif;font-size:10px;}'
        '.cap{font-size:12px;font-weight:bold;}</style>',
        f'<rect width="{total_w:.0f}" height="{total_h:.0f}" fill="white"/>',
    ]

    def panel(x0: float, caption: str, pct: np.ndarray, css: str) -> None:
        parts.append(f'<g class="{css}">')
        parts.append(
            f'<text class="cap" x="{x0 + panel_w / 2:.1f}" y="{_MARGIN_TOP - 14}" '
            f'text-anchor="middle">{escape(caption)}</text>'
        )
        for tick in (0, 25, 50, 75, 100):
            ty = y_of(tick)
            parts.append(
                f'<line x1="{x0 - 4:.1f}" y1="{ty:.1f}" x2="{x0:.1f}" y2="{ty:.1f}" '
                'stroke="black"/>'
            )
            parts.append(
                f'<text x="{x0 - 7:.1f}" y="{ty + 3:.1f}" text-anchor="end">{tick}</text>'
            )
        parts.append(
            f'<line x1="{x0:.1f}" y1="{y_of(0):.1f}" x2="{x0:.1f}" y2="{y_of(100):.1f}" '
            'stroke="black"/>'
        )
        parts.append(
            f'<line x1="{x0:.1f}" y1="{y_of(0):.1f}" x2="{x0 + panel_w:.1f}" '
            f'y2="{y_of(0):.1f}" stroke="black"/>'
        )
        for i, (name, p) in enumerate(zip(names, pct)):
            bx = x0 + i * bar
            by = y_of(p)
            h = max(0.0, y_of(0) - by)
            parts.append(
                f'<rect class="band" x="{bx:.2f}" y="{by:.2f}" width="{bar * 0.85:.2f}" '
                f'height="{h:.2f}" fill="#3465a4"><title>{escape(name)}: {p:.1f}%'
                '</title></rect>'
            )
        ty = y_of(w)
        parts.append(
            f'<line class="threshold" x1="{x0:.1f}" y1="{ty:.1f}" '
            f'x2="{x0 + panel_w:.1f}" y2="{ty:.1f}" stroke="#cc0000" '
            'stroke-dasharray="5,3"/>'
        )
        parts.append('</g>')

    panel(_MARGIN_LEFT, "lambda.min", pmin, "panel-min")
    panel(_MARGIN_LEFT + panel_w + _GAP, "lambda.1se", p1se, "panel-1se")
    parts.append('</svg>')
    return "\n".join(parts) + "\n"
