"""Minimal self-contained SVG heatmaps for the experiment reports.

No plotting dependency: the experiment artifacts must stay viewable from a
bare checkout, so the grid, axes, and colorbar are emitted as plain SVG.
"""

from __future__ import annotations

import numpy as np

# Anchor colors of a perceptually ordered dark-to-light map.
_STOPS = np.array(
    [
        (68, 1, 84),
        (71, 44, 122),
        (59, 81, 139),
        (44, 113, 142),
        (33, 144, 141),
        (39, 173, 129),
        (92, 200, 99),
        (170, 220, 50),
        (253, 231, 37),
    ],
    dtype=float,
)
_MISSING = "#b0b0b0"


def _color(frac: float) -> str:
    x = min(max(frac, 0.0), 1.0) * (len(_STOPS) - 1)
    lo = int(np.floor(x))
    hi = min(lo + 1, len(_STOPS) - 1)
    rgb = _STOPS[lo] + (x - lo) * (_STOPS[hi] - _STOPS[lo])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(v)) for v in rgb))


def _decade_ticks(values: np.ndarray) -> list[float]:
    lo = int(np.floor(np.log10(values.min()) + 1e-9))
    hi = int(np.ceil(np.log10(values.max()) - 1e-9))
    return [10.0**e for e in range(lo, hi + 1)]


def _fmt_pow10(value: float) -> str:
    exponent = int(round(np.log10(value)))
    return f"1e{exponent}" if exponent not in (0, 1) else ("1" if exponent == 0 else "10")


def heatmap_svg(
    values: np.ndarray,
    x_values: np.ndarray,
    y_values: np.ndarray,
    title: str,
    x_label: str,
    y_label: str,
    value_label: str,
) -> str:
    """Render a grid of values on log-spaced axes.

    ``values[i, j]`` belongs to ``(x_values[i], y_values[j])``; the y axis
    points up.  Non-finite cells are drawn grey.
    """
    values = np.asarray(values, dtype=float)
    x_values = np.asarray(x_values, dtype=float)
    y_values = np.asarray(y_values, dtype=float)
    nx, ny = values.shape
    cell = 34
    left, top, right, bottom = 86, 46, 112, 72
    width = left + nx * cell + right
    height = top + ny * cell + bottom

    finite = values[np.isfinite(values)]
    vmin = float(finite.min()) if finite.size else 0.0
    vmax = float(finite.max()) if finite.size else 1.0
    span = vmax - vmin if vmax > vmin else 1.0

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="Helvetica, Arial, sans-serif">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
    ]

    for i in range(nx):
        for j in range(ny):
            x = left + i * cell
            y = top + (ny - 1 - j) * cell
            v = values[i, j]
            fill = _MISSING if not np.isfinite(v) else _color((v - vmin) / span)
            out.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="white" stroke-width="0.5"/>'
            )

    # Log-position of a value along an axis spanned by the grid centers.
    def axis_pos(v: float, axis: np.ndarray) -> float:
        lv = np.log10(v)
        lo, hi = np.log10(axis[0]), np.log10(axis[-1])
        if hi == lo:
            return cell / 2
        return (lv - lo) / (hi - lo) * (len(axis) - 1) * cell + cell / 2

    axis_y = top + ny * cell
    for tick in _decade_ticks(x_values):
        x = left + axis_pos(tick, x_values)
        out.append(
            f'<line x1="{x:.1f}" y1="{axis_y}" x2="{x:.1f}" y2="{axis_y + 5}" stroke="black"/>'
        )
        out.append(
            f'<text x="{x:.1f}" y="{axis_y + 19}" text-anchor="middle" font-size="11">'
            f"{_fmt_pow10(tick)}</text>"
        )
    for tick in _decade_ticks(y_values):
        y = top + ny * cell - axis_pos(tick, y_values)
        out.append(f'<line x1="{left - 5}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        out.append(
            f'<text x="{left - 9}" y="{y + 4:.1f}" text-anchor="end" font-size="11">'
            f"{_fmt_pow10(tick)}</text>"
        )
    out.append(
        f'<text x="{left + nx * cell / 2:.1f}" y="{height - 26}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>'
    )
    out.append(
        f'<text x="20" y="{top + ny * cell / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 20 {top + ny * cell / 2:.1f})">{y_label}</text>'
    )

    # colorbar
    bar_x = left + nx * cell + 28
    bar_w, bar_h = 16, ny * cell
    steps = 48
    for s in range(steps):
        y = top + bar_h - (s + 1) * bar_h / steps
        out.append(
            f'<rect x="{bar_x}" y="{y:.2f}" width="{bar_w}" height="{bar_h / steps + 0.6:.2f}" '
            f'fill="{_color((s + 0.5) / steps)}"/>'
        )
    out.append(
        f'<rect x="{bar_x}" y="{top}" width="{bar_w}" height="{bar_h}" '
        f'fill="none" stroke="black" stroke-width="0.6"/>'
    )
    for frac, value in ((0.0, vmin), (0.5, vmin + span / 2), (1.0, vmax)):
        y = top + bar_h - frac * bar_h
        out.append(
            f'<text x="{bar_x + bar_w + 5}" y="{y + 4:.1f}" font-size="10">{value:.3g}</text>'
        )
    out.append(
        f'<text x="{bar_x + bar_w / 2:.1f}" y="{top - 8}" text-anchor="middle" '
        f'font-size="11">{value_label}</text>'
    )
    out.append("</svg>")
    return "\n".join(out)
