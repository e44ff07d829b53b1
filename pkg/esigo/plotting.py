"""
Static SVG line plots for trajectories: (t, V) on a log axis and (t, ln v).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 400
MARGIN = 56
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: List[Series] = field(default_factory=list)
    log_y: bool = False


def _finite(x: np.ndarray, y: np.ndarray, log_y: bool) -> Tuple[np.ndarray, np.ndarray]:
    keep = np.isfinite(x) & np.isfinite(y)
    if log_y:
        keep &= y > 0
    x, y = x[keep], y[keep]
    return x, (np.log10(y) if log_y else y)


def _ticks(lo: float, hi: float, count: int = 5) -> np.ndarray:
    return np.linspace(lo, hi, count)


def _render_panel(panel: Panel, x0: float, y0: float) -> List[str]:
    data = [_finite(np.asarray(s.x, float), np.asarray(s.y, float), panel.log_y) for s in panel.series]
    data = [(s, x, y) for s, (x, y) in zip(panel.series, data) if len(x) > 0]
    inner_w, inner_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    parts = [
        f'<text x="{x0 + WIDTH / 2:.1f}" y="{y0 + MARGIN / 2:.1f}" text-anchor="middle" '
        f'font-size="14">{panel.title}</text>',
        f'<rect x="{x0 + MARGIN}" y="{y0 + MARGIN}" width="{inner_w}" height="{inner_h}" '
        f'fill="none" stroke="#333"/>',
    ]
    if not data:
        parts.append(f'<text x="{x0 + WIDTH / 2:.1f}" y="{y0 + HEIGHT / 2:.1f}" '
                     f'text-anchor="middle">no data</text>')
        return parts

    xs = np.concatenate([x for _, x, _ in data])
    ys = np.concatenate([y for _, _, y in data])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5

    def px(x):
        return x0 + MARGIN + (x - x_lo) / (x_hi - x_lo) * inner_w

    def py(y):
        return y0 + MARGIN + (1.0 - (y - y_lo) / (y_hi - y_lo)) * inner_h

    for tick in _ticks(x_lo, x_hi):
        parts.append(f'<text x="{px(tick):.1f}" y="{y0 + HEIGHT - MARGIN + 16:.1f}" '
                     f'text-anchor="middle" font-size="10">{tick:.3g}</text>')
    for tick in _ticks(y_lo, y_hi):
        label = f"1e{tick:.1f}" if panel.log_y else f"{tick:.3g}"
        parts.append(f'<text x="{x0 + MARGIN - 6:.1f}" y="{py(tick) + 3:.1f}" '
                     f'text-anchor="end" font-size="10">{label}</text>')
    parts.append(f'<text x="{x0 + WIDTH / 2:.1f}" y="{y0 + HEIGHT - 12:.1f}" '
                 f'text-anchor="middle" font-size="12">{panel.xlabel}</text>')
    parts.append(f'<text x="{x0 + 14:.1f}" y="{y0 + HEIGHT / 2:.1f}" font-size="12" '
                 f'transform="rotate(-90 {x0 + 14:.1f} {y0 + HEIGHT / 2:.1f})" '
                 f'text-anchor="middle">{panel.ylabel}</text>')

    for i, (s, x, y) in enumerate(data):
        color = PALETTE[i % len(PALETTE)]
        points = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(f'<text x="{x0 + WIDTH - MARGIN - 4:.1f}" y="{y0 + MARGIN + 14 + 14 * i:.1f}" '
                     f'text-anchor="end" font-size="11" fill="{color}">{s.label}</text>')
    return parts


def render_svg(panels: Sequence[Panel]) -> str:
    """Stack panels vertically into one SVG document"""
    height = HEIGHT * max(1, len(panels))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
             f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">',
             f'<rect width="{WIDTH}" height="{height}" fill="white"/>']
    for k, panel in enumerate(panels):
        parts.extend(_render_panel(panel, 0.0, float(k * HEIGHT)))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def plot_trajectories(trajectories, labels: Sequence[str], path: Path,
                      title: Optional[str] = None) -> Path:
    """Write the (t, V) and (t, ln v) panels for one or more trajectories"""
    lyapunov_panel = Panel(title or "Lyapunov function", "t", "V", log_y=True)
    variance_panel = Panel("log variance", "t", "ln v")
    for trajectory, label in zip(trajectories, labels):
        t = trajectory.times()
        lyapunov_panel.series.append(Series(label, t, trajectory.lyapunov_values()))
        variance_panel.series.append(Series(label, t, np.log(trajectory.variances())))

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg([lyapunov_panel, variance_panel]))
    logger.debug(f"wrote plot {path}")
    return path
