"""SVG rendering of trajectory fields with direction-coded colours."""
from __future__ import annotations

import colorsys
import math
from pathlib import Path

import numpy as np

from .codec import TrajectoryField

CELL = 24  # pixels per grid cell
SATURATION = 0.9
LEGEND = 60


def direction_color(dx: float, dy: float, speed_scale: float = 1.0) -> str:
    """Hue from the motion angle, value from the speed relative to ``speed_scale``."""
    hue = math.degrees(math.atan2(dy, dx)) % 360.0
    speed = math.hypot(dx, dy)
    value = 0.35 + 0.65 * min(1.0, speed / speed_scale) if speed_scale > 0 else 1.0
    r, g, b = colorsys.hsv_to_rgb(hue / 360.0, SATURATION, value)
    return f"#{round(r * 255):02x}{round(g * 255):02x}{round(b * 255):02x}"


def _pinwheel(x0: float, y0: float, size: float, sectors: int = 24) -> list[str]:
    cx, cy, r = x0 + size / 2, y0 + size / 2, size / 2
    out = [f'<g class="legend">']
    for i in range(sectors):
        a0 = 2 * math.pi * i / sectors
        a1 = 2 * math.pi * (i + 1) / sectors
        mid = (a0 + a1) / 2
        color = direction_color(math.cos(mid), math.sin(mid))
        p0 = (cx + r * math.cos(a0), cy + r * math.sin(a0))
        p1 = (cx + r * math.cos(a1), cy + r * math.sin(a1))
        out.append(
            f'<path d="M{cx:.2f},{cy:.2f} L{p0[0]:.2f},{p0[1]:.2f} '
            f'A{r:.2f},{r:.2f} 0 0,1 {p1[0]:.2f},{p1[1]:.2f} Z" fill="{color}"/>'
        )
    out.append("</g>")
    return out


def trajectory_svg(field: TrajectoryField, min_motion: float = 1e-9) -> str:
    """One polyline per moving cell; per-segment lines carry the instantaneous direction colour.

    Image y grows downward, matching the grid's row index, so dy > 0 points down.
    """
    H, W, T = field.height, field.width, field.horizon
    data = field.data
    steps = np.diff(np.concatenate([np.zeros((H, W, 1, 2)), data], axis=2), axis=2)
    speeds = np.hypot(steps[..., 0], steps[..., 1])
    scale = float(speeds.max()) if speeds.size and speeds.max() > 0 else 1.0

    width_px, height_px = W * CELL + LEGEND + 20, max(H * CELL, LEGEND) + 20
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{height_px}" '
        f'viewBox="0 0 {width_px} {height_px}">',
        f'<rect x="0" y="0" width="{W * CELL}" height="{H * CELL}" fill="#ffffff" stroke="#cccccc"/>',
    ]
    for r in range(H):
        for c in range(W):
            if np.max(np.abs(data[r, c])) <= min_motion:
                continue
            x0, y0 = (c + 0.5) * CELL, (r + 0.5) * CELL
            pts = [(x0, y0)] + [(x0 + dx * CELL, y0 + dy * CELL) for dx, dy in data[r, c]]
            net = data[r, c, -1]
            lines.append(f'<g class="traj" data-cell="{r},{c}">')
            lines.append(
                '<polyline fill="none" stroke-width="0.6" stroke="'
                + direction_color(net[0], net[1])
                + '" points="'
                + " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
                + '"/>'
            )
            for t in range(T):
                (xa, ya), (xb, yb) = pts[t], pts[t + 1]
                dx, dy = steps[r, c, t]
                if dx == 0 and dy == 0:
                    continue
                lines.append(
                    f'<line x1="{xa:.2f}" y1="{ya:.2f}" x2="{xb:.2f}" y2="{yb:.2f}" '
                    f'stroke="{direction_color(dx, dy, scale)}" stroke-width="1.6"/>'
                )
            lines.append("</g>")
    lines.extend(_pinwheel(W * CELL + 10, 10, LEGEND - 10))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_trajectory_svg(field: TrajectoryField, path) -> None:
    Path(path).write_text(trajectory_svg(field))
