"""Hand-rolled SVG emission for top-down trajectory plots.

String building only, fixed float formatting, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .world import Obstacle, Scenario

MODE_COLORS = {
    "p3o_cbf": "#1f5fbf",
    "p3o": "#2e8b42",
    "ppo_reward_shaping": "#e07020",
}

_SCALE = 60.0      # pixels per meter
_PAD = 0.8         # meters of margin around the bounds


def _f(x: float) -> str:
    return f"{x:.2f}"


class _Canvas:
    def __init__(self, bounds):
        xmin, ymin, xmax, ymax = bounds
        self.xmin, self.ymax = xmin - _PAD, ymax + _PAD
        self.w = (xmax - xmin + 2 * _PAD) * _SCALE
        self.h = (ymax - ymin + 2 * _PAD) * _SCALE
        self.parts: list[str] = []

    def pt(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.xmin) * _SCALE, (self.ymax - y) * _SCALE

    def circle(self, c, r, fill, opacity="1", stroke="none", dash=""):
        x, y = self.pt(*c)
        extra = f' stroke="{stroke}" stroke-width="1.5"' if stroke != "none" else ""
        if dash:
            extra += f' stroke-dasharray="{dash}"'
        self.parts.append(
            f'<circle cx="{_f(x)}" cy="{_f(y)}" r="{_f(r * _SCALE)}" '
            f'fill="{fill}" fill-opacity="{opacity}"{extra}/>')

    def rect(self, rect, fill, opacity="1"):
        xmin, ymin, xmax, ymax = rect
        x, y = self.pt(xmin, ymax)
        self.parts.append(
            f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f((xmax - xmin) * _SCALE)}" '
            f'height="{_f((ymax - ymin) * _SCALE)}" fill="{fill}" '
            f'fill-opacity="{opacity}"/>')

    def polyline(self, pts, color, width=2.0):
        coords = " ".join(f"{_f(x)},{_f(y)}" for x, y in (self.pt(*p) for p in pts))
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{_f(width)}" stroke-linejoin="round"/>')

    def text(self, x_px, y_px, s, size=14, color="#222222"):
        self.parts.append(
            f'<text x="{_f(x_px)}" y="{_f(y_px)}" font-family="sans-serif" '
            f'font-size="{size}" fill="{color}">{s}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(self.w)}" '
                f'height="{_f(self.h)}" viewBox="0 0 {_f(self.w)} {_f(self.h)}">')
        bg = f'<rect width="{_f(self.w)}" height="{_f(self.h)}" fill="#fafafa"/>'
        return "\n".join([head, bg, *self.parts, "</svg>"]) + "\n"


def trajectory_svg(positions: np.ndarray, scenario: Scenario,
                   obstacles: list[Obstacle] | None, mode: str,
                   unsafe_band: float = 0.6, comfort_band: float = 1.2) -> str:
    """Top-down plot: obstacles, unsafe/comfort bands, trajectory polyline."""
    cv = _Canvas(scenario.bounds)
    obstacles = obstacles if obstacles is not None else scenario.obstacles
    for ob in obstacles:
        if ob.kind == "wall" and ob.rect is not None:
            cv.rect(ob.rect, "#555555")
            continue
        if ob.center is not None:
            cv.circle(ob.center, ob.radius + comfort_band, "none", stroke="#d8b24a",
                      dash="6,5")
            cv.circle(ob.center, ob.radius + unsafe_band, "none", stroke="#c04040",
                      dash="4,4")
            fill = "#7a4aa0" if ob.kind == "agent" else "#444444"
            op = "0.5" if ob.kind == "slab" else "1"
            cv.circle(ob.center, ob.radius, fill, opacity=op)
        else:
            op = "0.45" if ob.kind == "slab" else "1"
            cv.rect(ob.rect, "#444444", opacity=op)
    if scenario.goal.type == "region":
        cv.circle(scenario.goal.center, scenario.goal.radius, "#58b368", opacity="0.35")
    color = MODE_COLORS.get(mode, "#1f5fbf")
    cv.polyline([tuple(p) for p in positions], color)
    cv.circle(tuple(positions[0]), 0.12, color)
    cv.text(10, 20, f"{scenario.name} / {mode}")
    return cv.render()


def write_trajectory_svg(positions: np.ndarray, scenario: Scenario,
                         obstacles, mode: str, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(trajectory_svg(positions, scenario, obstacles, mode))
    return out
