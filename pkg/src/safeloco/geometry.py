"""Planar geometry kernels: ray casting and signed distances.

All rays are (origin, unit direction) pairs; casting functions are
vectorized over a batch of directions and return hit parameters ``t``,
with ``inf`` for misses.  Rectangles are axis-aligned ``(xmin, ymin,
xmax, ymax)``.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def rays_circle(origin: np.ndarray, dirs: np.ndarray, center: np.ndarray,
                radius: float) -> np.ndarray:
    """Smallest positive hit parameter of each ray against a circle."""
    m = center - origin
    b = dirs @ m                      # projection of center onto each ray
    c = m @ m - radius * radius
    disc = b * b - c
    t = np.full(len(dirs), np.inf)
    ok = disc >= 0.0
    if not ok.any():
        return t
    root = np.sqrt(np.where(ok, disc, 0.0))
    t_near = b - root
    t_far = b + root
    hit_near = ok & (t_near > _EPS)
    hit_far = ok & ~ (t_near > _EPS) & (t_far > _EPS)   # origin inside
    t[hit_near] = t_near[hit_near]
    t[hit_far] = t_far[hit_far]
    return t


def rays_rect(origin: np.ndarray, dirs: np.ndarray,
              rect: tuple[float, float, float, float]) -> np.ndarray:
    """Hit parameters against a solid axis-aligned rectangle.

    From outside this is the entry point; from inside it is the exit
    point, which makes the same routine usable for boundary walls.
    """
    xmin, ymin, xmax, ymax = rect
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(dirs) > _EPS, 1.0 / dirs, np.inf)
        tx1 = (xmin - origin[0]) * inv[:, 0]
        tx2 = (xmax - origin[0]) * inv[:, 0]
        ty1 = (ymin - origin[1]) * inv[:, 1]
        ty2 = (ymax - origin[1]) * inv[:, 1]
    # rays parallel to an axis: replace NaN/inf products with the slab test
    zero_x = np.abs(dirs[:, 0]) <= _EPS
    zero_y = np.abs(dirs[:, 1]) <= _EPS
    txn = np.minimum(tx1, tx2)
    txf = np.maximum(tx1, tx2)
    tyn = np.minimum(ty1, ty2)
    tyf = np.maximum(ty1, ty2)
    inside_x = (origin[0] >= xmin) & (origin[0] <= xmax)
    inside_y = (origin[1] >= ymin) & (origin[1] <= ymax)
    txn = np.where(zero_x, np.where(inside_x, -np.inf, np.inf), txn)
    txf = np.where(zero_x, np.where(inside_x, np.inf, -np.inf), txf)
    tyn = np.where(zero_y, np.where(inside_y, -np.inf, np.inf), tyn)
    tyf = np.where(zero_y, np.where(inside_y, np.inf, -np.inf), tyf)
    t_near = np.maximum(txn, tyn)
    t_far = np.minimum(txf, tyf)
    t = np.full(len(dirs), np.inf)
    valid = t_far >= np.maximum(t_near, 0.0)
    use_near = valid & (t_near > _EPS)
    use_far = valid & ~(t_near > _EPS) & (t_far > _EPS)
    t[use_near] = t_near[use_near]
    t[use_far] = t_far[use_far]
    return t


def circle_signed_distance(p: np.ndarray, center: np.ndarray, radius: float) -> float:
    """Positive outside, negative inside."""
    return float(np.hypot(*(p - center)) - radius)


def rect_signed_distance(p: np.ndarray, rect: tuple[float, float, float, float]) -> float:
    xmin, ymin, xmax, ymax = rect
    qx = max(xmin - p[0], p[0] - xmax)
    qy = max(ymin - p[1], p[1] - ymax)
    outside = float(np.hypot(max(qx, 0.0), max(qy, 0.0)))
    inside = min(max(qx, qy), 0.0)
    return outside + inside


def circle_closest_point(p: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    d = p - center
    n = np.hypot(*d)
    if n < _EPS:
        return center + np.array([radius, 0.0])
    return center + d * (radius / n)


def rect_closest_point(p: np.ndarray, rect: tuple[float, float, float, float]) -> np.ndarray:
    """Closest point of the rectangle boundary (clamped point; for an
    interior query the nearest edge point is returned)."""
    xmin, ymin, xmax, ymax = rect
    cx = min(max(p[0], xmin), xmax)
    cy = min(max(p[1], ymin), ymax)
    if xmin < p[0] < xmax and ymin < p[1] < ymax:
        # inside: project to the closest edge
        gaps = [(p[0] - xmin, (xmin, p[1])), (xmax - p[0], (xmax, p[1])),
                (p[1] - ymin, (p[0], ymin)), (ymax - p[1], (p[0], ymax))]
        _, (cx, cy) = min(gaps, key=lambda g: g[0])
    return np.array([cx, cy])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    out = (a + np.pi) % (2.0 * np.pi) - np.pi
    if out == -np.pi:
        out = np.pi
    return float(out)
