"""Oriented image rectangles from 6D grasps.

Angles follow the visual convention: ``alpha`` is measured counterclockwise
from the image's horizontal axis as seen on screen (image rows grow
downwards), normalised to (-pi/2, pi/2].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, PinholeCamera, project_points
from .grasp3d import Grasp3D, GripperModel

MAX_CAMERA_ANGLE = math.radians(30.0)


@dataclass(frozen=True)
class Grasp2D:
    x: float
    y: float
    w: float
    h: float
    alpha: float
    owner: int
    source_index: int
    clipped: bool = False

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError("rectangle sides must be positive")
        if not (-math.pi / 2 < self.alpha <= math.pi / 2):
            raise ValueError("alpha must lie in (-pi/2, pi/2]")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def corners(self) -> np.ndarray:
        return rect_corners(self.x, self.y, self.w, self.h, self.alpha)

    def to_dict(self) -> dict:
        return {"x": float(self.x), "y": float(self.y), "w": float(self.w), "h": float(self.h),
                "alphaDeg": float(math.degrees(self.alpha)), "ownerObjectId": int(self.owner),
                "sourceGraspIndex": int(self.source_index), "clipped": bool(self.clipped)}

    @classmethod
    def from_dict(cls, d) -> Grasp2D:
        alpha = math.radians(d["alphaDeg"])
        if alpha <= -math.pi / 2:
            alpha += math.pi
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]), alpha,
                   int(d["ownerObjectId"]), int(d["sourceGraspIndex"]), bool(d["clipped"]))


@dataclass(frozen=True)
class Rejected:
    reason: str

    def __bool__(self):
        return False


def normalize_alpha(alpha: float) -> float:
    a = math.fmod(alpha, math.pi)
    if a <= -math.pi / 2:
        a += math.pi
    elif a > math.pi / 2:
        a -= math.pi
    return a + 0.0


def image_angle(d) -> float:
    """Visual counterclockwise angle of an image-plane direction (rows grow down)."""
    return math.atan2(-float(d[1]), float(d[0]))


def axis_of(alpha: float) -> np.ndarray:
    return np.array([math.cos(alpha), -math.sin(alpha)])


def rect_corners(x, y, w, h, alpha) -> np.ndarray:
    u = axis_of(alpha)
    v = np.array([-u[1], u[0]])
    c = np.array([x, y], dtype=float)
    return np.array([c + (sw * w / 2) * u + (sh * h / 2) * v for sw, sh in ((-1, -1), (1, -1), (1, 1), (-1, 1))])


def _hull(points) -> np.ndarray:
    """Convex hull (monotone chain), counterclockwise in array coordinates."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float))))
    if len(pts) < 3:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def min_area_rect(points) -> tuple[np.ndarray, float, float, float]:
    """Minimum-area enclosing rectangle by rotating calipers.

    Returns ``(center, w, h, alpha)``; the ``w`` side has direction ``alpha``,
    chosen as the rectangle axis with the smaller ``|alpha|``. Among
    rectangles of equal area the one with the smallest ``alpha`` wins.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    hull = _hull(pts)
    span = float(np.ptp(pts, axis=0).max()) if len(pts) else 0.0
    if len(hull) < 3:
        raise GeometryError("points are collinear")
    e0, e1 = hull[1] - hull[0], hull[2] - hull[0]
    area_scale = max(span * span, 1e-300)
    if abs(e0[0] * e1[1] - e0[1] * e1[0]) <= 1e-12 * area_scale and len(hull) == 3:
        raise GeometryError("points are collinear")
    best = None
    for k in range(len(hull)):
        e = hull[(k + 1) % len(hull)] - hull[k]
        ln = math.hypot(e[0], e[1])
        if ln == 0:
            continue
        u = e / ln
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        lu, lv = pu.max() - pu.min(), pv.max() - pv.min()
        area = lu * lv
        center = u * (pu.max() + pu.min()) / 2 + v * (pv.max() + pv.min()) / 2
        au, av = normalize_alpha(image_angle(u)), normalize_alpha(image_angle(v))
        if abs(au) < abs(av) or (abs(au) == abs(av) and au > av):
            cand = (area, au, center, lu, lv)
        else:
            cand = (area, av, center, lv, lu)
        if best is None or cand[0] < best[0] * (1 - 1e-12) or (
                cand[0] <= best[0] * (1 + 1e-12) and cand[1] < best[1]):
            best = cand
    area, alpha, center, w, h = best
    if area <= 1e-12 * area_scale:
        raise GeometryError("points are collinear")
    return center, float(w), float(h), float(alpha)


def grasp_parallelogram(g: Grasp3D, gripper: GripperModel) -> np.ndarray:
    """World corners of the palm-side edges of the two inner finger faces."""
    p = g.pose()
    o, b, c = p.origin, p.closing, p.finger_axis
    hw, hh = gripper.max_opening / 2, gripper.finger_width / 2
    return np.array([o + hw * b - hh * c, o + hw * b + hh * c, o - hw * b + hh * c, o - hw * b - hh * c])


def camera_angle(g: Grasp3D, cam: PinholeCamera) -> float:
    return float(np.arccos(np.clip(g.approach @ cam.optical_axis, -1.0, 1.0)))


def project_grasp(g: Grasp3D, gripper: GripperModel, cam: PinholeCamera, source_index: int = 0,
                  max_angle: float = MAX_CAMERA_ANGLE) -> Grasp2D | Rejected:
    """Image rectangle of a grasp, or a ``Rejected`` carrying the reason."""
    if camera_angle(g, cam) > max_angle:
        return Rejected("camera-angle")
    corners = grasp_parallelogram(g, gripper)
    px, z = project_points(cam, corners)
    if np.any(z <= 0):
        return Rejected("behind-camera")
    try:
        center, s1, s2, alpha = min_area_rect(px)
    except GeometryError:
        return Rejected("degenerate")
    # put w on the rectangle axis closest to the projected closing direction
    jaw = (px[0] + px[1]) / 2 - (px[2] + px[3]) / 2
    u = axis_of(alpha)
    if abs(jaw @ u) >= abs(jaw @ np.array([-u[1], u[0]])):
        w, h = s1, s2
    else:
        w, h, alpha = s2, s1, normalize_alpha(alpha + math.pi / 2)
    rc = rect_corners(center[0], center[1], w, h, alpha)
    clipped = bool(np.any(rc < -0.5) or np.any(rc[:, 0] > cam.width - 0.5) or np.any(rc[:, 1] > cam.height - 0.5))
    return Grasp2D(float(center[0]), float(center[1]), float(w), float(h), float(alpha), g.owner, source_index,
                   clipped)


def project_grasps(grasps, gripper: GripperModel, cam: PinholeCamera,
                   max_angle: float = MAX_CAMERA_ANGLE) -> list[Grasp2D]:
    """Rectangles for every accepted grasp; ``grasps`` is a list of (index, Grasp3D)."""
    out = []
    for idx, g in grasps:
        r = project_grasp(g, gripper, cam, idx, max_angle)
        if r:
            out.append(r)
    return out
