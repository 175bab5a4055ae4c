"""Slow, simple reference implementations used to cross-check production code.

Nothing here calls the production geometry, physics or grasp routines; the
only shared pieces are the plain data records used to describe inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, cKDTree


BOUNDARY_BAND = 1e-9  # m; points this close to a box face count as touching, not inside


class UnsupportedSceneError(ValueError):
    pass


@dataclass
class OracleReport:
    cases_checked: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def check(self, case, expected, actual) -> bool:
        self.cases_checked += 1
        if expected != actual:
            self.mismatches.append({"case": case, "expected": expected, "actual": actual})
            return False
        return True

    def __add__(self, other: OracleReport) -> OracleReport:
        return OracleReport(self.cases_checked + other.cases_checked, self.mismatches + other.mismatches)


# ----------------------------------------------------------------------------
# ray casting
# ----------------------------------------------------------------------------

def brute_force_ray(origin, direction, triangles):
    """Nearest hit of one ray over every triangle: ``(distance, index)`` or ``(inf, -1)``.

    Uses a plane intersection followed by same-side edge tests.
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    best, idx = math.inf, -1
    for k, (a, b, c) in enumerate(np.asarray(triangles, dtype=float)):
        n = np.cross(b - a, c - a)
        denom = n @ d
        if abs(denom) < 1e-15:
            continue
        t = n @ (a - o) / denom
        if t <= 1e-9 or t >= best:
            continue
        p = o + t * d
        if (np.cross(b - a, p - a) @ n >= -1e-15 * (n @ n) and np.cross(c - b, p - b) @ n >= -1e-15 * (n @ n)
                and np.cross(a - c, p - c) @ n >= -1e-15 * (n @ n)):
            best, idx = float(t), k
    return best, idx


def point_in_mesh(points, triangles) -> np.ndarray:
    """Parity test along a fixed skew direction (closed meshes only)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    tri = np.asarray(triangles, dtype=float)
    d = np.array([0.5377, 0.3111, 0.7829])
    d /= np.linalg.norm(d)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    n = np.cross(b - a, c - a)
    denom = n @ d
    ok = np.abs(denom) > 1e-18
    out = np.zeros(len(pts), dtype=bool)
    for i, p in enumerate(pts):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.einsum("ij,ij->i", n, a - p) / denom
        q = p + t[:, None] * d
        inside = (ok & (t > 0)
                  & (np.einsum("ij,ij->i", np.cross(b - a, q - a), n) >= 0)
                  & (np.einsum("ij,ij->i", np.cross(c - b, q - b), n) >= 0)
                  & (np.einsum("ij,ij->i", np.cross(a - c, q - c), n) >= 0))
        out[i] = bool(np.count_nonzero(inside) % 2)
    return out


# ----------------------------------------------------------------------------
# image-space checks
# ----------------------------------------------------------------------------

def exhaustive_min_rect_area(points, step_deg: float = 1.0) -> float:
    """Smallest bounding-rectangle area over orientations sampled every ``step_deg``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    best = math.inf
    for k in range(int(round(90.0 / step_deg))):
        t = math.radians(k * step_deg)
        u = np.array([math.cos(t), math.sin(t)])
        v = np.array([-u[1], u[0]])
        pu, pv = pts @ u, pts @ v
        best = min(best, float((pu.max() - pu.min()) * (pv.max() - pv.min())))
    return best


def scan_bbox(segmentation, object_id):
    """Inclusive pixel box by scanning every pixel, or ``None``."""
    seg = np.asarray(segmentation)
    x0 = y0 = math.inf
    x1 = y1 = -math.inf
    for v in range(seg.shape[0]):
        for u in range(seg.shape[1]):
            if seg[v, u] == object_id:
                x0, y0, x1, y1 = min(x0, u), min(y0, v), max(x1, u), max(y1, v)
    if x0 == math.inf:
        return None
    return int(x0), int(y0), int(x1), int(y1)


def pixel_center_bbox(projected, tol: float = 1e-9):
    """Inclusive box of the integer pixel centres inside the convex hull of projected points, or ``None``.

    This is the box a one-ray-per-pixel renderer must produce for an
    unoccluded convex object.
    """
    px = np.asarray(projected, dtype=float).reshape(-1, 2)
    eq = ConvexHull(px).equations
    lo, hi = np.floor(px.min(axis=0)).astype(int), np.ceil(px.max(axis=0)).astype(int)
    u, v = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1))
    grid = np.column_stack([u.ravel(), v.ravel()])
    inside = grid[np.all(grid @ eq[:, :2].T + eq[:, 2] <= tol, axis=1)]
    if not len(inside):
        return None
    return (int(inside[:, 0].min()), int(inside[:, 1].min()), int(inside[:, 0].max()), int(inside[:, 1].max()))


# ----------------------------------------------------------------------------
# gripper collision check by dense point sampling
# ----------------------------------------------------------------------------

def _approach(closing, theta):
    b = np.asarray(closing, dtype=float)
    down = np.array([0.0, 0.0, -1.0])
    r = down - (down @ b) * b
    if np.linalg.norm(r) < 1e-6:
        x = np.array([1.0, 0.0, 0.0])
        r = x - (x @ b) * b
    r = r / np.linalg.norm(r)
    return math.cos(theta) * r + math.sin(theta) * np.cross(b, r)


def gripper_volumes(grasp: dict, gripper: dict):
    """Oriented boxes (center, axes rows, half sizes) for a serialized grasp."""
    o = np.array([grasp["x"], grasp["y"], grasp["z"]], dtype=float)
    b = np.array([grasp["rx"], grasp["ry"], grasp["rz"]], dtype=float)
    a = _approach(b, grasp["theta"])
    c = np.cross(a, b)
    R = np.array([a, b, c])
    W, L = gripper["maxOpening"], gripper["fingerLength"]
    T, F, D = gripper["fingerThickness"], gripper["fingerWidth"], gripper["baseDepth"]
    return {
        "finger_pos": (o + L / 2 * a + (W / 2 + T / 2) * b, R, np.array([L / 2, T / 2, F / 2])),
        "finger_neg": (o + L / 2 * a - (W / 2 + T / 2) * b, R, np.array([L / 2, T / 2, F / 2])),
        "palm": (o - D / 2 * a, R, np.array([D / 2, W / 2 + T, F / 2])),
        "region": (o + L / 2 * a, R, np.array([L / 2, W / 2, F / 2])),
    }


def sample_surface(triangles, spacing: float = 0.0015) -> np.ndarray:
    """Deterministic surface samples: vertices, edge points and a barycentric grid per triangle."""
    out = []
    for a, b, c in np.asarray(triangles, dtype=float):
        longest = max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c))
        k = max(1, int(math.ceil(longest / spacing)))
        i, j = np.meshgrid(np.arange(k + 1), np.arange(k + 1), indexing="ij")
        m = (i + j) <= k
        u, v = i[m] / k, j[m] / k
        out.append(a + u[:, None] * (b - a) + v[:, None] * (c - a))
    return np.concatenate(out) if out else np.zeros((0, 3))


class DenseCollisionOracle:
    """Point-containment check of gripper volumes against sampled scene surfaces.

    ``objects`` maps object id to world triangles; the table is a slab with
    its top at z = 0 spanning ``table_size`` around the origin.
    """

    def __init__(self, objects: dict, table_size=(0.6, 0.6), table_thickness: float = 0.05,
                 spacing: float = 0.0015):
        self.spacing = spacing
        self.table_size = table_size
        self.table_thickness = table_thickness
        self.objects = {int(k): np.asarray(v, dtype=float) for k, v in objects.items()}
        pts, ids = [], []
        for oid, tri in self.objects.items():
            s = sample_surface(tri, spacing)
            pts.append(s)
            ids.append(np.full(len(s), oid))
        self.points = np.concatenate(pts) if pts else np.zeros((0, 3))
        self.ids = np.concatenate(ids) if ids else np.zeros(0, dtype=int)
        self.tree = cKDTree(self.points) if len(self.points) else None

    def _table_points(self, center, radius):
        hx, hy = self.table_size[0] / 2, self.table_size[1] / 2
        x0, x1 = max(-hx, center[0] - radius), min(hx, center[0] + radius)
        y0, y1 = max(-hy, center[1] - radius), min(hy, center[1] + radius)
        if x0 > x1 or y0 > y1:
            return np.zeros((0, 3))
        xs = np.arange(x0, x1 + self.spacing, self.spacing)
        ys = np.arange(y0, y1 + self.spacing, self.spacing)
        gx, gy = np.meshgrid(np.clip(xs, x0, x1), np.clip(ys, y0, y1))
        return np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])

    def _inside_table(self, pts):
        hx, hy = self.table_size[0] / 2, self.table_size[1] / 2
        return (np.abs(pts[:, 0]) < hx) & (np.abs(pts[:, 1]) < hy) & (pts[:, 2] < 0) & (
            pts[:, 2] > -self.table_thickness)

    def violations(self, grasp: dict, gripper: dict) -> list[str]:
        target = int(grasp["ownerObjectId"])
        vols = gripper_volumes(grasp, gripper)
        found = []
        for name, (c, R, h) in vols.items():
            radius = float(np.linalg.norm(h)) + 1e-6
            cand = []
            if self.tree is not None:
                idx = self.tree.query_ball_point(c, radius)
                cand.append((self.points[idx], self.ids[idx]))
            tp = self._table_points(c, radius)
            cand.append((tp, np.full(len(tp), -1)))
            for pts, ids in cand:
                if not len(pts):
                    continue
                rel = np.abs((pts - c) @ R.T)
                inside = np.all(rel < h - BOUNDARY_BAND, axis=1)
                bad = inside & (ids != target) if name == "region" else inside
                if np.any(bad):
                    who = sorted(set(int(x) for x in ids[bad]))
                    found.append(f"{name} contains surface points of {who}")
            # a volume swallowed whole by a solid shows no surface points
            corners = np.array([c + R.T @ (h * s) for s in np.array(np.meshgrid([-1, 1], [-1, 1], [-1, 1])).T.reshape(-1, 3)])
            probe = np.vstack([c[None], corners * 0.999 + c * 0.001])
            if np.any(self._inside_table(probe)):
                found.append(f"{name} lies inside the table")
            for oid, tri in self.objects.items():
                if name == "region" and oid == target:
                    continue
                lo, hi = tri.reshape(-1, 3).min(axis=0), tri.reshape(-1, 3).max(axis=0)
                near = np.all((probe >= lo) & (probe <= hi), axis=1)
                if np.any(near) and np.any(point_in_mesh(probe[near], tri)):
                    found.append(f"{name} lies inside object {oid}")
        return found


# ----------------------------------------------------------------------------
# support analysis of axis-aligned box scenes
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class AxisBox:
    box_id: int
    center: tuple
    size: tuple

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) - np.asarray(self.size, dtype=float) / 2

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + np.asarray(self.size, dtype=float) / 2


def _hull2d(points):
    pts = sorted(set((round(float(x), 12), round(float(y), 12)) for x, y in points))
    if len(pts) < 3:
        return pts

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
    return lower[:-1] + upper[:-1]


def _strictly_inside(point, hull, tol: float = 1e-9) -> bool:
    if len(hull) < 3:
        return False
    x, y = point
    for k in range(len(hull)):
        (x0, y0), (x1, y1) = hull[k], hull[(k + 1) % len(hull)]
        edge = math.hypot(x1 - x0, y1 - y0)
        if ((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)) / edge <= tol:
            return False
    return True


TABLE = "table"


def _patch_corners(patches):
    return [(x, y) for _, x0, y0, x1, y1 in patches for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]


def support_patches(boxes, box: AxisBox, table_size=(0.6, 0.6), tol: float = 1e-6):
    """Rectangles ``(supporter, x0, y0, x1, y1)`` on which ``box`` rests."""
    lo, hi = box.lo, box.hi
    out = []
    if abs(lo[2]) <= tol:
        hx, hy = table_size[0] / 2, table_size[1] / 2
        r = (max(lo[0], -hx), max(lo[1], -hy), min(hi[0], hx), min(hi[1], hy))
        if r[2] - r[0] > tol and r[3] - r[1] > tol:
            out.append((TABLE, *r))
    for other in boxes:
        if other.box_id == box.box_id or abs(other.hi[2] - lo[2]) > tol:
            continue
        r = (max(lo[0], other.lo[0]), max(lo[1], other.lo[1]), min(hi[0], other.hi[0]), min(hi[1], other.hi[1]))
        if r[2] - r[0] > tol and r[3] - r[1] > tol:
            out.append((other.box_id, *r))
    return out


def support_oracle(boxes, table_size=(0.6, 0.6)) -> dict[int, set]:
    """Parents of each box by quasi-static support-polygon analysis.

    ``B`` is a parent of ``A`` when ``A``'s centroid falls outside the convex
    hull of ``A``'s remaining contact patches once ``B``'s patch is removed.
    """
    boxes = list(boxes)
    for b in boxes:
        if not isinstance(b, AxisBox):
            raise UnsupportedSceneError("support oracle handles axis-aligned boxes only")
    out = {}
    for a in boxes:
        patches = support_patches(boxes, a, table_size)
        if not _strictly_inside(a.center[:2], _hull2d(_patch_corners(patches))):
            raise UnsupportedSceneError(f"box {a.box_id} is not resting on its supports")
        parents = set()
        for who, *_ in patches:
            if who == TABLE:
                continue
            rest = [p for p in patches if p[0] != who]
            if not _strictly_inside(a.center[:2], _hull2d(_patch_corners(rest))):
                parents.add(who)
        out[a.box_id] = parents
    return out


def boxes_from_scene(record, lib) -> list[AxisBox]:
    """Convert a recorded scene of unrotated box models; other scenes are rejected."""
    out = []
    for o in record.objects:
        v = lib.get(o.model_id).mesh.vertices * o.scale
        lo, hi = v.min(axis=0), v.max(axis=0)
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        is_box = len(v) == 8 and all(np.min(np.linalg.norm(corners - p, axis=1)) < 1e-9 for p in v)
        q = np.asarray(o.pose.rotation)
        if not is_box or abs(abs(q[0]) - 1.0) > 1e-12:
            raise UnsupportedSceneError(f"object {o.object_id} is not an axis-aligned box")
        c = (lo + hi) / 2 + np.asarray(o.pose.translation)
        out.append(AxisBox(o.object_id, tuple(c), tuple(hi - lo)))
    return out


def _stack(rows):
    """Boxes from ``(id, x, y, bottom, sx, sy, sz)`` rows."""
    return [AxisBox(i, (x, y, z + sz / 2), (sx, sy, sz)) for i, x, y, z, sx, sy, sz in rows]


def box_corpus() -> dict[str, list[AxisBox]]:
    """Hand-built resting box scenes with unambiguous support structure."""
    c = {}
    c["single"] = _stack([(0, 0, 0, 0, .10, .08, .06)])
    c["centered_pair"] = _stack([(1, 0, 0, 0, .12, .12, .06), (0, 0, 0, .06, .08, .08, .06)])
    c["three_stack"] = _stack([(2, 0, 0, 0, .14, .14, .05), (1, 0, 0, .05, .11, .11, .05),
                               (0, 0, 0, .10, .08, .08, .05)])
    c["offset_pair"] = _stack([(1, 0, 0, 0, .12, .12, .06), (0, .03, .01, .06, .08, .08, .04)])
    c["side_by_side"] = _stack([(0, -.07, 0, 0, .10, .10, .05), (1, .07, 0, 0, .10, .10, .08)])
    c["bridge"] = _stack([(1, -.06, 0, 0, .04, .06, .08), (2, .06, 0, 0, .04, .06, .08),
                          (0, 0, 0, .08, .18, .08, .03)])
    c["row_of_three_pillars"] = _stack([(1, -.06, 0, 0, .03, .03, .07), (2, 0, 0, 0, .03, .03, .07),
                                        (3, .06, 0, 0, .03, .03, .07), (0, 0, 0, .07, .18, .06, .02)])
    c["pyramid"] = _stack([(1, -.055, 0, 0, .10, .10, .06), (2, .055, 0, 0, .10, .10, .06),
                           (0, 0, 0, .06, .12, .08, .04)])
    c["big_and_small_support"] = _stack([(1, -.02, 0, 0, .12, .12, .07), (2, .08, 0, 0, .03, .03, .07),
                                         (0, 0, 0, .07, .16, .06, .03)])
    c["tower_of_four"] = _stack([(3, 0, 0, 0, .14, .14, .04), (2, 0, 0, .04, .12, .12, .04),
                                 (1, 0, 0, .08, .10, .10, .04), (0, 0, 0, .12, .08, .08, .04)])
    c["two_stacks"] = _stack([(0, -.1, 0, 0, .10, .10, .05), (1, -.1, 0, .05, .08, .08, .05),
                              (2, .1, 0, 0, .10, .10, .05), (3, .1, 0, .05, .08, .08, .05)])
    c["box_on_bridge"] = _stack([(1, -.06, 0, 0, .04, .06, .08), (2, .06, 0, 0, .04, .06, .08),
                                 (3, 0, 0, .08, .18, .08, .03), (0, 0, 0, .11, .06, .06, .05)])
    c["asymmetric_plank"] = _stack([(1, -.05, 0, 0, .03, .06, .06), (2, .08, 0, 0, .03, .06, .06),
                                    (0, 0, 0, .06, .19, .06, .02)])
    c["four_pillars"] = _stack([(1, -.05, -.05, 0, .03, .03, .06), (2, .05, -.05, 0, .03, .03, .06),
                                (3, -.05, .05, 0, .03, .03, .06), (4, .05, .05, 0, .03, .03, .06),
                                (0, 0, 0, .06, .16, .16, .02)])
    c["stack_on_one_of_two"] = _stack([(1, -.07, 0, 0, .10, .10, .05), (2, .07, 0, 0, .10, .10, .05),
                                       (0, -.07, 0, .05, .08, .08, .05)])
    c["two_on_big"] = _stack([(2, 0, 0, 0, .18, .12, .05), (0, -.045, 0, .05, .07, .07, .05),
                              (1, .045, 0, .05, .07, .07, .05)])
    c["three_pillar_triangle"] = _stack([(1, -.07, -.05, 0, .03, .03, .06), (2, .07, -.05, 0, .03, .03, .06),
                                         (3, 0, .07, 0, .03, .03, .06), (0, 0, 0, .06, .19, .19, .02)])
    c["cantilever_on_wide_base"] = _stack([(1, 0, 0, 0, .12, .12, .06), (0, .035, 0, .06, .10, .06, .03)])
    c["bridge_with_side_weight"] = _stack([(1, -.06, 0, 0, .04, .06, .08), (2, .06, 0, 0, .04, .06, .08),
                                           (3, -.06, 0, .08, .04, .06, .04), (0, .06, 0, .08, .10, .06, .03)])
    c["scattered"] = _stack([(0, -.15, -.1, 0, .08, .08, .06), (1, .1, .12, 0, .09, .06, .05),
                             (2, .12, -.12, 0, .07, .07, .09)])
    c["three_tier_pyramid"] = _stack([(3, -.055, 0, 0, .10, .10, .05), (4, .055, 0, 0, .10, .10, .05),
                                      (1, -.03, 0, .05, .07, .07, .05), (2, .03, 0, .05, .07, .07, .05),
                                      (0, 0, 0, .10, .12, .06, .03)])
    c["slab_on_two_boxes_off_center"] = _stack([(1, -.05, 0, 0, .06, .10, .05), (2, .06, 0, 0, .06, .10, .05),
                                                (0, -.04, 0, .05, .12, .08, .02)])
    return c


# ----------------------------------------------------------------------------
# scene records for the hand-built fixtures
# ----------------------------------------------------------------------------

def record_from_boxes(boxes, scene_id: str = "boxes", damping=(1.0, 1.0)):
    """Scene record plus a one-model-per-box library for an ``AxisBox`` list."""
    from .geometry import Pose, box_mesh
    from .scene import ModelEntry, ModelLibrary, ObjectInstance, SceneRecord, build_camera_rig

    entries, objs = [], []
    for b in sorted(boxes, key=lambda b: b.box_id):
        mid = f"fixture_{b.box_id}"
        entries.append(ModelEntry(mid, "box", box_mesh(*b.size, mid, "box")))
        pose = Pose((1.0, 0.0, 0.0, 0.0), tuple(float(x) for x in b.center))
        mass = 1000.0 * float(np.prod(b.size))
        objs.append(ObjectInstance(b.box_id, mid, "box", 1.0, pose, tuple(damping), mass))
    lib = ModelLibrary(entries)
    return SceneRecord(scene_id, 0, tuple(objs), build_camera_rig()), lib


def leaning_pair_record(damping=(1.0, 1.0)):
    """Two slanted slabs leaning against each other over x = 0; neither stands alone.

    Each slab is a quadrilateral prism extruded along y whose cross-section
    in the xz plane runs from a footprint on the table up to the shared
    vertical contact face.
    """
    from .geometry import Pose, TriMesh
    from .scene import ModelEntry, ModelLibrary, ObjectInstance, SceneRecord, build_camera_rig

    depth = 0.08
    left = [(-0.10, 0.0), (-0.07, 0.0), (0.0, 0.10), (0.0, 0.13)]
    right = [(-x, z) for x, z in left]
    entries, objs = [], []
    for oid, outline in ((0, left), (1, right)):
        v = [(x, y, z) for y in (-depth / 2, depth / 2) for x, z in outline]
        tri = []
        for i in range(4):
            j = (i + 1) % 4
            tri += [(i, j, 4 + j), (i, 4 + j, 4 + i)]
        tri += [(0, 1, 2), (0, 2, 3), (4, 6, 5), (4, 7, 6)]
        mid = f"leaner_{oid}"
        mesh = TriMesh(np.array(v), np.array(tri), mid, "wedge").repair_winding()
        entries.append(ModelEntry(mid, "wedge", mesh))
    lib = ModelLibrary(entries)
    for oid in (0, 1):
        mass = 1000.0 * lib.hull(f"leaner_{oid}", 1.0).volume
        objs.append(ObjectInstance(oid, f"leaner_{oid}", "wedge", 1.0, Pose((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0)),
                                   tuple(damping), mass))
    return SceneRecord("leaning_pair", 0, tuple(objs), build_camera_rig()), lib


# ----------------------------------------------------------------------------
# interpenetration
# ----------------------------------------------------------------------------

def overlap_depth_bound(points_a, points_b) -> float:
    """Upper bound on the penetration depth of two convex point sets.

    The smallest projected overlap over both hulls' face normals; zero when a
    face normal separates the sets. The true depth never exceeds it.
    """
    a = np.asarray(points_a, dtype=float)
    b = np.asarray(points_b, dtype=float)
    normals = np.vstack([ConvexHull(a).equations[:, :3], ConvexHull(b).equations[:, :3]])
    pa, pb = a @ normals.T, b @ normals.T
    overlap = np.minimum(pa.max(axis=0) - pb.min(axis=0), pb.max(axis=0) - pa.min(axis=0))
    return float(max(0.0, overlap.min()))
