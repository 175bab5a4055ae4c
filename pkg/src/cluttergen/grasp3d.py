"""Object-specific parallel-jaw grasps: sample, enumerate, filter, score.

Gripper frame conventions: ``a`` is the approach direction, ``b`` the closing
axis (jaw-opening direction) and ``c = a x b`` the finger-width direction. The
frame origin ``o`` is the centre of the palm's front face. Fingers reach from
``o`` forward along ``a`` to ``o + fingerLength * a``, with their inner faces at
``o +/- (maxOpening / 2) * b``. The stored grasp point is ``o``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import (GeometryError, box_mesh, orthonormal_basis, raycast_triangles, unit)
from .sensor import PointCloud, SceneGeometry

log = logging.getLogger(__name__)

ORIENTATIONS = np.radians(np.arange(-90.0, 90.0, 20.0))  # [-90, 90), 9 values
DEPTH_OFFSETS = (-0.06, -0.04, -0.02, 0.0)
VERTICALITY_MIN = float(np.radians(30.0))
DOWN = np.array([0.0, 0.0, -1.0])
RAY_FRACTIONS = (0.1, 0.3, 0.5, 0.7, 0.9)
TOUCH_TOLERANCE = 1e-9  # m; boundary contact closer than this is not a collision
_PARITY_DIR = unit(np.array([0.5377, 0.3111, 0.7829]))


@dataclass(frozen=True)
class GripperModel:
    max_opening: float = 0.08
    finger_length: float = 0.06
    finger_thickness: float = 0.01
    finger_width: float = 0.02
    base_depth: float = 0.02

    def __post_init__(self):
        if min(self.max_opening, self.finger_length, self.finger_thickness, self.finger_width,
               self.base_depth) <= 0:
            raise ValueError("gripper dimensions must be positive")
        if self.max_opening <= 2 * self.finger_thickness:
            raise ValueError("maxOpening must exceed twice the finger thickness")

    def to_dict(self) -> dict:
        return {"maxOpening": self.max_opening, "fingerLength": self.finger_length,
                "fingerThickness": self.finger_thickness, "fingerWidth": self.finger_width,
                "baseDepth": self.base_depth}


@dataclass(frozen=True)
class GripperPose:
    origin: np.ndarray
    approach: np.ndarray
    closing: np.ndarray
    depth_offset: float = 0.0

    @property
    def finger_axis(self) -> np.ndarray:
        return np.cross(self.approach, self.closing)

    @property
    def rotation(self) -> np.ndarray:
        """Columns are (approach, closing, finger axis)."""
        return np.column_stack([self.approach, self.closing, self.finger_axis])


@dataclass(frozen=True)
class OrientedBox:
    center: np.ndarray
    axes: np.ndarray  # rows are unit axes
    half: np.ndarray

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        rel = (np.asarray(points, dtype=float) - self.center) @ self.axes.T
        return np.all(np.abs(rel) <= self.half + tol, axis=1)


def gripper_boxes(pose: GripperPose, g: GripperModel) -> dict[str, OrientedBox]:
    """Finger, palm and closing-region boxes of a posed gripper."""
    a, b, c = pose.approach, pose.closing, pose.finger_axis
    axes = np.array([a, b, c])
    o = np.asarray(pose.origin, dtype=float)
    half_open = g.max_opening / 2
    fl, ft, fw = g.finger_length, g.finger_thickness, g.finger_width
    return {
        "finger_pos": OrientedBox(o + fl / 2 * a + (half_open + ft / 2) * b, axes, np.array([fl / 2, ft / 2, fw / 2])),
        "finger_neg": OrientedBox(o + fl / 2 * a - (half_open + ft / 2) * b, axes, np.array([fl / 2, ft / 2, fw / 2])),
        "palm": OrientedBox(o - g.base_depth / 2 * a, axes, np.array([g.base_depth / 2, half_open + ft, fw / 2])),
        "region": OrientedBox(o + fl / 2 * a, axes, np.array([fl / 2, half_open, fw / 2])),
    }


# ----------------------------------------------------------------------------
# grasp records
# ----------------------------------------------------------------------------

def reference_direction(closing) -> np.ndarray:
    """Zero of the approach angle: world down projected off the closing axis."""
    b = np.asarray(closing, dtype=float)
    r = DOWN - (DOWN @ b) * b
    if np.linalg.norm(r) < 1e-6:
        x = np.array([1.0, 0.0, 0.0])
        r = x - (x @ b) * b
    return r / np.linalg.norm(r)


def approach_from(closing, theta: float) -> np.ndarray:
    b = np.asarray(closing, dtype=float)
    r = reference_direction(b)
    return np.cos(theta) * r + np.sin(theta) * np.cross(b, r)


def approach_angle(closing, approach) -> float:
    b = np.asarray(closing, dtype=float)
    r = reference_direction(b)
    return float(np.arctan2(np.asarray(approach) @ np.cross(b, r), np.asarray(approach) @ r))


def verticality(approach) -> float:
    """Elevation of the approach above horizontal (pi/2 for straight down)."""
    a = unit(approach, "approach")
    return float(np.arcsin(np.clip(-a[2], -1.0, 1.0)))


def filter_verticality(grasps, threshold: float = VERTICALITY_MIN):
    return [g for g in grasps if g.verticality >= threshold]


@dataclass(frozen=True)
class Grasp3D:
    grasp_point: np.ndarray
    orientation: np.ndarray  # closing axis
    theta: float
    antipodal: float
    center_score: float
    verticality: float
    depth_offset: float
    owner: int

    @property
    def approach(self) -> np.ndarray:
        return approach_from(self.orientation, self.theta)

    def pose(self) -> GripperPose:
        return GripperPose(np.asarray(self.grasp_point), self.approach, np.asarray(self.orientation),
                           self.depth_offset)

    def to_dict(self) -> dict:
        x, y, z = (float(v) for v in self.grasp_point)
        rx, ry, rz = (float(v) for v in self.orientation)
        return {"x": x, "y": y, "z": z, "rx": rx, "ry": ry, "rz": rz, "theta": float(self.theta),
                "s": float(self.antipodal), "centerScore": float(self.center_score),
                "verticality": float(self.verticality), "depthOffset": float(self.depth_offset),
                "ownerObjectId": int(self.owner)}

    @classmethod
    def from_dict(cls, d) -> Grasp3D:
        return cls(np.array([d["x"], d["y"], d["z"]], dtype=float), np.array([d["rx"], d["ry"], d["rz"]], dtype=float),
                   float(d["theta"]), float(d["s"]), float(d["centerScore"]), float(d["verticality"]),
                   float(d["depthOffset"]), int(d["ownerObjectId"]))


@dataclass
class GraspSet:
    owner: int
    grasps: list = field(default_factory=list)
    d_min: float = 0.0
    d_max: float = 0.0
    centroid: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {"ownerObjectId": int(self.owner), "dMin": float(self.d_min), "dMax": float(self.d_max),
                "grasps": [g.to_dict() for g in self.grasps]}

    @classmethod
    def from_dict(cls, d) -> GraspSet:
        return cls(int(d["ownerObjectId"]), [Grasp3D.from_dict(g) for g in d["grasps"]], float(d["dMin"]),
                   float(d["dMax"]))


# ----------------------------------------------------------------------------
# pipeline stages
# ----------------------------------------------------------------------------

def sample_grasp_points(n_points: int, rng: np.random.Generator, fraction: float = 0.1) -> np.ndarray:
    """Indices of ``max(1, floor(n * fraction))`` distinct points, sorted."""
    n = int(n_points)
    if n < 1:
        raise ValueError("need at least one point to sample from")
    k = max(1, int(np.floor(n * fraction)))
    return np.sort(rng.choice(n, size=k, replace=False))


def enumerate_candidates(grasp_point, surface_normal, gripper: GripperModel | None = None) -> list[GripperPose]:
    """36 poses: 9 in-plane orientations times 4 depth offsets."""
    n = np.asarray(surface_normal, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise GeometryError("surface normal must be a unit vector")
    a = -n
    t1, t2 = orthonormal_basis(a)
    p = np.asarray(grasp_point, dtype=float)
    out = []
    for phi in ORIENTATIONS:
        b = np.cos(phi) * t1 + np.sin(phi) * t2
        for off in DEPTH_OFFSETS:
            out.append(GripperPose(p + off * a, a, b, off))
    return out


class CollisionScene:
    """All triangles a gripper may touch: object meshes plus the table."""

    def __init__(self, geometry: SceneGeometry, table_size=(0.6, 0.6), table_thickness: float = 0.05):
        table = box_mesh(table_size[0], table_size[1], table_thickness, "table", "table")
        tc = table.corners + np.array([0.0, 0.0, -table_thickness / 2])
        self.geometry = geometry
        self.tris = np.ascontiguousarray(np.concatenate([geometry.all_corners, tc]))
        self.owner = np.concatenate([geometry.tri_owner, np.full(len(tc), -1, dtype=np.int64)])

    def hits(self, poses, gripper: GripperModel, target: int) -> np.ndarray:
        """(P, 4, 2) flags [other, target] for finger+, finger-, palm, region.

        Boxes are treated as open sets: surfaces that merely touch a box face
        do not count.
        """
        if not poses:
            return np.zeros((0, 4, 2), dtype=np.uint8)
        centers, axes, halves = [], [], []
        for p in poses:
            for box in gripper_boxes(p, gripper).values():
                centers.append(box.center)
                axes.append(box.axes)
                halves.append(box.half - TOUCH_TOLERANCE)
        is_target = (self.owner == target).astype(np.uint8)
        out = kernels.obb_tri_hits(np.ascontiguousarray(centers, dtype=float), np.ascontiguousarray(axes, dtype=float),
                                   np.ascontiguousarray(halves, dtype=float), self.tris, is_target)
        return np.asarray(out).reshape(len(poses), 4, 2)

    def solids_containing(self, points) -> np.ndarray:
        """(M, K) flags: point m lies inside solid k of ``self.solid_ids`` (parity of ray crossings)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        owners = self.solid_ids
        out = np.zeros((len(pts), len(owners)), dtype=bool)
        if not len(pts):
            return out
        v0 = self.tris[:, 0]
        e1 = self.tris[:, 1] - v0
        e2 = self.tris[:, 2] - v0
        pv = np.cross(_PARITY_DIR, e2)
        det = np.einsum("ij,ij->i", e1, pv)
        ok = np.abs(det) > 1e-18
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        for m, p in enumerate(pts):
            s = p - v0
            u = np.einsum("ij,ij->i", s, pv) * inv
            q = np.cross(s, e1)
            v = (q @ _PARITY_DIR) * inv
            t = np.einsum("ij,ij->i", e2, q) * inv
            cross = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 0)
            counts = np.bincount(self._owner_index[cross], minlength=len(owners))
            out[m] = counts % 2 == 1
        return out

    @property
    def solid_ids(self) -> np.ndarray:
        if not hasattr(self, "_solid_ids"):
            self._solid_ids, self._owner_index = np.unique(self.owner, return_inverse=True)
        return self._solid_ids

    def collision_free(self, poses, gripper: GripperModel, target: int) -> np.ndarray:
        h = self.hits(poses, gripper, target)
        if not len(h):
            return np.zeros(0, dtype=bool)
        body = h[:, :3, :].any(axis=(1, 2))
        region_ok = (h[:, 3, 0] == 0) & (h[:, 3, 1] == 1)
        free = ~body & region_ok
        # a box crossed by no surface is wholly inside or wholly outside each
        # solid, so testing its centre settles containment
        idx = np.nonzero(free)[0]
        if len(idx):
            centers = np.array([[b.center for b in gripper_boxes(poses[i], gripper).values()] for i in idx])
            inside = self.solids_containing(centers.reshape(-1, 3)).reshape(len(idx), 4, -1)
            other = self.solid_ids != target
            buried = inside[:, :3].any(axis=(1, 2)) | inside[:, 3][:, other].any(axis=1)
            free[idx[buried]] = False
        return free


def collision_free(pose: GripperPose, gripper: GripperModel, scene: CollisionScene, target: int) -> bool:
    return bool(scene.collision_free([pose], gripper, target)[0])


def _contact_rays(pose: GripperPose, gripper: GripperModel):
    a, b = pose.approach, pose.closing
    half = gripper.max_opening / 2
    depths = np.array(RAY_FRACTIONS) * gripper.finger_length
    base = pose.origin + depths[:, None] * a
    return base + half * b, base - half * b


def antipodal_scores(poses, gripper: GripperModel, target_corners, mu: float = 0.5) -> np.ndarray:
    """Cosine-average antipodal score per pose.

    Each finger probes the target along its closing direction from points on
    its inner face; the nearest hit within the opening is its contact. The
    score is ``0.5 * (max(0, cos g1) + max(0, cos g2))`` where ``gi`` is the
    angle between the outward contact normal and the direction back towards
    finger ``i``. A finger that touches nothing scores the grasp 0. ``mu`` is
    accepted for interface symmetry; the grading is continuous.
    """
    del mu
    if not poses:
        return np.zeros(0)
    corners = np.ascontiguousarray(target_corners, dtype=float)
    n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
    k = len(RAY_FRACTIONS)
    origins, dirs = [], []
    for p in poses:
        pos, neg = _contact_rays(p, gripper)
        origins.append(pos)
        dirs.append(np.repeat(-p.closing[None], k, axis=0))
        origins.append(neg)
        dirs.append(np.repeat(p.closing[None], k, axis=0))
    origins = np.concatenate(origins)
    dirs = np.concatenate(dirs)
    t, tri = raycast_triangles(origins, dirs, corners)
    t = t.reshape(len(poses), 2, k)
    tri = tri.reshape(len(poses), 2, k)
    scores = np.zeros(len(poses))
    for i, p in enumerate(poses):
        total = 0.0
        for side, sign in ((0, 1.0), (1, -1.0)):
            ts = np.where(t[i, side] <= gripper.max_opening, t[i, side], np.inf)
            j = int(np.argmin(ts))
            if not np.isfinite(ts[j]):
                total = None
                break
            cos_g = sign * float(n[tri[i, side, j]] @ p.closing)
            total += max(0.0, cos_g)
        scores[i] = 0.0 if total is None else min(1.0, 0.5 * total)
    return scores


def antipodal_score(pose: GripperPose, target_corners, mu: float = 0.5, gripper: GripperModel | None = None) -> float:
    return float(antipodal_scores([pose], gripper or GripperModel(), target_corners, mu)[0])


def center_score(grasp_point, centroid, d_min: float, d_max: float) -> float:
    """Linear score, 1 at the nearest grasp and 0 at the farthest."""
    if d_min > d_max:
        raise ValueError("dMin must not exceed dMax")
    d = float(np.linalg.norm(np.asarray(grasp_point) - np.asarray(centroid)))
    tol = 1e-12 * max(1.0, d_max)
    if d < d_min - tol or d > d_max + tol:
        raise ValueError("distance lies outside [dMin, dMax]")
    if d_max - d_min <= 0:
        return 1.0
    return float(min(1.0, max(0.0, (d_max - d) / (d_max - d_min))))


def fuse_clouds(clouds, voxel: float = 0.005) -> PointCloud:
    """Merge clouds and keep, per object and voxel, the point nearest the voxel centre."""
    cloud = PointCloud.concatenate(clouds)
    if not len(cloud) or voxel <= 0:
        return cloud
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    dist = np.linalg.norm(cloud.positions - (keys + 0.5) * voxel, axis=1)
    order = np.lexsort((np.arange(len(cloud)), dist, keys[:, 2], keys[:, 1], keys[:, 0], cloud.object_ids))
    k = keys[order]
    ids = cloud.object_ids[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(k[1:] != k[:-1], axis=1) | (ids[1:] != ids[:-1])
    return cloud.subset(np.sort(order[first]))


def annotate_object(target: int, cloud: PointCloud, scene: CollisionScene, centroid, gripper: GripperModel,
                    mu: float, rng: np.random.Generator, fraction: float = 0.1) -> GraspSet:
    """Grasps for one object from its fused cloud (positions plus outward normals)."""
    pts = cloud.of_object(target)
    if not len(pts):
        log.info("object %d has no visible points; no grasps", target)
        return GraspSet(target, [], 0.0, 0.0, np.asarray(centroid))
    idx = sample_grasp_points(len(pts), rng, fraction)
    cands = []
    for i in idx:
        n = pts.normals[i]
        if np.linalg.norm(n) < 0.5:
            continue
        cands.extend(enumerate_candidates(pts.positions[i], n / np.linalg.norm(n), gripper))
    free = scene.collision_free(cands, gripper, target)
    kept = [c for c, ok in zip(cands, free) if ok]
    kept = [c for c in kept if verticality(c.approach) >= VERTICALITY_MIN]
    scores = antipodal_scores(kept, gripper, scene.geometry.object_corners(target), mu)
    centroid = np.asarray(centroid, dtype=float)
    if not kept:
        log.info("object %d: no collision-free grasps", target)
        return GraspSet(target, [], 0.0, 0.0, centroid)
    d = np.array([np.linalg.norm(c.origin - centroid) for c in kept])
    d_min, d_max = float(d.min()), float(d.max())
    grasps = []
    for c, s in zip(kept, scores):
        grasps.append(Grasp3D(np.array(c.origin), np.array(c.closing), approach_angle(c.closing, c.approach),
                              float(s), center_score(c.origin, centroid, d_min, d_max), verticality(c.approach),
                              float(c.depth_offset), int(target)))
    return GraspSet(target, grasps, d_min, d_max, centroid)


def annotate_grasps(record, lib, cloud: PointCloud, gripper: GripperModel | None = None, mu: float = 0.5,
                    rng: np.random.Generator | None = None, fraction: float = 0.1,
                    geometry: SceneGeometry | None = None) -> dict[int, GraspSet]:
    """Grasp sets for every object of a scene, keyed by object id."""
    gripper = gripper or GripperModel()
    rng = rng if rng is not None else np.random.default_rng(record.seed)
    geometry = geometry or SceneGeometry.from_record(record, lib)
    scene = CollisionScene(geometry, record.table_size)
    out = {}
    for o in record.objects:
        centroid = o.pose.apply(lib.hull(o.model_id, o.scale).centroid)
        out[o.object_id] = annotate_object(o.object_id, cloud, scene, centroid, gripper, mu, rng, fraction)
    return out
