"""Geometric foundation: rotations, rigid poses, triangle meshes, convex hulls,
ray casting and the pinhole camera model.

Conventions used throughout the package:

* lengths in meters, angles in radians;
* quaternions are scalar-first ``(w, x, y, z)``;
* camera frames follow the OpenCV layout (x right, y down, z forward);
* pixel ``(u, v)`` addresses column ``u`` and row ``v``; pixel centers sit on
  integer coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels


class GeometryError(ValueError):
    """Invalid geometric input (degenerate vectors, empty meshes, ...)."""


class BehindCameraError(GeometryError):
    """A point at or behind the camera plane was projected."""


class InvalidDepthError(GeometryError):
    pass


# ----------------------------------------------------------------------------
# rotations
# ----------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise GeometryError("zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    """Rotation matrix to a unit quaternion with non-negative scalar part."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = quat_normalize(q)
    return -q if q[0] < 0 else q


def axis_angle_quat(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise GeometryError("zero rotation axis")
    axis = axis / n
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def random_quat(rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from SO(3) (Shoemake's subgroup algorithm)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1 - u1), np.sqrt(u1)
    return np.array([
        b * np.cos(2 * np.pi * u3),
        a * np.sin(2 * np.pi * u2),
        a * np.cos(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
    ])


def rotation_angle(q) -> float:
    """Angle in [0, pi] of the rotation represented by ``q``."""
    w = min(1.0, abs(float(q[0])) / float(np.linalg.norm(q)))
    return 2.0 * float(np.arccos(w))


def unit(v, what: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise GeometryError(f"degenerate {what}")
    return v / n


def orthonormal_basis(n) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors completing ``n`` to a right-handed orthonormal frame."""
    n = np.asarray(n, dtype=float)
    if abs(n[0]) < 0.57735:
        t1 = np.cross(n, [1.0, 0.0, 0.0])
    else:
        t1 = np.cross(n, [0.0, 1.0, 0.0])
    t1 /= np.linalg.norm(t1)
    return t1, np.cross(n, t1)


# ----------------------------------------------------------------------------
# poses
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping local coordinates to the parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(4)
        t = np.array(self.translation, dtype=float).reshape(3)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            q = quat_normalize(q)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_matrix(cls, m) -> Pose:
        m = np.asarray(m, dtype=float)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def as_matrix4(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.matrix
        out[:3, 3] = self.translation
        return out

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.matrix.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.matrix.T

    def compose(self, other: Pose) -> Pose:
        """``self * other``: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.matrix @ other.translation + self.translation
        return Pose(q, t)

    def inverse(self) -> Pose:
        qc = quat_conjugate(self.rotation)
        return Pose(qc, -(quat_to_matrix(qc) @ self.translation))

    def to_dict(self) -> dict:
        return {"rotation": [float(x) for x in self.rotation],
                "translation": [float(x) for x in self.translation]}

    @classmethod
    def from_dict(cls, d) -> Pose:
        return cls(d["rotation"], d["translation"])

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera-to-world pose of an OpenCV camera at ``eye`` looking at ``target``.

    The image x axis follows ``cross(forward, up)``; for a camera looking straight
    down with ``up = +y`` the image x axis is world +x and image rows run toward -y.
    """
    eye = np.asarray(eye, dtype=float)
    z = unit(np.asarray(target, dtype=float) - eye, "viewing direction")
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [1.0, 0.0, 0.0])
    x = unit(x)
    y = np.cross(z, x)
    return Pose(matrix_to_quat(np.column_stack([x, y, z])), eye)


# ----------------------------------------------------------------------------
# meshes
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    model_id: str = ""
    category: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(f) == 0:
            raise GeometryError("mesh has no triangles")
        if f.min() < 0 or f.max() >= len(v):
            raise GeometryError("triangle index out of range")
        area = 0.5 * np.linalg.norm(np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)
        keep = area > 1e-12
        if not keep.any():
            raise GeometryError("mesh has only degenerate triangles")
        f = f[keep]
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner coordinates."""
        return self.vertices[self.triangles]

    def face_normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def areas(self) -> np.ndarray:
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    def transformed(self, pose: Pose | None = None, scale: float = 1.0) -> TriMesh:
        v = self.vertices * scale
        if pose is not None:
            v = pose.apply(v)
        return TriMesh(v, self.triangles, self.model_id, self.category)

    def repair_winding(self) -> TriMesh:
        """Flip triangles whose normal points toward the vertex centroid."""
        c = self.corners
        normals = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        toward = ((c.mean(axis=1) - self.vertices.mean(axis=0)) * normals).sum(axis=1) < 0
        if not toward.any():
            return self
        tris = self.triangles.copy()
        tris[toward] = tris[toward][:, ::-1]
        return TriMesh(self.vertices, tris, self.model_id, self.category)


def longest_extent(mesh: TriMesh) -> float:
    """Longest side of the axis-aligned bounding box in the mesh's own frame."""
    if len(mesh.vertices) == 0:
        raise GeometryError("empty mesh")
    return float(np.max(mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)))


def load_mesh(path, model_id: str | None = None, category: str = "") -> TriMesh:
    """Read a triangle mesh (OBJ, STL, PLY, OFF, ...) and repair its winding."""
    import trimesh

    loaded = trimesh.load(str(path), force="mesh", process=True)
    if len(loaded.faces) == 0:
        raise GeometryError(f"{path}: no faces")
    mesh = TriMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces),
                   model_id or Path(path).stem, category)
    return mesh.repair_winding()


# ----------------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------------

def _prism(outline, height: float, model_id: str, category: str) -> TriMesh:
    """Extrude a counterclockwise 2D outline along z, centered on the origin.

    Caps are fan-triangulated from vertex 0, which must see every other vertex.
    """
    outline = np.asarray(outline, dtype=float)
    n = len(outline)
    h = height / 2
    verts = np.vstack([np.column_stack([outline, np.full(n, -h)]),
                       np.column_stack([outline, np.full(n, h)])])
    tris = []
    for k in range(1, n - 1):
        tris.append([0, k + 1, k])
        tris.append([n, n + k, n + k + 1])
    for k in range(n):
        k2 = (k + 1) % n
        tris.append([k, k2, n + k2])
        tris.append([k, n + k2, n + k])
    return TriMesh(verts, tris, model_id, category)


def box_mesh(sx: float, sy: float, sz: float, model_id: str = "box", category: str = "box") -> TriMesh:
    hx, hy = sx / 2, sy / 2
    return _prism([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]], sz, model_id, category)


def cylinder_mesh(radius: float, height: float, segments: int = 16,
                  model_id: str = "cylinder", category: str = "cylinder") -> TriMesh:
    a = 2 * np.pi * np.arange(segments) / segments
    return _prism(np.column_stack([radius * np.cos(a), radius * np.sin(a)]), height, model_id, category)


def lshape_mesh(length: float, height: float, thickness: float, depth: float,
                model_id: str = "lshape", category: str = "lshape") -> TriMesh:
    """L-shaped bracket: an extruded L outline, centered on its bounding box."""
    t = thickness
    outline = np.array([[0, 0], [length, 0], [length, t], [t, t], [t, height], [0, height]], dtype=float)
    outline -= [length / 2, height / 2]
    # fan from the reflex corner so every cap triangle lies inside the L
    outline = np.roll(outline, -3, axis=0)
    return _prism(outline, depth, model_id, category)


def wedge_mesh(base: float, height: float, depth: float, model_id: str = "wedge", category: str = "wedge") -> TriMesh:
    outline = np.array([[-base / 2, -height / 2], [base / 2, -height / 2], [-base / 2, height / 2]])
    return _prism(outline, depth, model_id, category)


# ----------------------------------------------------------------------------
# ray casting
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RayHit:
    distance: float
    face_index: int
    face_normal: np.ndarray


def ray_mesh_intersect(origin, direction, mesh: TriMesh, mesh_pose: Pose | None = None) -> RayHit | None:
    """Nearest positive-distance hit of a ray against a posed mesh, or ``None``.

    The returned normal is the hit triangle's unit normal turned to face the ray.
    """
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise GeometryError("degenerate ray direction")
    if abs(norm - 1.0) > 1e-9:
        raise GeometryError("ray direction must have unit norm")
    corners = mesh.corners if mesh_pose is None else mesh_pose.apply(mesh.corners.reshape(-1, 3)).reshape(-1, 3, 3)
    t, tri = raycast_triangles(np.asarray(origin, dtype=float)[None], d[None], corners)
    if tri[0] < 0:
        return None
    c = corners[tri[0]]
    n = unit(np.cross(c[1] - c[0], c[2] - c[0]))
    if n @ d > 0:
        n = -n
    return RayHit(float(t[0]), int(tri[0]), n)


def raycast_triangles(origins, directions, corners, groups=None):
    """Batched nearest-hit ray casting.

    Args:
        origins, directions: (R, 3) arrays.
        corners: (T, 3, 3) triangle corners.
        groups: optional list of triangle-count per object; enables per-object
            bounding-box culling. Defaults to one group.

    Returns:
        (t, tri): hit distances (inf on miss) and triangle indices (-1 on miss).
    """
    corners = np.ascontiguousarray(corners, dtype=float)
    if groups is None:
        groups = [len(corners)]
    offsets = np.concatenate([[0], np.cumsum(groups)]).astype(np.int64)
    boxes = np.empty((len(groups), 6))
    for k in range(len(groups)):
        c = corners[offsets[k]:offsets[k + 1]].reshape(-1, 3)
        if len(c) == 0:
            boxes[k] = [1, 1, 1, -1, -1, -1]
        else:
            boxes[k, :3] = c.min(axis=0) - 1e-9
            boxes[k, 3:] = c.max(axis=0) + 1e-9
    v0 = np.ascontiguousarray(corners[:, 0])
    e1 = np.ascontiguousarray(corners[:, 1] - corners[:, 0])
    e2 = np.ascontiguousarray(corners[:, 2] - corners[:, 0])
    origins = np.ascontiguousarray(np.broadcast_to(origins, np.shape(directions)), dtype=float)
    directions = np.ascontiguousarray(directions, dtype=float)
    return kernels.raycast(origins, directions, v0, e1, e2, offsets, boxes)


# ----------------------------------------------------------------------------
# convex hulls
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvexShape:
    """Polyhedral convex hull with merged planar faces, in the mesh frame.

    ``face_vertices`` lists every face polygon counterclockwise about its
    outward normal; ``edge_dirs`` holds one representative per set of
    parallel edges and ``edge_dir_index`` maps each edge onto it.
    """

    vertices: np.ndarray
    face_normals: np.ndarray
    face_offsets: np.ndarray
    face_vertices: tuple
    edges: np.ndarray
    edge_dirs: np.ndarray
    edge_dir_index: np.ndarray
    volume: float
    centroid: np.ndarray
    inertia: np.ndarray  # about the centroid, unit density

    @classmethod
    def from_points(cls, points) -> ConvexShape:
        from scipy.spatial import ConvexHull

        points = np.asarray(points, dtype=float)
        hull = ConvexHull(points)
        used = np.unique(hull.simplices)
        remap = -np.ones(len(points), dtype=np.int64)
        remap[used] = np.arange(len(used))
        verts = points[used]
        scale = max(float(np.ptp(verts, axis=0).max()), 1e-9)

        # merge coplanar facets
        planes: list[tuple[np.ndarray, float, set]] = []
        for simplex, eq in zip(hull.simplices, hull.equations):
            n, d = eq[:3], -eq[3]
            for pn, pd, members in planes:
                if pn @ n > 1 - 1e-9 and abs(pd - d) < 1e-9 * scale:
                    members.update(remap[simplex])
                    break
            else:
                planes.append((n.copy(), d, set(remap[simplex])))

        normals, offsets, polys = [], [], []
        for n, _, members in planes:
            idx = np.array(sorted(members))
            p = verts[idx]
            c = p.mean(axis=0)
            t1, t2 = orthonormal_basis(n)
            ang = np.arctan2((p - c) @ t2, (p - c) @ t1)
            polys.append(tuple(int(i) for i in idx[np.argsort(ang, kind="stable")]))
            n = n / np.linalg.norm(n)
            normals.append(n)
            offsets.append(float(np.mean(p @ n)))

        edge_set = set()
        for poly in polys:
            for a, b in zip(poly, poly[1:] + poly[:1]):
                edge_set.add((min(a, b), max(a, b)))
        edges = np.array(sorted(edge_set), dtype=np.int64)
        dirs: list[np.ndarray] = []
        dir_index = np.empty(len(edges), dtype=np.int64)
        for k, (a, b) in enumerate(edges):
            d = unit(verts[b] - verts[a])
            for m, u in enumerate(dirs):
                if abs(u @ d) > 1 - 1e-9:
                    dir_index[k] = m
                    break
            else:
                dir_index[k] = len(dirs)
                dirs.append(d)

        volume, centroid, inertia = _mass_properties(verts, polys)
        return cls(verts, np.array(normals), np.array(offsets), tuple(polys), edges,
                   np.array(dirs), dir_index, volume, centroid, inertia)

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> ConvexShape:
        return cls.from_points(mesh.vertices)

    def triangles(self) -> np.ndarray:
        """Fan triangulation of the face polygons, as vertex indices."""
        tris = [(p[0], p[k], p[k + 1]) for p in self.face_vertices for k in range(1, len(p) - 1)]
        return np.array(tris, dtype=np.int64)


def _mass_properties(verts, polys):
    """Volume, centroid and centroidal inertia (unit density) of a closed polyhedron.

    Sums signed tetrahedra (origin, a, b, c) over a fan triangulation.
    """
    tris = np.array([(p[0], p[k], p[k + 1]) for p in polys for k in range(1, len(p) - 1)])
    ref = verts.mean(axis=0)
    a, b, c = (verts[tris[:, i]] - ref for i in range(3))
    det = np.einsum("ij,ij->i", a, np.cross(b, c))
    vol = det.sum() / 6.0
    if vol <= 0:
        raise GeometryError("hull has non-positive volume")
    centroid_rel = (det[:, None] * (a + b + c)).sum(axis=0) / (24.0 * vol)
    # second moments about ref: integral of x_i x_j over each tetrahedron
    s = a + b + c
    cov = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            cov[i, j] = (det * (a[:, i] * a[:, j] + b[:, i] * b[:, j] + c[:, i] * c[:, j]
                                + s[:, i] * s[:, j])).sum() / 120.0
    cov -= vol * np.outer(centroid_rel, centroid_rel)
    inertia = np.trace(cov) * np.eye(3) - cov
    return float(vol), centroid_rel + ref, inertia


# ----------------------------------------------------------------------------
# camera
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose = field(default_factory=Pose)  # camera-to-world

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @property
    def optical_axis(self) -> np.ndarray:
        return self.pose.matrix[:, 2]

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def with_pose(self, pose: Pose) -> PinholeCamera:
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, pose)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d) -> PinholeCamera:
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
                   Pose.from_dict(d["pose"]))

    def pixel_rays(self) -> np.ndarray:
        """(H*W, 3) unit world-frame ray directions, row-major over (v, u)."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones(u.shape)], axis=-1)
        d = d.reshape(-1, 3)
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d @ self.pose.matrix.T


def project_points(cam: PinholeCamera, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection; returns (pixels (N,2), depths (N,)) without checks."""
    pc = cam.pose.inverse().apply(np.asarray(points, dtype=float).reshape(-1, 3))
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = np.column_stack([cam.fx * pc[:, 0] / z + cam.cx, cam.fy * pc[:, 1] / z + cam.cy])
    return px, z


def project_point(cam: PinholeCamera, world_point) -> tuple[np.ndarray, float]:
    px, z = project_points(cam, world_point)
    if not z[0] > 0:
        raise BehindCameraError("point is at or behind the camera plane")
    return px[0], float(z[0])


def backproject_pixels(cam: PinholeCamera, pixels, depths) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    depths = np.asarray(depths, dtype=float).reshape(-1)
    pc = np.column_stack([(pixels[:, 0] - cam.cx) / cam.fx * depths,
                          (pixels[:, 1] - cam.cy) / cam.fy * depths, depths])
    return cam.pose.apply(pc)


def backproject_pixel(cam: PinholeCamera, pixel, depth: float) -> np.ndarray:
    if not depth > 0:
        raise InvalidDepthError("depth must be positive")
    return backproject_pixels(cam, pixel, [depth])[0]
