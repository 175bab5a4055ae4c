"""Ray-cast depth, segmentation and flat-colour rendering of a scene.

Segmentation ids are object ids with ``BACKGROUND = -1``; depth holds the
camera-frame Z of the nearest hit and 0 where nothing is hit. Only objects
are rendered; the table shows up as background.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import PinholeCamera, backproject_pixels, project_points, raycast_triangles
from .scene import ModelLibrary, SceneRecord

BACKGROUND = -1


@dataclass
class PointCloud:
    positions: np.ndarray  # (N, 3) m
    colors: np.ndarray  # (N, 3) in [0, 1]
    object_ids: np.ndarray  # (N,)
    normals: np.ndarray | None = None  # (N, 3) outward unit normals

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=float).reshape(-1, 3)
        self.object_ids = np.asarray(self.object_ids, dtype=np.int64).reshape(-1)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
        if not (len(self.positions) == len(self.colors) == len(self.object_ids)):
            raise ValueError("point cloud arrays differ in length")
        if len(self.colors) and (self.colors.min() < 0 or self.colors.max() > 1):
            raise ValueError("colours must lie in [0, 1]")

    def __len__(self):
        return len(self.positions)

    def subset(self, mask) -> PointCloud:
        return PointCloud(self.positions[mask], self.colors[mask], self.object_ids[mask],
                          None if self.normals is None else self.normals[mask])

    def of_object(self, object_id: int) -> PointCloud:
        return self.subset(self.object_ids == object_id)

    @classmethod
    def concatenate(cls, clouds) -> PointCloud:
        clouds = list(clouds)
        if not clouds:
            return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64), np.zeros((0, 3)))
        normals = None
        if all(c.normals is not None for c in clouds):
            normals = np.concatenate([c.normals for c in clouds])
        return cls(np.concatenate([c.positions for c in clouds]), np.concatenate([c.colors for c in clouds]),
                   np.concatenate([c.object_ids for c in clouds]), normals)


@dataclass(frozen=True)
class BBox2D:
    object_id: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("inverted box")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def to_dict(self) -> dict:
        return {"objectId": self.object_id, "xMin": self.x_min, "yMin": self.y_min,
                "xMax": self.x_max, "yMax": self.y_max}

    @classmethod
    def from_dict(cls, d) -> BBox2D:
        return cls(int(d["objectId"]), int(d["xMin"]), int(d["yMin"]), int(d["xMax"]), int(d["yMax"]))


@dataclass
class ViewCapture:
    camera_index: int
    depth: np.ndarray  # (H, W) m, 0 = no hit
    segmentation: np.ndarray  # (H, W) object id or BACKGROUND
    color: np.ndarray  # (H, W, 3) in [0, 1]
    normals: np.ndarray  # (H, W, 3) outward world normals, 0 on background
    cloud: PointCloud | None = None


def palette_color(object_id: int) -> np.ndarray:
    """Deterministic, well-spread colour per object id."""
    h = (0.137 + 0.618033988749895 * (int(object_id) + 1)) % 1.0
    return np.array(colorsys.hsv_to_rgb(h, 0.65, 0.95))


class SceneGeometry:
    """Posed render meshes of every object in a scene."""

    def __init__(self, object_ids, corners):
        self.object_ids = [int(i) for i in object_ids]
        self.corners = [np.asarray(c, dtype=float) for c in corners]
        if self.corners:
            self.all_corners = np.ascontiguousarray(np.concatenate(self.corners))
        else:
            self.all_corners = np.zeros((0, 3, 3))
        self.groups = [len(c) for c in self.corners]
        self.tri_owner = np.repeat(np.array(self.object_ids, dtype=np.int64), self.groups)
        e1 = self.all_corners[:, 1] - self.all_corners[:, 0]
        e2 = self.all_corners[:, 2] - self.all_corners[:, 0]
        n = np.cross(e1, e2)
        self.tri_normals = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    @classmethod
    def from_record(cls, record: SceneRecord, lib: ModelLibrary) -> SceneGeometry:
        ids, corners = [], []
        for o in record.objects:
            mesh = lib.get(o.model_id).mesh
            c = o.pose.apply((mesh.corners * o.scale).reshape(-1, 3)).reshape(-1, 3, 3)
            ids.append(o.object_id)
            corners.append(c)
        return cls(ids, corners)

    def only(self, object_ids) -> SceneGeometry:
        keep = set(object_ids)
        pairs = [(i, c) for i, c in zip(self.object_ids, self.corners) if i in keep]
        return SceneGeometry([p[0] for p in pairs], [p[1] for p in pairs])

    def object_corners(self, object_id: int) -> np.ndarray:
        return self.corners[self.object_ids.index(object_id)]


def render_view(geometry: SceneGeometry, cam: PinholeCamera, palette=palette_color,
                camera_index: int = 0) -> ViewCapture:
    h, w = cam.height, cam.width
    dirs = cam.pixel_rays()
    origin = np.broadcast_to(cam.pose.translation, dirs.shape)
    depth = np.zeros(h * w)
    seg = np.full(h * w, BACKGROUND, dtype=np.int64)
    color = np.zeros((h * w, 3))
    normals = np.zeros((h * w, 3))
    if len(geometry.all_corners):
        t, tri = raycast_triangles(origin, dirs, geometry.all_corners, geometry.groups)
        hit = tri >= 0
        depth[hit] = t[hit] * (dirs[hit] @ cam.optical_axis)
        seg[hit] = geometry.tri_owner[tri[hit]]
        n = geometry.tri_normals[tri[hit]]
        normals[hit] = n
        shade = np.abs(np.einsum("ij,ij->i", n, dirs[hit]))
        if np.any(hit):
            ids = seg[hit]
            lut = {int(i): palette(int(i)) for i in np.unique(ids)}
            base = np.array([lut[int(i)] for i in ids])
            color[hit] = np.clip(base * shade[:, None], 0.0, 1.0)
    return ViewCapture(camera_index, depth.reshape(h, w), seg.reshape(h, w), color.reshape(h, w, 3),
                       normals.reshape(h, w, 3))


def extract_cloud(capture: ViewCapture, cam: PinholeCamera) -> PointCloud:
    """One world-frame point per non-background pixel."""
    v, u = np.nonzero(capture.segmentation != BACKGROUND)
    pix = np.column_stack([u, v]).astype(float)
    pts = backproject_pixels(cam, pix, capture.depth[v, u]) if len(pix) else np.zeros((0, 3))
    return PointCloud(pts, capture.color[v, u], capture.segmentation[v, u], capture.normals[v, u])


def bbox_from_seg(segmentation, object_id: int) -> BBox2D | None:
    """Tight pixel box (inclusive) around an object's pixels, or ``None``."""
    seg = np.asarray(segmentation)
    rows = np.any(seg == object_id, axis=1)
    if not rows.any():
        return None
    cols = np.any(seg == object_id, axis=0)
    y0, y1 = np.flatnonzero(rows)[[0, -1]]
    x0, x1 = np.flatnonzero(cols)[[0, -1]]
    return BBox2D(int(object_id), int(x0), int(y0), int(x1), int(y1))


def boxes_from_seg(segmentation) -> list[BBox2D]:
    ids = np.unique(segmentation)
    return [bbox_from_seg(segmentation, int(i)) for i in ids if i != BACKGROUND]


def scale_camera(cam: PinholeCamera, resolution) -> PinholeCamera:
    """Same field of view at another image size."""
    if resolution is None or tuple(resolution) == (cam.width, cam.height):
        return cam
    w, h = int(resolution[0]), int(resolution[1])
    sx, sy = w / cam.width, h / cam.height
    return PinholeCamera(cam.fx * sx, cam.fy * sy, (cam.cx + 0.5) * sx - 0.5, (cam.cy + 0.5) * sy - 0.5, w, h,
                         cam.pose)


def capture_scene(record: SceneRecord, lib: ModelLibrary, resolution=None, palette=palette_color,
                  geometry: SceneGeometry | None = None):
    """Render all rig views; returns ``(captures, boxes_per_view, cameras)``."""
    geometry = geometry or SceneGeometry.from_record(record, lib)
    captures, boxes, cams = [], [], []
    for k, cam in enumerate(record.camera_rig):
        cam = scale_camera(cam, resolution)
        cap = render_view(geometry, cam, palette, k)
        cap.cloud = extract_cloud(cap, cam)
        captures.append(cap)
        boxes.append(boxes_from_seg(cap.segmentation))
        cams.append(cam)
    return captures, boxes, cams


def projected_vertex_bounds(cam: PinholeCamera, points) -> tuple[float, float, float, float]:
    px, _ = project_points(cam, points)
    return float(px[:, 0].min()), float(px[:, 1].min()), float(px[:, 0].max()), float(px[:, 1].max())


# ----------------------------------------------------------------------------
# export
# ----------------------------------------------------------------------------

def depth_to_png(depth, path) -> None:
    """16-bit depth image in millimetres (0 = no hit)."""
    mm = np.clip(np.rint(np.asarray(depth) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path, format="PNG")


def seg_to_png(segmentation, path) -> None:
    """16-bit id map storing ``objectId + 1`` (0 = background)."""
    ids = np.asarray(segmentation) + 1
    if ids.max(initial=0) > 65535:
        raise ValueError("object id too large for a 16-bit map")
    Image.fromarray(ids.astype(np.uint16)).save(path, format="PNG")


def color_to_png(color, path) -> None:
    Image.fromarray(np.clip(np.rint(np.asarray(color) * 255.0), 0, 255).astype(np.uint8), "RGB").save(path,
                                                                                                      format="PNG")


def read_depth_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=float) / 1000.0


def read_seg_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int64) - 1


_PLY_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"),
                       ("blue", "u1"), ("objectId", "<i4")])


def write_ply(cloud: PointCloud, path) -> None:
    data = np.empty(len(cloud), dtype=_PLY_DTYPE)
    data["x"], data["y"], data["z"] = cloud.positions.T.astype(np.float32)
    rgb = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    data["red"], data["green"], data["blue"] = rgb.T
    data["objectId"] = cloud.object_ids.astype(np.int32)
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(cloud)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property uchar red\nproperty uchar green\nproperty uchar blue\n"
              "property int objectId\nend_header\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(data.tobytes())


def read_ply(path) -> PointCloud:
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    data = np.frombuffer(raw[end:], dtype=_PLY_DTYPE)
    pts = np.column_stack([data["x"], data["y"], data["z"]]).astype(float)
    col = np.column_stack([data["red"], data["green"], data["blue"]]).astype(float) / 255.0
    return PointCloud(pts, col, data["objectId"].astype(np.int64))
