"""Model libraries, scene records, scene generation and the camera rig."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geometry import (ConvexShape, GeometryError, PinholeCamera, Pose, TriMesh, box_mesh, cylinder_mesh,
                       load_mesh, longest_extent, look_at, lshape_mesh, random_quat, wedge_mesh)
from .physics import ContactParams, StillTolerance, World, pose_delta, settle

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("seen-train", "seen-val", "seen-test", "unseen-val", "unseen-test")
MIN_EXTENT, MAX_EXTENT = 0.08, 0.20
BACKGROUND_TAGS = ("wood", "marble", "cloth", "plain", "metal", "paper")


class UnresolvedModelError(KeyError):
    pass


class EmptySceneError(RuntimeError):
    """Every sampled object was pruned as unstable."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ----------------------------------------------------------------------------
# model library
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    category: str
    mesh: TriMesh
    split: str = "seen-train"


class ModelLibrary:
    """Read-only collection of object models tagged with a dataset split."""

    def __init__(self, entries):
        self.entries = tuple(entries)
        if not self.entries:
            raise ValueError("model library is empty")
        self._by_id = {}
        for e in self.entries:
            if e.model_id in self._by_id:
                raise ValueError(f"duplicate model id {e.model_id!r}")
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r} for {e.model_id!r}")
            self._by_id[e.model_id] = e
        uv = self.categories("unseen-val")
        ut = self.categories("unseen-test")
        if uv & ut:
            raise ValueError(f"unseen-val and unseen-test share categories: {sorted(uv & ut)}")
        self._hulls = lru_cache(maxsize=4096)(self._hull)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, model_id):
        return model_id in self._by_id

    def get(self, model_id: str) -> ModelEntry:
        try:
            return self._by_id[model_id]
        except KeyError:
            raise UnresolvedModelError(f"model {model_id!r} not in library") from None

    def categories(self, split: str | None = None) -> set[str]:
        return {e.category for e in self.entries if split is None or e.split == split}

    def select(self, splits=None) -> list[ModelEntry]:
        if splits is None:
            return list(self.entries)
        return [e for e in self.entries if e.split in splits]

    def _hull(self, model_id: str, scale: float) -> ConvexShape:
        return ConvexShape.from_points(self.get(model_id).mesh.vertices * scale)

    def hull(self, model_id: str, scale: float) -> ConvexShape:
        """Convex collision proxy of a scaled model (cached)."""
        return self._hulls(model_id, float(scale))

    def scaled_mesh(self, model_id: str, scale: float) -> TriMesh:
        return self.get(model_id).mesh.transformed(scale=scale)

    @classmethod
    def from_directory(cls, path) -> ModelLibrary:
        """Load meshes from ``path``.

        A ``library.json`` list of ``{"modelId", "file", "category", "split"}``
        records is used when present; otherwise every mesh file below ``path``
        becomes a ``seen-train`` model whose category is its parent directory.
        """
        path = Path(path)
        if not path.is_dir():
            raise FileNotFoundError(f"model library {path} is not a directory")
        index = path / "library.json"
        entries = []
        if index.exists():
            for rec in json.loads(index.read_text()):
                mesh = load_mesh(path / rec["file"], rec["modelId"], rec.get("category", ""))
                entries.append(ModelEntry(rec["modelId"], rec.get("category", ""), mesh,
                                          rec.get("split", "seen-train")))
        else:
            for f in sorted(path.rglob("*")):
                if f.suffix.lower() in (".obj", ".stl", ".ply", ".off", ".glb", ".gltf"):
                    mid = str(f.relative_to(path).with_suffix(""))
                    cat = f.parent.name if f.parent != path else "object"
                    entries.append(ModelEntry(mid, cat, load_mesh(f, mid, cat)))
        return cls(entries)


def builtin_library() -> ModelLibrary:
    """Procedural primitives at canonical size (rescaled when sampled)."""
    e = []

    def add(mesh, split):
        e.append(ModelEntry(mesh.model_id, mesh.category, mesh, split))

    for k, (sx, sy, sz) in enumerate([(1.0, 1.0, 1.0), (1.0, 0.7, 0.5), (1.0, 0.5, 0.4), (1.0, 0.8, 0.3),
                                      (0.6, 1.0, 0.45)]):
        add(box_mesh(sx, sy, sz, f"box_{k}", "box"), "seen-train")
    for k, (r, h) in enumerate([(0.5, 0.8), (0.5, 0.4), (0.35, 1.0)]):
        add(cylinder_mesh(r, h, 16, f"cylinder_{k}", "cylinder"), "seen-train")
    for k, (sx, sy, sz) in enumerate([(1.0, 0.8, 0.12), (1.0, 0.6, 0.1)]):
        add(box_mesh(sx, sy, sz, f"slab_{k}", "slab"), "seen-val")
    add(lshape_mesh(1.0, 0.8, 0.3, 0.5, "lshape_0", "lshape"), "seen-test")
    add(wedge_mesh(1.0, 0.5, 0.6, "wedge_0", "wedge"), "unseen-val")
    add(cylinder_mesh(0.5, 0.5, 6, "hexprism_0", "hexprism"), "unseen-test")
    return ModelLibrary(e)


def box_library() -> ModelLibrary:
    """Flat-ish boxes only; handy for predictable stacking."""
    return ModelLibrary([ModelEntry(m.model_id, "box", m) for m in
                         (box_mesh(1.0, 0.8, 0.4, "flatbox_0", "box"), box_mesh(1.0, 1.0, 0.5, "flatbox_1", "box"),
                          box_mesh(1.0, 0.6, 0.3, "flatbox_2", "box"))])


# ----------------------------------------------------------------------------
# scene record
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectInstance:
    object_id: int
    model_id: str
    category: str
    scale: float
    pose: Pose
    damping: tuple[float, float]
    mass: float

    def to_dict(self) -> dict:
        return {"objectId": self.object_id, "modelId": self.model_id, "category": self.category,
                "scale": float(self.scale), "pose": self.pose.to_dict(),
                "damping": [float(self.damping[0]), float(self.damping[1])], "mass": float(self.mass)}

    @classmethod
    def from_dict(cls, d) -> ObjectInstance:
        return cls(int(d["objectId"]), d["modelId"], d["category"], float(d["scale"]), Pose.from_dict(d["pose"]),
                   (float(d["damping"][0]), float(d["damping"][1])), float(d["mass"]))


@dataclass(frozen=True)
class SceneRecord:
    """Everything needed to rebuild a scene exactly."""

    scene_id: str
    seed: int
    objects: tuple
    camera_rig: tuple
    metadata: dict = field(default_factory=dict)
    gravity: tuple = (0.0, 0.0, -0.981)
    table_size: tuple = (0.6, 0.6)

    def object_ids(self) -> list[int]:
        return [o.object_id for o in self.objects]

    def object(self, object_id: int) -> ObjectInstance:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def to_dict(self) -> dict:
        return {"schemaVersion": SCHEMA_VERSION, "sceneId": self.scene_id, "seed": int(self.seed),
                "gravity": [float(x) for x in self.gravity], "tableSize": [float(x) for x in self.table_size],
                "objects": [o.to_dict() for o in self.objects],
                "cameraRig": [c.to_dict() for c in self.camera_rig], "metadata": dict(self.metadata)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> SceneRecord:
        if d.get("schemaVersion") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schemaVersion {d.get('schemaVersion')!r}")
        return cls(d["sceneId"], int(d["seed"]), tuple(ObjectInstance.from_dict(o) for o in d["objects"]),
                   tuple(PinholeCamera.from_dict(c) for c in d["cameraRig"]), dict(d.get("metadata", {})),
                   tuple(d.get("gravity", (0.0, 0.0, -0.981))), tuple(d.get("tableSize", (0.6, 0.6))))

    @classmethod
    def from_json(cls, text: str) -> SceneRecord:
        return cls.from_dict(json.loads(text))

    def with_poses(self, poses: dict) -> SceneRecord:
        objs = tuple(ObjectInstance(o.object_id, o.model_id, o.category, o.scale, poses.get(o.object_id, o.pose),
                                    o.damping, o.mass) for o in self.objects)
        return SceneRecord(self.scene_id, self.seed, objs, self.camera_rig, self.metadata, self.gravity,
                           self.table_size)

    def without(self, object_ids) -> SceneRecord:
        drop = set(object_ids)
        objs = tuple(o for o in self.objects if o.object_id not in drop)
        return SceneRecord(self.scene_id, self.seed, objs, self.camera_rig, self.metadata, self.gravity,
                           self.table_size)


# ----------------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Intrinsics:
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 159.5
    cy: float = 119.5
    width: int = 320
    height: int = 240


@dataclass
class SceneConfig:
    table_size: tuple = (0.6, 0.6)
    gravity: tuple = (0.0, 0.0, -0.981)
    contact: ContactParams = field(default_factory=ContactParams)
    drop_clearance: float = 0.25
    drop_fraction: float = 0.6
    settle_steps: int = 1500
    verify_steps: int = 500
    verify_rounds: int = 3
    verify_translation: float = 0.01
    verify_rotation: float = float(np.radians(5.0))
    rig_height: float = 0.8
    rig_spacing: float = 0.3
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    splits: tuple | None = None


def normalize_scale(mesh: TriMesh, rng: np.random.Generator) -> float:
    """Uniform scale factor putting the longest extent in [0.08, 0.20] m."""
    ext = longest_extent(mesh)
    if ext <= 1e-12:
        raise GeometryError("mesh has zero extent")
    return float(rng.uniform(MIN_EXTENT, MAX_EXTENT) / ext)


def build_camera_rig(center=(0.0, 0.0, 0.0), height: float = 0.8, spacing: float = 0.3,
                     intrinsics: Intrinsics | None = None) -> tuple:
    """Nine cameras on a 3x3 lattice at equal height, all aimed at ``center``."""
    if height <= 0 or spacing <= 0:
        raise ValueError("height and spacing must be positive")
    k = intrinsics or Intrinsics()
    center = np.asarray(center, dtype=float)
    cams = []
    for j in (-1, 0, 1):
        for i in (-1, 0, 1):
            eye = center + np.array([i * spacing, j * spacing, height])
            cams.append(PinholeCamera(k.fx, k.fy, k.cx, k.cy, k.width, k.height, look_at(eye, center)))
    return tuple(cams)


def restore_scene(record: SceneRecord, lib: ModelLibrary, params: ContactParams | None = None) -> World:
    """World with every recorded body at its pose, at rest and dynamic."""
    world = World(gravity=record.gravity, params=params, table_size=record.table_size)
    for o in record.objects:
        lib.get(o.model_id)
        world.add_body(o.object_id, lib.hull(o.model_id, o.scale), o.pose, damping=o.damping)
    return world


def _top_height(world: World) -> float:
    top = 0.0
    for b in world.body_ids:
        top = max(top, float(world.pose(b).apply(world.shape(b).vertices)[:, 2].max()))
    return top


def _unstable_after(record, lib, cfg: SceneConfig):
    """Run the restored scene and report the bodies that moved too far."""
    world = restore_scene(record, lib, cfg.contact)
    for _ in range(cfg.verify_steps):
        if world.all_asleep():
            break
        world.step()
    movers = []
    for o in record.objects:
        d = pose_delta(o.pose, world.pose(o.object_id))
        if d.exceeds(cfg.verify_translation, cfg.verify_rotation) or not world.on_table(o.object_id):
            movers.append(o.object_id)
    return movers, world


def generate_scene(lib: ModelLibrary, requested_count: int, seed: int, cfg: SceneConfig | None = None,
                   scene_id: str | None = None) -> SceneRecord:
    """Drop objects one by one, settle, prune unstable ones and verify the result."""
    cfg = cfg or SceneConfig()
    if not 1 <= requested_count <= 20:
        raise ValueError("requested_count must be in [1, 20]")
    pool = lib.select(cfg.splits)
    if not pool:
        raise ValueError("no models available for the requested splits")
    rng = np.random.default_rng(seed)
    world = World(gravity=cfg.gravity, params=cfg.contact, table_size=cfg.table_size)
    instances = {}
    pruned = []
    for k in range(requested_count):
        entry = pool[int(rng.integers(len(pool)))]
        scale = normalize_scale(entry.mesh, rng)
        shape = lib.hull(entry.model_id, scale)
        q = random_quat(rng)
        xy = (rng.random(2) - 0.5) * cfg.drop_fraction * np.asarray(cfg.table_size)
        damping = (float(rng.uniform(1.0, 1.5)), float(rng.uniform(1.0, 1.5)))
        r = Pose(q).matrix
        lowest = float((shape.vertices @ r.T)[:, 2].min())
        com = r @ shape.centroid
        z = _top_height(world) + cfg.drop_clearance - lowest
        pose = Pose(q, np.array([xy[0] - com[0], xy[1] - com[1], z]))
        world.add_body(k, shape, pose, damping=damping)
        instances[k] = (entry, scale, damping, world.mass(k))
        res = settle(world, cfg.settle_steps)
        for b in sorted(res.unstable_ids):
            world.remove_body(b)
            pruned.append(b)
        world.wake()

    metadata = {"backgroundTag": BACKGROUND_TAGS[int(rng.integers(len(BACKGROUND_TAGS)))],
                "lightCount": int(rng.integers(1, 5)), "requestedCount": int(requested_count)}
    rig = build_camera_rig((0.0, 0.0, 0.0), cfg.rig_height, cfg.rig_spacing, cfg.intrinsics)

    def make_record(w):
        objs = []
        for b in w.body_ids:
            entry, scale, damping, mass = instances[b]
            objs.append(ObjectInstance(b, entry.model_id, entry.category, scale, w.pose(b), damping, mass))
        return SceneRecord(scene_id or f"scene_{seed}", int(seed), tuple(objs), rig, metadata,
                           tuple(float(x) for x in cfg.gravity), tuple(float(x) for x in cfg.table_size))

    record = make_record(world)
    rounds = 0
    while record.objects:
        movers, after = _unstable_after(record, lib, cfg)
        if not movers:
            break
        rounds += 1
        if rounds <= cfg.verify_rounds:
            # keep what stayed on the table and take the re-settled poses
            gone = [b for b in movers if not after.on_table(b)]
            record = make_record(after).without(gone)
            pruned.extend(gone)
        else:
            record = record.without(movers)
            pruned.extend(movers)
    if not record.objects:
        raise EmptySceneError(f"all {requested_count} objects were unstable",
                              {"seed": int(seed), "pruned": pruned})
    log.debug("scene %s: %d objects kept, %d pruned", record.scene_id, len(record.objects), len(pruned))
    return record
