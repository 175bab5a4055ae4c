"""End-to-end dataset generation, validation and re-export of scene bundles."""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
import math
import multiprocessing
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import oracles
from .geometry import GeometryError, PinholeCamera, project_points
from .grasp2d import camera_angle, project_grasps
from .grasp3d import VERTICALITY_MIN, GraspSet, GripperModel, annotate_grasps, fuse_clouds
from .mrg import MRG, MrgConfig, extract_mrg
from .physics import ContactParams
from .scene import (EmptySceneError, Intrinsics, ModelLibrary, SceneConfig, SceneRecord, box_library,
                    builtin_library, generate_scene)
from .sensor import (BBox2D, boxes_from_seg, capture_scene, color_to_png, depth_to_png, read_depth_png, read_ply,
                     read_seg_png, scale_camera, seg_to_png, write_ply)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "CLUTTERGEN_OUTPUT_ROOT"
BUILTIN = "builtin"
BOXES = "boxes"
N_VIEWS = 9


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    model_library_path: str = BUILTIN
    output_dir: str = "dataset"
    scene_count: int = 1
    object_count_range: tuple = (5, 20)
    seed: int = 0
    splits: tuple = ()
    table_size: tuple = (0.6, 0.6)
    rig_height: float = 0.8
    rig_spacing: float = 0.3
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 159.5
    cy: float = 119.5
    width: int = 320
    height: int = 240
    resolution: tuple = ()
    gravity_z: float = -0.981
    friction: float = 0.5
    solver_iterations: int = 16
    dt: float = 1.0 / 240.0
    settle_steps: int = 1500
    max_opening: float = 0.08
    finger_length: float = 0.06
    finger_thickness: float = 0.01
    finger_width: float = 0.02
    base_depth: float = 0.02
    mu: float = 0.5
    grasp_fraction: float = 0.1
    voxel: float = 0.005
    mrg_translation: float = 0.01
    mrg_rotation_deg: float = 5.0
    mrg_steps: int = 100
    export_clouds: bool = True
    export_images: bool = True
    export_grasps2d: bool = True
    workers: int = 1

    def validate(self) -> None:
        lo, hi = self.object_count_range
        if not 1 <= lo <= hi <= 20:
            raise ConfigError("objectCountRange must satisfy 1 <= min <= max <= 20")
        if self.scene_count < 1:
            raise ConfigError("sceneCount must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.resolution and len(self.resolution) != 2:
            raise ConfigError("resolution needs two values")
        try:
            self.gripper()
            self.mrg_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived settings ------------------------------------------------------

    def contact(self) -> ContactParams:
        return ContactParams(friction=self.friction, iterations=self.solver_iterations, dt=self.dt)

    def scene_config(self) -> SceneConfig:
        return SceneConfig(table_size=tuple(self.table_size), gravity=(0.0, 0.0, self.gravity_z),
                           contact=self.contact(), settle_steps=self.settle_steps, rig_height=self.rig_height,
                           rig_spacing=self.rig_spacing,
                           intrinsics=Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height),
                           splits=tuple(self.splits) or None)

    def gripper(self) -> GripperModel:
        return GripperModel(self.max_opening, self.finger_length, self.finger_thickness, self.finger_width,
                            self.base_depth)

    def mrg_config(self) -> MrgConfig:
        return MrgConfig(self.mrg_translation, math.radians(self.mrg_rotation_deg), self.mrg_steps, self.dt)

    def render_resolution(self):
        return tuple(self.resolution) if self.resolution else None

    def library(self) -> ModelLibrary:
        return load_library(self.model_library_path)

    # -- serialization -----------------------------------------------------------

    def to_dict(self) -> dict:
        d = {_camel(k): (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}
        d.pop("outputDir")
        d.pop("workers")
        return d

    def updated(self, values: dict) -> PipelineConfig:
        """Copy with ``values`` (snake or camel keys, strings or typed) applied."""
        kinds = {f.name: f.default for f in fields(self)}
        out = PipelineConfig(**asdict(self))
        for key, raw in values.items():
            name = _snake(key)
            if name not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(out, name, _coerce(kinds[name], raw, key))
        return out

    @classmethod
    def from_file(cls, path, base: PipelineConfig | None = None) -> PipelineConfig:
        """Read ``key = value`` lines (``#`` comments allowed)."""
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        try:
            parser.read_string("[pipeline]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        return (base or cls()).updated(dict(parser["pipeline"]))


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(w.capitalize() for w in rest)


def _snake(key: str) -> str:
    key = key.replace("-", "_")
    return "".join("_" + c.lower() if c.isupper() else c for c in key)


def _coerce(default, raw, key):
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return s in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if isinstance(raw, (list, tuple)):
                items = list(raw)
            else:
                text = str(raw) if _snake(key) == "splits" else str(raw).replace("x", ",")
                items = [x.strip() for x in text.split(",") if x.strip()]
            if _snake(key) == "splits":
                return tuple(str(x) for x in items)
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in items)
            return tuple(int(x) for x in items)
        return str(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def load_library(path: str) -> ModelLibrary:
    if path == BUILTIN:
        return builtin_library()
    if path == BOXES:
        return box_library()
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"model library {path} is not a directory")
    lib = ModelLibrary.from_directory(p)
    if not len(lib):
        raise ConfigError(f"model library {path} contains no models")
    return lib


def scene_seed(seed: int, index: int) -> int:
    """Stable per-scene seed, independent of worker scheduling."""
    h = hashlib.blake2b(f"{int(seed)}:{int(index)}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") >> 1


def scene_name(index: int) -> str:
    return f"scene_{index:05d}"


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# ----------------------------------------------------------------------------
# bundle writers
# ----------------------------------------------------------------------------

def flat_grasps(sets: dict[int, GraspSet]):
    """All grasps in bundle order (owners ascending), as ``(index, grasp)``."""
    out = []
    for owner in sorted(sets):
        out.extend(sets[owner].grasps)
    return list(enumerate(out))


def write_views(record: SceneRecord, lib: ModelLibrary, cfg: PipelineConfig, scene_dir: Path, captures=None):
    """Images, clouds and per-view boxes; returns ``(captures, cameras)``."""
    if captures is None:
        captures, boxes, cams = capture_scene(record, lib, cfg.render_resolution())
    else:
        captures, boxes, cams = captures
    views = []
    for k, (cap, bx) in enumerate(zip(captures, boxes)):
        if cfg.export_images:
            depth_to_png(cap.depth, scene_dir / f"depth_v{k}.png")
            seg_to_png(cap.segmentation, scene_dir / f"seg_v{k}.png")
            color_to_png(cap.color, scene_dir / f"color_v{k}.png")
        if cfg.export_clouds:
            write_ply(cap.cloud, scene_dir / f"cloud_v{k}.ply")
        views.append({"view": k, "boxes": [b.to_dict() for b in bx]})
    _dump({"schemaVersion": SCHEMA_VERSION, "views": views}, scene_dir / "bboxes.json")
    return captures, cams


def write_grasps2d(sets: dict[int, GraspSet], cams, gripper: GripperModel, scene_dir: Path) -> None:
    indexed = flat_grasps(sets)
    for k, cam in enumerate(cams):
        rects = project_grasps(indexed, gripper, cam)
        _dump({"schemaVersion": SCHEMA_VERSION, "view": k, "rectangles": [r.to_dict() for r in rects]},
              scene_dir / f"grasps2d_v{k}.json")


def write_grasps3d(sets: dict[int, GraspSet], cfg: PipelineConfig, scene_dir: Path) -> None:
    _dump({"schemaVersion": SCHEMA_VERSION, "gripper": cfg.gripper().to_dict(), "mu": cfg.mu,
           "graspSets": [sets[k].to_dict() for k in sorted(sets)]}, scene_dir / "grasps3d.json")


def write_mrg(mrg: MRG, scene_dir: Path) -> None:
    _dump({"schemaVersion": SCHEMA_VERSION, **mrg.to_dict()}, scene_dir / "mrg.json")


def build_scene(cfg: PipelineConfig, lib: ModelLibrary, index: int, out_root: Path) -> dict:
    """Generate and write one bundle; returns its manifest entry."""
    seed = scene_seed(cfg.seed, index)
    name = scene_name(index)
    entry = {"sceneId": name, "dir": name, "seed": seed, "schemaVersion": SCHEMA_VERSION}
    scene_dir = out_root / name
    try:
        rng = np.random.default_rng(seed)
        lo, hi = cfg.object_count_range
        count = int(rng.integers(lo, hi + 1))
        record = generate_scene(lib, count, seed, cfg.scene_config(), name)
        mrg = extract_mrg(record, lib, cfg.mrg_config(), cfg.contact())
        if scene_dir.exists():
            shutil.rmtree(scene_dir)
        scene_dir.mkdir(parents=True)
        (scene_dir / "scene.json").write_text(record.to_json() + "\n")
        write_mrg(mrg, scene_dir)
        captures, cams = write_views(record, lib, cfg, scene_dir)
        cloud = fuse_clouds([c.cloud for c in captures], cfg.voxel)
        gripper = cfg.gripper()
        sets = annotate_grasps(record, lib, cloud, gripper, cfg.mu, np.random.default_rng([seed, 1]),
                               cfg.grasp_fraction)
        write_grasps3d(sets, cfg, scene_dir)
        if cfg.export_grasps2d:
            write_grasps2d(sets, cams, gripper, scene_dir)
        entry.update(status="ok", objectCount=len(record.objects))
    except (EmptySceneError, GeometryError, ValueError) as exc:
        log.warning("scene %s failed: %s", name, exc)
        if scene_dir.exists():
            shutil.rmtree(scene_dir)
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return entry


def _worker(args):
    cfg, index, out_root = args
    return build_scene(cfg, cfg.library(), index, Path(out_root))


def generate_dataset(cfg: PipelineConfig) -> Path:
    """Write every scene bundle and then the manifest; returns the dataset directory."""
    cfg.validate()
    lib = cfg.library()  # fails before anything is written
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    if cfg.workers > 1 and cfg.scene_count > 1:
        with multiprocessing.get_context("spawn").Pool(cfg.workers) as pool:
            entries = pool.map(_worker, [(cfg, i, str(out_root)) for i in range(cfg.scene_count)])
    else:
        entries = [build_scene(cfg, lib, i, out_root) for i in range(cfg.scene_count)]
    manifest = {"schemaVersion": SCHEMA_VERSION, "config": cfg.to_dict(), "scenes": entries}
    _dump(manifest, out_root / "manifest.json")
    return out_root


def load_manifest(dataset_dir) -> dict:
    return json.loads((Path(dataset_dir) / "manifest.json").read_text())


def config_from_manifest(dataset_dir) -> PipelineConfig:
    d = dict(load_manifest(dataset_dir)["config"])
    return PipelineConfig(output_dir=str(dataset_dir)).updated(d)


def rerender_scene(scene_dir, cfg: PipelineConfig, lib: ModelLibrary | None = None) -> None:
    """Rewrite images, clouds, boxes and rectangles of one bundle from its stored scene and grasps."""
    scene_dir = Path(scene_dir)
    lib = lib or cfg.library()
    record = SceneRecord.from_json((scene_dir / "scene.json").read_text())
    _, cams = write_views(record, lib, cfg, scene_dir)
    if cfg.export_grasps2d:
        sets = read_grasp_sets(scene_dir)
        write_grasps2d(sets, cams, cfg.gripper(), scene_dir)


def reextract_mrg(scene_dir, cfg: PipelineConfig, lib: ModelLibrary | None = None) -> MRG:
    scene_dir = Path(scene_dir)
    lib = lib or cfg.library()
    record = SceneRecord.from_json((scene_dir / "scene.json").read_text())
    mrg = extract_mrg(record, lib, cfg.mrg_config(), cfg.contact())
    write_mrg(mrg, scene_dir)
    return mrg


def read_grasp_sets(scene_dir) -> dict[int, GraspSet]:
    d = json.loads((Path(scene_dir) / "grasps3d.json").read_text())
    return {gs["ownerObjectId"]: GraspSet.from_dict(gs) for gs in d["graspSets"]}


# ----------------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------------

@dataclass
class ValidationReport:
    scenes_checked: int = 0
    grasps_checked: int = 0
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, scene: str, check: str, message: str) -> None:
        self.violations.append({"scene": scene, "check": check, "message": message})


def _world_triangles(record: SceneRecord, lib: ModelLibrary) -> dict:
    """Object triangles in world coordinates, computed without the production pose code."""
    out = {}
    for o in record.objects:
        w, x, y, z = np.asarray(o.pose.rotation, dtype=float) / np.linalg.norm(o.pose.rotation)
        r = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                      [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                      [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])
        mesh = lib.get(o.model_id).mesh
        v = mesh.vertices * o.scale @ r.T + np.asarray(o.pose.translation, dtype=float)
        out[o.object_id] = v[mesh.triangles]
    return out


def _expected_files(cfg: PipelineConfig) -> list[str]:
    names = ["scene.json", "mrg.json", "grasps3d.json", "bboxes.json"]
    for k in range(N_VIEWS):
        if cfg.export_images:
            names += [f"depth_v{k}.png", f"seg_v{k}.png", f"color_v{k}.png"]
        if cfg.export_clouds:
            names.append(f"cloud_v{k}.ply")
        if cfg.export_grasps2d:
            names.append(f"grasps2d_v{k}.json")
    return names


def validate_scene(scene_dir, cfg: PipelineConfig, lib: ModelLibrary, report: ValidationReport,
                   grasp_sample: int | None = None) -> None:
    scene_dir = Path(scene_dir)
    name = scene_dir.name
    report.scenes_checked += 1
    missing = [f for f in _expected_files(cfg) if not (scene_dir / f).exists()]
    for f in missing:
        report.add(name, "files", f"missing {f}")
    if "scene.json" in missing:
        return
    try:
        record = SceneRecord.from_json((scene_dir / "scene.json").read_text())
        for o in record.objects:
            lib.get(o.model_id)
    except (ValueError, KeyError) as exc:
        report.add(name, "scene", f"unreadable scene record: {exc}")
        return
    ids = set(record.object_ids())

    # relationship graph
    if "mrg.json" not in missing:
        try:
            d = json.loads((scene_dir / "mrg.json").read_text())
            mrg = MRG.from_dict(d)
            if set(mrg.parents) != ids:
                report.add(name, "mrg", "object ids differ from the scene")
            stored = {(i, j): lab for i, j, lab in d["matrix"]}
            for i, j, lab in mrg.matrix():
                if stored.get((i, j)) != lab:
                    report.add(name, "mrg", f"matrix entry ({i},{j}) is {stored.get((i, j))!r}, parents imply {lab!r}")
            if len(stored) != len(mrg.matrix()):
                report.add(name, "mrg", "matrix size differs from the parent lists")
        except (ValueError, KeyError, TypeError) as exc:
            report.add(name, "mrg", f"malformed: {exc}")

    # boxes against segmentation, depth against segmentation
    cams = [scale_camera(c, cfg.render_resolution()) for c in record.camera_rig]
    segs = {}
    if cfg.export_images and "bboxes.json" not in missing:
        try:
            views = json.loads((scene_dir / "bboxes.json").read_text())["views"]
        except (ValueError, KeyError) as exc:
            report.add(name, "bbox", f"malformed bboxes.json: {exc}")
            views = []
        for view in views:
            k = view["view"]
            if f"seg_v{k}.png" in missing or f"depth_v{k}.png" in missing:
                continue
            seg = read_seg_png(scene_dir / f"seg_v{k}.png")
            depth = read_depth_png(scene_dir / f"depth_v{k}.png")
            segs[k] = seg
            if np.any((depth == 0) != (seg == -1)):
                report.add(name, "depth", f"view {k}: depth and segmentation disagree on background")
            truth = {b.object_id: b for b in boxes_from_seg(seg)}
            stored = {}
            for b in view["boxes"]:
                try:
                    bb = BBox2D.from_dict(b)
                except (ValueError, KeyError) as exc:
                    report.add(name, "bbox", f"view {k}: malformed box {b}: {exc}")
                    continue
                stored[bb.object_id] = bb
            for oid in sorted(set(truth) | set(stored)):
                if truth.get(oid) != stored.get(oid):
                    report.add(name, "bbox", f"view {k} object {oid}: stored {stored.get(oid)} != segmentation "
                                             f"{truth.get(oid)}")

    # clouds project back onto their own segmentation pixels
    if cfg.export_clouds:
        for k, cam in enumerate(cams):
            if f"cloud_v{k}.ply" in missing or k not in segs:
                continue
            cloud = read_ply(scene_dir / f"cloud_v{k}.ply")
            if not len(cloud):
                continue
            px, z = project_points(cam, cloud.positions)
            uv = np.rint(px).astype(int)
            inside = (z > 0) & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
            bad = ~inside
            bad[inside] = segs[k][uv[inside, 1], uv[inside, 0]] != cloud.object_ids[inside]
            if np.any(bad):
                report.add(name, "roundtrip", f"view {k}: {int(bad.sum())} cloud points off their pixels")

    # grasps: collision oracle, score ranges, rectangles
    if "grasps3d.json" in missing:
        return
    try:
        gd = json.loads((scene_dir / "grasps3d.json").read_text())
        sets = {gs["ownerObjectId"]: GraspSet.from_dict(gs) for gs in gd["graspSets"]}
        raw = [g for gs in sorted(gd["graspSets"], key=lambda s: s["ownerObjectId"]) for g in gs["grasps"]]
    except (ValueError, KeyError, TypeError) as exc:
        report.add(name, "grasp3d", f"malformed grasps3d.json: {exc}")
        return
    indexed = flat_grasps(sets)
    oracle = oracles.DenseCollisionOracle(_world_triangles(record, lib), record.table_size)
    pick = range(len(raw))
    if grasp_sample is not None and len(raw) > grasp_sample:
        pick = np.linspace(0, len(raw) - 1, grasp_sample).round().astype(int)
    for i in pick:
        g = raw[i]
        report.grasps_checked += 1
        if g["ownerObjectId"] not in ids:
            report.add(name, "grasp3d", f"grasp {i}: unknown owner {g['ownerObjectId']}")
            continue
        if not (0.0 <= g["s"] <= 1.0 + 1e-9 and 0.0 <= g["centerScore"] <= 1.0 + 1e-9):
            report.add(name, "grasp3d", f"grasp {i}: score out of range")
        if g["verticality"] < VERTICALITY_MIN - 1e-9:
            report.add(name, "grasp3d", f"grasp {i}: verticality below the minimum")
        if abs(math.hypot(g["rx"], g["ry"], g["rz"]) - 1.0) > 1e-6:
            report.add(name, "grasp3d", f"grasp {i}: closing axis is not a unit vector")
        for v in oracle.violations(g, gd["gripper"]):
            report.add(name, "collision", f"grasp {i}: {v}")
    if not cfg.export_grasps2d:
        return
    for k, cam in enumerate(cams):
        if f"grasps2d_v{k}.json" in missing:
            continue
        rects = json.loads((scene_dir / f"grasps2d_v{k}.json").read_text())["rectangles"]
        for r in rects:
            idx = r["sourceGraspIndex"]
            if not 0 <= idx < len(indexed):
                report.add(name, "grasp2d", f"view {k}: bad source index {idx}")
                continue
            g = indexed[idx][1]
            if g.owner != r["ownerObjectId"]:
                report.add(name, "grasp2d", f"view {k}: owner mismatch for grasp {idx}")
            if camera_angle(g, cam) > math.radians(30.0) + 1e-9:
                report.add(name, "grasp2d", f"view {k}: grasp {idx} violates the camera-angle rule")
            px, _ = project_points(cam, g.grasp_point[None])
            if np.hypot(*(px[0] - (r["x"], r["y"]))) > 2.0:
                report.add(name, "grasp2d", f"view {k}: rectangle {idx} is off its grasp point")


def validate_dataset(dataset_dir, lib: ModelLibrary | None = None, grasp_sample: int | None = None
                     ) -> ValidationReport:
    dataset_dir = Path(dataset_dir)
    report = ValidationReport()
    try:
        manifest = load_manifest(dataset_dir)
        cfg = config_from_manifest(dataset_dir)
    except (OSError, ValueError, KeyError) as exc:
        report.add("-", "manifest", f"unreadable manifest: {exc}")
        return report
    lib = lib or cfg.library()
    for entry in manifest["scenes"]:
        if entry.get("status") != "ok":
            continue
        d = dataset_dir / entry["dir"]
        if not d.is_dir():
            report.add(entry["sceneId"], "files", "scene directory is missing")
            continue
        validate_scene(d, cfg, lib, report, grasp_sample)
    return report
