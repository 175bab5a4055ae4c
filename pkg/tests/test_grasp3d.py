import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cluttergen import oracles
from cluttergen.geometry import GeometryError, _prism, box_mesh
from cluttergen.grasp3d import (DEPTH_OFFSETS, ORIENTATIONS, CollisionScene, Grasp3D, GraspSet, GripperModel,
                                GripperPose, annotate_object, antipodal_score, approach_angle, approach_from,
                                center_score, enumerate_candidates, filter_verticality, sample_grasp_points,
                                verticality)
from cluttergen.sensor import PointCloud, SceneGeometry

GRIPPER = GripperModel()
DOWN = np.array([0.0, 0.0, -1.0])


def box_at(sx, sy, sz, x=0.0, y=0.0, z=None):
    """Triangles of an axis-aligned box resting on the table unless ``z`` is given."""
    z = sz / 2 if z is None else z
    return box_mesh(sx, sy, sz).corners + np.array([x, y, z])


def prism_at(outline, height, z0=0.0):
    """Vertical prism over an xy outline standing on ``z0``."""
    return _prism(outline, height, "prism", "prism").corners + np.array([0.0, 0.0, z0 + height / 2])


def scene_of(objects: dict):
    geo = SceneGeometry(list(objects), list(objects.values()))
    return CollisionScene(geo), oracles.DenseCollisionOracle(objects)


def as_record(pose: GripperPose, owner: int) -> dict:
    g = Grasp3D(pose.origin, pose.closing, approach_angle(pose.closing, pose.approach), 0.0, 0.0,
                verticality(pose.approach), pose.depth_offset, owner)
    return g.to_dict()


def box_surface_cloud(sx, sy, sz, oid, n, rng):
    """Random points with outward normals on the faces of a table-resting box that are not on the table."""
    faces = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1)]
    half = np.array([sx, sy, sz]) / 2
    pts, nrm = [], []
    for _ in range(n):
        ax, sgn = faces[rng.integers(len(faces))]
        p = rng.uniform(-half, half)
        p[ax] = sgn * half[ax]
        nv = np.zeros(3)
        nv[ax] = sgn
        pts.append(p + np.array([0, 0, half[2]]))
        nrm.append(nv)
    return PointCloud(np.array(pts), np.full((n, 3), 0.5), np.full(n, oid), np.array(nrm))


# ----------------------------------------------------------------------------
# sampling and candidates
# ----------------------------------------------------------------------------

def test_sample_counts():
    rng = np.random.default_rng(0)
    idx = sample_grasp_points(100, rng)
    assert len(idx) == 10 and len(set(idx)) == 10 and idx.min() >= 0 and idx.max() < 100
    assert len(sample_grasp_points(5, rng)) == 1
    assert len(sample_grasp_points(1, rng)) == 1
    with pytest.raises(ValueError):
        sample_grasp_points(0, rng)


def test_sampling_is_seeded():
    a = sample_grasp_points(1000, np.random.default_rng(42))
    b = sample_grasp_points(1000, np.random.default_rng(42))
    assert np.array_equal(a, b)


def test_candidate_grid():
    p = np.array([0.1, -0.2, 0.05])
    n = np.array([0.0, 0.0, 1.0])
    cands = enumerate_candidates(p, n, GRIPPER)
    assert len(cands) == 36
    assert len(ORIENTATIONS) == 9 and np.allclose(np.degrees(ORIENTATIONS), np.arange(-90, 90, 20))
    assert sorted({c.depth_offset for c in cands}) == sorted(DEPTH_OFFSETS)
    for c in cands:
        assert np.allclose(c.approach, -n)
        assert abs(c.closing @ c.approach) < 1e-12 and abs(np.linalg.norm(c.closing) - 1) < 1e-12
        # origin on the line through p along the approach, offset by the depth
        assert np.allclose(c.origin, p + c.depth_offset * c.approach)
    # orientations differ by 20 degrees within each depth level
    b = [c.closing for c in cands if c.depth_offset == 0.0]
    for u, v in zip(b, b[1:]):
        assert math.isclose(math.degrees(math.acos(np.clip(u @ v, -1, 1))), 20.0, abs_tol=1e-9)


def test_candidates_reject_non_unit_normal():
    with pytest.raises(GeometryError):
        enumerate_candidates(np.zeros(3), np.array([0.0, 0.0, 2.0]))


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_candidate_frames_orthonormal(x, y, z):
    n = np.array([x, y, z])
    if np.linalg.norm(n) < 1e-3:
        return
    n = n / np.linalg.norm(n)
    for c in enumerate_candidates(np.zeros(3), n):
        assert np.allclose(c.rotation.T @ c.rotation, np.eye(3), atol=1e-9)


@given(st.floats(-math.pi, math.pi), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_approach_angle_roundtrip(theta, x, y, z):
    b = np.array([x, y, z])
    if np.linalg.norm(b) < 1e-3:
        return
    b = b / np.linalg.norm(b)
    a = approach_from(b, theta)
    assert abs(a @ b) < 1e-9
    assert math.isclose(math.cos(approach_angle(b, a)), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(approach_angle(b, a)), math.sin(theta), abs_tol=1e-9)


# ----------------------------------------------------------------------------
# scores
# ----------------------------------------------------------------------------

def test_center_score_endpoints():
    c = np.zeros(3)
    assert center_score([0.01, 0, 0], c, 0.01, 0.05) == 1.0
    assert center_score([0.05, 0, 0], c, 0.01, 0.05) == 0.0
    assert math.isclose(center_score([0.03, 0, 0], c, 0.01, 0.05), 0.5)
    assert center_score([0.02, 0, 0], c, 0.02, 0.02) == 1.0
    with pytest.raises(ValueError):
        center_score([0.02, 0, 0], c, 0.05, 0.01)
    with pytest.raises(ValueError):
        center_score([0.2, 0, 0], c, 0.01, 0.05)


@given(st.floats(0.0, 0.1), st.floats(0.0, 0.1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_center_score_monotone(lo, span, f1, f2):
    hi = lo + span
    d1, d2 = sorted([lo + f1 * span, lo + f2 * span])
    s1 = center_score([d1, 0, 0], np.zeros(3), lo, hi)
    s2 = center_score([d2, 0, 0], np.zeros(3), lo, hi)
    assert 0.0 <= s2 <= s1 <= 1.0


def test_verticality_examples():
    assert math.isclose(verticality(DOWN), math.pi / 2)
    assert math.isclose(verticality([1.0, 0.0, 0.0]), 0.0, abs_tol=1e-12)
    assert math.isclose(verticality([0.0, math.cos(math.radians(30)), -0.5]), math.radians(30))
    assert verticality([0.0, 0.0, 1.0]) < 0


def test_verticality_filter_threshold():
    def g(v):
        return Grasp3D(np.zeros(3), np.array([1.0, 0, 0]), 0.0, 0.0, 0.0, v, 0.0, 0)

    kept = filter_verticality([g(math.radians(29.9)), g(math.radians(30.0)), g(math.radians(85))])
    assert [round(math.degrees(k.verticality), 1) for k in kept] == [30.0, 85.0]


def top_down(x=0.0, y=0.0, z=0.1, closing=(1.0, 0.0, 0.0), offset=0.0):
    return GripperPose(np.array([x, y, z]), DOWN.copy(), np.array(closing, dtype=float), offset)


def test_parallel_plates_score_one():
    slab = box_at(0.04, 0.06, 0.08)
    assert antipodal_score(top_down(z=0.09), slab) == pytest.approx(1.0, abs=1e-12)


def test_knife_edge_scores_low():
    w, h = 0.035, 0.0015
    rhombus = prism_at([[w / 2, 0], [0, h / 2], [-w / 2, 0], [0, -h / 2]], 0.08)
    s = antipodal_score(top_down(z=0.09), rhombus)
    assert s <= 0.05
    assert s == pytest.approx(h / math.hypot(h, w), rel=1e-9)


def test_sixty_degree_faces_score_half():
    b = 0.01
    a = b * math.sqrt(3)
    diamond = prism_at([[a, 0], [0, b], [-a, 0], [0, -b]], 0.08)
    assert antipodal_score(top_down(z=0.09), diamond) == pytest.approx(0.5, abs=1e-9)


def test_no_contact_scores_zero():
    far = box_at(0.02, 0.02, 0.02, x=0.2)
    assert antipodal_score(top_down(z=0.05), far) == 0.0


@given(st.floats(-math.pi, math.pi), st.floats(-0.3, 0.3))
@settings(max_examples=40)
def test_antipodal_bounds_and_equality_case(phi, tilt):
    """Score stays in [0, 1] and reaches 1 only when the closing axis is a face normal."""
    b = np.array([math.cos(phi) * math.cos(tilt), math.sin(phi) * math.cos(tilt), math.sin(tilt)])
    r = DOWN - (DOWN @ b) * b
    a = r / np.linalg.norm(r)
    box = box_at(0.03, 0.03, 0.03, z=0.0)
    pose = GripperPose(-0.045 * a, a, b, 0.0)
    s = antipodal_score(pose, box)
    assert 0.0 <= s <= 1.0
    if s >= 1.0 - 1e-12:
        assert np.max(np.abs(b)) >= 1 - 1e-6


# ----------------------------------------------------------------------------
# collision
# ----------------------------------------------------------------------------

TARGET, OTHER = 0, 1


def test_clear_top_down_grasp_is_free():
    objects = {TARGET: box_at(0.04, 0.06, 0.04)}
    scene, oracle = scene_of(objects)
    pose = top_down(z=0.04 + 0.02, offset=-0.02)
    assert scene.collision_free([pose], GRIPPER, TARGET)[0]
    assert oracle.violations(as_record(pose, TARGET), GRIPPER.to_dict()) == []


def test_finger_in_neighbour_collides():
    objects = {TARGET: box_at(0.04, 0.06, 0.04), OTHER: box_at(0.02, 0.06, 0.04, x=0.045)}
    scene, oracle = scene_of(objects)
    pose = top_down(z=0.06, offset=-0.02)
    assert not scene.collision_free([pose], GRIPPER, TARGET)[0]
    assert oracle.violations(as_record(pose, TARGET), GRIPPER.to_dict())


def test_fingers_below_table_collide():
    objects = {TARGET: box_at(0.04, 0.06, 0.02)}
    scene, oracle = scene_of(objects)
    pose = top_down(z=0.02, offset=0.0)
    assert not scene.collision_free([pose], GRIPPER, TARGET)[0]
    assert any("table" in v for v in oracle.violations(as_record(pose, TARGET), GRIPPER.to_dict()))


def test_empty_closing_region_is_rejected():
    objects = {TARGET: box_at(0.04, 0.06, 0.04)}
    scene, oracle = scene_of(objects)
    pose = top_down(z=0.2)
    assert not scene.collision_free([pose], GRIPPER, TARGET)[0]
    assert oracle.violations(as_record(pose, TARGET), GRIPPER.to_dict()) == []


def test_touching_faces_are_not_collisions():
    # fingertips end exactly on the table top
    objects = {TARGET: box_at(0.04, 0.06, 0.04)}
    scene, _ = scene_of(objects)
    assert scene.collision_free([top_down(z=0.06)], GRIPPER, TARGET)[0]


def test_box_buried_in_solid_collides():
    # a palm wholly inside a large block crosses no surface triangle
    objects = {TARGET: box_at(0.04, 0.04, 0.02, z=0.5), OTHER: box_at(0.3, 0.3, 0.3, z=0.15)}
    scene, oracle = scene_of(objects)
    pose = GripperPose(np.array([0.0, 0.0, 0.15]), DOWN.copy(), np.array([1.0, 0, 0]), 0.0)
    assert not scene.collision_free([pose], GRIPPER, TARGET)[0]
    assert oracle.violations(as_record(pose, TARGET), GRIPPER.to_dict())


@given(st.floats(-0.06, 0.06), st.floats(-0.06, 0.06), st.floats(0.0, 0.12), st.floats(-math.pi, math.pi),
       st.floats(-math.pi, math.pi))
@settings(max_examples=40)
def test_free_poses_pass_dense_oracle(x, y, z, phi, theta):
    objects = {TARGET: box_at(0.04, 0.05, 0.05), OTHER: box_at(0.03, 0.03, 0.08, x=0.07, y=0.02)}
    scene, oracle = scene_of(objects)
    b = np.array([math.cos(phi), math.sin(phi), 0.0])
    pose = GripperPose(np.array([x, y, z]), approach_from(b, theta), b, 0.0)
    if scene.collision_free([pose], GRIPPER, TARGET)[0]:
        assert oracle.violations(as_record(pose, TARGET), GRIPPER.to_dict()) == []


# ----------------------------------------------------------------------------
# per-object annotation
# ----------------------------------------------------------------------------

def test_isolated_box_annotation():
    rng = np.random.default_rng(3)
    sx, sy, sz = 0.05, 0.05, 0.06
    cloud = box_surface_cloud(sx, sy, sz, TARGET, 200, rng)
    objects = {TARGET: box_at(sx, sy, sz)}
    scene, oracle = scene_of(objects)
    gs = annotate_object(TARGET, cloud, scene, np.array([0, 0, sz / 2]), GRIPPER, 0.5, np.random.default_rng(1))
    assert 0 < len(gs.grasps) <= 20 * 36
    surface = {tuple(np.round(g.grasp_point - g.depth_offset * g.approach, 9)) for g in gs.grasps}
    assert len(surface) <= 20
    for g in gs.grasps:
        assert g.verticality >= math.radians(30) - 1e-12
        assert 0.0 <= g.antipodal <= 1.0 and 0.0 <= g.center_score <= 1.0
        assert oracle.violations(g.to_dict(), GRIPPER.to_dict()) == []
    assert max(g.center_score for g in gs.grasps) == 1.0 and min(g.center_score for g in gs.grasps) == 0.0


def test_enclosed_object_has_no_grasps():
    rng = np.random.default_rng(0)
    objects = {TARGET: box_at(0.04, 0.04, 0.04)}
    # a lidded enclosure of five slabs leaving 2 cm of clearance
    t = 0.01
    objects[1] = box_at(0.08 + 2 * t, 0.08 + 2 * t, t, z=0.06 + t / 2)
    objects[2] = box_at(t, 0.08, 0.06, x=0.04 + t / 2)
    objects[3] = box_at(t, 0.08, 0.06, x=-0.04 - t / 2)
    objects[4] = box_at(0.08 + 2 * t, t, 0.06, y=0.04 + t / 2)
    objects[5] = box_at(0.08 + 2 * t, t, 0.06, y=-0.04 - t / 2)
    scene, _ = scene_of(objects)
    cloud = box_surface_cloud(0.04, 0.04, 0.04, TARGET, 200, rng)
    gs = annotate_object(TARGET, cloud, scene, np.array([0, 0, 0.02]), GRIPPER, 0.5, np.random.default_rng(0),
                         fraction=1.0)
    assert gs.grasps == []


def test_object_without_points_gets_empty_set():
    scene, _ = scene_of({TARGET: box_at(0.04, 0.04, 0.04)})
    empty = PointCloud(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))
    gs = annotate_object(TARGET, empty, scene, np.zeros(3), GRIPPER, 0.5, np.random.default_rng(0))
    assert gs.grasps == [] and gs.owner == TARGET


def test_best_center_grasp_near_centroid_on_slab():
    sx, sy, sz, step = 0.12, 0.06, 0.02, 0.005
    xs = np.arange(-sx / 2 + step / 2, sx / 2, step)
    ys = np.arange(-sy / 2 + step / 2, sy / 2, step)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, sz)])
    cloud = PointCloud(pts, np.full(pts.shape, 0.5), np.zeros(len(pts)), np.tile([0.0, 0.0, 1.0], (len(pts), 1)))
    scene, _ = scene_of({TARGET: box_at(sx, sy, sz)})
    centroid = np.array([0.0, 0.0, sz / 2])
    gs = annotate_object(TARGET, cloud, scene, centroid, GRIPPER, 0.5, np.random.default_rng(0), fraction=1.0)
    best = max(gs.grasps, key=lambda g: g.center_score)
    assert np.linalg.norm(best.grasp_point[:2] - centroid[:2]) <= step


def test_annotation_deterministic(small_scene, library, small_capture):
    from cluttergen.grasp3d import annotate_grasps, fuse_clouds

    captures, _, _ = small_capture
    cloud = fuse_clouds([c.cloud for c in captures])
    a = annotate_grasps(small_scene, library, cloud, GRIPPER, 0.5, np.random.default_rng(9))
    b = annotate_grasps(small_scene, library, cloud, GRIPPER, 0.5, np.random.default_rng(9))
    assert {k: v.to_dict() for k, v in a.items()} == {k: v.to_dict() for k, v in b.items()}


def test_grasp_set_roundtrip(small_grasps):
    for gs in small_grasps.values():
        d = gs.to_dict()
        assert GraspSet.from_dict(d).to_dict() == d
