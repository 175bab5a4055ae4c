import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cluttergen import oracles
from cluttergen.geometry import PinholeCamera, Pose, box_mesh, look_at, project_points
from cluttergen.scene import SceneRecord, build_camera_rig
from cluttergen.sensor import (BACKGROUND, BBox2D, SceneGeometry, ViewCapture, bbox_from_seg, boxes_from_seg,
                               capture_scene, depth_to_png, extract_cloud, palette_color, read_depth_png, read_ply,
                               read_seg_png, render_view, seg_to_png, write_ply)

CAM = PinholeCamera(100.0, 100.0, 64.0, 64.0, 128, 128)


def box_at(center, size):
    m = box_mesh(*size)
    return (m.vertices + np.asarray(center))[m.triangles]


def test_empty_scene_renders_background():
    cap = render_view(SceneGeometry([], []), CAM)
    assert np.all(cap.depth == 0) and np.all(cap.segmentation == BACKGROUND)
    assert len(extract_cloud(cap, CAM)) == 0


def test_box_on_optical_axis_depth():
    cap = render_view(SceneGeometry([3], [box_at((0, 0, 1.5), (0.4, 0.4, 1.0))]), CAM)
    assert cap.depth[64, 64] == pytest.approx(1.0, abs=1e-12)
    assert cap.segmentation[64, 64] == 3


def test_nearer_box_occludes():
    geo = SceneGeometry([1, 2], [box_at((0, 0, 2.0), (0.6, 0.6, 0.2)), box_at((0, 0, 1.0), (0.1, 0.1, 0.1))])
    cap = render_view(geo, CAM)
    assert cap.segmentation[64, 64] == 2 and cap.depth[64, 64] == pytest.approx(0.95)
    assert cap.segmentation[64, 50] == 1 and cap.depth[64, 50] == pytest.approx(1.9)


def test_depth_matches_brute_force_ray_distance():
    geo = SceneGeometry([0, 1], [box_at((0.05, 0, 1.2), (0.2, 0.3, 0.2)), box_at((-0.1, 0.05, 1.0), (0.1, 0.1, 0.1))])
    cam = CAM.with_pose(look_at([0.1, -0.1, 0.0], [0, 0, 1.1], up=(0, -1, 0)))
    cap = render_view(geo, cam)
    rays = cam.pixel_rays().reshape(128, 128, 3)
    rng = np.random.default_rng(0)
    vs, us = np.nonzero(cap.segmentation != BACKGROUND)
    pick = rng.choice(len(vs), 200, replace=False)
    for k in pick:
        v, u = vs[k], us[k]
        t, _ = oracles.brute_force_ray(cam.pose.translation, rays[v, u], geo.all_corners)
        assert abs(t * (rays[v, u] @ cam.optical_axis) - cap.depth[v, u]) < 1e-6


def test_segmentation_partitions_pixels(small_capture):
    captures, boxes, _ = small_capture
    assert len(captures) == 9
    for cap in captures:
        fg = cap.segmentation != BACKGROUND
        assert np.array_equal(fg, cap.depth > 0)
        ids = [i for i in np.unique(cap.segmentation) if i != BACKGROUND]
        union = np.zeros_like(fg)
        for i in ids:
            union |= cap.segmentation == i
        assert np.array_equal(union, fg)


def test_single_pixel_cloud():
    depth = np.zeros((128, 128))
    seg = np.full((128, 128), BACKGROUND)
    depth[64, 64], seg[64, 64] = 1.0, 7
    cap = ViewCapture(0, depth, seg, np.zeros((128, 128, 3)), np.zeros((128, 128, 3)))
    cloud = extract_cloud(cap, CAM)
    assert len(cloud) == 1 and np.allclose(cloud.positions[0], [0, 0, 1]) and cloud.object_ids[0] == 7


def test_cloud_points_project_to_their_pixels(small_capture):
    captures, _, cams = small_capture
    for cap, cam in zip(captures, cams):
        v, u = np.nonzero(cap.segmentation != BACKGROUND)
        px, z = project_points(cam, cap.cloud.positions)
        assert np.abs(px - np.column_stack([u, v])).max() < 1e-6
        assert np.abs(z - cap.depth[v, u]).max() < 1e-9


def test_bbox_examples():
    seg = np.full((12, 12), BACKGROUND)
    for x, y in ((2, 3), (5, 7), (4, 4)):
        seg[y, x] = 0
    assert bbox_from_seg(seg, 0) == BBox2D(0, 2, 3, 5, 7)
    seg = np.full((20, 20), BACKGROUND)
    seg[10, 10] = 4
    assert bbox_from_seg(seg, 4) == BBox2D(4, 10, 10, 10, 10)
    assert bbox_from_seg(seg, 5) is None


@given(arrays(np.int64, (9, 11), elements=st.integers(-1, 3)))
def test_bbox_matches_scan_oracle(seg):
    for i in range(4):
        b = bbox_from_seg(seg, i)
        expect = oracles.scan_bbox(seg, i)
        assert (b is None and expect is None) or (b.x_min, b.y_min, b.x_max, b.y_max) == expect


def test_isolated_convex_boxes_match_pixel_centre_oracle(small_scene, library):
    """Each convex object rendered alone covers exactly the pixel centres inside its projected hull."""
    geo = SceneGeometry.from_record(small_scene, library)
    checked = 0
    for cam in small_scene.camera_rig[::4]:
        for o in small_scene.objects:
            if o.category == "lshape":
                continue
            px, _ = project_points(cam, o.pose.apply(library.get(o.model_id).mesh.vertices * o.scale))
            if px.min() < 0 or px[:, 0].max() > cam.width - 1 or px[:, 1].max() > cam.height - 1:
                continue
            b = bbox_from_seg(render_view(geo.only([o.object_id]), cam).segmentation, o.object_id)
            assert (b.x_min, b.y_min, b.x_max, b.y_max) == oracles.pixel_center_bbox(px)
            checked += 1
    assert checked > 0


def test_occluded_object_has_no_box_in_that_view():
    lib_rec, lib = oracles.record_from_boxes([oracles.AxisBox(0, (0, 0, 0.01), (0.02, 0.02, 0.02)),
                                              oracles.AxisBox(1, (-0.15, 0, 0.4), (0.06, 0.06, 0.06))])
    captures, boxes, _ = capture_scene(lib_rec, lib)
    ids = [{b.object_id for b in view} for view in boxes]
    assert 0 in ids[0] and 0 not in ids[3]


def test_capture_is_deterministic(small_scene, library):
    a = capture_scene(small_scene, library)[0]
    b = capture_scene(small_scene, library)[0]
    for x, y in zip(a, b):
        assert np.array_equal(x.depth, y.depth) and np.array_equal(x.segmentation, y.segmentation)


def test_resolution_rescaling(small_scene, library):
    captures, _, cams = capture_scene(small_scene, library, resolution=(160, 120))
    assert captures[0].depth.shape == (120, 160) and cams[0].width == 160


def test_png_and_ply_roundtrips(tmp_path, small_capture):
    cap = small_capture[0][4]
    depth_to_png(cap.depth, tmp_path / "d.png")
    seg_to_png(cap.segmentation, tmp_path / "s.png")
    assert np.abs(read_depth_png(tmp_path / "d.png") - cap.depth).max() <= 0.0005 + 1e-12
    assert np.array_equal(read_seg_png(tmp_path / "s.png"), cap.segmentation)
    write_ply(cap.cloud, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    assert np.array_equal(back.object_ids, cap.cloud.object_ids)
    assert np.abs(back.positions - cap.cloud.positions).max() < 1e-6


def test_palette_is_stable():
    assert np.array_equal(palette_color(3), palette_color(3))
    assert not np.allclose(palette_color(3), palette_color(4))
