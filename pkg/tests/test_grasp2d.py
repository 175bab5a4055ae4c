import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cluttergen import oracles
from cluttergen.geometry import GeometryError, PinholeCamera, look_at
from cluttergen.grasp2d import (Grasp2D, Rejected, min_area_rect, normalize_alpha, project_grasp, project_grasps,
                                rect_corners)
from cluttergen.grasp3d import Grasp3D, GripperModel, approach_angle, verticality

GRIPPER = GripperModel()
CAM = PinholeCamera(500.0, 500.0, 320.0, 240.0, 640, 480, look_at([0, 0, 1.0], [0, 0, 0]))

coord = st.floats(-100, 100, allow_nan=False)


def grasp(origin, approach, closing, owner=0):
    a, b = np.asarray(approach, dtype=float), np.asarray(closing, dtype=float)
    return Grasp3D(np.asarray(origin, dtype=float), b, approach_angle(b, a), 1.0, 1.0, verticality(a), 0.0, owner)


def rect_contains(center, w, h, alpha, pts, tol):
    u = np.array([math.cos(alpha), -math.sin(alpha)])
    v = np.array([-u[1], u[0]])
    rel = np.asarray(pts) - center
    return np.all(np.abs(rel @ u) <= w / 2 + tol) and np.all(np.abs(rel @ v) <= h / 2 + tol)


# ----------------------------------------------------------------------------
# minimum-area rectangle
# ----------------------------------------------------------------------------

def test_unit_square():
    c, w, h, alpha = min_area_rect([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert np.allclose(c, [0.5, 0.5]) and w == pytest.approx(1) and h == pytest.approx(1)
    assert alpha == pytest.approx(0.0, abs=1e-12)


def test_rotated_rectangle():
    corners = rect_corners(10.0, 20.0, 8.0, 2.0, math.radians(30))
    c, w, h, alpha = min_area_rect(corners)
    assert np.allclose(c, [10, 20]) and w * h == pytest.approx(16.0)
    assert {round(w, 9), round(h, 9)} == {8.0, 2.0}
    assert math.degrees(alpha) in (pytest.approx(30.0), pytest.approx(-60.0))


def test_collinear_points_raise():
    with pytest.raises(GeometryError):
        min_area_rect([[0, 0], [1, 1], [2, 2], [3, 3]])
    with pytest.raises(GeometryError):
        min_area_rect([[1, 1], [1, 1], [1, 1]])


@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=12))
def test_min_rect_matches_sweep(pts):
    pts = np.array(pts)
    try:
        c, w, h, alpha = min_area_rect(pts)
    except GeometryError:
        return
    sweep = oracles.exhaustive_min_rect_area(pts)
    scale = float(np.ptp(pts, axis=0).max()) ** 2
    assert w * h <= sweep * (1 + 1e-6) + 1e-9 * scale
    assert rect_contains(c, w, h, alpha, pts, 1e-7 * math.sqrt(scale))
    assert -math.pi / 2 < alpha <= math.pi / 2


@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=8), st.floats(-math.pi, math.pi))
def test_min_rect_rotation_equivariant(pts, rot):
    pts = np.array(pts)
    try:
        _, w, h, _ = min_area_rect(pts)
    except GeometryError:
        return
    R = np.array([[math.cos(rot), -math.sin(rot)], [math.sin(rot), math.cos(rot)]])
    try:
        _, w2, h2, _ = min_area_rect(pts @ R.T)
    except GeometryError:
        return
    scale = float(np.ptp(pts, axis=0).max()) ** 2
    assert w2 * h2 == pytest.approx(w * h, rel=1e-6, abs=1e-9 * scale)


@given(st.floats(-10, 10))
def test_normalize_alpha_range(a):
    n = normalize_alpha(a)
    assert -math.pi / 2 < n <= math.pi / 2
    assert math.isclose(math.sin(2 * n), math.sin(2 * a), abs_tol=1e-9)


# ----------------------------------------------------------------------------
# projection of 6D grasps
# ----------------------------------------------------------------------------

def test_top_down_grasp_rectangle():
    r = project_grasp(grasp([0, 0, 0], [0, 0, -1], [1, 0, 0]), GRIPPER, CAM, 4)
    assert isinstance(r, Grasp2D)
    assert (r.x, r.y) == (pytest.approx(320), pytest.approx(240))
    assert r.w == pytest.approx(40) and r.h == pytest.approx(10)
    assert r.alpha == pytest.approx(0.0, abs=1e-12)
    assert r.source_index == 4 and not r.clipped


def test_closing_along_rows_is_vertical():
    r = project_grasp(grasp([0, 0, 0], [0, 0, -1], [0, 1, 0]), GRIPPER, CAM)
    assert r.alpha == pytest.approx(math.pi / 2) and r.w == pytest.approx(40)


def test_diagonal_closing_gives_quarter_turn():
    b = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    r = project_grasp(grasp([0, 0, 0], [0, 0, -1], b), GRIPPER, CAM)
    assert r.alpha == pytest.approx(math.pi / 4)


def test_camera_angle_limit():
    for deg, ok in ((29.0, True), (30.0 - 1e-9, True), (31.0, False)):
        t = math.radians(deg)
        g = grasp([0, 0, 0], [math.sin(t), 0, -math.cos(t)], [0, 1, 0])
        r = project_grasp(g, GRIPPER, CAM)
        assert bool(r) is ok
        if not ok:
            assert isinstance(r, Rejected) and r.reason == "camera-angle"


def test_rectangle_centre_is_projected_grasp_point():
    rng = np.random.default_rng(0)
    for _ in range(50):
        o = rng.uniform([-0.2, -0.2, 0], [0.2, 0.2, 0.1])
        phi = rng.uniform(-math.pi, math.pi)
        b = np.array([math.cos(phi), math.sin(phi), 0.0])
        r = project_grasp(grasp(o, [0, 0, -1], b), GRIPPER, CAM)
        p = np.array([500 * o[0] / (1 - o[2]) + 320, -500 * o[1] / (1 - o[2]) + 240])
        assert np.linalg.norm(r.center - p) <= 1e-6


def test_clipped_rectangle_is_flagged():
    r = project_grasp(grasp([0.6, 0, 0], [0, 0, -1], [1, 0, 0]), GRIPPER, CAM)
    assert r.clipped and r.w == pytest.approx(40)


def test_project_grasps_keeps_indices():
    gs = [(0, grasp([0, 0, 0], [0, 0, -1], [1, 0, 0])), (1, grasp([0, 0, 0], [1, 0, 0], [0, 1, 0])),
          (2, grasp([0.1, 0, 0], [0, 0, -1], [0, 1, 0], owner=3))]
    out = project_grasps(gs, GRIPPER, CAM)
    assert [r.source_index for r in out] == [0, 2] and out[1].owner == 3


def test_grasp2d_roundtrip_and_validation():
    r = Grasp2D(1.0, 2.0, 3.0, 4.0, math.pi / 2, 1, 7, True)
    assert Grasp2D.from_dict(r.to_dict()) == r
    with pytest.raises(ValueError):
        Grasp2D(0, 0, 0.0, 1.0, 0.0, 0, 0)
    with pytest.raises(ValueError):
        Grasp2D(0, 0, 1.0, 1.0, -math.pi / 2, 0, 0)
