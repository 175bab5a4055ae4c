import numpy as np
import pytest

from cluttergen import oracles
from cluttergen.geometry import box_mesh

CORPUS = oracles.box_corpus()


def test_support_examples():
    assert oracles.support_oracle(CORPUS["single"]) == {0: set()}
    assert oracles.support_oracle(CORPUS["centered_pair"]) == {0: {1}, 1: set()}
    assert oracles.support_oracle(CORPUS["bridge"])[0] == {1, 2}
    assert oracles.support_oracle(CORPUS["four_pillars"])[0] == set()
    assert oracles.support_oracle(CORPUS["three_pillar_triangle"])[0] == {1, 2, 3}


def test_every_corpus_scene_rests():
    for name, boxes in CORPUS.items():
        parents = oracles.support_oracle(boxes)
        assert set(parents) == {b.box_id for b in boxes}, name


def test_overhanging_box_is_rejected():
    boxes = oracles._stack([(1, 0, 0, 0, .04, .04, .04), (0, .05, 0, .04, .04, .04, .02)])
    with pytest.raises(oracles.UnsupportedSceneError):
        oracles.support_oracle(boxes)
    with pytest.raises(oracles.UnsupportedSceneError):
        oracles.support_oracle(["not a box"])


def test_boxes_roundtrip_through_scene_record():
    boxes = CORPUS["box_on_bridge"]
    rec, lib = oracles.record_from_boxes(boxes)
    back = {b.box_id: b for b in oracles.boxes_from_scene(rec, lib)}
    for b in boxes:
        assert np.allclose(back[b.box_id].center, b.center) and np.allclose(back[b.box_id].size, b.size)


def test_boxes_from_scene_rejects_other_shapes():
    rec, lib = oracles.leaning_pair_record()
    with pytest.raises(oracles.UnsupportedSceneError):
        oracles.boxes_from_scene(rec, lib)


def test_brute_force_ray_and_containment():
    tris = box_mesh(2, 2, 2).corners
    t, idx = oracles.brute_force_ray([0, 0, 5], [0, 0, -1], tris)
    assert t == pytest.approx(4.0) and idx >= 0
    t, idx = oracles.brute_force_ray([5, 5, 5], [0, 0, 1], tris)
    assert idx == -1 and not np.isfinite(t)
    inside = oracles.point_in_mesh([[0, 0, 0], [0.9, -0.9, 0.5], [1.1, 0, 0], [0, 0, -3]], tris)
    assert inside.tolist() == [True, True, False, False]


def test_scan_bbox():
    seg = np.full((5, 6), -1)
    seg[1:3, 2:5] = 7
    assert oracles.scan_bbox(seg, 7) == (2, 1, 4, 2)
    assert oracles.scan_bbox(seg, 3) is None


def test_exhaustive_rect_area():
    assert oracles.exhaustive_min_rect_area([[0, 0], [2, 0], [2, 1], [0, 1]]) == pytest.approx(2.0)


def test_overlap_depth_bound():
    a = box_mesh(1, 1, 1).vertices
    assert oracles.overlap_depth_bound(a, a + [0.9, 0, 0]) == pytest.approx(0.1)
    assert oracles.overlap_depth_bound(a, a + [3, 0, 0]) <= 0


def test_report_accumulates():
    r = oracles.OracleReport()
    assert r.check("a", 1, 1) and not r.check("b", 1, 2)
    total = r + r
    assert total.cases_checked == 4 and len(total.mismatches) == 2 and not total.ok


def test_dense_oracle_sees_finger_in_neighbour():
    target = box_mesh(.04, .04, .04).corners + [0, 0, .02]
    other = box_mesh(.02, .04, .04).corners + [.045, 0, .02]
    oracle = oracles.DenseCollisionOracle({0: target, 1: other})
    grasp = {"x": 0, "y": 0, "z": .06, "rx": 1, "ry": 0, "rz": 0, "theta": 0.0, "ownerObjectId": 0}
    gripper = {"maxOpening": .08, "fingerLength": .06, "fingerThickness": .01, "fingerWidth": .02, "baseDepth": .02}
    found = oracle.violations(grasp, gripper)
    assert any("finger_pos" in v and "[1]" in v for v in found)
    assert oracles.DenseCollisionOracle({0: target}).violations(grasp, gripper) == []
