"""Time the compiled and pure-Python kernel backends on the same workloads.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--objects N]
"""
import argparse
import time

import numpy as np

from cluttergen import kernels
from cluttergen.grasp3d import CollisionScene, GripperModel, enumerate_candidates
from cluttergen.scene import builtin_library, generate_scene, restore_scene
from cluttergen.sensor import SceneGeometry, render_view


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def workloads(record, lib):
    geo = SceneGeometry.from_record(record, lib)
    cam = record.camera_rig[4]
    scene = CollisionScene(geo, record.table_size)
    target = record.objects[0]
    top = target.pose.translation + np.array([0.0, 0.0, 0.05])
    poses = enumerate_candidates(top, np.array([0.0, 0.0, 1.0]), GripperModel()) * 5
    gripper = GripperModel()

    def render():
        render_view(geo, cam)

    def collide():
        scene.hits(poses, gripper, target.object_id)

    def simulate():
        world = restore_scene(record, lib)
        world.wake()
        for _ in range(60):
            world.step(1.0 / 240.0)

    return {"raycast (one 320x240 view)": render, "obb_tri_hits (180 gripper poses)": collide,
            "step (60 steps, full scene)": simulate}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--objects", type=int, default=10)
    args = ap.parse_args(argv)
    lib = builtin_library()
    record = generate_scene(lib, args.objects, seed=3)
    print(f"scene with {len(record.objects)} objects; best of {args.repeat}")
    print(f"{'workload':36s} {'compiled s':>11s} {'python s':>10s} {'speedup':>8s}")
    for name in workloads(record, lib):
        times = {}
        for backend in ("compiled", "python"):
            try:
                with kernels.use_backend(backend):
                    times[backend] = _best(workloads(record, lib)[name], args.repeat)
            except ImportError:
                times[backend] = float("nan")
        print(f"{name:36s} {times['compiled']:11.4f} {times['python']:10.4f} "
              f"{times['python'] / times['compiled']:7.1f}x")


if __name__ == "__main__":
    main()
