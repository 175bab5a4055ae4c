import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cluttergen.grasp3d import GripperModel, annotate_grasps, fuse_clouds
from cluttergen.scene import box_library, builtin_library, generate_scene
from cluttergen.sensor import capture_scene

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def library():
    return builtin_library()


@pytest.fixture(scope="session")
def boxes():
    return box_library()


@pytest.fixture(scope="session")
def small_scene(library):
    """A generated 6-object scene shared by read-only tests."""
    return generate_scene(library, 6, seed=11)


@pytest.fixture(scope="session")
def small_capture(small_scene, library):
    return capture_scene(small_scene, library)


@pytest.fixture(scope="session")
def small_grasps(small_scene, library, small_capture):
    captures, _, _ = small_capture
    cloud = fuse_clouds([c.cloud for c in captures])
    return annotate_grasps(small_scene, library, cloud, GripperModel(), 0.5, np.random.default_rng(5))


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """A two-scene dataset written by the pipeline; tests must not modify it."""
    from cluttergen.pipeline import PipelineConfig, generate_dataset

    out = tmp_path_factory.mktemp("dataset")
    cfg = PipelineConfig(output_dir=str(out), scene_count=2, object_count_range=(4, 6), seed=3)
    return generate_dataset(cfg)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
