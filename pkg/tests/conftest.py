import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from semfuse.dataset import write_dataset
from semfuse.geometry import FisheyeIntrinsics, Pose6, RigidTransform, pose_to_transform
from semfuse.synthetic import generate_synthetic, two_wall_scene, urban_scene

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rigid(rng, trans_scale=2.0) -> RigidTransform:
    ang = rng.uniform(-np.pi, np.pi, 3)
    return pose_to_transform(Pose6(*(rng.normal(0, trans_scale, 3)), *ang))


def random_psd(rng, d, scale=1.0, rank=None):
    a = rng.normal(size=(d, rank or d)) * scale
    return a @ a.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def cam_k():
    return FisheyeIntrinsics(fx=400.0, fy=380.0, cx=320.0, cy=240.0, skew=0.001, k1=0.05, k2=-0.01,
                             k3=0.002, k4=-0.0005, width=640, height=480)


@pytest.fixture(scope="session")
def two_wall_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("two_wall")
    ds = generate_synthetic(two_wall_scene(), seed=0)
    write_dataset(ds, root)
    return root, ds


@pytest.fixture(scope="session")
def small_urban_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("urban_small")
    ds = generate_synthetic(urban_scene(scans=3), seed=3)
    write_dataset(ds, root)
    return root, ds


# ------------------------------------------------------------ acceptance summary

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    name = getattr(item, "originalname", item.name)
    if item.module.__name__.endswith("test_acceptance") and name.startswith("test_criterion_"):
        failed = rep.failed or (rep.when == "setup" and rep.skipped)
        if rep.when == "call" or failed:
            title = (item.function.__doc__ or name).strip().splitlines()[0]
            _CRITERIA[name] = ("FAIL" if failed else "PASS", title, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        status, title, dur = _CRITERIA[name]
        terminalreporter.write_line(f"{status}  criterion {name.split('_')[2]:>2}: {title} ({dur:.1f} s)")
