import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from geoloop.camera import Camera, Intrinsics, Pose  # noqa: E402


def random_rotation(rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_intr():
    return Intrinsics.from_fov(224, 128)


@pytest.fixture
def random_camera(rng):
    def make(width=224, height=128, view_id=0):
        f = rng.uniform(80, 300)
        intr = Intrinsics(f * rng.uniform(0.9, 1.1), f, rng.uniform(0, width - 1), rng.uniform(0, height - 1), width, height)
        return Camera(intr, Pose(random_rotation(rng), rng.uniform(-2, 2, 3)), view_id)

    return make


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for line in results:
        terminalreporter.write_line(line)
