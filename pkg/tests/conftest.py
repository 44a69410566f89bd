import sys
import numpy as np
import pytest

from demo2prog import scenarios as sc
from demo2prog.programs import generate_demonstration


@pytest.fixture(scope="session")
def arm():
    return sc.default_arm()


@pytest.fixture(scope="session")
def camera():
    return sc.default_camera()


@pytest.fixture(scope="session")
def scene():
    return sc.reaching_scene()


@pytest.fixture(scope="session")
def library(arm, scene):
    return sc.library_for_scene(scene, arm, np.random.default_rng(0))


@pytest.fixture(scope="session")
def patrol_demo(arm, camera, scene, library):
    return generate_demonstration(sc.patrol_program(), library, arm, scene, camera)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
