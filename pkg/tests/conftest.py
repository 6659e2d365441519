from __future__ import annotations

import sys

import numpy as np
import pytest

from linesplit.mesh import MeshParams, build_box_prism, build_box_tet


@pytest.fixture(scope="session")
def tet4():
    return build_box_tet(MeshParams(4, 4))


@pytest.fixture(scope="session")
def prism4():
    return build_box_prism(MeshParams(4, 8))


@pytest.fixture(params=["tet", "prism"], scope="session")
def small_mesh(request, tet4, prism4):
    return tet4 if request.param == "tet" else prism4


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
