import sys
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from curlsteklov.assembly import assemble_forms, build_constraint_basis  # noqa: E402
from curlsteklov.mesh import extract_boundary, generate_ball_mesh, generate_cube_mesh  # noqa: E402


@dataclass
class Setup:
    mesh: object
    boundary: object
    forms: object
    space: object


@lru_cache(maxsize=None)
def make_setup(kind: str, level: int, side: float = 1.0) -> Setup:
    mesh = generate_cube_mesh(level, side) if kind == "cube" else generate_ball_mesh(level)
    bnd = extract_boundary(mesh)
    return Setup(mesh, bnd, assemble_forms(mesh, bnd), build_constraint_basis(mesh, bnd))


@pytest.fixture
def cube2():
    return make_setup("cube", 2)


@pytest.fixture
def cube3():
    return make_setup("cube", 3)


@pytest.fixture
def cube3pi():
    return make_setup("cube", 3, float(np.pi))


@pytest.fixture
def ball1():
    return make_setup("ball", 1)


@pytest.fixture
def ball2():
    return make_setup("ball", 2)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_line(k))
