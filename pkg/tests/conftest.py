import functools

import numpy as np
import pytest

from stochastic_stefan.discretisations import build
from stochastic_stefan.mesh import PolytopalMesh
from stochastic_stefan.meshgen import family_mesh

# acceptance tests record one line per criterion here; printed in the summary
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def two_triangle_square() -> PolytopalMesh:
    v = [[0, 0], [1, 0], [1, 1], [0, 1]]
    return PolytopalMesh.from_cells(v, [[0, 1, 2], [0, 2, 3]], name="square2")


def single_triangle() -> PolytopalMesh:
    return PolytopalMesh.from_cells([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], name="tri")


@functools.lru_cache(maxsize=None)
def mesh(name: str) -> PolytopalMesh:
    return family_mesh(name)


@functools.lru_cache(maxsize=None)
def gd(kind: str, name: str, r: float = 0.5):
    return build(kind, mesh(name), r=r)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
