import numpy as np
import pytest
import trimesh

from asmplan.fixtures import build_fixture

# SDF builds dominate test time, so every fixture assembly is built once per session.
# Tests that remove parts must work on ``assembly.snapshot()``.
_BUILT = {}


@pytest.fixture(scope="session")
def fixture_assembly():
    def get(name: str):
        if name not in _BUILT:
            _BUILT[name] = build_fixture(name)
        return _BUILT[name]
    return get


@pytest.fixture(scope="session")
def peg_plate(fixture_assembly):
    return fixture_assembly("peg_plate")


@pytest.fixture
def unit_cube():
    return trimesh.creation.box(extents=(1.0, 1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
