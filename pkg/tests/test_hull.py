import itertools

import numpy as np
import pytest
import trimesh

from asmplan.fixtures import fixture_meshes
from asmplan.hull import compute_convex_hull, hull_from_points, hulls_intersect
from asmplan.transforms import quat_from_axis_angle, quat_to_matrix, random_quaternion


def _box_hull(center, extents=(1.0, 1.0, 1.0)):
    box = trimesh.creation.box(extents=extents)
    box.apply_translation(center)
    return compute_convex_hull(box)


def test_hull_of_cube():
    hull = _box_hull((0, 0, 0))
    assert hull.volume == pytest.approx(1.0)
    assert hull.contains(np.array([[0.0, 0.0, 0.0], [0.49, 0.49, -0.49]])).all()
    assert not hull.contains(np.array([[0.6, 0.0, 0.0]])).any()


def test_separated_and_overlapping():
    a = _box_hull((0, 0, 0))
    assert hulls_intersect(a, _box_hull((0.5, 0.2, 0.0)))
    assert not hulls_intersect(a, _box_hull((3.0, 0.0, 0.0)))


def test_touching_counts_as_intersecting():
    assert hulls_intersect(_box_hull((0, 0, 0)), _box_hull((1.0, 0, 0)))
    assert not hulls_intersect(_box_hull((0, 0, 0)), _box_hull((1.01, 0, 0)))


def _edge_pair(gap: float):
    # A vertical edge of one cube faces a horizontal edge of the other; x is their only separating axis
    turn = quat_to_matrix(quat_from_axis_angle([0, 1, 1], np.pi / 6))
    a = _box_hull((0, 0, 0)).transformed(quat_to_matrix(quat_from_axis_angle([0, 0, 1], np.pi / 4)), np.zeros(3))
    b = _box_hull((0, 0, 0)).transformed(quat_to_matrix(quat_from_axis_angle([0, 1, 0], np.pi / 4)),
                                         np.array([np.sqrt(2.0) + gap, 0.0, 0.0]))
    return a.transformed(turn, np.zeros(3)), b.transformed(turn, np.zeros(3))


def test_edge_to_edge_separation():
    assert not hulls_intersect(*_edge_pair(0.05))
    assert hulls_intersect(*_edge_pair(-0.05))


def test_transformed_hull_moves_planes():
    hull = _box_hull((0, 0, 0)).transformed(np.eye(3), np.array([5.0, 0.0, 0.0]))
    assert hull.contains(np.array([[5.0, 0.0, 0.0]])).all()
    assert not hull.contains(np.array([[0.0, 0.0, 0.0]])).any()


def test_planar_points_are_inflated():
    square = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    hull = hull_from_points(square)
    assert hull.volume < 1e-5
    assert hulls_intersect(hull, _box_hull((0.5, 0.5, 0.4)))


def test_zero_points_rejected():
    with pytest.raises(ValueError):
        hull_from_points(np.empty((0, 3)))


@pytest.mark.parametrize("name", ["peg_plate", "cap_pin_base", "interlock", "l_channel", "twist_lock"])
def test_intersection_is_symmetric_on_fixtures(name):
    hulls = {pid: compute_convex_hull(mesh) for pid, mesh in fixture_meshes(name).items()}
    for a, b in itertools.combinations(sorted(hulls), 2):
        assert hulls_intersect(hulls[a], hulls[b]) == hulls_intersect(hulls[b], hulls[a]), (a, b)


def test_intersection_is_symmetric_under_random_poses(rng):
    base = _box_hull((0, 0, 0), extents=(1.0, 2.0, 0.5))
    for _ in range(200):
        a = base.transformed(quat_to_matrix(random_quaternion(rng)), rng.uniform(-1.5, 1.5, 3))
        b = base.transformed(quat_to_matrix(random_quaternion(rng)), rng.uniform(-1.5, 1.5, 3))
        assert hulls_intersect(a, b) == hulls_intersect(b, a)
