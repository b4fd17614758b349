import numpy as np
import pytest
import trimesh

from asmplan.assembly import Assembly, is_disassembled, is_valid_state
from asmplan.baselines import (BASELINE_NAMES, GeomPlannerConfig, as_path_planner, bk_rrt_plan, mating_vectors,
                               mv_trrt_plan, random_disassembled_goal, rrt_plan, trrt_plan)
from asmplan.path_planner import ActionMode, FailureKind, PathFailure, PathQuery
from asmplan.physics import RigidState
from asmplan.stats_manager import StatsManager
from asmplan.trees import ExtendStatus, StateSampler, Tree, interpolate, straight_line, weighted_distance
from asmplan.transforms import quat_from_axis_angle


# --- Trees ---

def test_straight_line_ends_exactly_at_goal():
    a = RigidState(t=np.zeros(3))
    b = RigidState(t=np.array([0.1, 0.0, 0.0]))
    line = straight_line(a, b, 0.03)
    assert len(line) == 4
    assert line[-1] is b
    assert not line[0].same_pose(a)


def test_interpolate_rotation_halfway():
    a = RigidState(t=np.zeros(3))
    b = RigidState(t=np.ones(3), q=quat_from_axis_angle((0, 0, 1), np.pi / 2))
    mid = interpolate(a, b, 0.5)
    np.testing.assert_allclose(mid.t, 0.5 * np.ones(3))
    np.testing.assert_allclose(mid.q, quat_from_axis_angle((0, 0, 1), np.pi / 4), atol=1e-9)
    # Translation plus twice the half angle
    assert weighted_distance(a, b) == pytest.approx(np.sqrt(3.0) + 2.0 * np.pi / 4)


def test_tree_extend_connect_and_branch():
    tree = Tree(RigidState(t=np.zeros(3)), capacity=2)
    target = RigidState(t=np.array([0.05, 0.0, 0.0]))
    growth = tree.connect(target, 0.015, lambda s: True)
    assert growth.status is ExtendStatus.REACHED
    branch = tree.branch(growth.index)
    assert branch[-1] is target
    assert len(branch) == 5
    assert tree.nearest(RigidState(t=np.array([0.031, 0.0, 0.0]))) == 2


def test_tree_trapped_by_obstacle():
    tree = Tree(RigidState(t=np.zeros(3)))
    wall = lambda s: s.t[0] < 0.025
    growth = tree.connect(RigidState(t=np.array([0.1, 0.0, 0.0])), 0.01, wall)
    assert growth.status is ExtendStatus.TRAPPED
    assert len(tree) == 3


def test_sampler_keeps_fixed_rotation(rng):
    fixed = quat_from_axis_angle((1, 0, 0), 0.3)
    sampler = StateSampler.around(np.zeros(3), np.ones(3), rng, fixed_rotation=fixed)
    for _ in range(20):
        state = sampler.sample()
        np.testing.assert_allclose(state.q, fixed)
        assert np.all(state.t >= -0.25) and np.all(state.t <= 1.25)


# --- Planners ---

def test_config_validation():
    with pytest.raises(ValueError):
        GeomPlannerConfig(step_size=0.0)
    with pytest.raises(ValueError):
        GeomPlannerConfig(goal_probability=1.5)
    assert GeomPlannerConfig.from_config(seed=3).seed == 3


def test_mating_vectors_are_unit_and_distinct(peg_plate):
    directions = mating_vectors(peg_plate, "peg")
    assert 2 <= len(directions) <= 64
    for k, d in enumerate(directions):
        assert np.linalg.norm(d) == pytest.approx(1.0)
        assert all(float(np.dot(d, o)) < np.cos(np.deg2rad(1.0)) for o in directions[k + 1:])
    assert any(abs(d[2]) == pytest.approx(1.0) for d in directions)


def test_mv_trrt_exits_peg_along_a_mating_vector(peg_plate):
    cfg = GeomPlannerConfig(step_size=0.02)
    path = mv_trrt_plan(peg_plate, "peg", cfg, t_max=60.0, mode=ActionMode.TRANSLATION)
    assert not isinstance(path, PathFailure), path
    assert path.meta["phase"] == 1
    assert path.planner == "mv-trrt"
    assert abs(path.meta["direction"][2]) == pytest.approx(1.0)
    assert is_disassembled(peg_plate, "peg", path.states[-1])
    assert all(a is None for a in path.actions)


def test_random_goal_is_valid_and_disassembled(peg_plate):
    goal = random_disassembled_goal(peg_plate, "peg", GeomPlannerConfig(seed=5), ActionMode.TRANSLATION)
    assert goal is not None
    assert is_disassembled(peg_plate, "peg", goal)
    assert is_valid_state(peg_plate, "peg", goal)
    np.testing.assert_array_equal(goal.q, peg_plate.parts["peg"].assembled_state.q)


def test_bk_rrt_times_out_with_tiny_budget(peg_plate):
    stats = StatsManager(name="bk")
    result = bk_rrt_plan(peg_plate, "peg", t_max=0.05, mode=ActionMode.TRANSLATION, stats=stats)
    if isinstance(result, PathFailure):
        assert result.kind is FailureKind.TIMEOUT
        assert result.meta["sim_calls"] == stats.value("simulate_calls")
    else:
        assert is_disassembled(peg_plate, "peg", result.states[-1])


def test_adapter_rejects_unknown_name():
    with pytest.raises(ValueError, match="Unknown baseline"):
        as_path_planner("prm")
    assert "mv-trrt" in BASELINE_NAMES


def test_adapter_rejects_groups(peg_plate):
    planner = as_path_planner("rrt")
    result = planner(peg_plate, PathQuery(part_ids=("peg", "plate")), StatsManager())
    assert isinstance(result, PathFailure)
    assert result.kind is FailureKind.ERROR


@pytest.mark.parametrize("name", BASELINE_NAMES)
def test_adapter_shortcut_for_free_part(peg_plate, name):
    alone = peg_plate.snapshot(active=["peg"])
    result = as_path_planner(name)(alone, PathQuery(part_ids=("peg",)), StatsManager())
    assert len(result) == 1
    assert len(result[0].states) == 1
    assert result[0].planner == name


# --- Search loops ---

@pytest.fixture(scope="module")
def open_space():
    meshes = {}
    for pid, center in (("anchor", (0.0, 6.0, 0.0)), ("mover", (0.0, 0.0, 0.0))):
        cube = trimesh.creation.box(extents=(1.0, 1.0, 1.0))
        cube.apply_translation(center)
        meshes[pid] = cube
    return Assembly.from_meshes(meshes, source_id="open-space")


def _goal_along_x(assembly, distance):
    root = assembly.parts["mover"].assembled_state
    return RigidState(t=root.t + np.array([distance, 0.0, 0.0]), q=root.q.copy())


def test_rrt_reaches_goal_in_open_space(open_space):
    goal = _goal_along_x(open_space, 5.0)
    path = rrt_plan(open_space, "mover", goal, GeomPlannerConfig(step_size=0.1, seed=2), t_max=60.0,
                    mode=ActionMode.TRANSLATION)
    assert not isinstance(path, PathFailure), path
    assert path.planner == "rrt"
    assert path.states[0].same_pose(open_space.parts["mover"].assembled_state)
    assert path.states[-1].same_pose(goal)
    steps = [np.linalg.norm(b.t - a.t) for a, b in zip(path.states, path.states[1:])]
    assert max(steps) <= 0.1 + 1e-9
    assert all(is_valid_state(open_space, "mover", s) for s in path.states)
    assert path.meta["nodes"] >= len(path.states)


def test_rrt_same_seed_same_path(open_space):
    goal = _goal_along_x(open_space, 5.0)
    cfg = GeomPlannerConfig(step_size=0.1, seed=11)
    first = rrt_plan(open_space, "mover", goal, cfg, t_max=60.0, mode=ActionMode.TRANSLATION)
    second = rrt_plan(open_space, "mover", goal, cfg, t_max=60.0, mode=ActionMode.TRANSLATION)
    assert not isinstance(first, PathFailure)
    assert [s.t.tolist() for s in first.states] == [s.t.tolist() for s in second.states]


@pytest.mark.slow
def test_trrt_lifts_peg_out(peg_plate):
    cfg = GeomPlannerConfig(step_size=0.02, seed=1)
    path = trrt_plan(peg_plate, "peg", cfg, t_max=120.0, mode=ActionMode.TRANSLATION)
    assert not isinstance(path, PathFailure), path
    assert path.planner == "trrt"
    assert len(path.states) > 1
    assert is_disassembled(peg_plate, "peg", path.states[-1])
    assert all(is_valid_state(peg_plate, "peg", s) for s in path.states)
    np.testing.assert_array_equal(path.states[-1].q, peg_plate.parts["peg"].assembled_state.q)
    again = trrt_plan(peg_plate, "peg", cfg, t_max=120.0, mode=ActionMode.TRANSLATION)
    assert [s.t.tolist() for s in again.states] == [s.t.tolist() for s in path.states]


@pytest.mark.slow
def test_bk_rrt_frees_a_loose_cube(fixture_assembly):
    assembly = fixture_assembly("free_cubes")
    first = bk_rrt_plan(assembly, "cube-0", t_max=120.0, mode=ActionMode.TRANSLATION, seed=3)
    assert not isinstance(first, PathFailure), first
    assert first.planner == "bk-rrt"
    assert is_disassembled(assembly, "cube-0", first.states[-1])
    assert len(first.actions) == len(first.states) - 1
    assert all(a is not None for a in first.actions)
    again = bk_rrt_plan(assembly, "cube-0", t_max=120.0, mode=ActionMode.TRANSLATION, seed=3)
    assert [s.t.tolist() for s in again.states] == [s.t.tolist() for s in first.states]
