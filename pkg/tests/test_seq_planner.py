import time

import numpy as np
import pytest
import trimesh

from asmplan.assembly import Assembly
from asmplan.path_planner import ActionMode, DisassemblyPath, FailureKind, PathFailure
from asmplan.physics import RigidState
from asmplan.seq_planner import (AssemblyPlan, DisassemblySequence, SequenceFailure, connect_free_space,
                                 plan_assembly, plan_disassembly_sequence, plan_multi_part_disassembly)
from asmplan.validator import validate_plan, validate_sequence


@pytest.fixture(scope="module")
def four_cubes():
    meshes = {}
    for index, pid in enumerate("abcd"):
        cube = trimesh.creation.box(extents=(1.0, 1.0, 1.0))
        cube.apply_translation((3.0 * index, 0.0, 0.0))
        meshes[pid] = cube
    return Assembly.from_meshes(meshes, source_id="four-cubes")


def _trivial(assembly, ids, planner="stub"):
    return [DisassemblyPath(part_id=pid, states=[assembly.parts[pid].assembled_state], actions=[],
                            planner=planner, group=tuple(ids)) for pid in ids]


class RuleStub:
    """Path planner stand-in: ``needs`` maps a part to its depth; ``after`` to parts that must go first."""

    def __init__(self, needs=None, after=None, groups=(), kind=FailureKind.DEPTH, delay=0.0, calls=0):
        self.needs = needs or {}
        self.after = after or {}
        self.groups = {tuple(g) for g in groups}
        self.kind = kind
        self.delay = delay
        self.calls = calls
        self.queries = []

    def __call__(self, assembly, query, stats):
        self.queries.append(query)
        if self.calls:
            stats.increment("simulate_calls", self.calls)
        if self.delay:
            time.sleep(self.delay)
        ids = query.part_ids
        if len(ids) > 1:
            if ids in self.groups:
                return _trivial(assembly, ids)
            return PathFailure(self.kind, "group blocked", ids)
        pid = ids[0]
        if any(other in assembly.active for other in self.after.get(pid, ())):
            return PathFailure(self.kind, "blocked", ids)
        if query.d_max is not None and query.d_max < self.needs.get(pid, 1):
            return PathFailure(FailureKind.DEPTH, "too shallow", ids)
        return _trivial(assembly, ids)


# --- Sequence loop ---

def test_progressive_passes_and_order(four_cubes):
    stub = RuleStub(needs={"b": 2}, after={"a": ("b",)})
    result = plan_disassembly_sequence(four_cubes, t_max=5.0, T_max=60.0, path_planner=stub)
    assert isinstance(result, DisassemblySequence)
    assert result.order == ["c", "d", "b", "a"]
    assert [p.meta["pass"] for p in result.paths] == [1, 1, 2, 3]
    assert [q.d_max for q in stub.queries] == [1, 1, 1, 1, 2, 2, 3]
    assert result.meta["passes"] == 3
    assert [a["result"] for a in result.meta["attempts"]] == ["depth", "depth", "success", "success",
                                                              "depth", "success", "success"]
    assert result.planner == "custom"
    # The input assembly keeps every part
    assert four_cubes.active_ids() == ["a", "b", "c", "d"]


def test_full_bfs_has_no_depth_limit(four_cubes):
    stub = RuleStub(needs={"b": 2}, after={"a": ("b",)})
    result = plan_disassembly_sequence(four_cubes, t_max=5.0, T_max=60.0, progressive=False, path_planner=stub,
                                       planner_name="ours-full-bfs")
    assert result.order == ["b", "c", "d", "a"]
    assert all(q.d_max is None for q in stub.queries)
    assert result.planner == "ours-full-bfs"


def test_all_exhausted_stops_early(four_cubes):
    stub = RuleStub(after={pid: tuple(o for o in "abcd" if o != pid) for pid in "abcd"}, kind=FailureKind.EXHAUSTED)
    result = plan_disassembly_sequence(four_cubes, t_max=5.0, T_max=60.0, path_planner=stub)
    assert isinstance(result, SequenceFailure)
    assert result.kind is FailureKind.EXHAUSTED
    assert result.partial.paths == []
    assert len(stub.queries) == 4


def test_sequence_timeout_returns_partial(four_cubes):
    stub = RuleStub(needs={pid: 5 for pid in "abcd"}, delay=0.2)
    result = plan_disassembly_sequence(four_cubes, t_max=5.0, T_max=0.5, path_planner=stub)
    assert isinstance(result, SequenceFailure)
    assert result.kind is FailureKind.TIMEOUT
    assert result.partial.order == []
    assert len(stub.queries) == 3
    assert all(q.t_max <= 0.5 for q in stub.queries)


def test_groups_tried_when_no_single_part_moves(four_cubes):
    stub = RuleStub(after={"a": ("b",), "b": ("a",)}, groups=[("a", "b")])
    result = plan_multi_part_disassembly(four_cubes, 2, t_max=5.0, T_max=60.0, path_planner=stub)
    assert result.order == ["c", "d", "a", "b"]
    assert [len(g) for g in result.groups()] == [1, 1, 2]
    assert result.paths[2].group == ("a", "b")
    # Pass 1 removed parts, so no group was tried there
    first_pass = [a for a in result.meta["attempts"] if a["pass"] == 1]
    assert all(len(a["parts"]) == 1 for a in first_pass)


def test_group_calls_are_fully_attributed(four_cubes):
    stub = RuleStub(after={"a": ("b",), "b": ("a",)}, groups=[("a", "b")], calls=7)
    result = plan_multi_part_disassembly(four_cubes, 2, t_max=5.0, T_max=60.0, path_planner=stub)
    sim_calls = result.meta["sim_calls"]
    assert sum(sim_calls.values()) == 7 * len(stub.queries)
    # The group's 7 calls split 4 + 3, the remainder going to its first member
    assert sim_calls == {"a": 7 + 7 + 4, "b": 7 + 7 + 3, "c": 7, "d": 7}


def test_timed_out_part_keeps_its_depth(four_cubes):
    stub = RuleStub(needs={"b": 3}, after={"a": ("b",)}, kind=FailureKind.TIMEOUT)
    result = plan_disassembly_sequence(four_cubes, t_max=5.0, T_max=60.0, path_planner=stub)
    assert isinstance(result, DisassemblySequence)
    assert result.order == ["c", "d", "b", "a"]
    queried = [(q.part_ids[0], q.d_max) for q in stub.queries]
    assert queried == [("a", 1), ("b", 1), ("c", 1), ("d", 1), ("a", 1), ("b", 2), ("a", 1), ("b", 3), ("a", 1)]
    assert [a["result"] for a in result.meta["attempts"] if a["parts"] == ["a"]] == ["timeout"] * 3 + ["success"]
    assert result.meta["passes"] == 4


@pytest.mark.parametrize("m", [1, 4])
def test_multi_part_bounds(four_cubes, m):
    with pytest.raises(ValueError):
        plan_multi_part_disassembly(four_cubes, m)


def test_sequence_record_round_trip(four_cubes):
    result = plan_disassembly_sequence(four_cubes, t_max=5.0, T_max=60.0, path_planner=RuleStub())
    record = result.to_record()
    assert record["header"]["kind"] == "disassembly"
    assert record["header"]["order"] == ["a", "b", "c", "d"]
    restored = DisassemblySequence.from_record(record)
    assert restored.order == result.order
    assert restored.planner == "custom"


# --- Free-space connection ---

def test_connect_same_pose_is_trivial(peg_plate):
    state = peg_plate.parts["peg"].assembled_state.moved(translation=(0.0, 0.0, 3.0))
    assert connect_free_space(peg_plate, "peg", state, state, obstacles=["plate"]) == [state]


def test_connect_straight_line_in_open_space(peg_plate):
    above = peg_plate.parts["peg"].assembled_state.moved(translation=(0.0, 0.0, 3.0))
    aside = above.moved(translation=(1.0, 0.0, 0.0))
    states = connect_free_space(peg_plate, "peg", aside, above, obstacles=["plate"])
    assert not isinstance(states, PathFailure)
    assert states[0].same_pose(aside) and states[-1].same_pose(above)
    steps = [np.linalg.norm(b.t - a.t) for a, b in zip(states, states[1:])]
    assert max(steps) <= 0.01 + 1e-9


def test_connect_rejects_colliding_endpoint(peg_plate):
    inside = peg_plate.parts["peg"].assembled_state.moved(translation=(1.0, 0.0, 0.0))
    above = peg_plate.parts["peg"].assembled_state.moved(translation=(0.0, 0.0, 3.0))
    result = connect_free_space(peg_plate, "peg", inside, above, obstacles=["plate"])
    assert isinstance(result, PathFailure)
    assert result.kind is FailureKind.ERROR


# --- Real physics ---

@pytest.mark.slow
def test_peg_assembly_plan_from_lifted_start(peg_plate):
    lift = np.array([0.0, 0.0, 5.0])
    initial = {pid: RigidState(t=part.assembled_state.t + lift) for pid, part in peg_plate.parts.items()}
    plan = plan_assembly(peg_plate, initial, t_max=60.0, T_max=300.0, mode=ActionMode.TRANSLATION)
    assert isinstance(plan, AssemblyPlan)
    assert plan.order == ["plate", "peg"]
    assert plan.meta["unconnected"] == []
    for path in plan.paths:
        assert path.states[0].same_pose(initial[path.part_id])
        assert path.states[-1].same_pose(peg_plate.parts[path.part_id].assembled_state)
    assert validate_plan(peg_plate, plan).ok
    assert AssemblyPlan.from_record(plan.to_record()).order == plan.order


@pytest.mark.slow
def test_cap_comes_off_first(fixture_assembly):
    assembly = fixture_assembly("cap_pin_base")
    result = plan_disassembly_sequence(assembly, t_max=120.0, T_max=1200.0, mode=ActionMode.TRANSLATION)
    assert isinstance(result, DisassemblySequence)
    assert result.order == ["3-cap", "1-pin", "2-base"]
    assert validate_sequence(assembly, result).ok


@pytest.mark.slow
def test_free_cubes_leave_in_one_pass(fixture_assembly):
    assembly = fixture_assembly("free_cubes")
    result = plan_disassembly_sequence(assembly, t_max=60.0, T_max=600.0, mode=ActionMode.TRANSLATION)
    assert isinstance(result, DisassemblySequence)
    assert result.meta["passes"] == 1
    assert sorted(result.order) == ["cube-0", "cube-1", "cube-2", "plane"]


@pytest.mark.slow
def test_cover_before_channel(fixture_assembly):
    assembly = fixture_assembly("l_cover")
    result = plan_disassembly_sequence(assembly, t_max=300.0, T_max=1800.0, mode=ActionMode.TRANSLATION)
    assert isinstance(result, DisassemblySequence)
    passes = {p.part_id: p.meta["pass"] for p in result.paths}
    assert passes["cover"] == 1
    assert passes["channel"] == 2
    assert result.order.index("cover") < result.order.index("channel")


@pytest.mark.slow
def test_progressive_saves_simulation(fixture_assembly):
    assembly = fixture_assembly("progressive_demo")
    progressive = plan_disassembly_sequence(assembly, t_max=300.0, T_max=3600.0, mode=ActionMode.TRANSLATION)
    full = plan_disassembly_sequence(assembly, t_max=300.0, T_max=3600.0, progressive=False,
                                     mode=ActionMode.TRANSLATION)
    assert isinstance(progressive, DisassemblySequence) and isinstance(full, DisassemblySequence)
    assert sum(progressive.meta["sim_calls"].values()) <= 0.7 * sum(full.meta["sim_calls"].values())


@pytest.mark.slow
def test_interlock_comes_apart_as_a_pair(fixture_assembly):
    assembly = fixture_assembly("interlock")
    result = plan_multi_part_disassembly(assembly, 2, t_max=300.0, T_max=1200.0,
                                         mode=ActionMode.TRANSLATION_ROTATION)
    assert isinstance(result, DisassemblySequence)
    assert result.order == ["bar", "bolt", "frame"]
    pair = result.groups()[0]
    assert [p.part_id for p in pair] == ["bar", "bolt"]
    bar, bolt = pair
    assert bar.group == bolt.group == ("bar", "bolt")
    # The members move differently: the bar turns while the bolt lifts
    assert "+tz" in {a.label for a in bar.actions if a is not None}
    assert "+fz" in {a.label for a in bolt.actions if a is not None}
    assert bar.actions != bolt.actions
    for path in pair:
        assert path.states[-1].t[2] - path.states[0].t[2] > 0.4
    assert validate_sequence(assembly, result, replay=False).ok


@pytest.mark.slow
def test_interlock_has_no_single_part_sequence(fixture_assembly):
    assembly = fixture_assembly("interlock")
    result = plan_disassembly_sequence(assembly, t_max=120.0, T_max=300.0, mode=ActionMode.TRANSLATION_ROTATION)
    assert isinstance(result, SequenceFailure)
    assert result.partial.order == []
