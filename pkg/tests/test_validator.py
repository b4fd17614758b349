import pytest

from asmplan.path_planner import DisassemblyPath
from asmplan.seq_planner import AssemblyPlan, DisassemblySequence
from asmplan.trees import straight_line
from asmplan.validator import (ValidationReport, validate_group_path, validate_plan, validate_record,
                               validate_sequence)


def _lift_path(assembly, offset=(0.0, 0.0, 3.0), part_id="peg", start=None):
    start = start or assembly.parts[part_id].assembled_state
    states = [start] + straight_line(start, start.moved(translation=offset), 0.125)
    return DisassemblyPath(part_id=part_id, states=states, actions=[None] * (len(states) - 1), planner="manual")


def _still(assembly, part_id):
    return DisassemblyPath(part_id=part_id, states=[assembly.parts[part_id].assembled_state], actions=[])


def test_kinematic_path_is_valid(peg_plate):
    report = validate_group_path(peg_plate, [_lift_path(peg_plate)])
    assert report.ok, report.issues
    assert report.checked_states == 25
    assert report.replayed_paths == 0


def test_path_must_start_assembled(peg_plate):
    start = peg_plate.parts["peg"].assembled_state.moved(translation=(0.0, 0.0, 0.05))
    report = validate_group_path(peg_plate, [_lift_path(peg_plate, start=start)])
    assert not report.ok
    assert "assembled pose" in report.issues[0].message


def test_path_must_end_disassembled(peg_plate):
    report = validate_group_path(peg_plate, [_lift_path(peg_plate, offset=(0.0, 0.0, 1.0))])
    assert [i.message for i in report.issues] == ["path does not end disassembled"]


def test_penetrating_path_is_flagged(peg_plate):
    report = validate_group_path(peg_plate, [_lift_path(peg_plate, offset=(3.0, 0.0, 0.0))])
    assert not report.ok
    assert any("penetration" in i.message for i in report.issues)


def test_sequence_checks_against_remaining_parts(peg_plate):
    sequence = DisassemblySequence(paths=[_lift_path(peg_plate), _still(peg_plate, "plate")])
    assert validate_sequence(peg_plate, sequence).ok
    partial = DisassemblySequence(paths=[_lift_path(peg_plate)])
    report = validate_sequence(peg_plate, partial)
    assert report.issues[-1].message == "parts left over after the sequence"
    assert validate_sequence(peg_plate, partial, complete=False).ok


def test_plan_in_assembly_order(peg_plate):
    plan = AssemblyPlan(paths=[_still(peg_plate, "plate"), _lift_path(peg_plate).reversed()])
    assert validate_plan(peg_plate, plan).ok


def test_plan_with_offset_goal(peg_plate):
    nearly = _lift_path(peg_plate).reversed()
    nearly.states[-1] = nearly.states[-1].moved(translation=(0.001, 0.0, 0.0))
    report = validate_plan(peg_plate, AssemblyPlan(paths=[_still(peg_plate, "plate"), nearly]))
    assert [i.message for i in report.issues] == ["final pose only approximately assembled"]


def test_plan_missing_part(peg_plate):
    report = validate_plan(peg_plate, AssemblyPlan(paths=[_still(peg_plate, "plate")]))
    assert report.issues[-1].part_id == "peg"


def test_record_dispatch(peg_plate):
    sequence = DisassemblySequence(paths=[_lift_path(peg_plate), _still(peg_plate, "plate")])
    assert validate_record(peg_plate, sequence.to_record()).ok
    assert validate_record(peg_plate, _lift_path(peg_plate).to_record()).ok
    with pytest.raises(ValueError, match="Unrecognised record"):
        validate_record(peg_plate, {"header": {"kind": "recipe"}})


def test_report_record():
    report = ValidationReport()
    report.add("peg", 3, "penetration above the limit")
    record = report.to_record()
    assert record["ok"] is False
    assert record["issues"] == [{"part": "peg", "step": 3, "message": "penetration above the limit"}]
