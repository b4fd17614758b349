"""Independent checks for planner output: paths, disassembly sequences and assembly plans."""
import logging
from dataclasses import dataclass, field
from typing import Sequence

from .assembly import Assembly, group_is_disassembled, group_is_valid, is_similar
from .path_planner import DisassemblyPath, replay_path
from .physics import SimParams
from .seq_planner import AssemblyPlan, DisassemblySequence

logger = logging.getLogger(__name__)


@dataclass
class ValidationIssue:
    part_id: str
    step: int
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)
    checked_states: int = 0
    replayed_paths: int = 0

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, part_id: str, step: int, message: str):
        self.issues.append(ValidationIssue(part_id, step, message))
        logger.warning(f"Validation: '{part_id}' step {step}: {message}")

    def merge(self, other: "ValidationReport"):
        self.issues.extend(other.issues)
        self.checked_states += other.checked_states
        self.replayed_paths += other.replayed_paths

    def to_record(self) -> dict:
        return {"ok": self.ok, "checked_states": self.checked_states, "replayed_paths": self.replayed_paths,
                "issues": [{"part": i.part_id, "step": i.step, "message": i.message} for i in self.issues]}


def _check_states(scene: Assembly, paths: Sequence[DisassemblyPath], offset: int,
                  report: ValidationReport):
    """Penetration check of aligned group states ``path.states[offset + k]``."""
    count = min(len(p.states) for p in paths) - offset
    for k in range(count):
        states = {p.part_id: p.states[offset + k] for p in paths}
        report.checked_states += 1
        if not group_is_valid(scene, states):
            report.add(paths[0].part_id, offset + k, f"penetration above the limit for group {sorted(states)}")


def validate_group_path(scene: Assembly, paths: Sequence[DisassemblyPath], replay: bool = True,
                        sim_params: SimParams | None = None) -> ValidationReport:
    """A disassembly path (or one group of them) against the parts active in ``scene``."""
    report = ValidationReport()
    lengths = {len(p.states) for p in paths}
    if not paths or 0 in lengths:
        report.add(paths[0].part_id if paths else "?", 0, "empty path")
        return report
    if len(lengths) != 1:
        report.add(paths[0].part_id, 0, f"group paths differ in length: {sorted(lengths)}")
        return report
    for path in paths:
        if path.part_id not in scene.active:
            report.add(path.part_id, 0, "part is not active in the scene")
            return report
        if not path.states[0].same_pose(scene.parts[path.part_id].assembled_state):
            report.add(path.part_id, 0, "path does not start at the assembled pose")
    _check_states(scene, paths, 0, report)
    final = {p.part_id: p.states[-1] for p in paths}
    if not group_is_disassembled(scene, final):
        report.add(paths[0].part_id, len(paths[0].states) - 1, "path does not end disassembled")

    physical = all(a is not None for p in paths for a in p.actions) or (
        len(paths) > 1 and all(any(a is not None for a in step) for step in zip(*(p.actions for p in paths))))
    if replay and physical and paths[0].actions:
        report.replayed_paths += len(paths)
        if not replay_path(scene, paths, sim_params):
            report.add(paths[0].part_id, 0, "physics replay does not reproduce the recorded states")
    return report


def validate_sequence(assembly: Assembly, sequence: DisassemblySequence, replay: bool = True,
                      complete: bool = True, sim_params: SimParams | None = None) -> ValidationReport:
    """Replays the removal order: each group is checked against the parts still present."""
    report = ValidationReport()
    work = assembly.snapshot()
    for group in sequence.groups():
        report.merge(validate_group_path(work, group, replay=replay, sim_params=sim_params))
        for path in group:
            if path.part_id in work.active:
                work.remove(path.part_id)
    if complete and work.active:
        report.add(",".join(work.active_ids()), -1, "parts left over after the sequence")
    logger.info(f"Sequence validation for '{assembly.source_id}': {'ok' if report.ok else 'FAILED'} "
                f"({report.checked_states} states, {len(report.issues)} issues)")
    return report


def validate_plan(assembly: Assembly, plan: AssemblyPlan) -> ValidationReport:
    """Assembly order check: every waypoint valid among the parts already placed, every part ends assembled."""
    report = ValidationReport()
    placed: set[str] = set()
    groups: list[list[DisassemblyPath]] = []
    for path in plan.paths:
        if groups and len(path.group) > 1 and groups[-1][0].group == path.group:
            groups[-1].append(path)
        else:
            groups.append([path])

    for group in groups:
        if len(group) == 1:
            _check_states(assembly.snapshot(active=placed | {group[0].part_id}), group, 0, report)
        else:
            # Connections are planned one part at a time; the reversed disassembly tails move together
            for path in group:
                solo = assembly.snapshot(active=placed | {path.part_id})
                _check_states(solo, [_head(path)], 0, report)
            scene = assembly.snapshot(active=placed | {p.part_id for p in group})
            _check_states(scene, [_tail(path) for path in group], 0, report)

        for path in group:
            goal = assembly.parts[path.part_id].assembled_state
            if path.states[-1].same_pose(goal):
                continue
            if is_similar(path.states[-1], goal):
                report.add(path.part_id, len(path.states) - 1, "final pose only approximately assembled")
            else:
                report.add(path.part_id, len(path.states) - 1, "final pose is not the assembled pose")
        placed |= {p.part_id for p in group}

    missing = set(assembly.active) - placed
    if missing:
        report.add(",".join(sorted(missing)), -1, "parts never assembled")
    logger.info(f"Plan validation for '{assembly.source_id}': {'ok' if report.ok else 'FAILED'} "
                f"({report.checked_states} states, {len(report.issues)} issues)")
    return report


def _split(path: DisassemblyPath) -> int:
    return max(1, int(path.meta.get("connection_states", 1)))


def _head(path: DisassemblyPath) -> DisassemblyPath:
    states = path.states[:_split(path)]
    return DisassemblyPath(part_id=path.part_id, states=states, actions=[None] * (len(states) - 1),
                           planner=path.planner, group=path.group)


def _tail(path: DisassemblyPath) -> DisassemblyPath:
    states = path.states[_split(path) - 1:]
    return DisassemblyPath(part_id=path.part_id, states=states, actions=[None] * (len(states) - 1),
                           planner=path.planner, group=path.group)


def validate_record(assembly: Assembly, record: dict, replay: bool = True) -> ValidationReport:
    """Dispatches on a saved file: a sequence, an assembly plan, or a single path."""
    kind = record.get("header", {}).get("kind")
    if kind == "assembly":
        return validate_plan(assembly, AssemblyPlan.from_record(record))
    if kind == "disassembly":
        return validate_sequence(assembly, DisassemblySequence.from_record(record), replay=replay)
    if "states" in record:
        return validate_group_path(assembly, [DisassemblyPath.from_record(record)], replay=replay)
    raise ValueError("Unrecognised record: expected a path, a sequence or an assembly plan")
