"""Physics-guided breadth-first disassembly path planning.

Each BFS node is a state of the moving part (or parts). Expanding a node
pushes the part with every action of the action space, one Δt at a time,
until the part leaves the assembly's hull, stalls, collides past the
penetration limit, or reaches a region of state space already visited.
"""
import enum
import itertools
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .assembly import Assembly, group_is_disassembled, group_is_valid, state_distance
from .config import config_manager
from .physics import Action, ActionKind, RigidState, SimParams, SimulationDivergedError, Simulator
from .stats_manager import StatsManager, stats_manager

logger = logging.getLogger(__name__)

_AXES = ((1.0, 0.0, 0.0), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, 1.0), (0.0, 0.0, -1.0))


class ActionMode(str, enum.Enum):
    TRANSLATION = "trans"
    TRANSLATION_ROTATION = "trans-rot"


class FailureKind(str, enum.Enum):
    TIMEOUT = "timeout"
    DEPTH = "depth"
    EXHAUSTED = "exhausted"
    ERROR = "error"


def action_space(mode: ActionMode | str, magnitude: float | None = None) -> list[Action]:
    """Unit forces along ±x, ±y, ±z, followed by the same torques in rotation mode."""
    mode = ActionMode(mode)
    if magnitude is None:
        magnitude = config_manager.get("action_magnitude")
    actions = [Action(ActionKind.FORCE, axis, magnitude) for axis in _AXES]
    if mode is ActionMode.TRANSLATION_ROTATION:
        actions += [Action(ActionKind.TORQUE, axis, magnitude) for axis in _AXES]
    return actions


# --- Query and result types ---

@dataclass(frozen=True)
class PathQuery:
    part_ids: tuple[str, ...]
    t_max: float = 120.0
    d_max: int | None = None # None: unbounded
    mode: ActionMode = ActionMode.TRANSLATION_ROTATION

    def __post_init__(self):
        if isinstance(self.part_ids, str):
            object.__setattr__(self, "part_ids", (self.part_ids,))
        object.__setattr__(self, "part_ids", tuple(self.part_ids))
        object.__setattr__(self, "mode", ActionMode(self.mode))
        if not self.part_ids:
            raise ValueError("A path query needs at least one moving part")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.d_max is not None and self.d_max < 1:
            raise ValueError(f"d_max must be at least 1, got {self.d_max}")


@dataclass
class DisassemblyPath:
    """States s_0 (assembled) ... s_n (disassembled) of one part.

    ``actions[i]`` produced ``states[i + 1]`` from ``states[i]``; None means the
    part was held while the rest of its group moved.
    """
    part_id: str
    states: list[RigidState]
    actions: list[Action | None]
    planner: str = "ours"
    group: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.group:
            self.group = (self.part_id,)
        if self.states and len(self.actions) != len(self.states) - 1:
            raise ValueError(f"Path for '{self.part_id}' has {len(self.states)} states but {len(self.actions)} actions")

    ok = True

    @property
    def depth(self) -> int:
        """Number of distinct action segments."""
        segments = 0
        previous = object()
        for action in self.actions:
            if action != previous:
                segments += 1
                previous = action
        return segments

    @property
    def length(self) -> float:
        return float(sum(state_distance(a, b)[0] for a, b in zip(self.states, self.states[1:])))

    def reversed(self) -> "DisassemblyPath":
        return DisassemblyPath(part_id=self.part_id, states=list(reversed(self.states)),
                               actions=list(reversed(self.actions)), planner=self.planner,
                               group=self.group, meta=dict(self.meta))

    def to_record(self) -> dict:
        states = []
        for step, state in enumerate(self.states):
            action = self.actions[step - 1] if step > 0 else None
            states.append({
                "step": step,
                "t": [float(x) for x in state.t],
                "q": [float(x) for x in state.q],
                "action": action.to_record() if action is not None else None,
            })
        return {"part": self.part_id, "planner": self.planner, "group": list(self.group),
                "states": states, "meta": dict(self.meta)}

    @classmethod
    def from_record(cls, record: dict) -> "DisassemblyPath":
        entries = sorted(record["states"], key=lambda s: s["step"])
        states = [RigidState(t=np.array(s["t"], dtype=float), q=np.array(s["q"], dtype=float)) for s in entries]
        actions = [Action.from_record(s.get("action")) for s in entries[1:]]
        return cls(part_id=record["part"], states=states, actions=actions, planner=record.get("planner", "ours"),
                   group=tuple(record.get("group") or (record["part"],)), meta=dict(record.get("meta", {})))


@dataclass
class PathFailure:
    kind: FailureKind
    message: str
    part_ids: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    ok = False


@dataclass(frozen=True)
class PlannerParams:
    similarity_translation: float = 0.05
    similarity_rotation: float = 0.5
    rollout_cap: int = 1000
    stall_translation: float = 0.005
    stall_rotation: float = 0.01

    @classmethod
    def from_config(cls) -> "PlannerParams":
        return cls(
            similarity_translation=config_manager.get("similarity_translation"),
            similarity_rotation=config_manager.get("similarity_rotation"),
            rollout_cap=config_manager.get("rollout_cap"),
            stall_translation=config_manager.get("stall_translation"),
            stall_rotation=config_manager.get("stall_rotation"),
        )


# --- Search internals ---

JointState = tuple[RigidState, ...]


def joint_similar(a: JointState, b: JointState, delta_t: float, delta_r: float) -> bool:
    for sa, sb in zip(a, b):
        trans, rot = state_distance(sa, sb)
        if trans > delta_t or rot > delta_r:
            return False
    return True


class StateArchive:
    """All past states, hashed on the first part's translation with cell size delta_t."""

    def __init__(self, delta_t: float, delta_r: float):
        self.delta_t = delta_t
        self.delta_r = delta_r
        self._cells: dict[tuple[int, int, int], list[JointState]] = {}
        self.size = 0

    def _key(self, joint: JointState) -> tuple[int, int, int]:
        return tuple(int(math.floor(x / self.delta_t)) for x in joint[0].t)

    def contains_similar(self, joint: JointState) -> bool:
        i, j, k = self._key(joint)
        for di, dj, dk in itertools.product((-1, 0, 1), repeat=3):
            for other in self._cells.get((i + di, j + dj, k + dk), ()):
                if joint_similar(joint, other, self.delta_t, self.delta_r):
                    return True
        return False

    def insert(self, joint: JointState):
        self._cells.setdefault(self._key(joint), []).append(joint)
        self.size += 1


@dataclass(eq=False)
class SearchNode:
    state: JointState
    parent: "SearchNode | None" = None
    action: tuple[Action | None, ...] | None = None
    depth: int = 0
    # States produced by the rollout that created this node, ending at ``state``
    segment: list[JointState] = field(default_factory=list)


class _Timeout(Exception):
    pass


@dataclass
class _Rollout:
    states: list[JointState]
    success: bool = False
    terminal_index: int = -1 # index into states of the node to enqueue, -1 for none


class PathPlanner:
    """One BFS path query at a time over a read-only assembly snapshot."""

    name = "ours"

    def __init__(self, assembly: Assembly, params: PlannerParams | None = None,
                 sim_params: SimParams | None = None, stats: StatsManager | None = None,
                 simulator: Simulator | None = None):
        self.assembly = assembly
        self.params = params or PlannerParams.from_config()
        self.stats = stats or StatsManager(name="path")
        self.simulator = simulator or Simulator(assembly.bodies, sim_params, stats=self.stats)

    # --- Rollout ---

    def _step(self, ids: tuple[str, ...], joint: JointState, actions: tuple[Action | None, ...]) -> JointState:
        moving = dict(zip(ids, joint))
        result = self.simulator.simulate(self.assembly.scene(moving), dict(zip(ids, actions)))
        return tuple(result[pid] for pid in ids)

    def _rollout(self, ids, node: SearchNode, actions, archive: StateArchive, deadline: float) -> _Rollout:
        p = self.params
        self.stats.increment("rollouts")
        produced: list[JointState] = []
        current = node.state
        anchor = node.state
        for _ in range(p.rollout_cap):
            if time.monotonic() > deadline:
                raise _Timeout()
            nxt = self._step(ids, current, actions)
            self.stats.increment("validity_checks")
            states = dict(zip(ids, nxt))
            if not group_is_valid(self.assembly, states):
                break
            if group_is_disassembled(self.assembly, states):
                produced.append(nxt)
                return _Rollout(states=produced, success=True, terminal_index=len(produced) - 1)
            if not joint_similar(nxt, anchor, p.similarity_translation, p.similarity_rotation):
                # Checkpoint: the rollout left the neighbourhood of its last novel state
                if archive.contains_similar(nxt):
                    break
                archive.insert(nxt)
                anchor = nxt
            produced.append(nxt)
            stalled = joint_similar(current, nxt, p.stall_translation, p.stall_rotation)
            current = nxt
            if stalled:
                break

        terminal = len(produced) - 1
        if terminal >= 0 and joint_similar(produced[terminal], node.state,
                                           p.similarity_translation, p.similarity_rotation):
            terminal = -1
        return _Rollout(states=produced, terminal_index=terminal)

    # --- Search ---

    def _joint_actions(self, ids, mode: ActionMode) -> list[tuple[Action | None, ...]]:
        single = action_space(mode)
        if len(ids) == 1:
            return [(a,) for a in single]
        options = single + [None]
        return [combo for combo in itertools.product(options, repeat=len(ids)) if any(a is not None for a in combo)]

    def search(self, query: PathQuery) -> list[DisassemblyPath] | PathFailure:
        """Runs the BFS. Returns one path per moving part (all the same length) or a failure."""
        ids = query.part_ids
        for pid in ids:
            if pid not in self.assembly.active:
                raise ValueError(f"Part '{pid}' is not active in {self.assembly!r}")
        start = time.monotonic()
        deadline = start + query.t_max
        sims_before = self.stats.value("simulate_calls")
        self.stats.increment("path_attempts")

        root = SearchNode(state=tuple(self.assembly.parts[pid].assembled_state for pid in ids))
        if group_is_disassembled(self.assembly, dict(zip(ids, root.state))):
            return self._finish(ids, root, [], None, start, sims_before)

        p = self.params
        archive = StateArchive(p.similarity_translation, p.similarity_rotation)
        archive.insert(root.state)
        queue = deque([root])
        joint_actions = self._joint_actions(ids, query.mode)
        depth_pruned = False
        expanded = 0

        try:
            while queue:
                node = queue.popleft()
                if query.d_max is not None and node.depth >= query.d_max:
                    depth_pruned = True
                    continue
                expanded += 1
                self.stats.increment("nodes_expanded")
                for actions in joint_actions:
                    rollout = self._rollout(ids, node, actions, archive, deadline)
                    if rollout.success:
                        return self._finish(ids, node, rollout.states, actions, start, sims_before)
                    if rollout.terminal_index < 0:
                        continue
                    segment = rollout.states[:rollout.terminal_index + 1]
                    queue.append(SearchNode(state=segment[-1], parent=node, action=actions,
                                            depth=node.depth + 1, segment=segment))
        except _Timeout:
            return self._fail(FailureKind.TIMEOUT, f"timed out after {query.t_max}s", ids, start, sims_before, expanded)
        except SimulationDivergedError as e:
            logger.error(f"Path query for {ids} aborted: {e}")
            return self._fail(FailureKind.ERROR, str(e), ids, start, sims_before, expanded)

        if depth_pruned:
            return self._fail(FailureKind.DEPTH, f"no path within depth {query.d_max}", ids, start, sims_before, expanded)
        return self._fail(FailureKind.EXHAUSTED, "search space exhausted", ids, start, sims_before, expanded)

    def _meta(self, start: float, sims_before: int, **extra) -> dict:
        meta = {"wall_time": time.monotonic() - start,
                "sim_calls": self.stats.value("simulate_calls") - sims_before}
        meta.update(extra)
        return meta

    def _fail(self, kind, message, ids, start, sims_before, expanded) -> PathFailure:
        self.stats.increment("path_failures")
        failure = PathFailure(kind=kind, message=message, part_ids=ids,
                              meta=self._meta(start, sims_before, nodes_expanded=expanded))
        logger.debug(f"Path query for {ids} failed ({kind.value}): {message}")
        return failure

    def _finish(self, ids, node: SearchNode, last_segment, last_actions, start, sims_before) -> list[DisassemblyPath]:
        chain = []
        cursor = node
        while cursor is not None:
            chain.append(cursor)
            cursor = cursor.parent
        chain.reverse()

        joints: list[JointState] = [chain[0].state]
        joint_actions: list[tuple[Action | None, ...]] = []
        for link in chain[1:]:
            joints.extend(link.segment)
            joint_actions.extend([link.action] * len(link.segment))
        if last_segment:
            joints.extend(last_segment)
            joint_actions.extend([last_actions] * len(last_segment))

        self.stats.increment("path_successes")
        meta = self._meta(start, sims_before)
        paths = []
        for index, pid in enumerate(ids):
            path = DisassemblyPath(part_id=pid, states=[j[index] for j in joints],
                                   actions=[a[index] for a in joint_actions], planner=self.name,
                                   group=ids, meta=dict(meta))
            path.meta["depth"] = len(chain) - 1 + (1 if last_segment else 0)
            paths.append(path)
        logger.debug(f"Path for {ids}: {len(joints)} states, depth {paths[0].meta['depth']}, "
                     f"{meta['sim_calls']} simulate calls")
        return paths


def plan_disassembly_path(assembly: Assembly, query: PathQuery, params: PlannerParams | None = None,
                          sim_params: SimParams | None = None,
                          stats: StatsManager | None = None) -> DisassemblyPath | PathFailure:
    """Single-part query; group queries return the first member's path (use ``plan_group_path``)."""
    result = plan_group_path(assembly, query, params, sim_params, stats)
    if isinstance(result, PathFailure):
        return result
    return result[0]


def plan_group_path(assembly: Assembly, query: PathQuery, params: PlannerParams | None = None,
                    sim_params: SimParams | None = None,
                    stats: StatsManager | None = None) -> list[DisassemblyPath] | PathFailure:
    local = StatsManager(name="path")
    planner = PathPlanner(assembly, params, sim_params, stats=local)
    result = planner.search(query)
    (stats or stats_manager).merge(local)
    return result


def replay_path(assembly: Assembly, paths: Sequence[DisassemblyPath], sim_params: SimParams | None = None) -> bool:
    """Re-simulates the recorded actions from s_0 and compares every state bit for bit."""
    ids = tuple(path.part_id for path in paths)
    simulator = Simulator(assembly.bodies, sim_params, stats=StatsManager(name="replay"))
    joint = tuple(path.states[0] for path in paths)
    for step in range(len(paths[0].actions)):
        actions = {pid: path.actions[step] for pid, path in zip(ids, paths)}
        result = simulator.simulate(assembly.scene(dict(zip(ids, joint))), actions)
        joint = tuple(result[pid] for pid in ids)
        for pid, path, state in zip(ids, paths, joint):
            if not state.same_pose(path.states[step + 1]):
                logger.warning(f"Replay of '{pid}' diverged at step {step + 1}")
                return False
    return True
