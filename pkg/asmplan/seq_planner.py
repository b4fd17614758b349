import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .assembly import Assembly, is_valid_state
from .baselines import GeomPlannerConfig
from .config import RUN_START_TIME_UTC, config_manager
from .path_planner import (ActionMode, DisassemblyPath, FailureKind, PathFailure, PathQuery,
                           plan_group_path)
from .physics import RigidState
from .stats_manager import StatsManager, stats_manager
from .trees import ExtendStatus, StateSampler, Tree, straight_line

logger = logging.getLogger(__name__)

# (assembly, query, stats) -> one path per moving part, or a failure
PathPlannerFn = Callable[[Assembly, PathQuery, StatsManager], "list[DisassemblyPath] | PathFailure"]


def bfs_path_planner(assembly: Assembly, query: PathQuery, stats: StatsManager):
    return plan_group_path(assembly, query, stats=stats)


# --- Result types ---

@dataclass
class DisassemblySequence:
    """Paths in removal order. Members of a jointly removed group are adjacent and share ``group``."""
    paths: list[DisassemblyPath]
    planner: str = "ours"
    meta: dict = field(default_factory=dict)

    ok = True

    @property
    def order(self) -> list[str]:
        return [path.part_id for path in self.paths]

    def groups(self) -> list[list[DisassemblyPath]]:
        result: list[list[DisassemblyPath]] = []
        for path in self.paths:
            if result and result[-1][0].group == path.group and len(path.group) > 1:
                result[-1].append(path)
            else:
                result.append([path])
        return result

    def to_record(self) -> dict:
        header = {
            "kind": "disassembly",
            "planner": self.planner,
            "order": self.order,
            "wall_time": self.meta.get("wall_time"),
            "sim_calls": self.meta.get("sim_calls", {}),
            "created_utc": RUN_START_TIME_UTC.isoformat(),
        }
        header.update({k: v for k, v in self.meta.items() if k not in header})
        return {"header": header, "paths": [path.to_record() for path in self.paths]}

    @classmethod
    def from_record(cls, record: dict) -> "DisassemblySequence":
        header = dict(record.get("header", {}))
        paths = [DisassemblyPath.from_record(p) for p in record.get("paths", [])]
        planner = header.pop("planner", "ours")
        return cls(paths=paths, planner=planner, meta=header)


@dataclass
class SequenceFailure:
    kind: FailureKind
    message: str
    partial: DisassemblySequence

    ok = False


@dataclass
class AssemblyPlan:
    """Assembly paths s_init ... s_goal in assembly order (reverse of removal order)."""
    paths: list[DisassemblyPath]
    planner: str = "ours"
    meta: dict = field(default_factory=dict)

    ok = True

    @property
    def order(self) -> list[str]:
        return [path.part_id for path in self.paths]

    def to_record(self) -> dict:
        header = {
            "kind": "assembly",
            "planner": self.planner,
            "order": self.order,
            "wall_time": self.meta.get("wall_time"),
            "sim_calls": self.meta.get("sim_calls", {}),
            "created_utc": RUN_START_TIME_UTC.isoformat(),
        }
        header.update({k: v for k, v in self.meta.items() if k not in header})
        return {"header": header, "paths": [path.to_record() for path in self.paths]}

    @classmethod
    def from_record(cls, record: dict) -> "AssemblyPlan":
        header = dict(record.get("header", {}))
        paths = [DisassemblyPath.from_record(p) for p in record.get("paths", [])]
        planner = header.pop("planner", "ours")
        return cls(paths=paths, planner=planner, meta=header)


# --- Disassembly sequence ---

def _candidate_groups(remaining: list[str], size: int) -> Iterable[tuple[str, ...]]:
    return itertools.combinations(remaining, size)


def plan_disassembly_sequence(assembly: Assembly, t_max: float | None = None, T_max: float | None = None,
                              progressive: bool = True, mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION,
                              path_planner: PathPlannerFn | None = None, group_size: int = 1,
                              planner_name: str | None = None,
                              stats: StatsManager | None = None) -> DisassemblySequence | SequenceFailure:
    """Removes parts pass by pass until the assembly is empty.

    Progressive mode starts every part at depth 1 and raises the depth limit
    by one after each full pass over the remaining parts; an attempt that
    timed out keeps its depth limit for its next try. Full BFS runs every
    attempt without a depth limit. Within a pass, parts go in ascending id
    order and a removal is committed before the next attempt.

    With ``group_size`` > 1, a pass in which no single part came out also
    tries every subset of up to ``group_size`` remaining parts.
    """
    t_max = config_manager.get("path_timeout") if t_max is None else t_max
    T_max = config_manager.get("sequence_timeout") if T_max is None else T_max
    mode = ActionMode(mode)
    path_planner = path_planner or bfs_path_planner
    if planner_name is None:
        planner_name = ("ours" if progressive else "ours-full-bfs") if path_planner is bfs_path_planner else "custom"

    work = assembly.snapshot()
    start = time.monotonic()
    paths: list[DisassemblyPath] = []
    sim_calls: dict[str, int] = {pid: 0 for pid in work.active_ids()}
    attempts: list[dict] = []
    d_max = 1 if progressive else None
    pass_index = 0
    held_depth: dict[tuple[str, ...], int] = {}

    def meta() -> dict:
        return {"wall_time": time.monotonic() - start, "sim_calls": dict(sim_calls),
                "passes": pass_index, "attempts": list(attempts), "progressive": progressive}

    def out_of_time() -> SequenceFailure:
        partial = DisassemblySequence(paths=list(paths), planner=planner_name, meta=meta())
        logger.warning(f"Sequence planning for '{assembly.source_id}' hit T_max={T_max}s "
                       f"with {len(work.active)} parts left")
        return SequenceFailure(FailureKind.TIMEOUT, f"T_max of {T_max}s exceeded", partial)

    while work.active:
        pass_index += 1
        remaining = work.active_ids()
        logger.info(f"Pass {pass_index}: {len(remaining)} parts remaining, d_max={d_max}")
        removed_this_pass = False
        failure_kinds: list[FailureKind] = []

        for size in range(1, group_size + 1):
            if size > 1 and (removed_this_pass or len(remaining) < size):
                break
            for group in _candidate_groups(remaining, size):
                if any(pid not in work.active for pid in group):
                    continue
                elapsed = time.monotonic() - start
                if elapsed >= T_max:
                    return out_of_time()
                depth = held_depth.pop(group, d_max) if progressive else None
                query = PathQuery(part_ids=group, t_max=min(t_max, T_max - elapsed), d_max=depth, mode=mode)
                local = StatsManager(name="attempt")
                result = path_planner(work, query, local)
                calls = local.value("simulate_calls")
                (stats or stats_manager).merge(local)
                share, rest = divmod(calls, len(group))
                for index, pid in enumerate(group):
                    sim_calls[pid] = sim_calls.get(pid, 0) + share + (rest if index == 0 else 0)
                ok = not isinstance(result, PathFailure)
                attempts.append({"pass": pass_index, "parts": list(group), "d_max": depth,
                                 "result": "success" if ok else result.kind.value, "sim_calls": calls})
                if ok:
                    for path in result:
                        path.meta["pass"] = pass_index
                        paths.append(path)
                    for pid in group:
                        work.remove(pid)
                    removed_this_pass = True
                    logger.info(f"Removed {list(group)} at pass {pass_index} ({calls} simulate calls)")
                else:
                    failure_kinds.append(result.kind)
                    if progressive and result.kind is FailureKind.TIMEOUT:
                        held_depth[group] = depth
                    logger.debug(f"Attempt on {list(group)} failed: {result.kind.value}")

        if not work.active:
            break
        if progressive:
            if not removed_this_pass and failure_kinds and all(k is FailureKind.EXHAUSTED for k in failure_kinds):
                # A deeper limit cannot help when every search ran dry below the limit
                partial = DisassemblySequence(paths=list(paths), planner=planner_name, meta=meta())
                return SequenceFailure(FailureKind.EXHAUSTED, "no remaining part can be removed", partial)
            d_max += 1
        elif not removed_this_pass:
            # Full BFS: an unchanged assembly would replay the same searches
            partial = DisassemblySequence(paths=list(paths), planner=planner_name, meta=meta())
            kind = FailureKind.TIMEOUT if FailureKind.TIMEOUT in failure_kinds else FailureKind.EXHAUSTED
            return SequenceFailure(kind, "no remaining part can be removed", partial)

    sequence = DisassemblySequence(paths=paths, planner=planner_name, meta=meta())
    logger.info(f"Disassembly sequence for '{assembly.source_id}': {sequence.order} "
                f"in {sequence.meta['wall_time']:.1f}s over {pass_index} passes")
    return sequence


def plan_multi_part_disassembly(assembly: Assembly, m: int, t_max: float | None = None,
                                T_max: float | None = None, mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION,
                                progressive: bool = True, path_planner: PathPlannerFn | None = None,
                                stats: StatsManager | None = None) -> DisassemblySequence | SequenceFailure:
    """Sequence planning where up to m parts may move at once, each with its own action."""
    if m < 2 or m >= len(assembly.active):
        raise ValueError(f"m must satisfy 1 < m < {len(assembly.active)}, got {m}")
    return plan_disassembly_sequence(assembly, t_max, T_max, progressive=progressive, mode=mode,
                                     path_planner=path_planner, group_size=m, stats=stats)


# --- Free-space connection ---

def connect_free_space(assembly: Assembly, part_id: str, s_init: RigidState, s_dis: RigidState,
                       obstacles: Iterable[str], translation_only: bool | None = None, t_max: float = 60.0,
                       cfg: GeomPlannerConfig | None = None) -> list[RigidState] | PathFailure:
    """Bidirectional RRT-Connect from s_init to s_dis among the obstacle parts at their assembled poses."""
    cfg = cfg or GeomPlannerConfig.from_config()
    if s_init.same_pose(s_dis):
        return [s_init]
    scene = assembly.snapshot(active=set(obstacles) | {part_id})
    if translation_only is None:
        translation_only = bool(np.array_equal(s_init.q, s_dis.q))
    elif translation_only and not np.array_equal(s_init.q, s_dis.q):
        logger.debug(f"Rotations of '{part_id}' endpoints differ; connecting in full SE(3)")
        translation_only = False

    def is_free(state: RigidState) -> bool:
        return is_valid_state(scene, part_id, state)

    if not is_free(s_init) or not is_free(s_dis):
        return PathFailure(FailureKind.ERROR, "free-space endpoint is in collision", (part_id,))

    # Straight line first: most connections are in open space
    line = straight_line(s_init, s_dis, cfg.step_size)
    if all(is_free(s) for s in line):
        return [s_init] + line

    others = [pid for pid in scene.active_ids() if pid != part_id]
    if others:
        lower, upper = scene.bounds(others)
    else:
        lower, upper = s_init.t.copy(), s_init.t.copy()
    lower = np.minimum(lower, np.minimum(s_init.t, s_dis.t))
    upper = np.maximum(upper, np.maximum(s_init.t, s_dis.t))
    rng = np.random.default_rng(cfg.seed)
    sampler = StateSampler.around(lower, upper, rng, fixed_rotation=s_init.q if translation_only else None)

    deadline = time.monotonic() + t_max
    tree_a, tree_b = Tree(s_init), Tree(s_dis)
    a_is_init = True
    while time.monotonic() < deadline:
        growth = tree_a.extend(sampler.sample(), cfg.step_size, is_free)
        if growth.status is not ExtendStatus.TRAPPED:
            target = tree_a.states[growth.index]
            reply = tree_b.connect(target, cfg.step_size, is_free, lambda: time.monotonic() > deadline)
            if reply.status is ExtendStatus.REACHED:
                branch_a = tree_a.branch(growth.index)
                branch_b = tree_b.branch(reply.index)
                forward, backward = (branch_a, branch_b) if a_is_init else (branch_b, branch_a)
                # Both branches end at the meeting state
                return forward + list(reversed(backward))[1:]
        tree_a, tree_b = tree_b, tree_a
        a_is_init = not a_is_init

    return PathFailure(FailureKind.TIMEOUT, f"free-space connection timed out after {t_max}s", (part_id,))


# --- Assembly by disassembly ---

def plan_assembly(assembly: Assembly, initial_states: Mapping[str, RigidState] | None = None,
                  t_max: float | None = None, T_max: float | None = None, progressive: bool = True,
                  mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION,
                  path_planner: PathPlannerFn | None = None, connect_timeout: float = 60.0,
                  cfg: GeomPlannerConfig | None = None, group_size: int = 1, planner_name: str | None = None,
                  sequence: DisassemblySequence | None = None) -> AssemblyPlan | SequenceFailure:
    """Plans disassembly, then reverses it: each part's plan is P_C + Reverse(P_D).

    P_C connects the part's initial state (default: its disassembled state)
    to where its disassembly path ended, among the parts already assembled.
    When P_C cannot be found the plan keeps only Reverse(P_D) and marks
    the part as unconnected.
    """
    start = time.monotonic()
    if sequence is None:
        sequence = plan_disassembly_sequence(assembly, t_max, T_max, progressive=progressive, mode=mode,
                                             path_planner=path_planner, group_size=group_size,
                                             planner_name=planner_name)
    if isinstance(sequence, SequenceFailure):
        return sequence
    initial_states = initial_states or {}

    present: set[str] = set()
    plan_paths: list[DisassemblyPath] = []
    unconnected: list[str] = []
    for group in reversed(sequence.groups()):
        # Members of a group connect among earlier groups only; their reversed tails move together
        obstacles = set(present)
        for path in group:
            pid = path.part_id
            s_dis = path.states[-1]
            s_init = initial_states.get(pid, s_dis)
            connection = connect_free_space(assembly, pid, s_init, s_dis, obstacles=obstacles,
                                            t_max=connect_timeout, cfg=cfg)
            if isinstance(connection, PathFailure):
                logger.warning(f"No free-space connection for '{pid}' ({connection.message}); "
                               f"reporting its reversed disassembly path only")
                unconnected.append(pid)
                connection = [s_dis]
            reverse = path.reversed()
            states = connection + reverse.states[1:]
            plan_paths.append(DisassemblyPath(part_id=pid, states=states, actions=[None] * (len(states) - 1),
                                              planner=sequence.planner, group=path.group,
                                              meta={"connection_states": len(connection),
                                                    "connected": pid not in unconnected}))
            present.add(pid)

    meta = {"wall_time": time.monotonic() - start + float(sequence.meta.get("wall_time") or 0.0),
            "sim_calls": dict(sequence.meta.get("sim_calls", {})),
            "disassembly_order": sequence.order, "unconnected": unconnected}
    plan = AssemblyPlan(paths=plan_paths, planner=sequence.planner, meta=meta)
    logger.info(f"Assembly plan for '{assembly.source_id}': order {plan.order}")
    return plan
