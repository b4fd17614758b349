"""Comparison planners: RRT, T-RRT, mating-vector + T-RRT, and physics-driven BK-RRT.

All of them judge states with the same predicates as the BFS planner
(``is_valid_state`` and ``is_disassembled``) and return the same
DisassemblyPath / PathFailure types. Geometric planners record no actions.
"""
import logging
import time
from dataclasses import dataclass

import numpy as np

from .assembly import Assembly, is_disassembled, is_valid_state
from .config import config_manager
from .path_planner import (ActionMode, DisassemblyPath, FailureKind, PathFailure, PathQuery,
                           action_space)
from .physics import RigidState, SimParams, SimulationDivergedError, Simulator
from .stats_manager import StatsManager
from .transforms import quat_to_matrix
from .trees import ExtendStatus, StateSampler, Tree, straight_line

logger = logging.getLogger(__name__)

BASELINE_NAMES = ("rrt", "trrt", "mv-trrt", "bk-rrt")
RRT_GOAL_BIAS = 0.05
GOAL_SAMPLE_ATTEMPTS = 1000
MATING_VECTOR_LIMIT = 64
MATING_VECTOR_DEDUP_DEG = 1.0
TOUCH_DISTANCE = 0.05


@dataclass(frozen=True)
class GeomPlannerConfig:
    step_size: float = 0.01
    max_penetration: float = 0.01
    goal_probability: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not 0.0 <= self.goal_probability <= 1.0:
            raise ValueError(f"goal_probability must lie in [0, 1], got {self.goal_probability}")

    @classmethod
    def from_config(cls, seed: int = 0) -> "GeomPlannerConfig":
        return cls(step_size=config_manager.get("tree_step_size"),
                   max_penetration=config_manager.get("geom_max_penetration"),
                   goal_probability=config_manager.get("trrt_goal_probability"),
                   seed=seed)


# --- Helpers ---

def _scene_for(assembly: Assembly, max_penetration: float) -> Assembly:
    if max_penetration == assembly.penetration_threshold:
        return assembly
    return Assembly(assembly.parts, scale=assembly.scale, source_id=assembly.source_id,
                    category=assembly.category, initial_penetration=assembly.initial_penetration,
                    active=assembly.active, penetration_threshold=max_penetration)


def _sampler(assembly: Assembly, part_id: str, rng: np.random.Generator, mode: ActionMode) -> StateSampler:
    lower, upper = assembly.bounds()
    fixed = assembly.parts[part_id].assembled_state.q if mode is ActionMode.TRANSLATION else None
    return StateSampler.around(lower, upper, rng, inflation=0.5, fixed_rotation=fixed)


def _success(assembly, part_id, states, planner, start, extra=None) -> DisassemblyPath:
    meta = {"wall_time": time.monotonic() - start}
    meta.update(extra or {})
    path = DisassemblyPath(part_id=part_id, states=states, actions=[None] * (len(states) - 1),
                           planner=planner, meta=meta)
    logger.debug(f"{planner} found a path for '{part_id}' with {len(states)} states")
    return path


def _timeout(planner, part_id, t_max, start, extra=None) -> PathFailure:
    meta = {"wall_time": time.monotonic() - start}
    meta.update(extra or {})
    return PathFailure(FailureKind.TIMEOUT, f"{planner} timed out after {t_max}s", (part_id,), meta)


def random_disassembled_goal(assembly: Assembly, part_id: str, cfg: GeomPlannerConfig,
                             mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION,
                             attempts: int = GOAL_SAMPLE_ATTEMPTS) -> RigidState | None:
    """Random valid disassembled state whose last 10% of straight-line approach is free."""
    mode = ActionMode(mode)
    scene = _scene_for(assembly, cfg.max_penetration)
    rng = np.random.default_rng([cfg.seed, 7919])
    sampler = _sampler(scene, part_id, rng, mode)
    start = scene.parts[part_id].assembled_state
    for _ in range(attempts):
        goal = sampler.sample()
        if not is_disassembled(scene, part_id, goal) or not is_valid_state(scene, part_id, goal):
            continue
        approach_start = RigidState(t=start.t + 0.9 * (goal.t - start.t), q=goal.q)
        if all(is_valid_state(scene, part_id, s) for s in straight_line(approach_start, goal, cfg.step_size)):
            return goal
    logger.warning(f"No disassembled goal for '{part_id}' after {attempts} samples")
    return None


# --- RRT ---

def rrt_plan(assembly: Assembly, part_id: str, goal: RigidState, cfg: GeomPlannerConfig, t_max: float,
             mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION) -> DisassemblyPath | PathFailure:
    """Single-tree RRT from the assembled state toward a fixed disassembled goal."""
    mode = ActionMode(mode)
    start = time.monotonic()
    deadline = start + t_max
    scene = _scene_for(assembly, cfg.max_penetration)
    rng = np.random.default_rng(cfg.seed)
    sampler = _sampler(scene, part_id, rng, mode)
    root = scene.parts[part_id].assembled_state

    def is_free(state):
        return is_valid_state(scene, part_id, state)

    tree = Tree(root)
    if root.same_pose(goal):
        return _success(scene, part_id, [root], "rrt", start, {"nodes": 1})

    while time.monotonic() < deadline:
        if rng.random() < RRT_GOAL_BIAS:
            growth = tree.connect(goal, cfg.step_size, is_free, lambda: time.monotonic() > deadline)
        else:
            growth = tree.extend(sampler.sample(), cfg.step_size, is_free)
        if growth.status is ExtendStatus.TRAPPED:
            continue
        if tree.states[growth.index].same_pose(goal):
            return _success(scene, part_id, tree.branch(growth.index), "rrt", start, {"nodes": len(tree)})
    return _timeout("rrt", part_id, t_max, start, {"nodes": len(tree)})


# --- T-RRT ---

def outside_box_goal(assembly: Assembly, part_id: str, state: RigidState, margin: float) -> RigidState:
    """Nearest state outside the others' bounding box by a single-axis shift, keeping the rotation."""
    others = [pid for pid in assembly.active_ids() if pid != part_id]
    if not others:
        return state
    o_lo, o_hi = assembly.bounds(others)
    part = assembly.parts[part_id]
    points = part.world_vertices(state)
    p_lo, p_hi = points.min(axis=0), points.max(axis=0)
    best_shift = None
    for axis in range(3):
        for shift in (o_hi[axis] - p_lo[axis] + margin, o_lo[axis] - p_hi[axis] - margin):
            if best_shift is None or abs(shift) < abs(best_shift[1]):
                best_shift = (axis, shift)
    offset = np.zeros(3)
    offset[best_shift[0]] = best_shift[1]
    return RigidState(t=state.t + offset, q=state.q.copy())


def _trrt_search(scene: Assembly, part_id: str, cfg: GeomPlannerConfig, deadline: float,
                 mode: ActionMode, rng: np.random.Generator):
    sampler = _sampler(scene, part_id, rng, mode)
    root = scene.parts[part_id].assembled_state
    tree = Tree(root)

    def is_free(state):
        return is_valid_state(scene, part_id, state)

    if is_disassembled(scene, part_id, root):
        return tree, 0
    while time.monotonic() < deadline:
        if rng.random() < cfg.goal_probability:
            node = int(rng.integers(len(tree)))
            goal = outside_box_goal(scene, part_id, tree.states[node], cfg.step_size)
            growth = tree.connect(goal, cfg.step_size, is_free, lambda: time.monotonic() > deadline)
        else:
            growth = tree.extend(sampler.sample(), cfg.step_size, is_free)
        if growth.status is ExtendStatus.TRAPPED:
            continue
        if is_disassembled(scene, part_id, tree.states[growth.index]):
            return tree, growth.index
    return tree, None


def trrt_plan(assembly: Assembly, part_id: str, cfg: GeomPlannerConfig, t_max: float,
              mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION) -> DisassemblyPath | PathFailure:
    """RRT whose goal-directed extensions aim at the nearest state outside the others' bounding box."""
    mode = ActionMode(mode)
    start = time.monotonic()
    scene = _scene_for(assembly, cfg.max_penetration)
    rng = np.random.default_rng(cfg.seed)
    tree, found = _trrt_search(scene, part_id, cfg, start + t_max, mode, rng)
    if found is None:
        return _timeout("trrt", part_id, t_max, start, {"nodes": len(tree)})
    return _success(scene, part_id, tree.branch(found), "trrt", start, {"nodes": len(tree)})


# --- Mating vectors + T-RRT ---

def _area_weighted_normals(normals: np.ndarray, areas: np.ndarray) -> list[tuple[np.ndarray, float]]:
    keys = np.round(normals, 3)
    merged: dict[tuple, list] = {}
    for key, normal, area in zip(map(tuple, keys), normals, areas):
        entry = merged.setdefault(key, [np.zeros(3), 0.0])
        entry[0] += area * normal
        entry[1] += area
    result = []
    for total, weight in merged.values():
        norm = np.linalg.norm(total)
        if norm > 1e-12 and weight > 0:
            result.append((total / norm, weight))
    return result


def mating_vectors(assembly: Assembly, part_id: str, limit: int = MATING_VECTOR_LIMIT) -> list[np.ndarray]:
    """Outward face normals of the part and inverted face normals of touching parts.

    Candidates are area-weighted, merged within one degree, and the heaviest
    ``limit`` directions are returned.
    """
    part = assembly.parts[part_id]
    rotation = quat_to_matrix(part.assembled_state.q)
    candidates = _area_weighted_normals(np.asarray(part.mesh.face_normals) @ rotation.T,
                                        np.asarray(part.mesh.area_faces))
    own_points = part.world_vertices()
    for oid in assembly.active_ids():
        if oid == part_id:
            continue
        other = assembly.parts[oid]
        local = own_points - other.assembled_state.t
        local = local @ quat_to_matrix(other.assembled_state.q)
        if not np.any(other.sdf.distances(local) < TOUCH_DISTANCE):
            continue
        other_rotation = quat_to_matrix(other.assembled_state.q)
        candidates += _area_weighted_normals(-(np.asarray(other.mesh.face_normals) @ other_rotation.T),
                                             np.asarray(other.mesh.area_faces))

    candidates.sort(key=lambda item: -item[1])
    cos_limit = np.cos(np.deg2rad(MATING_VECTOR_DEDUP_DEG))
    selected: list[np.ndarray] = []
    for direction, _ in candidates:
        if any(float(np.dot(direction, kept)) >= cos_limit for kept in selected):
            continue
        selected.append(direction)
        if len(selected) >= limit:
            break
    return selected


def _straight_line_exit(scene: Assembly, part_id: str, direction: np.ndarray, step: float,
                        max_distance: float, deadline: float) -> list[RigidState] | None:
    root = scene.parts[part_id].assembled_state
    states = [root]
    for k in range(1, int(np.ceil(max_distance / step)) + 1):
        if time.monotonic() > deadline:
            return None
        state = RigidState(t=root.t + k * step * direction, q=root.q.copy())
        if not is_valid_state(scene, part_id, state):
            return None
        states.append(state)
        if is_disassembled(scene, part_id, state):
            return states
    return None


def mv_trrt_plan(assembly: Assembly, part_id: str, cfg: GeomPlannerConfig, t_max: float,
                 mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION) -> DisassemblyPath | PathFailure:
    """Straight-line exits along mating vectors first, then T-RRT with the remaining time."""
    mode = ActionMode(mode)
    start = time.monotonic()
    deadline = start + t_max
    scene = _scene_for(assembly, cfg.max_penetration)
    root = scene.parts[part_id].assembled_state
    if is_disassembled(scene, part_id, root):
        return _success(scene, part_id, [root], "mv-trrt", start, {"phase": 1, "nodes": 0})

    lower, upper = scene.bounds()
    max_distance = 2.0 * float(np.linalg.norm(upper - lower))
    directions = mating_vectors(scene, part_id)
    for direction in directions:
        states = _straight_line_exit(scene, part_id, direction, cfg.step_size, max_distance, deadline)
        if states is not None:
            return _success(scene, part_id, states, "mv-trrt", start,
                            {"phase": 1, "nodes": 0, "direction": direction.tolist()})
        if time.monotonic() > deadline:
            return _timeout("mv-trrt", part_id, t_max, start, {"phase": 1})

    logger.debug(f"No straight mating-vector exit for '{part_id}' among {len(directions)} directions")
    rng = np.random.default_rng(cfg.seed)
    tree, found = _trrt_search(scene, part_id, cfg, deadline, mode, rng)
    if found is None:
        return _timeout("mv-trrt", part_id, t_max, start, {"phase": 2, "nodes": len(tree)})
    return _success(scene, part_id, tree.branch(found), "mv-trrt", start, {"phase": 2, "nodes": len(tree)})


# --- BK-RRT ---

def bk_rrt_plan(assembly: Assembly, part_id: str, t_max: float,
                mode: ActionMode | str = ActionMode.TRANSLATION_ROTATION, seed: int = 0,
                sim_params: SimParams | None = None,
                stats: StatsManager | None = None) -> DisassemblyPath | PathFailure:
    """Kinodynamic RRT: grow from the nearest node by one random action simulated for Δt."""
    mode = ActionMode(mode)
    start = time.monotonic()
    deadline = start + t_max
    stats = stats or StatsManager(name="bk-rrt")
    simulator = Simulator(assembly.bodies, sim_params, stats=stats)
    rng = np.random.default_rng(seed)
    sampler = _sampler(assembly, part_id, rng, mode)
    actions = action_space(mode)
    root = assembly.parts[part_id].assembled_state
    tree = Tree(root)
    used_actions: list = [None]
    sims_before = stats.value("simulate_calls")

    def meta():
        return {"nodes": len(tree), "sim_calls": stats.value("simulate_calls") - sims_before}

    if is_disassembled(assembly, part_id, root):
        return _success(assembly, part_id, [root], "bk-rrt", start, meta())
    try:
        while time.monotonic() < deadline:
            near = tree.nearest(sampler.sample())
            action = actions[int(rng.integers(len(actions)))]
            result = simulator.simulate(assembly.scene({part_id: tree.states[near]}), {part_id: action})
            child = result[part_id]
            if not is_valid_state(assembly, part_id, child):
                continue
            index = tree.add(child, near)
            used_actions.append(action)
            if is_disassembled(assembly, part_id, child):
                chain = []
                cursor = index
                while cursor >= 0:
                    chain.append(cursor)
                    cursor = tree.parents[cursor]
                chain.reverse()
                path = DisassemblyPath(part_id=part_id, states=[tree.states[i] for i in chain],
                                       actions=[used_actions[i] for i in chain[1:]], planner="bk-rrt",
                                       meta=dict(meta(), wall_time=time.monotonic() - start))
                return path
    except SimulationDivergedError as e:
        logger.error(f"BK-RRT for '{part_id}' aborted: {e}")
        return PathFailure(FailureKind.ERROR, str(e), (part_id,), meta())
    return _timeout("bk-rrt", part_id, t_max, start, meta())


# --- Adapters for the sequence planner ---

def as_path_planner(name: str, seed: int = 0, cfg: GeomPlannerConfig | None = None):
    """Wraps a baseline as (assembly, query, stats) -> [path] | failure. Depth limits are ignored."""
    if name not in BASELINE_NAMES:
        raise ValueError(f"Unknown baseline planner '{name}'. Choose from: {', '.join(BASELINE_NAMES)}")
    cfg = cfg or GeomPlannerConfig.from_config(seed)

    def run(assembly: Assembly, query: PathQuery, stats: StatsManager):
        if len(query.part_ids) != 1:
            return PathFailure(FailureKind.ERROR, f"{name} moves one part at a time", query.part_ids)
        part_id = query.part_ids[0]
        root = assembly.parts[part_id].assembled_state
        if is_disassembled(assembly, part_id, root):
            return [_success(assembly, part_id, [root], name, time.monotonic())]
        if name == "rrt":
            goal = random_disassembled_goal(assembly, part_id, cfg, query.mode)
            if goal is None:
                return PathFailure(FailureKind.EXHAUSTED, "no disassembled goal found", query.part_ids)
            result = rrt_plan(assembly, part_id, goal, cfg, query.t_max, query.mode)
        elif name == "trrt":
            result = trrt_plan(assembly, part_id, cfg, query.t_max, query.mode)
        elif name == "mv-trrt":
            result = mv_trrt_plan(assembly, part_id, cfg, query.t_max, query.mode)
        else:
            result = bk_rrt_plan(assembly, part_id, query.t_max, query.mode, seed=cfg.seed, stats=stats)
        return result if isinstance(result, PathFailure) else [result]

    return run
