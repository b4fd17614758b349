import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
import trimesh

from .config import config_manager
from .hull import ConvexHull, compute_convex_hull, hull_from_points, hulls_intersect
from .mesh_io import load_raw_assembly
from .physics import BodyProps, RigidState, SimBody, pair_penetration
from .sdf import SdfGrid, build_sdf_grid
from .transforms import quat_to_matrix, relative_rotation_distance

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Part:
    """One rigid part, stored in its centre-of-mass frame.

    ``assembled_state`` places the part at its ground-truth input pose:
    t is the world centre of mass and q is the identity.
    """
    part_id: str
    mesh: trimesh.Trimesh
    sdf: SdfGrid
    hull: ConvexHull
    assembled_state: RigidState
    body: SimBody

    @classmethod
    def from_mesh(cls, part_id: str, world_mesh: trimesh.Trimesh, sdf_options: dict | None = None) -> "Part":
        props = BodyProps.from_mesh(world_mesh)
        com = props.com
        local = world_mesh.copy()
        local.apply_translation(-com)
        sdf = build_sdf_grid(local, **(sdf_options or {}))
        hull = compute_convex_hull(local)
        body = SimBody.create(part_id, local.vertices,
                              sdf, BodyProps(mass=props.mass, inertia=props.inertia, com=np.zeros(3)))
        return cls(part_id=part_id, mesh=local, sdf=sdf, hull=hull,
                   assembled_state=RigidState(t=com.copy()), body=body)

    def hull_at(self, state: RigidState) -> ConvexHull:
        return self.hull.transformed(quat_to_matrix(state.q), state.t)

    def world_vertices(self, state: RigidState | None = None) -> np.ndarray:
        state = state or self.assembled_state
        return np.asarray(self.mesh.vertices) @ quat_to_matrix(state.q).T + state.t

    def world_mesh(self, state: RigidState | None = None) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.world_vertices(state), faces=np.asarray(self.mesh.faces).copy(),
                               process=False)


class Assembly:
    """Parts, the active set, and the per-pair penetration present in the assembled pose.

    Path queries read an Assembly without changing it. The sequence planner
    removes parts between queries with ``remove``; ``snapshot`` gives a copy
    with an independent active set.
    """

    def __init__(self, parts: Mapping[str, Part], scale: float = 1.0, source_id: str = "",
                 category: str | None = None, initial_penetration: dict | None = None,
                 active: Iterable[str] | None = None, penetration_threshold: float | None = None):
        if not parts:
            raise ValueError("An assembly needs at least one part")
        self.parts = {pid: parts[pid] for pid in sorted(parts)}
        self.scale = scale
        self.source_id = source_id
        self.category = category
        self.active = set(self.parts) if active is None else set(active)
        self.penetration_threshold = (config_manager.get("penetration_threshold")
                                      if penetration_threshold is None else penetration_threshold)
        self.bodies = {pid: part.body for pid, part in self.parts.items()}
        self._hull_cache: dict[tuple[frozenset, frozenset], ConvexHull | None] = {}
        if initial_penetration is None:
            initial_penetration = self._measure_initial_penetration()
        self.initial_penetration = initial_penetration

    @classmethod
    def from_meshes(cls, meshes: Mapping[str, trimesh.Trimesh], scale: float = 1.0, source_id: str = "",
                    category: str | None = None, sdf_options: dict | None = None) -> "Assembly":
        parts = {}
        for pid in sorted(meshes):
            parts[pid] = Part.from_mesh(pid, meshes[pid], sdf_options)
            logger.debug(f"Built part '{pid}': {len(parts[pid].mesh.vertices)} vertices, sdf dims {parts[pid].sdf.dims}")
        assembly = cls(parts, scale=scale, source_id=source_id, category=category)
        logger.info(f"Assembly '{source_id or 'unnamed'}' ready with {len(parts)} parts")
        return assembly

    @classmethod
    def from_manifest(cls, manifest_path: str, sdf_options: dict | None = None) -> "Assembly":
        """Loads a planner-ready assembly (fixture output or preprocessed corpus entry)."""
        raw = load_raw_assembly(manifest_path)
        return cls.from_meshes(raw.world_meshes(), source_id=raw.source_id, category=raw.category,
                               sdf_options=sdf_options)

    def _measure_initial_penetration(self) -> dict:
        result = {}
        for a, b in itertools.combinations(self.parts, 2):
            depth = pair_penetration(self.bodies[a], self.parts[a].assembled_state,
                                     self.bodies[b], self.parts[b].assembled_state)
            if depth > 0.0:
                result[frozenset((a, b))] = depth
                logger.debug(f"Initial penetration between '{a}' and '{b}': {depth:.5f}")
        return result

    # --- Bookkeeping ---

    def active_ids(self) -> list[str]:
        return sorted(self.active)

    def remove(self, part_id: str):
        if part_id not in self.active:
            raise KeyError(f"Part '{part_id}' is not active")
        self.active.discard(part_id)

    def snapshot(self, active: Iterable[str] | None = None) -> "Assembly":
        return Assembly(self.parts, scale=self.scale, source_id=self.source_id, category=self.category,
                        initial_penetration=self.initial_penetration,
                        active=self.active if active is None else active,
                        penetration_threshold=self.penetration_threshold)

    def assembled_states(self, part_ids: Iterable[str] | None = None) -> dict[str, RigidState]:
        ids = self.active_ids() if part_ids is None else part_ids
        return {pid: self.parts[pid].assembled_state for pid in ids}

    def scene(self, moving: Mapping[str, RigidState]) -> dict[str, RigidState]:
        """States of every active part: the given ones for moving parts, assembled poses otherwise."""
        states = self.assembled_states()
        states.update(moving)
        return states

    def others_hull(self, excluded: Iterable[str]) -> ConvexHull | None:
        """Hull of the union of assembled-pose vertices of active parts outside ``excluded``."""
        excluded = frozenset(excluded)
        key = (frozenset(self.active), excluded)
        if key not in self._hull_cache:
            others = [pid for pid in self.active_ids() if pid not in excluded]
            if not others:
                self._hull_cache[key] = None
            else:
                points = np.vstack([self.parts[pid].world_vertices() for pid in others])
                self._hull_cache[key] = hull_from_points(points)
        return self._hull_cache[key]

    def bounds(self, part_ids: Iterable[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
        ids = list(self.active_ids() if part_ids is None else part_ids)
        points = np.vstack([self.parts[pid].world_vertices() for pid in ids])
        return points.min(axis=0), points.max(axis=0)

    def penetration_limit(self, a: str, b: str) -> float:
        return self.penetration_threshold + self.initial_penetration.get(frozenset((a, b)), 0.0)

    def __repr__(self):
        return f"Assembly({self.source_id!r}, parts={len(self.parts)}, active={len(self.active)})"


# --- Queries shared by every planner ---

def group_is_disassembled(assembly: Assembly, states: Mapping[str, RigidState]) -> bool:
    """Each moving part's hull is clear of the hull enclosing all other active parts."""
    others = assembly.others_hull(states.keys())
    if others is None:
        return True
    return not any(hulls_intersect(assembly.parts[pid].hull_at(state), others) for pid, state in states.items())


def is_disassembled(assembly: Assembly, part_id: str, state: RigidState) -> bool:
    return group_is_disassembled(assembly, {part_id: state})


def state_distance(a: RigidState, b: RigidState) -> tuple[float, float]:
    """(Euclidean translation distance, norm of the relative quaternion log = half angle)."""
    return float(np.linalg.norm(a.t - b.t)), relative_rotation_distance(a.q, b.q)


def is_similar(a: RigidState, b: RigidState, delta_t: float | None = None, delta_r: float | None = None) -> bool:
    if delta_t is None:
        delta_t = config_manager.get("similarity_translation")
    if delta_r is None:
        delta_r = config_manager.get("similarity_rotation")
    trans, rot = state_distance(a, b)
    return trans <= delta_t and rot <= delta_r


def max_penetration(assembly: Assembly, part_id: str, state: RigidState) -> float:
    """Deepest penetration of the part at ``state`` against all other active parts."""
    deepest = 0.0
    body = assembly.bodies[part_id]
    for oid in assembly.active_ids():
        if oid == part_id:
            continue
        depth = pair_penetration(body, state, assembly.bodies[oid], assembly.parts[oid].assembled_state)
        deepest = max(deepest, depth)
    return deepest


def group_is_valid(assembly: Assembly, states: Mapping[str, RigidState]) -> bool:
    """Every pair with a moving member stays within 0.01 plus its assembled-pose penetration."""
    scene = assembly.scene(states)
    checked = set()
    for pid in sorted(states):
        for oid in assembly.active_ids():
            if oid == pid or frozenset((pid, oid)) in checked:
                continue
            checked.add(frozenset((pid, oid)))
            depth = pair_penetration(assembly.bodies[pid], scene[pid], assembly.bodies[oid], scene[oid])
            if depth > assembly.penetration_limit(pid, oid):
                return False
    return True


def is_valid_state(assembly: Assembly, part_id: str, state: RigidState) -> bool:
    return group_is_valid(assembly, {part_id: state})
