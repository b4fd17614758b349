"""Penalty-contact rigid body simulation against signed distance grids.

Every body lives in a frame centred at its centre of mass. Contacts are
mesh vertices of one body sampled against the other body's SDF, in both
directions for every body pair. Only actuated bodies move; all other
bodies are kinematic obstacles at their given state.
"""
import enum
import logging
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import trimesh

from .config import config_manager
from .sdf import SdfGrid
from .stats_manager import StatsManager
from .transforms import IDENTITY_QUAT, quat_from_rotvec, quat_mul, quat_normalize, quat_to_matrix

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e4


class SimulationDivergedError(RuntimeError):
    """State blew up: the penalty parameters are unstable for this step size."""


# --- State and action types ---

@dataclass(frozen=True, eq=False)
class RigidState:
    """Pose (t, q) plus linear velocity v (world) and angular velocity w (body frame)."""
    t: np.ndarray
    q: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        # Leave already-unit quaternions bit-for-bit untouched so replays compare exactly
        if abs(float(np.dot(q, q)) - 1.0) > 1e-12:
            q = quat_normalize(q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", np.asarray(self.v, dtype=np.float64).reshape(3))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64).reshape(3))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def at_rest(self) -> "RigidState":
        return RigidState(t=self.t.copy(), q=self.q.copy())

    def moved(self, translation=None, rotation=None) -> "RigidState":
        """Pose offset by a world translation and/or a world rotation quaternion applied on the left."""
        t = self.t if translation is None else self.t + np.asarray(translation, dtype=float)
        q = self.q if rotation is None else quat_mul(np.asarray(rotation, dtype=float), self.q)
        return RigidState(t=t.copy(), q=q.copy())

    def same_pose(self, other: "RigidState") -> bool:
        return bool(np.array_equal(self.t, other.t) and np.array_equal(self.q, other.q))

    def __repr__(self):
        return f"RigidState(t={np.round(self.t, 4).tolist()}, q={np.round(self.q, 4).tolist()})"


class ActionKind(str, enum.Enum):
    FORCE = "force"
    TORQUE = "torque"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    direction: tuple[float, float, float]
    magnitude: float = 100.0

    @property
    def vector(self) -> np.ndarray:
        return self.magnitude * np.asarray(self.direction, dtype=np.float64)

    @property
    def label(self) -> str:
        axis = "xyz"[int(np.argmax(np.abs(self.direction)))]
        sign = "+" if max(self.direction, key=abs) > 0 else "-"
        return f"{sign}{'f' if self.kind is ActionKind.FORCE else 't'}{axis}"

    def to_record(self) -> dict:
        return {"kind": self.kind.value, "dir": list(self.direction), "magnitude": self.magnitude}

    @classmethod
    def from_record(cls, record: dict | None) -> "Action | None":
        if record is None:
            return None
        return cls(kind=ActionKind(record["kind"]), direction=tuple(float(x) for x in record["dir"]),
                   magnitude=float(record.get("magnitude", 100.0)))


@dataclass
class Contact:
    point: np.ndarray
    depth: float # min(g, 0)
    normal: np.ndarray
    depth_rate: float
    # Unused without friction
    tangential_velocity: np.ndarray
    other_id: str


# --- Body geometry ---

@dataclass(frozen=True, eq=False)
class BodyProps:
    mass: float
    inertia: np.ndarray # body frame
    com: np.ndarray # body frame

    @classmethod
    def from_mesh(cls, mesh: trimesh.Trimesh, density: float = 1.0) -> "BodyProps":
        """Mass properties of the oriented bounding box at the given density."""
        obb = mesh.bounding_box_oriented
        extents = np.asarray(obb.primitive.extents, dtype=np.float64)
        extents = np.maximum(extents, 1e-6)
        transform = np.asarray(obb.primitive.transform, dtype=np.float64)
        mass = density * float(np.prod(extents))
        a, b, c = extents
        box_inertia = mass / 12.0 * np.diag([b * b + c * c, a * a + c * c, a * a + b * b])
        rotation = transform[:3, :3]
        inertia = rotation @ box_inertia @ rotation.T
        return cls(mass=mass, inertia=0.5 * (inertia + inertia.T), com=transform[:3, 3].copy())


@dataclass(frozen=True, eq=False)
class SimBody:
    """Read-only geometry of one part in its centre-of-mass frame."""
    part_id: str
    vertices: np.ndarray
    sdf: SdfGrid
    props: BodyProps
    radius: float

    @classmethod
    def create(cls, part_id: str, vertices: np.ndarray, sdf: SdfGrid, props: BodyProps) -> "SimBody":
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        vertices.flags.writeable = False
        radius = float(np.linalg.norm(vertices, axis=1).max()) if len(vertices) else 0.0
        return cls(part_id=part_id, vertices=vertices, sdf=sdf, props=props, radius=radius)


@dataclass(frozen=True)
class SimParams:
    contact_stiffness: float = 1e6
    contact_damping: float = 0.0
    time_step: float = 1e-3
    path_time_step: float = 0.1
    velocity_damping: float = 0.98

    @classmethod
    def from_config(cls) -> "SimParams":
        return cls(
            contact_stiffness=config_manager.get("contact_stiffness"),
            contact_damping=config_manager.get("contact_damping"),
            time_step=config_manager.get("sim_time_step"),
            path_time_step=config_manager.get("path_time_step"),
            velocity_damping=config_manager.get("velocity_damping"),
        )


# --- Contact queries ---

def _point_velocity(state: RigidState, rotation: np.ndarray, points: np.ndarray) -> np.ndarray:
    w_world = rotation @ state.w
    return state.v + np.cross(w_world, points - state.t)


def _vertices_in(body_from: SimBody, state_from: RigidState, rot_from: np.ndarray,
                 body_into: SimBody, state_into: RigidState, rot_into: np.ndarray, threshold: float):
    """Vertices of body_from with g_into < threshold. Returns world points, depths, world outward normals of body_into."""
    world = body_from.vertices @ rot_from.T + state_from.t
    local = (world - state_into.t) @ rot_into
    candidates = np.flatnonzero(body_into.sdf.inside_box_mask(local, margin=max(threshold, 0.0)))
    if candidates.size == 0:
        return None
    g = body_into.sdf.distances(local[candidates])
    hit = g < threshold
    if not np.any(hit):
        return None
    idx = candidates[hit]
    grads = body_into.sdf.gradients(local[idx]) @ rot_into.T
    norms = np.linalg.norm(grads, axis=1)
    normals = np.divide(grads, norms[:, None], out=np.zeros_like(grads), where=norms[:, None] > 1e-12)
    depths = np.minimum(g[hit], 0.0)
    return world[idx], depths, normals


def pair_contacts(body: SimBody, state: RigidState, other: SimBody, other_state: RigidState,
                  threshold: float = 0.0, both_directions: bool = True):
    """Contact arrays acting on ``body`` from ``other``.

    Returns (points, depths, normals, depth_rates) with normals pushing
    ``body`` out of ``other``; None when there is no contact.
    """
    if np.linalg.norm(state.t - other_state.t) > body.radius + other.radius + max(threshold, 0.0) + 1e-9:
        return None
    rot = state.rotation
    rot_other = other_state.rotation
    chunks = []
    forward = _vertices_in(body, state, rot, other, other_state, rot_other, threshold)
    if forward is not None:
        chunks.append(forward)
    if both_directions:
        reverse = _vertices_in(other, other_state, rot_other, body, state, rot, threshold)
        if reverse is not None:
            points, depths, normals = reverse
            chunks.append((points, depths, -normals))
    if not chunks:
        return None
    points = np.vstack([c[0] for c in chunks])
    depths = np.concatenate([c[1] for c in chunks])
    normals = np.vstack([c[2] for c in chunks])
    relative = _point_velocity(state, rot, points) - _point_velocity(other_state, rot_other, points)
    rates = np.einsum("ij,ij->i", normals, relative)
    return points, depths, normals, rates


def detect_contacts(moving: tuple[SimBody, RigidState], others: list[tuple[SimBody, RigidState]],
                    threshold: float = 0.0) -> list[Contact]:
    """One contact per moving-part vertex and other part with g(x) < threshold."""
    body, state = moving
    contacts = []
    for other, other_state in others:
        found = pair_contacts(body, state, other, other_state, threshold, both_directions=False)
        if found is None:
            continue
        points, depths, normals, rates = found
        relative = (_point_velocity(state, state.rotation, points)
                    - _point_velocity(other_state, other_state.rotation, points))
        for k in range(len(depths)):
            tangential = relative[k] - rates[k] * normals[k]
            contacts.append(Contact(point=points[k], depth=float(depths[k]), normal=normals[k],
                                    depth_rate=float(rates[k]), tangential_velocity=tangential,
                                    other_id=other.part_id))
    return contacts


def contact_force(contact: Contact, k_n: float, k_d: float) -> np.ndarray:
    """Penalty force (-k_n + k_d * d_dot) * d * n."""
    return (-k_n + k_d * contact.depth_rate) * contact.depth * np.asarray(contact.normal, dtype=np.float64)


def pair_penetration(body: SimBody, state: RigidState, other: SimBody, other_state: RigidState) -> float:
    """Deepest |min(g, 0)| between two bodies over both vertex-vs-SDF directions."""
    found = pair_contacts(body, state, other, other_state, threshold=0.0)
    if found is None:
        return 0.0
    return float(-found[1].min())


# --- Scene dump ---

class SceneRecorder:
    """Appends one line per part per substep: ``part_id tx ty tz qw qx qy qz``."""

    def __init__(self, filepath: str):
        self.filepath = filepath
        directory = os.path.dirname(filepath)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._lines: list[str] = []

    def record(self, poses: Mapping[str, tuple[np.ndarray, np.ndarray]]):
        for part_id in sorted(poses):
            t, q = poses[part_id]
            values = " ".join(repr(float(x)) for x in (*t, *q))
            self._lines.append(f"{part_id} {values}")

    def flush(self):
        if not self._lines:
            return
        try:
            with open(self.filepath, "a", encoding="utf-8") as f:
                f.write("\n".join(self._lines) + "\n")
        except OSError as e:
            logger.error(f"Could not write scene dump {self.filepath}: {e}")
        self._lines = []


# --- Simulator ---

class Simulator:
    """Simulation context: owns the step counter and the optional scene recorder.

    Confined to one worker. The bodies mapping is shared read-only geometry.
    """

    def __init__(self, bodies: Mapping[str, SimBody], params: SimParams | None = None,
                 stats: StatsManager | None = None, scene_dump_path: str | None = None):
        self.bodies = bodies
        self.params = params or SimParams.from_config()
        self.stats = stats or StatsManager(name="simulator")
        if scene_dump_path is None:
            scene_dump_path = config_manager.get("scene_dump_path")
        self.recorder = SceneRecorder(scene_dump_path) if scene_dump_path else None

    def simulate(self, states: Mapping[str, RigidState], actions: Mapping[str, Action | None],
                 dt: float | None = None, h: float | None = None) -> dict[str, RigidState]:
        """Advances the actuated parts by dt from rest.

        ``states`` holds every body in the scene. Parts whose action is None
        (or that have no entry in ``actions``) stay where they are.

        Raises:
            SimulationDivergedError: a pose became non-finite or left the 1e4 box.
        """
        dt = self.params.path_time_step if dt is None else dt
        h = self.params.time_step if h is None else h
        self.stats.increment("simulate_calls")

        moving = sorted(pid for pid, action in actions.items() if action is not None and pid in states)
        if not moving:
            return {pid: s.at_rest() for pid, s in states.items()}

        k_n = self.params.contact_stiffness
        k_d = self.params.contact_damping
        # Velocities are zeroed at entry: a child state depends only on (parent, action)
        poses = {pid: (s.t.copy(), s.q.copy()) for pid, s in states.items()}
        velocities = {pid: (np.zeros(3), np.zeros(3)) for pid in moving} # world frame
        n_substeps = max(1, int(round(dt / h)))
        others_of = {pid: sorted(o for o in states if o != pid) for pid in moving}

        for _ in range(n_substeps):
            current = {pid: self._state_of(pid, poses, velocities) for pid in states}
            updated = {}
            for pid in moving:
                body = self.bodies[pid]
                state = current[pid]
                rot = state.rotation
                force = np.zeros(3)
                torque = np.zeros(3)
                action = actions[pid]
                if action.kind is ActionKind.FORCE:
                    force += action.vector
                else:
                    torque += action.vector

                stiffness = np.zeros((6, 6))
                n_contacts = 0
                for oid in others_of[pid]:
                    found = pair_contacts(body, state, self.bodies[oid], current[oid])
                    if found is None:
                        continue
                    points, depths, normals, rates = found
                    active = depths < 0.0
                    if not np.any(active):
                        continue
                    points, depths, normals, rates = points[active], depths[active], normals[active], rates[active]
                    coeff = (-k_n + k_d * rates) * depths
                    forces = coeff[:, None] * normals
                    arms = points - state.t
                    force += forces.sum(axis=0)
                    torque += np.cross(arms, forces).sum(axis=0)
                    jac = np.hstack([normals, np.cross(arms, normals)])
                    stiffness += k_n * jac.T @ jac
                    n_contacts += len(depths)

                v, w = velocities[pid]
                inertia_world = rot @ body.props.inertia @ rot.T
                torque -= np.cross(w, inertia_world @ w)
                mass_matrix = np.zeros((6, 6))
                mass_matrix[:3, :3] = body.props.mass * np.eye(3)
                mass_matrix[3:, 3:] = inertia_world
                # Contact stiffness enters implicitly: (M + h^2 K) u+ = M u + h f
                lhs = mass_matrix + h * h * stiffness
                rhs = mass_matrix @ np.concatenate([v, w]) + h * np.concatenate([force, torque])
                u = np.linalg.solve(lhs, rhs)
                if n_contacts:
                    u *= self.params.velocity_damping

                t, q = poses[pid]
                t_new = t + h * u[:3]
                q_new = quat_normalize(quat_mul(quat_from_rotvec(h * u[3:]), q))
                if not (np.all(np.isfinite(t_new)) and np.all(np.isfinite(q_new))) \
                        or np.linalg.norm(t_new) > DIVERGENCE_LIMIT:
                    raise SimulationDivergedError(
                        f"Simulation diverged for part '{pid}': t={t_new.tolist()} "
                        f"(k_n={k_n}, h={h}, contacts={n_contacts})")
                updated[pid] = ((t_new, q_new), (u[:3].copy(), u[3:].copy()))

            for pid, (pose, vel) in updated.items():
                poses[pid] = pose
                velocities[pid] = vel
            if self.recorder is not None:
                self.recorder.record(poses)

        if self.recorder is not None:
            self.recorder.flush()
        return {pid: self._state_of(pid, poses, velocities) for pid in states}

    @staticmethod
    def _state_of(pid, poses, velocities) -> RigidState:
        t, q = poses[pid]
        if pid not in velocities:
            return RigidState(t=t, q=q)
        v, w_world = velocities[pid]
        w_body = quat_to_matrix(q).T @ w_world
        return RigidState(t=t, q=q, v=v, w=w_body)


def simulate(simulator: Simulator, states, actions, dt: float | None = None, h: float | None = None):
    return simulator.simulate(states, actions, dt, h)
