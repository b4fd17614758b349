"""Sampling-tree primitives shared by the geometric planners and free-space connection."""
import enum
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .physics import RigidState
from .transforms import quat_slerp, random_quaternion

logger = logging.getLogger(__name__)

ROTATION_WEIGHT = 2.0


def weighted_distance(a: RigidState, b: RigidState) -> float:
    """Nearest-neighbour metric: translation distance + 2 * half rotation angle."""
    dot = min(abs(float(np.dot(a.q, b.q))), 1.0)
    rot = float(np.arctan2(np.sqrt(max(1.0 - dot * dot, 0.0)), dot))
    return float(np.linalg.norm(a.t - b.t)) + ROTATION_WEIGHT * rot


def interpolate(a: RigidState, b: RigidState, fraction: float) -> RigidState:
    t = a.t + fraction * (b.t - a.t)
    q = a.q.copy() if np.array_equal(a.q, b.q) else quat_slerp(a.q, b.q, fraction)
    return RigidState(t=t, q=q)


def straight_line(a: RigidState, b: RigidState, step: float) -> list[RigidState]:
    """States from a (exclusive) to b (inclusive) spaced at most ``step`` apart."""
    distance = weighted_distance(a, b)
    count = max(1, int(np.ceil(distance / step)))
    return [interpolate(a, b, k / count) for k in range(1, count)] + [b]


class StateSampler:
    """Uniform translations in a box; uniform rotations, or a fixed rotation in translation mode."""

    def __init__(self, lower: np.ndarray, upper: np.ndarray, rng: np.random.Generator,
                 fixed_rotation: np.ndarray | None = None):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.rng = rng
        self.fixed_rotation = None if fixed_rotation is None else np.asarray(fixed_rotation, dtype=float)

    @classmethod
    def around(cls, lower, upper, rng, inflation: float = 0.5, fixed_rotation=None) -> "StateSampler":
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        margin = 0.5 * inflation * (upper - lower)
        return cls(lower - margin, upper + margin, rng, fixed_rotation)

    def sample(self) -> RigidState:
        t = self.rng.uniform(self.lower, self.upper)
        q = self.fixed_rotation.copy() if self.fixed_rotation is not None else random_quaternion(self.rng)
        return RigidState(t=t, q=q)


class ExtendStatus(str, enum.Enum):
    REACHED = "reached"
    ADVANCED = "advanced"
    TRAPPED = "trapped"


@dataclass
class _Growth:
    status: ExtendStatus
    index: int


class Tree:
    """Tree of states with a vectorised linear-scan nearest-neighbour query."""

    def __init__(self, root: RigidState, capacity: int = 1024):
        self.states: list[RigidState] = []
        self.parents: list[int] = []
        self._t = np.empty((capacity, 3))
        self._q = np.empty((capacity, 4))
        self.add(root, -1)

    def __len__(self):
        return len(self.states)

    def add(self, state: RigidState, parent: int) -> int:
        index = len(self.states)
        if index == len(self._t):
            self._t = np.vstack([self._t, np.empty_like(self._t)])
            self._q = np.vstack([self._q, np.empty_like(self._q)])
        self._t[index] = state.t
        self._q[index] = state.q
        self.states.append(state)
        self.parents.append(parent)
        return index

    def nearest(self, state: RigidState) -> int:
        n = len(self.states)
        trans = np.linalg.norm(self._t[:n] - state.t, axis=1)
        dot = np.minimum(np.abs(self._q[:n] @ state.q), 1.0)
        rot = np.arctan2(np.sqrt(np.maximum(1.0 - dot * dot, 0.0)), dot)
        return int(np.argmin(trans + ROTATION_WEIGHT * rot))

    def branch(self, index: int) -> list[RigidState]:
        """States from the root to ``index``."""
        chain = []
        while index >= 0:
            chain.append(self.states[index])
            index = self.parents[index]
        chain.reverse()
        return chain

    def extend(self, target: RigidState, step: float, is_free: Callable[[RigidState], bool]) -> _Growth:
        near = self.nearest(target)
        origin = self.states[near]
        distance = weighted_distance(origin, target)
        if distance <= step:
            if not is_free(target):
                return _Growth(ExtendStatus.TRAPPED, near)
            return _Growth(ExtendStatus.REACHED, self.add(target, near))
        new_state = interpolate(origin, target, step / distance)
        if not is_free(new_state):
            return _Growth(ExtendStatus.TRAPPED, near)
        return _Growth(ExtendStatus.ADVANCED, self.add(new_state, near))

    def connect(self, target: RigidState, step: float, is_free: Callable[[RigidState], bool],
                should_stop: Callable[[], bool] = lambda: False) -> _Growth:
        growth = self.extend(target, step, is_free)
        while growth.status is ExtendStatus.ADVANCED and not should_stop():
            growth = self.extend(target, step, is_free)
        return growth
