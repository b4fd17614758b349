import logging
from dataclasses import dataclass

import numpy as np
import trimesh
from scipy.optimize import linprog
from scipy.spatial import ConvexHull as _QhullHull

try:
    from scipy.spatial import QhullError
except ImportError: # scipy < 1.8
    from scipy.spatial.qhull import QhullError

logger = logging.getLogger(__name__)

DEGENERATE_INFLATION = 1e-6
TOUCH_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class ConvexHull:
    """Convex hull as vertices plus outward planes ``normal . x + offset <= 0``."""
    vertices: np.ndarray
    faces: np.ndarray
    equations: np.ndarray

    def __post_init__(self):
        for array in (self.vertices, self.faces, self.equations):
            array.flags.writeable = False

    @property
    def normals(self) -> np.ndarray:
        return self.equations[:, :3]

    @property
    def offsets(self) -> np.ndarray:
        return self.equations[:, 3]

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def volume(self) -> float:
        return float(_QhullHull(self.vertices).volume)

    def contains(self, points: np.ndarray, tol: float = TOUCH_TOLERANCE) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all(points @ self.normals.T + self.offsets <= tol, axis=1)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ConvexHull":
        """Rigidly moved copy. Planes transform with the rotation; offsets shift by the translation."""
        vertices = self.vertices @ rotation.T + translation
        normals = self.normals @ rotation.T
        offsets = self.offsets - normals @ translation
        equations = np.column_stack([normals, offsets])
        return ConvexHull(vertices=vertices, faces=self.faces.copy(), equations=equations)

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices.copy(), faces=self.faces.copy(), process=False)


def _inflate_degenerate(points: np.ndarray) -> np.ndarray:
    """Adds copies of the points shifted along every near-degenerate principal axis."""
    centered = points - points.mean(axis=0)
    _, singular, vt = np.linalg.svd(centered, full_matrices=True)
    singular = np.concatenate([singular, np.zeros(3 - len(singular))])
    scale = max(float(singular.max()), 1.0)
    extra = [points]
    for axis_index in range(3):
        if singular[axis_index] <= 1e-9 * scale:
            extra.append(points + DEGENERATE_INFLATION * vt[axis_index])
    if len(extra) == 1:
        # Qhull failed for another reason, so nudge along the thinnest axis
        extra.append(points + DEGENERATE_INFLATION * vt[2])
    return np.vstack(extra)


def hull_from_points(points: np.ndarray) -> ConvexHull:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("Cannot build a convex hull of zero points")
    if len(points) < 4:
        points = _inflate_degenerate(np.vstack([points, points.mean(axis=0) + DEGENERATE_INFLATION]))
    try:
        qhull = _QhullHull(points)
    except QhullError:
        logger.warning(f"Degenerate hull input ({len(points)} points), inflating by {DEGENERATE_INFLATION}")
        points = _inflate_degenerate(points)
        qhull = _QhullHull(points, qhull_options="QJ")
    used = np.unique(qhull.simplices)
    remap = np.full(len(points), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return ConvexHull(
        vertices=np.ascontiguousarray(points[used]),
        faces=remap[qhull.simplices],
        equations=np.ascontiguousarray(qhull.equations),
    )


def compute_convex_hull(mesh: trimesh.Trimesh) -> ConvexHull:
    return hull_from_points(np.asarray(mesh.vertices, dtype=float))


def _separated_along(a: ConvexHull, b: ConvexHull, normals: np.ndarray, tol: float) -> bool:
    proj_a = a.vertices @ normals.T
    proj_b = b.vertices @ normals.T
    gap = np.maximum(proj_b.min(axis=0) - proj_a.max(axis=0), proj_a.min(axis=0) - proj_b.max(axis=0))
    return bool(np.any(gap > tol))


def hulls_intersect(a: ConvexHull, b: ConvexHull, tol: float = TOUCH_TOLERANCE) -> bool:
    """True when the hulls overlap or touch (gap up to tol)."""
    a_lo, a_hi = a.bounds
    b_lo, b_hi = b.bounds
    if np.any(a_lo > b_hi + tol) or np.any(b_lo > a_hi + tol):
        return False
    if _separated_along(a, b, a.normals, tol) or _separated_along(a, b, b.normals, tol):
        return False

    # Face normals miss edge-edge separating axes, so settle the rest exactly:
    # minimise s subject to both hulls' planes relaxed by s. s* > 0 means disjoint.
    a_scale = np.linalg.norm(a.normals, axis=1)
    b_scale = np.linalg.norm(b.normals, axis=1)
    planes = np.vstack([a.equations / a_scale[:, None], b.equations / b_scale[:, None]])
    a_ub = np.column_stack([planes[:, :3], -np.ones(len(planes))])
    b_ub = -planes[:, 3]
    result = linprog(c=[0.0, 0.0, 0.0, 1.0], A_ub=a_ub, b_ub=b_ub,
                     bounds=[(None, None)] * 4, method="highs")
    if not result.success:
        logger.warning(f"Hull intersection LP did not converge ({result.message}); treating as intersecting")
        return True
    return bool(result.x[3] <= tol)
