"""Signed distance grids built by fast sweeping, and point containment.

A grid stores signed distances at the nodes of an axis-aligned lattice
(negative inside, positive outside). Queries interpolate trilinearly;
points outside the lattice box get the clamped value plus their distance to
the box. Gradients are central differences with a one-cell step.
"""
import hashlib
import logging
import math
import os
import struct
from dataclasses import dataclass

import numpy as np
import trimesh
from numba import njit

from .config import config_manager

logger = logging.getLogger(__name__)

SIDECAR_MAGIC = b"SDF1"
_SIDECAR_HEADER = struct.Struct("<4s3q3d3d")

# Ray offsets (fractions of a cell) keep parity rays off mesh edges that sit on lattice rows
_RAY_OFFSETS = (
    (1.3e-4 * math.sqrt(2.0), 1.7e-4 * math.sqrt(3.0)),
    (1.1e-4 * math.sqrt(5.0), 1.9e-4 * math.sqrt(7.0)),
    (1.7e-4 * math.sqrt(11.0), 1.3e-4 * math.sqrt(13.0)),
)


# --- Numba kernels ---

@njit(cache=True)
def _point_triangle_distance(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    abx = bx - ax; aby = by - ay; abz = bz - az
    acx = cx - ax; acy = cy - ay; acz = cz - az
    apx = px - ax; apy = py - ay; apz = pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = ax, ay, az
    else:
        bpx = px - bx; bpy = py - by; bpz = pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        vc = d1 * d4 - d3 * d2
        cpx = px - cx; cpy = py - cy; cpz = pz - cz
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx = ax + v * abx; qy = ay + v * aby; qz = az + v * abz
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = cx, cy, cz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            qx = ax + w * acx; qy = ay + w * acy; qz = az + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = bx + w * (cx - bx); qy = by + w * (cy - by); qz = bz + w * (cz - bz)
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = ax + abx * v + acx * w
            qy = ay + aby * v + acy * w
            qz = az + abz * v + acz * w
    dx = px - qx; dy = py - qy; dz = pz - qz
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _projected_hit(pu, pv, au, av, bu, bv, cu, cv):
    """Returns barycentric weights of (pu, pv) in the projected triangle, or a miss."""
    e0 = (bu - au) * (pv - av) - (bv - av) * (pu - au)
    e1 = (cu - bu) * (pv - bv) - (cv - bv) * (pu - bu)
    e2 = (au - cu) * (pv - cv) - (av - cv) * (pu - cu)
    area = e0 + e1 + e2
    if area == 0.0:
        return False, 0.0, 0.0, 0.0
    if (e0 >= 0.0 and e1 >= 0.0 and e2 >= 0.0) or (e0 <= 0.0 and e1 <= 0.0 and e2 <= 0.0):
        return True, e1 / area, e2 / area, e0 / area
    return False, 0.0, 0.0, 0.0


@njit(cache=True)
def _crossing_counts(vertices, faces, origin, cell, nx, ny, nz, axis, off_u, off_v):
    """Marks, per lattice row along axis, the first node beyond each surface crossing."""
    u = (axis + 1) % 3
    v = (axis + 2) % 3
    dims = np.array([nx, ny, nz])
    counts = np.zeros((nx, ny, nz), dtype=np.int32)
    for f in range(faces.shape[0]):
        a = vertices[faces[f, 0]]
        b = vertices[faces[f, 1]]
        c = vertices[faces[f, 2]]
        umin = min(a[u], b[u], c[u]); umax = max(a[u], b[u], c[u])
        vmin = min(a[v], b[v], c[v]); vmax = max(a[v], b[v], c[v])
        ju0 = max(0, int(math.ceil((umin - origin[u] - off_u) / cell[u])))
        ju1 = min(dims[u] - 1, int(math.floor((umax - origin[u] - off_u) / cell[u])))
        jv0 = max(0, int(math.ceil((vmin - origin[v] - off_v) / cell[v])))
        jv1 = min(dims[v] - 1, int(math.floor((vmax - origin[v] - off_v) / cell[v])))
        for ju in range(ju0, ju1 + 1):
            pu = origin[u] + ju * cell[u] + off_u
            for jv in range(jv0, jv1 + 1):
                pv = origin[v] + jv * cell[v] + off_v
                hit, wa, wb, wc = _projected_hit(pu, pv, a[u], a[v], b[u], b[v], c[u], c[v])
                if not hit:
                    continue
                crossing = wa * a[axis] + wb * b[axis] + wc * c[axis]
                i = int(math.floor((crossing - origin[axis]) / cell[axis])) + 1
                if i < 0:
                    i = 0
                if i >= dims[axis]:
                    continue
                if axis == 0:
                    counts[i, ju, jv] += 1
                elif axis == 1:
                    counts[jv, i, ju] += 1
                else:
                    counts[ju, jv, i] += 1
    return counts


@njit(cache=True)
def _near_surface_distances(vertices, faces, origin, cell, nx, ny, nz):
    """Exact unsigned distances at nodes within one cell of each triangle's bounding box."""
    dist = np.full((nx, ny, nz), np.inf)
    for f in range(faces.shape[0]):
        a = vertices[faces[f, 0]]
        b = vertices[faces[f, 1]]
        c = vertices[faces[f, 2]]
        lo0 = max(0, int(math.floor((min(a[0], b[0], c[0]) - origin[0]) / cell[0])) - 1)
        hi0 = min(nx - 1, int(math.ceil((max(a[0], b[0], c[0]) - origin[0]) / cell[0])) + 1)
        lo1 = max(0, int(math.floor((min(a[1], b[1], c[1]) - origin[1]) / cell[1])) - 1)
        hi1 = min(ny - 1, int(math.ceil((max(a[1], b[1], c[1]) - origin[1]) / cell[1])) + 1)
        lo2 = max(0, int(math.floor((min(a[2], b[2], c[2]) - origin[2]) / cell[2])) - 1)
        hi2 = min(nz - 1, int(math.ceil((max(a[2], b[2], c[2]) - origin[2]) / cell[2])) + 1)
        for i in range(lo0, hi0 + 1):
            px = origin[0] + i * cell[0]
            for j in range(lo1, hi1 + 1):
                py = origin[1] + j * cell[1]
                for k in range(lo2, hi2 + 1):
                    pz = origin[2] + k * cell[2]
                    d = _point_triangle_distance(px, py, pz, a[0], a[1], a[2],
                                                 b[0], b[1], b[2], c[0], c[1], c[2])
                    if d < dist[i, j, k]:
                        dist[i, j, k] = d
    return dist


@njit(cache=True)
def _solve_eikonal(a, b, c, ha, hb, hc):
    """Godunov upwind update of |grad u| = 1 on an anisotropic lattice."""
    if a > b:
        a, b = b, a
        ha, hb = hb, ha
    if b > c:
        b, c = c, b
        hb, hc = hc, hb
    if a > b:
        a, b = b, a
        ha, hb = hb, ha
    if a == np.inf:
        return np.inf
    u = a + ha
    if u <= b:
        return u
    ia = 1.0 / (ha * ha)
    ib = 1.0 / (hb * hb)
    s1 = ia + ib
    s2 = a * ia + b * ib
    s3 = a * a * ia + b * b * ib - 1.0
    disc = s2 * s2 - s1 * s3
    if disc < 0.0:
        return u
    u = (s2 + math.sqrt(disc)) / s1
    if u <= c:
        return u
    ic = 1.0 / (hc * hc)
    s1 += ic
    s2 += c * ic
    s3 += c * c * ic
    disc = s2 * s2 - s1 * s3
    if disc < 0.0:
        return u
    return (s2 + math.sqrt(disc)) / s1


@njit(cache=True)
def _fast_sweep(dist, frozen, hx, hy, hz):
    nx, ny, nz = dist.shape
    for sweep in range(8):
        sx = 1 if (sweep & 1) == 0 else -1
        sy = 1 if (sweep & 2) == 0 else -1
        sz = 1 if (sweep & 4) == 0 else -1
        for ii in range(nx):
            i = ii if sx > 0 else nx - 1 - ii
            for jj in range(ny):
                j = jj if sy > 0 else ny - 1 - jj
                for kk in range(nz):
                    k = kk if sz > 0 else nz - 1 - kk
                    if frozen[i, j, k]:
                        continue
                    a = np.inf
                    if i > 0:
                        a = dist[i - 1, j, k]
                    if i < nx - 1 and dist[i + 1, j, k] < a:
                        a = dist[i + 1, j, k]
                    b = np.inf
                    if j > 0:
                        b = dist[i, j - 1, k]
                    if j < ny - 1 and dist[i, j + 1, k] < b:
                        b = dist[i, j + 1, k]
                    c = np.inf
                    if k > 0:
                        c = dist[i, j, k - 1]
                    if k < nz - 1 and dist[i, j, k + 1] < c:
                        c = dist[i, j, k + 1]
                    u = _solve_eikonal(a, b, c, hx, hy, hz)
                    if u < dist[i, j, k]:
                        dist[i, j, k] = u
    return dist


@njit(cache=True)
def _sample(values, origin, cell, px, py, pz):
    nx, ny, nz = values.shape
    hx = origin[0] + (nx - 1) * cell[0]
    hy = origin[1] + (ny - 1) * cell[1]
    hz = origin[2] + (nz - 1) * cell[2]
    cx = min(max(px, origin[0]), hx)
    cy = min(max(py, origin[1]), hy)
    cz = min(max(pz, origin[2]), hz)
    extra = math.sqrt((px - cx) ** 2 + (py - cy) ** 2 + (pz - cz) ** 2)

    lx = (cx - origin[0]) / cell[0]
    ly = (cy - origin[1]) / cell[1]
    lz = (cz - origin[2]) / cell[2]
    i = min(max(int(math.floor(lx)), 0), nx - 2)
    j = min(max(int(math.floor(ly)), 0), ny - 2)
    k = min(max(int(math.floor(lz)), 0), nz - 2)
    fx = min(max(lx - i, 0.0), 1.0)
    fy = min(max(ly - j, 0.0), 1.0)
    fz = min(max(lz - k, 0.0), 1.0)

    c00 = values[i, j, k] * (1.0 - fx) + values[i + 1, j, k] * fx
    c10 = values[i, j + 1, k] * (1.0 - fx) + values[i + 1, j + 1, k] * fx
    c01 = values[i, j, k + 1] * (1.0 - fx) + values[i + 1, j, k + 1] * fx
    c11 = values[i, j + 1, k + 1] * (1.0 - fx) + values[i + 1, j + 1, k + 1] * fx
    c0 = c00 * (1.0 - fy) + c10 * fy
    c1 = c01 * (1.0 - fy) + c11 * fy
    return c0 * (1.0 - fz) + c1 * fz + extra


@njit(cache=True)
def _gradient(values, origin, cell, px, py, pz):
    nx, ny, nz = values.shape
    lo = (origin[0], origin[1], origin[2])
    hi = (origin[0] + (nx - 1) * cell[0], origin[1] + (ny - 1) * cell[1], origin[2] + (nz - 1) * cell[2])
    cx = min(max(px, lo[0]), hi[0])
    cy = min(max(py, lo[1]), hi[1])
    cz = min(max(pz, lo[2]), hi[2])
    out = np.zeros(3)

    plus = min(cx + cell[0], hi[0]); minus = max(cx - cell[0], lo[0])
    if plus > minus:
        out[0] = (_sample(values, origin, cell, plus, cy, cz)
                  - _sample(values, origin, cell, minus, cy, cz)) / (plus - minus)
    plus = min(cy + cell[1], hi[1]); minus = max(cy - cell[1], lo[1])
    if plus > minus:
        out[1] = (_sample(values, origin, cell, cx, plus, cz)
                  - _sample(values, origin, cell, cx, minus, cz)) / (plus - minus)
    plus = min(cz + cell[2], hi[2]); minus = max(cz - cell[2], lo[2])
    if plus > minus:
        out[2] = (_sample(values, origin, cell, cx, cy, plus)
                  - _sample(values, origin, cell, cx, cy, minus)) / (plus - minus)
    return out


@njit(cache=True)
def _sample_many(values, origin, cell, points):
    n = points.shape[0]
    out = np.empty(n)
    for p in range(n):
        out[p] = _sample(values, origin, cell, points[p, 0], points[p, 1], points[p, 2])
    return out


@njit(cache=True)
def _gradient_many(values, origin, cell, points):
    n = points.shape[0]
    out = np.empty((n, 3))
    for p in range(n):
        out[p] = _gradient(values, origin, cell, points[p, 0], points[p, 1], points[p, 2])
    return out


@njit(cache=True)
def _parity_votes(vertices, faces, points, offsets):
    """Counts, per point, how many of three axis rays cross the surface an odd number of times."""
    n = points.shape[0]
    votes = np.zeros(n, dtype=np.int32)
    for axis in range(3):
        u = (axis + 1) % 3
        v = (axis + 2) % 3
        for p in range(n):
            pu = points[p, u] + offsets[axis, 0]
            pv = points[p, v] + offsets[axis, 1]
            crossings = 0
            for f in range(faces.shape[0]):
                a = vertices[faces[f, 0]]
                b = vertices[faces[f, 1]]
                c = vertices[faces[f, 2]]
                if pu < min(a[u], b[u], c[u]) or pu > max(a[u], b[u], c[u]):
                    continue
                if pv < min(a[v], b[v], c[v]) or pv > max(a[v], b[v], c[v]):
                    continue
                hit, wa, wb, wc = _projected_hit(pu, pv, a[u], a[v], b[u], b[v], c[u], c[v])
                if hit and wa * a[axis] + wb * b[axis] + wc * c[axis] > points[p, axis]:
                    crossings += 1
            if crossings % 2 == 1:
                votes[p] += 1
    return votes


# --- Grid type ---

@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Immutable signed-distance lattice. ``values[i, j, k]`` sits at ``origin + (i, j, k) * cell_size``."""
    origin: np.ndarray
    cell_size: np.ndarray
    values: np.ndarray
    padding: int = 0

    def __post_init__(self):
        origin = np.ascontiguousarray(self.origin, dtype=np.float64)
        cell = np.ascontiguousarray(self.cell_size, dtype=np.float64)
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError(f"SDF values must be a 3D array with at least 2 nodes per axis, got shape {values.shape}")
        for array in (origin, cell, values):
            array.flags.writeable = False
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "cell_size", cell)
        object.__setattr__(self, "values", values)
        # float64 copy for the kernels
        object.__setattr__(self, "_values64", values.astype(np.float64))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    @property
    def lower(self) -> np.ndarray:
        return self.origin

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.dims) - 1) * self.cell_size

    def distance(self, point) -> float:
        p = np.asarray(point, dtype=np.float64)
        return float(_sample(self._values64, self.origin, self.cell_size, p[0], p[1], p[2]))

    def gradient(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        return _gradient(self._values64, self.origin, self.cell_size, p[0], p[1], p[2])

    def distances(self, points: np.ndarray) -> np.ndarray:
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return _sample_many(self._values64, self.origin, self.cell_size, points)

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        return _gradient_many(self._values64, self.origin, self.cell_size, points)

    def inside_box_mask(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Points within the lattice box (grown by margin). Points outside always have positive distance."""
        return np.all((points >= self.lower - margin) & (points <= self.upper + margin), axis=1)


# --- Construction ---

def cell_size_for_extents(extents, max_cell: float | None = None, cells_per_extent: int | None = None) -> np.ndarray:
    """Per-axis cell size min(max_cell, L_i / cells_per_extent)."""
    if max_cell is None:
        max_cell = config_manager.get("sdf_max_cell", 0.05)
    if cells_per_extent is None:
        cells_per_extent = config_manager.get("sdf_cells_per_extent", 20)
    extents = np.asarray(extents, dtype=np.float64)
    cell = np.minimum(max_cell, extents / float(cells_per_extent))
    # Zero-extent axis only happens for degenerate input; keep the lattice finite
    return np.where(cell > 0.0, cell, max_cell)


def _cache_key(mesh: trimesh.Trimesh, max_cell: float, cells_per_extent: int, padding: int) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(mesh.vertices, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(mesh.faces, dtype=np.int64).tobytes())
    digest.update(repr((float(max_cell), int(cells_per_extent), int(padding))).encode("utf-8"))
    return digest.hexdigest()


def build_sdf_grid(mesh: trimesh.Trimesh, padding: int | None = None, max_cell: float | None = None,
                   cells_per_extent: int | None = None, cache_dir: str | None = None) -> SdfGrid:
    """Builds the signed distance grid of a watertight mesh.

    Nodes within one cell of the surface get exact point-triangle distances;
    eight Gauss-Seidel sweeps propagate them outward. The sign comes from a
    majority vote of ray parity along the three axes.

    Raises:
        ValueError: the mesh is empty or not watertight.
    """
    if mesh is None or len(mesh.faces) == 0:
        raise ValueError("Cannot build an SDF for an empty mesh")
    if not mesh.is_watertight:
        raise ValueError(
            f"Cannot build an SDF for a non-watertight mesh ({len(mesh.vertices)} vertices, "
            f"{len(mesh.faces)} faces): inside/outside sign is undefined")

    if padding is None:
        padding = config_manager.get("sdf_padding", 2)
    if max_cell is None:
        max_cell = config_manager.get("sdf_max_cell", 0.05)
    if cells_per_extent is None:
        cells_per_extent = config_manager.get("sdf_cells_per_extent", 20)
    if cache_dir is None:
        cache_dir = config_manager.get("sdf_cache_dir")
    padding = max(int(padding), 0)

    sidecar = None
    if cache_dir:
        sidecar = os.path.join(cache_dir, f"{_cache_key(mesh, max_cell, cells_per_extent, padding)}.sdf")
        if os.path.exists(sidecar):
            try:
                grid = load_sdf(sidecar, padding=padding)
                logger.debug(f"Loaded cached SDF {sidecar}")
                return grid
            except (OSError, ValueError) as e:
                logger.warning(f"Ignoring unreadable SDF cache file {sidecar}: {e}")

    vertices = np.ascontiguousarray(mesh.vertices, dtype=np.float64)
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    bmin = vertices.min(axis=0)
    bmax = vertices.max(axis=0)
    extents = bmax - bmin
    cell = cell_size_for_extents(extents, max_cell, cells_per_extent)
    dims = np.ceil(extents / cell - 1e-9).astype(np.int64) + 1 + 2 * padding
    dims = np.maximum(dims, 2)
    origin = bmin - padding * cell
    nx, ny, nz = (int(n) for n in dims)

    dist = _near_surface_distances(vertices, faces, origin, cell, nx, ny, nz)
    frozen = dist <= float(cell.min())
    dist = _fast_sweep(dist, frozen, float(cell[0]), float(cell[1]), float(cell[2]))

    votes = np.zeros((nx, ny, nz), dtype=np.int32)
    for axis, (off_u, off_v) in enumerate(_RAY_OFFSETS):
        u = (axis + 1) % 3
        v = (axis + 2) % 3
        counts = _crossing_counts(vertices, faces, origin, cell, nx, ny, nz, axis,
                                  off_u * cell[u], off_v * cell[v])
        votes += (np.cumsum(counts, axis=axis) % 2).astype(np.int32)
    inside = votes >= 2

    values = np.where(inside, -dist, dist)
    grid = SdfGrid(origin=origin, cell_size=cell, values=values, padding=padding)
    logger.debug(f"Built SDF grid dims={grid.dims} cell={np.round(cell, 5).tolist()} "
                 f"inside_nodes={int(inside.sum())}")

    if sidecar:
        try:
            save_sdf(grid, sidecar)
        except OSError as e:
            logger.warning(f"Could not write SDF cache file {sidecar}: {e}")
    return grid


def query_distance(grid: SdfGrid, point) -> float:
    return grid.distance(point)


def query_gradient(grid: SdfGrid, point) -> np.ndarray:
    return grid.gradient(point)


def contains(mesh: trimesh.Trimesh, points: np.ndarray) -> np.ndarray:
    """Inside test for a watertight mesh by majority vote of three axis-ray parities."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    vertices = np.ascontiguousarray(mesh.vertices, dtype=np.float64)
    faces = np.ascontiguousarray(mesh.faces, dtype=np.int64)
    scale = max(float(np.ptp(vertices, axis=0).max()), 1e-9)
    offsets = np.array(_RAY_OFFSETS) * 1e-2 * scale
    return _parity_votes(vertices, faces, points, offsets) >= 2


# --- Sidecar files ---

def save_sdf(grid: SdfGrid, filepath: str):
    """Writes the binary sidecar: header then row-major little-endian float32 values."""
    directory = os.path.dirname(filepath)
    if directory:
        os.makedirs(directory, exist_ok=True)
    header = _SIDECAR_HEADER.pack(SIDECAR_MAGIC, *grid.dims, *grid.origin.tolist(), *grid.cell_size.tolist())
    tmp_path = f"{filepath}.tmp{os.getpid()}"
    with open(tmp_path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes(order="C"))
    os.replace(tmp_path, filepath)


def load_sdf(filepath: str, padding: int = 0) -> SdfGrid:
    """Reads a sidecar. The header has no padding field; callers that know it (the cache key does) pass it in."""
    with open(filepath, "rb") as f:
        raw = f.read()
    if len(raw) < _SIDECAR_HEADER.size:
        raise ValueError(f"SDF file {filepath} is truncated")
    magic, nx, ny, nz, ox, oy, oz, cx, cy, cz = _SIDECAR_HEADER.unpack_from(raw)
    if magic != SIDECAR_MAGIC:
        raise ValueError(f"SDF file {filepath} has bad magic {magic!r}")
    body = np.frombuffer(raw, dtype="<f4", offset=_SIDECAR_HEADER.size)
    if body.size != nx * ny * nz:
        raise ValueError(f"SDF file {filepath} holds {body.size} values, expected {nx * ny * nz}")
    return SdfGrid(origin=np.array([ox, oy, oz]), cell_size=np.array([cx, cy, cz]),
                   values=body.reshape((nx, ny, nz)), padding=max(int(padding), 0))
