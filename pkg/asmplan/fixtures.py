"""Synthetic assemblies with known answers, used by tests and the benchmark.

Blocky parts are unions of axis-aligned boxes (minus holes), triangulated
on a rectilinear cell grid so each part comes out as one watertight,
consistently wound surface. All parts are subdivided before use so that
vertex contacts resolve the features.
"""
import logging
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import trimesh

from . import mesh_io
from .assembly import Assembly
from .pipeline import subdivide_mesh

logger = logging.getLogger(__name__)

FIXTURE_EDGE = 0.25

Box = tuple[Sequence[float], Sequence[float]]


# --- Geometry helpers ---

def rectilinear_solid(solid: Sequence[Box], holes: Sequence[Box] = ()) -> trimesh.Trimesh:
    """Surface of the union of ``solid`` boxes minus the union of ``holes``.

    Boxes must not meet along an edge only, or the surface is not manifold.
    """
    boxes = list(solid) + list(holes)
    coords = [np.unique(np.round([b[side][axis] for b in boxes for side in (0, 1)], 9)) for axis in range(3)]
    centers = [0.5 * (c[1:] + c[:-1]) for c in coords]
    cx, cy, cz = np.meshgrid(*centers, indexing="ij")

    def covered(box_list) -> np.ndarray:
        mask = np.zeros(cx.shape, dtype=bool)
        for lo, hi in box_list:
            mask |= ((cx > lo[0]) & (cx < hi[0]) & (cy > lo[1]) & (cy < hi[1]) & (cz > lo[2]) & (cz < hi[2]))
        return mask

    filled = covered(solid) & ~covered(holes)
    cells = filled.shape
    node_shape = tuple(n + 1 for n in cells)
    triangles = []
    for a in range(3):
        u, v = (a + 1) % 3, (a + 2) % 3
        pad = [(0, 0)] * 3
        pad[a] = (1, 1)
        padded = np.pad(filled, pad)
        below = np.take(padded, np.arange(0, cells[a] + 1), axis=a)
        above = np.take(padded, np.arange(1, cells[a] + 2), axis=a)
        for mask, outward in ((below & ~above, True), (~below & above, False)):
            index = np.nonzero(mask)

            def corner(du: int, dv: int) -> np.ndarray:
                ijk = [index[0].copy(), index[1].copy(), index[2].copy()]
                ijk[u] += du
                ijk[v] += dv
                return np.ravel_multi_index(ijk, node_shape)

            c0, c1, c2, c3 = corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)
            if outward:
                triangles += [np.stack([c0, c1, c2], axis=1), np.stack([c0, c2, c3], axis=1)]
            else:
                triangles += [np.stack([c0, c2, c1], axis=1), np.stack([c0, c3, c2], axis=1)]

    nx, ny, nz = np.meshgrid(*coords, indexing="ij")
    vertices = np.stack([nx.ravel(), ny.ravel(), nz.ravel()], axis=1)
    mesh = trimesh.Trimesh(vertices=vertices, faces=np.vstack(triangles), process=False)
    mesh.remove_unreferenced_vertices()
    return mesh


def _translated(mesh: trimesh.Trimesh, offset) -> trimesh.Trimesh:
    moved = mesh.copy()
    moved.apply_translation(offset)
    return moved


def _cube(half: float, center=(0.0, 0.0, 0.0)) -> trimesh.Trimesh:
    c = np.asarray(center, dtype=float)
    return rectilinear_solid([(c - half, c + half)])


# --- Fixtures (part id -> world mesh, before subdivision) ---

def peg_plate() -> dict[str, trimesh.Trimesh]:
    """1x1x3 peg through a 1.2 square hole; exits straight along z."""
    plate = rectilinear_solid([((-2, -2, -0.5), (2, 2, 0.5))], [((-0.6, -0.6, -0.5), (0.6, 0.6, 0.5))])
    peg = rectilinear_solid([((-0.5, -0.5, -1.5), (0.5, 0.5, 1.5))])
    return {"peg": peg, "plate": plate}


def ring_shaft() -> dict[str, trimesh.Trimesh]:
    """Square ring with 0.05 clearance around a long square shaft."""
    shaft = rectilinear_solid([((-0.3, -0.3, -2.5), (0.3, 0.3, 2.5))])
    ring = rectilinear_solid([((-1, -1, -0.25), (1, 1, 0.25))], [((-0.35, -0.35, -0.25), (0.35, 0.35, 0.25))])
    return {"ring": ring, "shaft": shaft}


def long_cylinder_ring(clearance: float = 0.05, sections: int = 24) -> dict[str, trimesh.Trimesh]:
    """Round ring on a cylinder of length 8; the ring slides off along the axis."""
    cylinder = trimesh.creation.cylinder(radius=0.5, height=8.0, sections=sections)
    ring = trimesh.creation.annulus(r_min=0.5 + clearance, r_max=1.0, height=0.6, sections=sections)
    return {"cylinder": cylinder, "ring": ring}


_HOUSING_SOLID = [((-1.2, -1.2, -1.2), (3.0, 1.2, 2.8))]
_HOUSING_TUNNELS = [((-0.4, -0.4, -0.4), (0.4, 0.4, 2.0)), ((-0.4, -0.4, 1.2), (3.0, 0.4, 2.0))]


def l_channel() -> dict[str, trimesh.Trimesh]:
    """Block at the bottom of an L-shaped tunnel: up along z, then out along +x."""
    housing = rectilinear_solid(_HOUSING_SOLID, _HOUSING_TUNNELS)
    return {"channel": _cube(0.3), "housing": housing}


def l_cover() -> dict[str, trimesh.Trimesh]:
    """The L-channel with a plate over the tunnel mouth; the plate comes off first."""
    meshes = l_channel()
    meshes["cover"] = rectilinear_solid([((3.05, -0.8, 0.8), (3.4, 0.8, 2.4))])
    return meshes


def twist_lock() -> dict[str, trimesh.Trimesh]:
    """Bar under a slotted ceiling; it must turn a quarter counter-clockwise before rising.

    Two stop pins block the clockwise turn and stop the counter-clockwise
    one just past alignment with the slot.
    """
    bar = rectilinear_solid([((-0.4, -2.0, 0.05), (0.4, 2.0, 0.85))])
    chamber = rectilinear_solid([
        ((-2.6, -2.6, -0.4), (2.6, 2.6, 0.0)), # floor
        ((-2.6, -2.6, 0.0), (-2.2, 2.6, 0.9)), # walls
        ((2.2, -2.6, 0.0), (2.6, 2.6, 0.9)),
        ((-2.2, -2.6, 0.0), (2.2, -2.2, 0.9)),
        ((-2.2, 2.2, 0.0), (2.2, 2.6, 0.9)),
        ((-2.6, 0.5, 0.9), (2.6, 2.6, 1.3)), # ceiling around the slot
        ((-2.6, -2.6, 0.9), (2.6, -0.5, 1.3)),
        ((-2.6, -0.5, 0.9), (-2.1, 0.5, 1.3)),
        ((2.1, -0.5, 0.9), (2.6, 0.5, 1.3)),
        ((1.5, 0.42, 0.0), (1.9, 0.8, 0.9)), # stop pins
        ((-1.9, -0.8, 0.0), (-1.5, -0.42, 0.9)),
    ])
    return {"bar": bar, "chamber": chamber}


def cap_pin_base() -> dict[str, trimesh.Trimesh]:
    """Pin through a base, both held by a cap whose foot hooks under the base.

    The cap slides off along +x; then the pin lifts out; the base is last.
    """
    base = rectilinear_solid([((-1.5, -1.5, 0.0), (1.5, 1.5, 1.0))], [((-0.4, -0.4, 0.0), (0.4, 0.4, 1.0))])
    pin = rectilinear_solid([((-0.3, -0.3, 0.1), (0.3, 0.3, 1.05)), ((-0.9, -0.9, 1.05), (0.9, 0.9, 1.5))])
    cap = rectilinear_solid([
        ((-1.1, -1.1, 1.55), (1.9, 1.1, 1.9)),
        ((1.55, -1.1, -0.4), (1.9, 1.1, 1.55)),
        ((1.0, -1.1, -0.4), (1.55, 1.1, -0.05)),
    ])
    return {"1-pin": pin, "2-base": base, "3-cap": cap}


def closed_box() -> dict[str, trimesh.Trimesh]:
    """Cube sealed inside a hollow box; no disassembly exists."""
    shell = rectilinear_solid([((-1, -1, -1), (1, 1, 1))], [((-0.8, -0.8, -0.8), (0.8, 0.8, 0.8))])
    return {"box": shell, "inner": _cube(0.7)}


def interlock() -> dict[str, trimesh.Trimesh]:
    """A bar threaded on a bolt inside a fixed frame, with 0.01 gaps above and below.

    The bar must turn a quarter counter-clockwise until the stop pins hold
    it under the ceiling slot while the bolt lifts it out through the slot.
    Alone, the bar turns but rises into the bolt head, and the bolt moves
    only by the gaps.
    """
    frame = rectilinear_solid([
        ((-2.6, -2.6, -0.4), (2.6, 2.6, 0.0)),
        ((-2.6, -2.6, 0.0), (-2.2, 2.6, 1.23)),
        ((2.2, -2.6, 0.0), (2.6, 2.6, 1.23)),
        ((-2.2, -2.6, 0.0), (2.2, -2.2, 1.23)),
        ((-2.2, 2.2, 0.0), (2.2, 2.6, 1.23)),
        # Ceiling around the slot |x| < 2.1, |y| < 0.5
        ((-2.6, 0.5, 1.23), (2.6, 2.6, 1.63)),
        ((-2.6, -2.6, 1.23), (2.6, -0.5, 1.63)),
        ((-2.6, -0.5, 1.23), (-2.1, 0.5, 1.63)),
        ((2.1, -0.5, 1.23), (2.6, 0.5, 1.63)),
        # Stop pins
        ((1.5, 0.42, 0.0), (1.9, 0.8, 1.23)),
        ((-1.9, -0.8, 0.0), (-1.5, -0.42, 1.23)),
    ])
    bar = rectilinear_solid([((-0.4, -2.0, 0.42), (0.4, 2.0, 1.22))], [((-0.25, -0.25, 0.42), (0.25, 0.25, 1.22))])
    bolt = rectilinear_solid([
        ((-0.8, -0.45, 0.01), (0.8, 0.45, 0.41)),
        ((-0.1, -0.1, 0.41), (0.1, 0.1, 1.68)),
        ((-0.35, -0.35, 1.68), (0.35, 0.35, 1.98)),
    ])
    return {"bar": bar, "bolt": bolt, "frame": frame}


def welded_pair() -> dict[str, trimesh.Trimesh]:
    """A rod through a ring, both inside a frame whose cross-shaped mouth
    only lets them out together.

    Either part moving alone is caught by the other; moving up side by
    side, the ring passes the narrow arm of the mouth and the rod the long one.
    """
    frame = rectilinear_solid([((-2.25, -1.4, -0.4), (2.25, 1.4, 2.0))], [
        ((-1.85, -1.0, 0.0), (1.85, 1.0, 1.6)),
        ((-1.55, -0.35, 1.6), (1.55, 0.35, 2.0)),
        ((-0.3, -0.75, 1.6), (0.3, 0.75, 2.0)),
    ])
    rod = rectilinear_solid([((-1.5, -0.3, 0.45), (1.5, 0.3, 1.05))])
    ring = rectilinear_solid([((-0.25, -0.7, 0.05), (0.25, 0.7, 1.45))], [((-0.25, -0.35, 0.4), (0.25, 0.35, 1.1))])
    return {"frame": frame, "ring": ring, "rod": rod}


def free_cubes(count: int = 3) -> dict[str, trimesh.Trimesh]:
    """Loose cubes resting on a plane."""
    meshes = {"plane": rectilinear_solid([((-5, -2, -0.5), (5, 2, 0.0))])}
    for index, x in enumerate(np.linspace(-3.0, 3.0, count)):
        meshes[f"cube-{index}"] = _cube(0.4, (x, 0.0, 0.42))
    return meshes


def progressive_demo() -> dict[str, trimesh.Trimesh]:
    """Six parts: two free at depth 1 (cap, cube), two blocked at first (pin, base),
    and a depth-2 channel block inside its housing."""
    meshes = {pid: _translated(mesh, (0.0, 4.0, 0.0)) for pid, mesh in cap_pin_base().items()}
    meshes.update({pid: _translated(mesh, (0.0, -4.0, 0.0)) for pid, mesh in l_channel().items()})
    meshes["cube"] = _cube(0.4)
    return meshes


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    build: Callable[[], dict[str, trimesh.Trimesh]]
    solvable: bool = True
    group_size: int = 1


FIXTURES: dict[str, FixtureSpec] = {spec.name: spec for spec in (
    FixtureSpec("peg_plate", peg_plate),
    FixtureSpec("ring_shaft", ring_shaft),
    FixtureSpec("l_channel", l_channel),
    FixtureSpec("twist_lock", twist_lock),
    FixtureSpec("cap_pin_base", cap_pin_base),
    FixtureSpec("interlock", interlock, group_size=2),
    FixtureSpec("welded_pair", welded_pair, group_size=2),
    FixtureSpec("closed_box", closed_box, solvable=False),
    FixtureSpec("long_cylinder_ring", long_cylinder_ring),
    FixtureSpec("l_cover", l_cover),
    FixtureSpec("free_cubes", free_cubes),
    FixtureSpec("progressive_demo", progressive_demo),
)}

# The seven fixtures of the standard benchmark corpus
BENCHMARK_FIXTURES = ("peg_plate", "ring_shaft", "l_channel", "twist_lock", "cap_pin_base", "interlock", "closed_box")


def fixture_meshes(name: str, max_edge: float = FIXTURE_EDGE) -> dict[str, trimesh.Trimesh]:
    if name not in FIXTURES:
        raise ValueError(f"Unknown fixture '{name}'. Known: {', '.join(sorted(FIXTURES))}")
    return {pid: subdivide_mesh(mesh, max_edge) for pid, mesh in FIXTURES[name].build().items()}


def build_fixture(name: str, sdf_options: dict | None = None) -> Assembly:
    return Assembly.from_meshes(fixture_meshes(name), source_id=name, sdf_options=sdf_options)


def write_fixture(name: str, directory: str) -> str:
    meshes = fixture_meshes(name)
    spec = FIXTURES[name]
    path = mesh_io.write_assembly(meshes, directory, name,
                                  extra={"solvable": spec.solvable, "group_size": spec.group_size})
    logger.info(f"Wrote fixture '{name}' ({len(meshes)} parts) to {directory}")
    return path


def write_fixtures(root: str, names: Sequence[str] | None = None) -> list[str]:
    """Writes each named fixture (default: the benchmark corpus) into ``root/<name>/``."""
    names = list(names or BENCHMARK_FIXTURES)
    return [write_fixture(name, os.path.join(root, name)) for name in names]
