"""Raw CAD assemblies to planner-ready ones.

Steps, in order: load, drop non-watertight meshes, drop exact duplicates,
drop overlapping parts, drop thin parts, keep the largest connected subset,
normalize to the target box, flag for manual review, subdivide.
"""
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import trimesh
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import data_handler, mesh_io
from .assembly import Assembly
from .config import RUN_START_TIME_UTC, config_manager
from .hull import compute_convex_hull, hulls_intersect
from .sdf import contains

logger = logging.getLogger(__name__)

DUPLICATE_TOLERANCE = 1e-9
REVIEW_FLAG_NAME = "REVIEW_REQUIRED"
_MAX_SAMPLING_ROUNDS = 1000


@dataclass(frozen=True)
class PipelineParams:
    normalize_size: float = 10.0
    max_edge_length: float = 0.5
    overlap_threshold: float = 0.1
    overlap_samples: int = 10000
    thin_ratio: float = 0.01
    seed: int = 0

    @classmethod
    def from_config(cls, seed: int = 0) -> "PipelineParams":
        return cls(
            normalize_size=config_manager.get("normalize_size"),
            max_edge_length=config_manager.get("max_edge_length"),
            overlap_threshold=config_manager.get("overlap_threshold"),
            overlap_samples=config_manager.get("overlap_samples"),
            thin_ratio=config_manager.get("thin_ratio"),
            seed=seed,
        )


@dataclass
class PipelineReport:
    source_id: str
    input_parts: list[str] = field(default_factory=list)
    removed: dict[str, dict] = field(default_factory=dict) # part id -> {"step", "reason"}
    final_parts: list[str] = field(default_factory=list)
    scale: float = 1.0
    initial_penetration: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    review_required: bool = True

    def drop(self, part_id: str, step: str, reason: str):
        self.removed[part_id] = {"step": step, "reason": reason}
        logger.warning(f"[{self.source_id}] dropped '{part_id}' at {step}: {reason}")

    def warn(self, message: str):
        self.warnings.append(message)
        logger.warning(f"[{self.source_id}] {message}")

    def removal_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self.removed.values():
            counts[entry["step"]] = counts.get(entry["step"], 0) + 1
        return counts

    def to_record(self) -> dict:
        return {
            "source_id": self.source_id,
            "input_parts": list(self.input_parts),
            "removed": dict(self.removed),
            "removal_counts": self.removal_counts(),
            "final_parts": list(self.final_parts),
            "final_part_count": len(self.final_parts),
            "scale": self.scale,
            "initial_penetration": dict(self.initial_penetration),
            "warnings": list(self.warnings),
            "review_required": self.review_required,
            "created_utc": RUN_START_TIME_UTC.isoformat(),
        }


class EmptyAssemblyError(ValueError):
    """Raised when preprocessing removes every part; carries the report."""

    def __init__(self, message: str, report: PipelineReport):
        super().__init__(message)
        self.report = report


# --- Single-mesh checks ---

def is_watertight(mesh: trimesh.Trimesh) -> bool:
    """Every edge shared by exactly two faces, with consistent winding."""
    if len(mesh.faces) == 0:
        return False
    return bool(mesh.is_watertight and mesh.is_winding_consistent)


def _sample_interior(mesh: trimesh.Trimesh, count: int, rng: np.random.Generator) -> np.ndarray:
    lower, upper = mesh.bounds
    batch = max(count, 1024)
    accepted = []
    total = 0
    for _ in range(_MAX_SAMPLING_ROUNDS):
        candidates = rng.uniform(lower, upper, size=(batch, 3))
        inside = candidates[contains(mesh, candidates)]
        accepted.append(inside)
        total += len(inside)
        if total >= count:
            break
    points = np.vstack(accepted)
    if len(points) < count:
        raise ValueError(f"Could only sample {len(points)} of {count} interior points")
    return points[:count]


def overlap_ratio(mesh_a: trimesh.Trimesh, mesh_b: trimesh.Trimesh, samples: int | None = None,
                  seed: int = 0) -> float:
    """Monte-Carlo fraction of A's interior that lies inside B."""
    if samples is None:
        samples = config_manager.get("overlap_samples")
    for name, mesh in (("A", mesh_a), ("B", mesh_b)):
        if abs(float(mesh.volume)) < 1e-12:
            raise ValueError(f"Mesh {name} has zero volume; overlap is undefined")
    a_lo, a_hi = mesh_a.bounds
    b_lo, b_hi = mesh_b.bounds
    if np.any(a_lo > b_hi) or np.any(b_lo > a_hi):
        return 0.0
    rng = np.random.default_rng(seed)
    points = _sample_interior(mesh_a, samples, rng)
    return float(np.count_nonzero(contains(mesh_b, points))) / len(points)


def subdivide_mesh(mesh: trimesh.Trimesh, max_edge: float | None = None, max_rounds: int = 64) -> trimesh.Trimesh:
    """Conforming longest-edge bisection until no edge is longer than ``max_edge``.

    New vertices are edge midpoints, so the surface is unchanged. A mesh that
    is already fine enough is returned as is.
    """
    if max_edge is None:
        max_edge = config_manager.get("max_edge_length")
    limit = max_edge * (1.0 + 1e-12)
    vertices = np.asarray(mesh.vertices, dtype=float)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    changed = False

    for _ in range(max_rounds):
        face_edges = faces[:, [[0, 1], [1, 2], [2, 0]]] # (F, 3, 2)
        lengths = np.linalg.norm(vertices[face_edges[:, :, 1]] - vertices[face_edges[:, :, 0]], axis=2)
        if lengths.max() <= limit:
            break
        changed = True
        n_vertices = len(vertices)
        keys = np.sort(face_edges, axis=2)
        codes = keys[:, :, 0] * n_vertices + keys[:, :, 1]
        unique_codes, inverse = np.unique(codes.ravel(), return_inverse=True)
        inverse = inverse.reshape(-1, 3)
        longest = np.argmax(lengths, axis=1)
        rows = np.arange(len(faces))

        marked = np.zeros(len(unique_codes), dtype=bool)
        marked[inverse[lengths > limit]] = True
        # Closure: a face touched by a split must also split its longest edge
        while True:
            needs = marked[inverse].any(axis=1) & ~marked[inverse[rows, longest]]
            if not needs.any():
                break
            marked[inverse[rows[needs], longest[needs]]] = True

        split = np.flatnonzero(marked)
        midpoint_of = np.full(len(unique_codes), -1, dtype=np.int64)
        midpoint_of[split] = n_vertices + np.arange(len(split))
        ends_a = unique_codes[split] // n_vertices
        ends_b = unique_codes[split] % n_vertices
        vertices = np.vstack([vertices, 0.5 * (vertices[ends_a] + vertices[ends_b])])

        new_faces = []
        touched = marked[inverse].any(axis=1)
        for f in np.flatnonzero(touched):
            k = int(longest[f])
            a, b, c = faces[f, k], faces[f, (k + 1) % 3], faces[f, (k + 2) % 3]
            m = midpoint_of[inverse[f, k]]
            n = midpoint_of[inverse[f, (k + 1) % 3]] # on b-c
            p = midpoint_of[inverse[f, (k + 2) % 3]] # on c-a
            if n >= 0:
                new_faces += [(m, b, n), (m, n, c)]
            else:
                new_faces.append((m, b, c))
            if p >= 0:
                new_faces += [(a, m, p), (p, m, c)]
            else:
                new_faces.append((a, m, c))
        faces = np.vstack([faces[~touched], np.asarray(new_faces, dtype=np.int64).reshape(-1, 3)])
    else:
        logger.warning(f"Subdivision stopped after {max_rounds} rounds with edges above {max_edge}")

    if not changed:
        return mesh
    return trimesh.Trimesh(vertices=vertices, faces=faces, process=False)


# --- Assembly-level steps (part id -> world mesh) ---

def find_duplicates(meshes: dict[str, trimesh.Trimesh]) -> dict[str, str]:
    """Maps each duplicate part to the earlier part it repeats."""
    signatures = {}
    for pid in sorted(meshes):
        vertices = np.asarray(meshes[pid].vertices, dtype=float)
        order = np.lexsort(vertices.T[::-1])
        signatures[pid] = vertices[order]
    duplicates = {}
    ids = sorted(meshes)
    for i, first in enumerate(ids):
        if first in duplicates:
            continue
        for second in ids[i + 1:]:
            if second in duplicates or len(signatures[first]) != len(signatures[second]):
                continue
            if np.allclose(signatures[first], signatures[second], rtol=0.0, atol=DUPLICATE_TOLERANCE):
                duplicates[second] = first
    return duplicates


def remove_overlapping(meshes: dict[str, trimesh.Trimesh], threshold: float, samples: int,
                       seed: int = 0) -> dict[str, tuple[str, float]]:
    """Repeatedly drops the smaller-volume member of the first pair overlapping more than ``threshold``.

    Returns removed part -> (partner, overlap ratio).
    """
    remaining = sorted(meshes)
    ratios: dict[tuple[str, str], float] = {}
    removed = {}

    def pair_ratio(a: str, b: str) -> float:
        if (a, b) not in ratios:
            ratios[(a, b)] = max(overlap_ratio(meshes[a], meshes[b], samples, seed),
                                 overlap_ratio(meshes[b], meshes[a], samples, seed))
        return ratios[(a, b)]

    while True:
        offending = None
        for a, b in itertools.combinations(remaining, 2):
            ratio = pair_ratio(a, b)
            if ratio > threshold:
                offending = (a, b, ratio)
                break
        if offending is None:
            return removed
        a, b, ratio = offending
        # Ties drop the later id
        victim, partner = (a, b) if abs(meshes[a].volume) < abs(meshes[b].volume) else (b, a)
        removed[victim] = (partner, ratio)
        remaining.remove(victim)


def filter_thin(meshes: dict[str, trimesh.Trimesh], ratio: float | None = None) -> dict[str, trimesh.Trimesh]:
    """Keeps parts whose thinnest OBB edge is at least ``ratio`` of the assembly's longest bbox edge."""
    if ratio is None:
        ratio = config_manager.get("thin_ratio")
    if not meshes:
        return {}
    lower, upper = joint_bounds(meshes)
    limit = ratio * float((upper - lower).max())
    kept = {}
    for pid in sorted(meshes):
        thinnest = float(np.min(meshes[pid].bounding_box_oriented.primitive.extents))
        if thinnest >= limit:
            kept[pid] = meshes[pid]
        else:
            logger.debug(f"Part '{pid}' is thin: {thinnest:.4g} < {limit:.4g}")
    return kept


def largest_connected_subset(meshes: dict[str, trimesh.Trimesh]) -> dict[str, trimesh.Trimesh]:
    """Largest component of the hull-intersection graph; ties go to the lexicographically smaller id set."""
    ids = sorted(meshes)
    if len(ids) <= 1:
        return dict(meshes)
    hulls = [compute_convex_hull(meshes[pid]) for pid in ids]
    rows, cols = [], []
    for i, j in itertools.combinations(range(len(ids)), 2):
        if hulls_intersect(hulls[i], hulls[j]):
            rows.append(i)
            cols.append(j)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(ids), len(ids)))
    _, labels = connected_components(graph, directed=False)
    components = {}
    for index, label in enumerate(labels):
        components.setdefault(int(label), []).append(ids[index])
    best = min(components.values(), key=lambda members: (-len(members), members))
    return {pid: meshes[pid] for pid in best}


def joint_bounds(meshes: dict[str, trimesh.Trimesh]) -> tuple[np.ndarray, np.ndarray]:
    bounds = np.array([meshes[pid].bounds for pid in meshes])
    return bounds[:, 0].min(axis=0), bounds[:, 1].max(axis=0)


def normalize_assembly(meshes: dict[str, trimesh.Trimesh],
                       size: float | None = None) -> tuple[dict[str, trimesh.Trimesh], float]:
    """Uniform scale about the joint bbox centre so the longest joint extent equals ``size``."""
    if size is None:
        size = config_manager.get("normalize_size")
    if not meshes:
        raise ValueError("Cannot normalize an empty assembly")
    lower, upper = joint_bounds(meshes)
    extent = float((upper - lower).max())
    if extent <= 0.0:
        raise ValueError("Assembly has zero extent")
    scale = size / extent
    if scale == 1.0:
        return dict(meshes), 1.0
    center = 0.5 * (lower + upper)
    scaled = {}
    for pid, mesh in meshes.items():
        vertices = (np.asarray(mesh.vertices) - center) * scale + center
        scaled[pid] = trimesh.Trimesh(vertices=vertices, faces=np.asarray(mesh.faces).copy(), process=False)
    return scaled, scale


# --- Whole pipeline ---

def preprocess_meshes(raw: mesh_io.RawAssembly,
                      params: PipelineParams | None = None) -> tuple[dict[str, trimesh.Trimesh], PipelineReport]:
    params = params or PipelineParams.from_config()
    meshes = raw.world_meshes()
    report = PipelineReport(source_id=raw.source_id, input_parts=sorted(meshes))

    for pid in sorted(meshes):
        if not is_watertight(meshes[pid]):
            report.drop(pid, "watertight", "mesh is not watertight")
            del meshes[pid]

    for dup, original in find_duplicates(meshes).items():
        report.drop(dup, "duplicate", f"duplicate of '{original}'")
        del meshes[dup]

    overlapping = remove_overlapping(meshes, params.overlap_threshold, params.overlap_samples, params.seed)
    for pid, (partner, ratio) in overlapping.items():
        report.drop(pid, "overlap", f"overlaps '{partner}' by {ratio:.3f}")
        del meshes[pid]

    if meshes:
        kept = filter_thin(meshes, params.thin_ratio)
        for pid in sorted(set(meshes) - set(kept)):
            report.drop(pid, "thin", f"thinnest OBB edge below {params.thin_ratio:.0%} of the assembly size")
        meshes = kept

    if meshes:
        kept = largest_connected_subset(meshes)
        for pid in sorted(set(meshes) - set(kept)):
            report.drop(pid, "disconnected", "outside the largest connected subset")
        if len(kept) == 1 and len(meshes) > 1:
            report.warn("no two parts touch; reduced to a single part")
        meshes = kept

    if not meshes:
        report.final_parts = []
        raise EmptyAssemblyError(f"Preprocessing removed every part of '{raw.source_id}'", report)

    meshes, report.scale = normalize_assembly(meshes, params.normalize_size)
    logger.info(f"[{raw.source_id}] manual disassemblability review skipped; flagged for a human check")
    report.review_required = True
    meshes = {pid: subdivide_mesh(mesh, params.max_edge_length) for pid, mesh in meshes.items()}
    report.final_parts = sorted(meshes)
    return meshes, report


def preprocess_assembly(raw: mesh_io.RawAssembly, params: PipelineParams | None = None,
                        sdf_options: dict | None = None) -> tuple[Assembly, PipelineReport]:
    meshes, report = preprocess_meshes(raw, params)
    assembly = Assembly.from_meshes(meshes, scale=report.scale, source_id=raw.source_id,
                                    category=raw.category, sdf_options=sdf_options)
    report.initial_penetration = {"|".join(sorted(pair)): depth for pair, depth in assembly.initial_penetration.items()}
    return assembly, report


def write_review_flag(directory: str, report: PipelineReport) -> str:
    path = os.path.join(directory, REVIEW_FLAG_NAME)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{report.source_id}: check by hand that the assembly can be taken apart\n")
    return path


def preprocess_directory(source: str, destination: str, params: PipelineParams | None = None) -> PipelineReport:
    """Loads one raw assembly directory, writes the cleaned OBJ set, manifest, report and review flag."""
    params = params or PipelineParams.from_config()
    raw = mesh_io.load_raw_assembly(source)
    try:
        meshes, report = preprocess_meshes(raw, params)
    except EmptyAssemblyError as e:
        os.makedirs(destination, exist_ok=True)
        data_handler.save_report(os.path.join(destination, "report.json"), e.report.to_record())
        raise
    mesh_io.write_assembly(meshes, destination, raw.source_id, raw.category,
                           extra={"scale": report.scale, "max_edge_length": params.max_edge_length})
    data_handler.save_report(os.path.join(destination, "report.json"), report.to_record())
    write_review_flag(destination, report)
    logger.info(f"[{raw.source_id}] {len(report.input_parts)} parts in, {len(report.final_parts)} out, "
                f"scale {report.scale:.4g}")
    return report


def _preprocess_task(args: tuple[str, str, PipelineParams, dict]) -> dict:
    source, destination, params, config_snapshot = args
    config_manager.update(config_snapshot)
    try:
        return preprocess_directory(source, destination, params).to_record()
    except EmptyAssemblyError as e:
        return e.report.to_record()
    except Exception as e:
        logger.exception(f"Preprocessing {source} failed: {e}")
        return {"source_id": os.path.basename(source), "error": str(e)}


def preprocess_corpus(source_root: str, destination_root: str, params: PipelineParams | None = None,
                      workers: int = 1) -> list[dict]:
    """Runs the pipeline on every subdirectory holding a manifest; assemblies run in parallel."""
    params = params or PipelineParams.from_config()
    sources = sorted(
        entry.path for entry in os.scandir(source_root)
        if entry.is_dir() and os.path.exists(os.path.join(entry.path, mesh_io.MANIFEST_NAME))
    )
    if not sources:
        raise ValueError(f"No assemblies with a {mesh_io.MANIFEST_NAME} under {source_root}")
    snapshot = config_manager.snapshot()
    tasks = [(src, os.path.join(destination_root, os.path.basename(src)), params, snapshot) for src in sources]
    if workers <= 1:
        return [_preprocess_task(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_preprocess_task, tasks))
