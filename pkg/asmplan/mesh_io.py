"""Raw assemblies on disk: a directory of mesh files plus a JSON manifest.

Manifest layout::

    {"source_id": "peg_plate", "category": null,
     "parts": [{"id": "peg", "mesh": "peg.obj", "pose": [16 floats, row-major]}]}

``pose`` is optional and defaults to the identity.
"""
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import trimesh

from . import data_handler

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def load_mesh(path: str) -> trimesh.Trimesh:
    """Loads a single triangle mesh, merging duplicate vertices."""
    mesh = trimesh.load_mesh(path, force="mesh", process=True)
    if not isinstance(mesh, trimesh.Trimesh) or len(mesh.faces) == 0:
        raise ValueError(f"No triangles found in {path}")
    return mesh


def save_mesh(mesh: trimesh.Trimesh, path: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    mesh.export(path)


@dataclass
class RawPart:
    part_id: str
    mesh: trimesh.Trimesh
    pose: np.ndarray = field(default_factory=lambda: np.eye(4))

    def world_mesh(self) -> trimesh.Trimesh:
        mesh = self.mesh.copy()
        if not np.array_equal(self.pose, np.eye(4)):
            mesh.apply_transform(self.pose)
        return mesh


@dataclass
class RawAssembly:
    source_id: str
    parts: list[RawPart]
    category: str | None = None
    directory: str | None = None

    def world_meshes(self) -> dict[str, trimesh.Trimesh]:
        return {part.part_id: part.world_mesh() for part in self.parts}

    @classmethod
    def from_meshes(cls, source_id: str, meshes: dict[str, trimesh.Trimesh],
                    category: str | None = None) -> "RawAssembly":
        return cls(source_id=source_id, parts=[RawPart(pid, meshes[pid]) for pid in sorted(meshes)],
                   category=category)


def _parse_pose(value, part_id: str) -> np.ndarray:
    if value is None:
        return np.eye(4)
    pose = np.asarray(value, dtype=float)
    if pose.size != 16:
        raise ValueError(f"Pose of part '{part_id}' must have 16 entries, got {pose.size}")
    return pose.reshape(4, 4)


def load_raw_assembly(manifest_path: str) -> RawAssembly:
    """Reads a manifest (or a directory holding ``manifest.json``) and its meshes."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    manifest = data_handler.load_manifest(manifest_path)
    if not manifest.get("parts"):
        raise ValueError(f"Manifest {manifest_path} lists no parts")
    directory = os.path.dirname(os.path.abspath(manifest_path))

    parts = []
    for entry in manifest["parts"]:
        part_id = str(entry["id"])
        mesh_path = os.path.join(directory, entry["mesh"])
        parts.append(RawPart(part_id=part_id, mesh=load_mesh(mesh_path), pose=_parse_pose(entry.get("pose"), part_id)))
    source_id = manifest.get("source_id") or os.path.basename(directory)
    logger.debug(f"Loaded raw assembly '{source_id}' with {len(parts)} parts from {manifest_path}")
    return RawAssembly(source_id=source_id, parts=parts, category=manifest.get("category"), directory=directory)


def write_assembly(meshes: dict[str, trimesh.Trimesh], directory: str, source_id: str,
                   category: str | None = None, extra: dict | None = None) -> str:
    """Writes world-frame meshes as OBJ files plus a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for part_id in sorted(meshes):
        filename = f"{part_id}.obj"
        save_mesh(meshes[part_id], os.path.join(directory, filename))
        entries.append({"id": part_id, "mesh": filename, "pose": np.eye(4).ravel().tolist()})
    manifest = {"source_id": source_id, "category": category, "parts": entries}
    if extra:
        manifest.update(extra)
    path = os.path.join(directory, MANIFEST_NAME)
    data_handler.save_manifest(path, manifest)
    return path
