import json
import os

import numpy as np
import pytest
import trimesh

from asmplan import mesh_io
from asmplan.pipeline import (REVIEW_FLAG_NAME, EmptyAssemblyError, PipelineParams, filter_thin, find_duplicates,
                              is_watertight, largest_connected_subset, normalize_assembly, overlap_ratio,
                              preprocess_directory, preprocess_meshes, remove_overlapping, subdivide_mesh)


def _box(extents, center=(0.0, 0.0, 0.0)):
    box = trimesh.creation.box(extents=extents)
    box.apply_translation(center)
    return box


def _open_box():
    box = _box((1.0, 1.0, 1.0), (0.0, 5.0, 0.0))
    return trimesh.Trimesh(vertices=box.vertices, faces=box.faces[:-2], process=False)


# --- Single steps ---

def test_overlap_ratio_of_offset_cubes():
    a = _box((1.0, 1.0, 1.0))
    b = _box((1.0, 1.0, 1.0), (0.5, 0.0, 0.0))
    assert overlap_ratio(a, b, samples=10000) == pytest.approx(0.5, abs=0.02)


def test_overlap_ratio_of_disjoint_boxes_is_zero():
    assert overlap_ratio(_box((1, 1, 1)), _box((1, 1, 1), (3.0, 0.0, 0.0)), samples=100) == 0.0


def test_overlap_ratio_rejects_flat_mesh():
    flat = trimesh.Trimesh(vertices=[[0, 0, 0], [1, 0, 0], [0, 1, 0]], faces=[[0, 1, 2]], process=False)
    with pytest.raises(ValueError, match="zero volume"):
        overlap_ratio(flat, _box((1, 1, 1)), samples=100)


def test_subdivide_keeps_surface(unit_cube):
    fine = subdivide_mesh(unit_cube, 0.25)
    edges = fine.vertices[fine.edges_unique]
    assert np.linalg.norm(edges[:, 0] - edges[:, 1], axis=1).max() <= 0.25 + 1e-12
    assert is_watertight(fine)
    assert fine.volume == pytest.approx(1.0)
    assert subdivide_mesh(fine, 0.25) is fine


def test_watertight_check():
    assert is_watertight(_box((1, 1, 1)))
    assert not is_watertight(_open_box())


def test_duplicates_map_to_earlier_id():
    meshes = {"a": _box((1, 1, 1)), "b": _box((1, 1, 1)), "c": _box((1, 1, 1), (2.0, 0.0, 0.0))}
    assert find_duplicates(meshes) == {"b": "a"}


def test_overlap_removes_smaller_part():
    meshes = {"big": _box((2, 2, 2)), "small": _box((0.5, 0.5, 0.5))}
    removed = remove_overlapping(meshes, threshold=0.1, samples=2000)
    assert list(removed) == ["small"]
    assert removed["small"][0] == "big"
    assert removed["small"][1] == pytest.approx(1.0)


def test_overlap_tie_drops_later_id():
    meshes = {"a": _box((1, 1, 1)), "b": _box((1, 1, 1))}
    assert list(remove_overlapping(meshes, threshold=0.1, samples=2000)) == ["b"]


def test_thin_parts_removed():
    meshes = {"slab": _box((10, 10, 1)), "sheet": _box((10, 10, 0.05), (0.0, 0.0, 2.0))}
    assert list(filter_thin(meshes, ratio=0.01)) == ["slab"]


def test_largest_connected_subset():
    meshes = {"a": _box((1, 1, 1)), "b": _box((1, 1, 1), (0.9, 0.0, 0.0)), "c": _box((1, 1, 1), (5.0, 0.0, 0.0))}
    assert sorted(largest_connected_subset(meshes)) == ["a", "b"]


def test_connected_tie_prefers_smaller_ids():
    meshes = {"b": _box((1, 1, 1)), "a": _box((1, 1, 1), (5.0, 0.0, 0.0))}
    assert list(largest_connected_subset(meshes)) == ["a"]


def test_normalize_scales_longest_extent():
    scaled, scale = normalize_assembly({"box": _box((20, 10, 5))}, size=10.0)
    assert scale == pytest.approx(0.5)
    np.testing.assert_allclose(scaled["box"].extents, [10.0, 5.0, 2.5])
    np.testing.assert_allclose(scaled["box"].bounds.mean(axis=0), 0.0, atol=1e-12)


# --- Whole pipeline ---

def _dirty_meshes():
    return {
        "base": _box((10, 10, 1)),
        "peg": _box((1, 1, 1), (0.0, 0.0, 0.95)),
        "peg-copy": _box((1, 1, 1), (0.0, 0.0, 0.95)),
        "open": _open_box(),
        "sheet": _box((10, 10, 0.05), (0.0, 0.0, 3.0)),
        "far": _box((1, 1, 1), (40.0, 0.0, 0.0)),
    }


def test_preprocess_report_names_every_removal():
    raw = mesh_io.RawAssembly.from_meshes("dirty", _dirty_meshes())
    meshes, report = preprocess_meshes(raw, PipelineParams(overlap_samples=2000))
    assert sorted(meshes) == ["base", "peg"]
    assert report.removed["open"]["step"] == "watertight"
    assert report.removed["peg-copy"]["step"] == "duplicate"
    assert report.removed["sheet"]["step"] == "thin"
    assert report.removed["far"]["step"] == "disconnected"
    assert report.removal_counts() == {"watertight": 1, "duplicate": 1, "thin": 1, "disconnected": 1}
    assert report.scale == pytest.approx(1.0)
    assert report.review_required
    for mesh in meshes.values():
        edges = mesh.vertices[mesh.edges_unique]
        assert np.linalg.norm(edges[:, 0] - edges[:, 1], axis=1).max() <= 0.5 + 1e-9


def test_preprocess_directory_writes_outputs(tmp_path):
    source = tmp_path / "raw"
    mesh_io.write_assembly({"base": _box((10, 10, 1)), "peg": _box((1, 1, 1), (0.0, 0.0, 0.95))},
                           str(source), "pair", category="two-part")
    destination = tmp_path / "clean"
    report = preprocess_directory(str(source), str(destination), PipelineParams(overlap_samples=2000))
    assert report.final_parts == ["base", "peg"]
    assert (destination / REVIEW_FLAG_NAME).exists()
    record = json.loads((destination / "report.json").read_text())
    assert record["final_part_count"] == 2
    cleaned = mesh_io.load_raw_assembly(str(destination))
    assert cleaned.category == "two-part"
    assert [p.part_id for p in cleaned.parts] == ["base", "peg"]


def test_everything_removed_raises_with_report(tmp_path):
    source = tmp_path / "raw"
    mesh_io.write_assembly({"open": _open_box()}, str(source), "broken")
    destination = tmp_path / "clean"
    with pytest.raises(EmptyAssemblyError) as info:
        preprocess_directory(str(source), str(destination), PipelineParams(overlap_samples=100))
    assert info.value.report.final_parts == []
    assert os.path.exists(destination / "report.json")


def test_preprocess_is_idempotent():
    raw = mesh_io.RawAssembly.from_meshes("pair", {"base": _box((30, 30, 3)), "peg": _box((3, 3, 3), (0.0, 0.0, 3.0))})
    params = PipelineParams(overlap_samples=2000)
    first, first_report = preprocess_meshes(raw, params)
    assert first_report.scale == pytest.approx(1.0 / 3.0)
    second, second_report = preprocess_meshes(mesh_io.RawAssembly.from_meshes("pair", first), params)
    assert second_report.scale == pytest.approx(1.0, abs=1e-9)
    assert second_report.removed == {}
    assert sorted(second) == sorted(first)
    for pid in first:
        assert len(second[pid].vertices) == len(first[pid].vertices)
        np.testing.assert_allclose(second[pid].vertices, first[pid].vertices, atol=1e-9)


def test_thin_connector_goes_before_connectivity():
    # The sheet is the only link between the two blocks
    meshes = {
        "left": _box((4, 4, 4), (-3.0, 0.0, 0.0)),
        "right": _box((4, 4, 4), (3.0, 0.0, 0.0)),
        "sheet": _box((2, 1, 0.05)),
    }
    assert sorted(largest_connected_subset(meshes)) == ["left", "right", "sheet"]
    kept, report = preprocess_meshes(mesh_io.RawAssembly.from_meshes("bridge", meshes),
                                     PipelineParams(overlap_samples=2000))
    assert sorted(kept) == ["left"]
    assert report.removed["sheet"]["step"] == "thin"
    assert report.removed["right"]["step"] == "disconnected"
