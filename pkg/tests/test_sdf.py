import numpy as np
import pytest
import trimesh

from asmplan.sdf import build_sdf_grid, contains, load_sdf, save_sdf


@pytest.fixture(scope="module")
def sphere_grid():
    mesh = trimesh.creation.icosphere(subdivisions=4, radius=1.0)
    # Padding wide enough that [-1.5, 1.5]^3 lies inside the lattice
    return build_sdf_grid(mesh, padding=10, max_cell=0.05, cells_per_extent=20)


def test_sphere_distances_match_analytic(sphere_grid):
    points = np.random.default_rng(0).uniform(-1.5, 1.5, size=(1000, 3))
    analytic = np.linalg.norm(points, axis=1) - 1.0
    error = np.abs(sphere_grid.distances(points) - analytic)
    assert error.max() <= 2.0 * sphere_grid.cell_size.max()


def test_sphere_sign(sphere_grid):
    assert sphere_grid.distance([0.0, 0.0, 0.0]) < -0.9
    assert sphere_grid.distance([1.4, 0.0, 0.0]) > 0.3


def test_sphere_gradient_norms(sphere_grid):
    points = np.random.default_rng(1).uniform(-1.5, 1.5, size=(4000, 3))
    radius = np.linalg.norm(points, axis=1)
    # Away from the centre kink and the surface band
    band = ((radius > 0.4) & (radius < 0.8)) | ((radius > 1.2) & (radius < 1.45))
    norms = np.linalg.norm(sphere_grid.gradients(points[band]), axis=1)
    assert np.all((norms >= 0.8) & (norms <= 1.2))


def test_gradient_points_outward(sphere_grid):
    g = sphere_grid.gradient([1.3, 0.0, 0.0])
    assert g[0] > 0.8
    assert abs(g[1]) < 0.2 and abs(g[2]) < 0.2


def test_non_watertight_mesh_rejected(unit_cube):
    broken = trimesh.Trimesh(vertices=unit_cube.vertices, faces=unit_cube.faces[:-1], process=False)
    with pytest.raises(ValueError, match="non-watertight"):
        build_sdf_grid(broken)


def test_empty_mesh_rejected():
    with pytest.raises(ValueError):
        build_sdf_grid(trimesh.Trimesh())


def test_cell_size_follows_extent(unit_cube):
    grid = build_sdf_grid(unit_cube, padding=2, max_cell=0.5, cells_per_extent=20)
    np.testing.assert_allclose(grid.cell_size, [0.05, 0.05, 0.05])
    assert grid.dims == (25, 25, 25)


def test_contains(unit_cube):
    points = np.array([[0.0, 0.0, 0.0], [0.45, -0.45, 0.3], [0.6, 0.0, 0.0], [0.0, 0.0, -2.0]])
    assert contains(unit_cube, points).tolist() == [True, True, False, False]


def test_sidecar_round_trip(tmp_path, unit_cube):
    grid = build_sdf_grid(unit_cube, padding=2)
    path = tmp_path / "cube.sdf"
    save_sdf(grid, str(path))
    loaded = load_sdf(str(path))
    assert loaded.dims == grid.dims
    np.testing.assert_array_equal(loaded.values, grid.values)
    np.testing.assert_array_equal(loaded.origin, grid.origin)
    assert load_sdf(str(path), padding=2).padding == 2


def test_cached_grid_keeps_padding(tmp_path, unit_cube):
    built = build_sdf_grid(unit_cube, padding=3, cache_dir=str(tmp_path))
    cached = build_sdf_grid(unit_cube, padding=3, cache_dir=str(tmp_path))
    assert built.padding == cached.padding == 3
    assert cached.dims == built.dims
    np.testing.assert_array_equal(cached.origin, built.origin)
    other = build_sdf_grid(unit_cube, padding=1, cache_dir=str(tmp_path))
    assert other.padding == 1
    assert len(list(tmp_path.glob("*.sdf"))) == 2


def test_sidecar_cache_is_reused(tmp_path, unit_cube):
    first = build_sdf_grid(unit_cube, cache_dir=str(tmp_path))
    files = list(tmp_path.glob("*.sdf"))
    assert len(files) == 1
    second = build_sdf_grid(unit_cube, cache_dir=str(tmp_path))
    np.testing.assert_array_equal(first.values, second.values)


def test_bad_sidecar_rejected(tmp_path):
    path = tmp_path / "bad.sdf"
    path.write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_sdf(str(path))
