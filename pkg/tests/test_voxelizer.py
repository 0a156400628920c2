import numpy as np
import pytest

from voxsift.corpus import make_shape
from voxsift.geodesic import build_geodesic_sphere
from voxsift.mesh_io import TriangleMesh, normalize_mesh
from voxsift.rotations import rotate_grid, rotation_matrices_24
from voxsift.voxelizer import (
    NonWatertightError,
    VoxelGrid,
    read_grid,
    read_voxg,
    surface_voxels,
    voxelize,
    write_grid,
    write_voxg,
)

from conftest import box_mesh


def brute_force_surface(occ):
    out = np.zeros_like(occ)
    n = occ.shape
    for x, y, z in np.argwhere(occ):
        for d in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
            p = (x + d[0], y + d[1], z + d[2])
            if not all(0 <= p[a] < n[a] for a in range(3)) or not occ[p]:
                out[x, y, z] = True
                break
    return out


def test_cube_volume():
    grid = voxelize(box_mesh((8, 8, 8), (24, 24, 24)), 32)
    assert abs(grid.n_occupied - 4096) <= 0.06 * 4096
    # voxel centers are strictly inside, so the count is exact here
    assert grid.n_occupied == 4096
    assert grid.occupancy[8:24, 8:24, 8:24].all()


def test_sphere_fill_fraction():
    s = build_geodesic_sphere(5)
    mesh = normalize_mesh(TriangleMesh(s.vertices, s.triangles), 64, 4)
    grid = voxelize(mesh, 64)
    frac = grid.n_occupied / 56**3
    assert abs(frac - np.pi / 6) <= 0.05 * np.pi / 6


def test_open_triangle_rejected():
    mesh = TriangleMesh([[5, 5, 5], [20, 6, 5], [6, 20, 7]], [[0, 1, 2]])
    with pytest.raises(NonWatertightError):
        voxelize(mesh, 32)


def test_open_box_rejected():
    full = box_mesh((8, 8, 8), (24, 24, 24))
    # drop the top face (+z quad): leaves half the columns with one crossing
    keep = [i for i, t in enumerate(full.triangles) if not np.all(full.vertices[t][:, 2] == 24)]
    with pytest.raises(NonWatertightError):
        voxelize(TriangleMesh(full.vertices, full.triangles[keep]), 32)


def test_small_defect_is_repaired():
    mesh = normalize_mesh(make_shape("ellipsoid", 3, pose=False), 64, 4)
    # cut a small patch out of the top: a few columns become inconsistent
    v, t = mesh.vertices, mesh.triangles
    centroids = v[t].mean(axis=1)
    top = v[np.argmax(v[:, 2])]
    near = np.hypot(*(centroids[:, :2] - top[:2]).T) < 1.5
    near &= centroids[:, 2] > top[2] - 3
    holed = TriangleMesh(v, t[~near])
    full = voxelize(mesh, 64)
    grid = voxelize(holed, 64)
    assert grid.repaired_columns >= 1
    assert np.count_nonzero(grid.occupancy != full.occupancy) <= 64 * grid.repaired_columns


def test_triangle_order_invariance(rng):
    mesh = normalize_mesh(make_shape("torus", 1), 48, 3)
    shuffled = TriangleMesh(mesh.vertices, mesh.triangles[rng.permutation(mesh.n_triangles)])
    assert np.array_equal(voxelize(mesh, 48).occupancy, voxelize(shuffled, 48).occupancy)


def test_rotation_equivariance_of_occupancy():
    mesh = normalize_mesh(make_shape("multi-limb-star", 5), 48, 3)
    base = voxelize(mesh, 48).occupancy
    for q in rotation_matrices_24():
        rotated = mesh.transformed(q, offset=24.0 - q @ np.full(3, 24.0))
        got = voxelize(rotated, 48).occupancy
        assert np.array_equal(got, rotate_grid(base, q))


def test_surface_block():
    occ = np.zeros((7, 7, 7), bool)
    occ[2:5, 2:5, 2:5] = True
    surf = surface_voxels(occ)
    assert surf.sum() == 26
    assert not surf[3, 3, 3]


def test_surface_single_voxel():
    occ = np.zeros((5, 5, 5), bool)
    occ[2, 2, 2] = True
    assert surface_voxels(occ).sum() == 1


def test_surface_full_grid():
    occ = np.ones((6, 5, 4), bool)
    surf = surface_voxels(occ)
    assert np.array_equal(surf, brute_force_surface(occ))
    assert surf.sum() == 6 * 5 * 4 - 4 * 3 * 2


def test_surface_subset_and_oracle(rng):
    for _ in range(10):
        occ = rng.random((9, 8, 7)) < 0.6
        surf = surface_voxels(occ)
        assert not np.any(surf & ~occ)
        assert np.array_equal(surf, brute_force_surface(occ))


def test_voxg_roundtrip(tmp_path, rng):
    occ = rng.random((5, 6, 7)) < 0.5
    grid = VoxelGrid(occ, voxel_size=0.25, origin=(1.0, -2.0, 0.5))
    write_grid(tmp_path / "g.voxg", grid)
    raw = (tmp_path / "g.voxg").read_bytes()
    assert raw[:5] == b"VOXG\x01"
    assert len(raw) == 33 + occ.size
    # x-fastest: second payload byte is voxel (1, 0, 0)
    assert raw[34] == occ[1, 0, 0]
    back = read_grid(tmp_path / "g.voxg")
    assert np.array_equal(back.occupancy, occ)
    assert back.voxel_size == 0.25
    assert back.origin == (1.0, -2.0, 0.5)


def test_voxg_float_roundtrip(tmp_path, rng):
    field = rng.random((4, 3, 2)).astype(np.float32)
    write_voxg(tmp_path / "f.voxg", field, 1.0, (0, 0, 0))
    values, _, _ = read_voxg(tmp_path / "f.voxg")
    assert (tmp_path / "f.voxg").read_bytes()[4] == 2
    assert np.array_equal(values, field)


def test_voxg_rejects_garbage(tmp_path):
    (tmp_path / "x.voxg").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        read_voxg(tmp_path / "x.voxg")
