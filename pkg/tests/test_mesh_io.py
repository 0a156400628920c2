import io

import numpy as np
import pytest

from voxsift.mesh_io import (
    DegenerateMeshError,
    MeshParseError,
    TriangleMesh,
    load_mesh,
    normalize_mesh,
    write_off,
)
from voxsift.rotations import rotation_matrices_24

from conftest import box_mesh

MINIMAL_OFF = b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
TETRA_OBJ = b"v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n"


def test_minimal_off():
    mesh = load_mesh(io.BytesIO(MINIMAL_OFF), "OFF")
    assert mesh.n_vertices == 3
    assert mesh.n_triangles == 1
    assert mesh.triangles.tolist() == [[0, 1, 2]]


def test_obj_tetrahedron():
    mesh = load_mesh(io.BytesIO(TETRA_OBJ), "OBJ")
    assert (mesh.n_vertices, mesh.n_triangles) == (4, 4)


def test_off_index_out_of_range_names_line():
    bad = b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n"
    with pytest.raises(MeshParseError) as err:
        load_mesh(io.BytesIO(bad), "OFF")
    assert err.value.line == 6
    assert "out of range" in str(err.value)


@pytest.mark.parametrize(
    "data",
    [
        b"PLY\n3 1 0\n",
        b"OFF\nthree 1 0\n",
        b"OFF\n3 0 0\n0 0 0\n1 0 0\n0 1 0\n",
        b"OFF\n3 1 0\n0 0 0\n1 0 0\n",
    ],
)
def test_off_malformed(data):
    with pytest.raises(MeshParseError):
        load_mesh(io.BytesIO(data), "OFF")


def test_off_color_variant_and_comments():
    data = b"COFF\n# comment\n3 1 0\n0 0 0 255 0 0 255\n1 0 0 0 255 0 255\n0 1 0 0 0 255 255\n3 0 1 2 1 1 1\n"
    mesh = load_mesh(io.BytesIO(data), "OFF")
    assert mesh.vertices.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0]]


def test_off_counts_on_header_line():
    mesh = load_mesh(io.BytesIO(b"OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"), "OFF")
    assert mesh.n_triangles == 1


def test_off_polygon_fan():
    data = b"OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    mesh = load_mesh(io.BytesIO(data), "OFF")
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_fan_negative_indices_and_extras():
    data = b"# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\ng grp\nusemtl m\nf -4/1/1 -3/1/1 -2/1/1 -1/1/1\n"
    mesh = load_mesh(io.BytesIO(data), "OBJ")
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_errors():
    with pytest.raises(MeshParseError) as err:
        load_mesh(io.BytesIO(b"v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n"), "OBJ")
    assert err.value.line == 4
    with pytest.raises(MeshParseError):
        load_mesh(io.BytesIO(b"v 0 0 0\n"), "OBJ")


def test_load_is_deterministic(tmp_path):
    p = tmp_path / "t.obj"
    p.write_bytes(TETRA_OBJ)
    a, b = load_mesh(p), load_mesh(p)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_off_roundtrip(tmp_path):
    mesh = box_mesh((0, 0, 0), (1, 2, 3))
    write_off(tmp_path / "b.off", mesh)
    back = load_mesh(tmp_path / "b.off")
    assert np.allclose(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


def test_normalize_unit_cube():
    mesh = normalize_mesh(box_mesh((0, 0, 0), (1, 1, 1)), 64, 4)
    lo, hi = mesh.bounds()
    assert np.allclose(hi - lo, 56)
    assert np.allclose((lo + hi) / 2, 32)


def test_normalize_preserves_aspect():
    lo, hi = normalize_mesh(box_mesh((0, 0, 0), (2, 1, 1)), 64, 4).bounds()
    assert np.allclose(hi - lo, [56, 28, 28])


def test_normalize_degenerate():
    mesh = TriangleMesh(np.ones((3, 3)), [[0, 1, 2]])
    with pytest.raises(DegenerateMeshError):
        normalize_mesh(mesh, 64, 4)


@pytest.mark.parametrize("resolution,padding", [(4, 1), (64, 0), (16, 8)])
def test_normalize_parameter_checks(resolution, padding):
    with pytest.raises(ValueError):
        normalize_mesh(box_mesh((0, 0, 0), (1, 1, 1)), resolution, padding)


def test_normalize_idempotent(rng):
    mesh = TriangleMesh(rng.normal(size=(30, 3)) * 7 + 3, rng.integers(0, 30, size=(20, 3)))
    once = normalize_mesh(mesh, 64, 4)
    twice = normalize_mesh(once, 64, 4)
    assert np.max(np.abs(once.vertices - twice.vertices)) < 1e-12


def test_normalize_rotation_equivariant(rng):
    mesh = TriangleMesh(rng.normal(size=(40, 3)) * [3, 1, 2], rng.integers(0, 40, size=(10, 3)))
    for q in rotation_matrices_24():
        a = normalize_mesh(mesh.transformed(q), 64, 4).vertices
        b = (normalize_mesh(mesh, 64, 4).vertices - 32.0) @ q.T + 32.0
        assert np.max(np.abs(a - b)) < 1e-9
