"""Solid voxelization by even-odd parity along +z rays, plus surface extraction.

Grid convention: voxel (i, j, k) has its center at (i + 0.5, j + 0.5, k + 0.5)
in the normalized mesh frame. Arrays are indexed ``[x, y, z]``; the VOXG
file stores them x-fastest.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mesh_io import TriangleMesh

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 64
INCONSISTENT_COLUMN_LIMIT = 0.02

VOXG_MAGIC = b"VOXG"
VOXG_OCCUPANCY = 0x01
VOXG_FLOAT = 0x02


class NonWatertightError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    occupancy: np.ndarray
    voxel_size: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    repaired_columns: int = field(default=0, compare=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.occupancy.shape)

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.occupancy))


def _edge_signs(px, py, qx, qy, cx, cy):
    """Perturbed orientation sign of points (cx, cy) relative to directed edges p->q.

    Evaluated with the lexicographically smaller endpoint first so that two
    triangles sharing an edge get exactly opposite signs. Exact zeros are
    resolved by symbolically moving the query point by (eps, eps**2).
    Returns (sign, raw value) where the raw value is in p->q orientation.
    """
    swap = (px > qx) | ((px == qx) & (py > qy))
    ax = np.where(swap, qx, px)
    ay = np.where(swap, qy, py)
    bx = np.where(swap, px, qx)
    by = np.where(swap, py, qy)
    e = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    tie = np.where(-(by - ay) != 0, np.sign(-(by - ay)), np.sign(bx - ax))
    s = np.where(e != 0, np.sign(e), tie)
    flip = np.where(swap, -1.0, 1.0)
    return s * flip, e * flip


def _column_pairs(lo_x, hi_x, lo_y, hi_y):
    """Expand per-triangle column index boxes into (triangle, i, j) triples."""
    nx = np.maximum(hi_x - lo_x + 1, 0)
    ny = np.maximum(hi_y - lo_y + 1, 0)
    counts = nx * ny
    tri = np.repeat(np.arange(len(counts)), counts)
    starts = np.cumsum(counts) - counts
    local = np.arange(counts.sum()) - np.repeat(starts, counts)
    nyr = np.repeat(ny, counts)
    i = np.repeat(lo_x, counts) + local // np.maximum(nyr, 1)
    j = np.repeat(lo_y, counts) + local % np.maximum(nyr, 1)
    return tri, i, j


def _crossings(mesh: TriangleMesh, resolution: int, chunk: int = 4096):
    """All (column flat index, z) ray crossings of the mesh."""
    v = mesh.vertices
    t = mesh.triangles
    cols, zs = [], []
    for start in range(0, len(t), chunk):
        tri = v[t[start : start + chunk]]
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        keep = area != 0
        a, b, c, area = a[keep], b[keep], c[keep], area[keep]
        xmin = np.minimum(np.minimum(a[:, 0], b[:, 0]), c[:, 0])
        xmax = np.maximum(np.maximum(a[:, 0], b[:, 0]), c[:, 0])
        ymin = np.minimum(np.minimum(a[:, 1], b[:, 1]), c[:, 1])
        ymax = np.maximum(np.maximum(a[:, 1], b[:, 1]), c[:, 1])
        lo_x = np.clip(np.ceil(xmin - 0.5), 0, resolution).astype(np.int64)
        hi_x = np.clip(np.floor(xmax - 0.5), -1, resolution - 1).astype(np.int64)
        lo_y = np.clip(np.ceil(ymin - 0.5), 0, resolution).astype(np.int64)
        hi_y = np.clip(np.floor(ymax - 0.5), -1, resolution - 1).astype(np.int64)
        k, i, j = _column_pairs(lo_x, hi_x, lo_y, hi_y)
        if len(k) == 0:
            continue
        cx = i + 0.5
        cy = j + 0.5
        A, B, C = a[k], b[k], c[k]
        orient = np.sign(area[k])
        s_ab, e_ab = _edge_signs(A[:, 0], A[:, 1], B[:, 0], B[:, 1], cx, cy)
        s_bc, e_bc = _edge_signs(B[:, 0], B[:, 1], C[:, 0], C[:, 1], cx, cy)
        s_ca, e_ca = _edge_signs(C[:, 0], C[:, 1], A[:, 0], A[:, 1], cx, cy)
        inside = (s_ab == orient) & (s_bc == orient) & (s_ca == orient)
        if not inside.any():
            continue
        # barycentric weights: e_bc is twice the signed area opposite A, etc.
        ar = area[k][inside]
        z = (
            e_bc[inside] * A[inside, 2] + e_ca[inside] * B[inside, 2] + e_ab[inside] * C[inside, 2]
        ) / ar
        cols.append(i[inside] * resolution + j[inside])
        zs.append(z)
    if not cols:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(cols), np.concatenate(zs)


def voxelize(
    mesh: TriangleMesh,
    resolution: int = DEFAULT_RESOLUTION,
    voxel_size: float = 1.0,
    origin=(0.0, 0.0, 0.0),
) -> VoxelGrid:
    """Solid occupancy of a mesh already normalized into the grid frame.

    A voxel is occupied when an odd number of surface crossings lie below its
    center along its (x, y) column. Columns with an odd total are repaired from
    the nearest consistent column unless they exceed 2% of non-empty columns.
    """
    if resolution < 1:
        raise ValueError("resolution must be positive")
    n = int(resolution)
    col, z = _crossings(mesh, n)
    per_column = np.bincount(col, minlength=n * n).reshape(n, n)
    nonempty = per_column > 0
    bad = (per_column % 2) == 1
    n_bad = int(bad.sum())
    n_nonempty = int(nonempty.sum())
    if n_nonempty == 0:
        raise NonWatertightError("mesh produces no ray crossings inside the grid")
    if n_bad > INCONSISTENT_COLUMN_LIMIT * n_nonempty:
        raise NonWatertightError(
            f"{n_bad} of {n_nonempty} columns have odd crossing counts; mesh is not watertight"
        )

    # toggle at the first voxel whose center lies strictly above each crossing
    k_first = np.clip(np.floor(z - 0.5).astype(np.int64) + 1, 0, n)
    toggles = np.zeros((n, n, n + 1), dtype=np.int64)
    np.add.at(toggles, (col // n, col % n, k_first), 1)
    occupancy = (np.cumsum(toggles[:, :, :n], axis=2) % 2).astype(bool)

    if n_bad:
        log.warning("repairing %d parity-inconsistent columns", n_bad)
        _, (ii, jj) = ndimage.distance_transform_edt(bad, return_indices=True)
        occupancy[bad] = occupancy[ii[bad], jj[bad]]

    if not occupancy.any():
        raise NonWatertightError("voxelization produced an empty grid")
    occupancy.setflags(write=False)
    return VoxelGrid(
        occupancy=occupancy,
        voxel_size=float(voxel_size),
        origin=tuple(float(o) for o in origin),
        repaired_columns=n_bad,
    )


def surface_voxels(grid) -> np.ndarray:
    """Occupied voxels with at least one empty 6-neighbor (outside the grid counts as empty)."""
    occ = np.asarray(getattr(grid, "occupancy", grid), dtype=bool)
    padded = np.pad(occ, 1, constant_values=False)
    interior = occ.copy()
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    return occ & ~interior


def write_voxg(path, values: np.ndarray, voxel_size: float, origin) -> None:
    """Write an occupancy (bool/uint8, version 1) or float32 field (version 2)."""
    values = np.asarray(values)
    if values.dtype == np.float32:
        version, payload = VOXG_FLOAT, values.astype("<f4")
    else:
        version, payload = VOXG_OCCUPANCY, values.astype(np.uint8)
    dx, dy, dz = values.shape
    header = VOXG_MAGIC + bytes([version]) + struct.pack("<3I", dx, dy, dz)
    header += struct.pack("<f", voxel_size) + struct.pack("<3f", *origin)
    Path(path).write_bytes(header + payload.tobytes(order="F"))


def read_voxg(path) -> tuple[np.ndarray, float, tuple[float, float, float]]:
    data = Path(path).read_bytes()
    if data[:4] != VOXG_MAGIC or len(data) < 33:
        raise ValueError(f"{path}: not a VOXG file")
    version = data[4]
    dx, dy, dz = struct.unpack_from("<3I", data, 5)
    (voxel_size,) = struct.unpack_from("<f", data, 17)
    origin = struct.unpack_from("<3f", data, 21)
    body = data[33:]
    count = dx * dy * dz
    if version == VOXG_OCCUPANCY:
        if len(body) != count:
            raise ValueError(f"{path}: expected {count} occupancy bytes, found {len(body)}")
        values = np.frombuffer(body, dtype=np.uint8).reshape((dx, dy, dz), order="F").astype(bool)
    elif version == VOXG_FLOAT:
        if len(body) != 4 * count:
            raise ValueError(f"{path}: expected {count} float values")
        values = np.frombuffer(body, dtype="<f4").reshape((dx, dy, dz), order="F").copy()
    else:
        raise ValueError(f"{path}: unsupported VOXG version {version}")
    return values, float(voxel_size), tuple(float(o) for o in origin)


def write_grid(path, grid: VoxelGrid) -> None:
    write_voxg(path, grid.occupancy.astype(np.uint8), grid.voxel_size, grid.origin)


def read_grid(path) -> VoxelGrid:
    values, voxel_size, origin = read_voxg(path)
    if values.dtype != bool:
        raise ValueError(f"{path}: expected an occupancy grid (version 1)")
    return VoxelGrid(occupancy=values, voxel_size=voxel_size, origin=origin)
