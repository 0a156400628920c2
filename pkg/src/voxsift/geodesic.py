"""Subdivided-octahedron geodesic spheres used as orientation-histogram bins."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_LEVEL = 6

_OCTAHEDRON_VERTICES = np.array(
    [
        [1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)

# counter-clockwise seen from outside
_OCTAHEDRON_TRIANGLES = np.array(
    [
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class GeodesicSphere:
    vertices: np.ndarray
    triangles: np.ndarray
    level: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        """Flat (chordal) areas of the triangles."""
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_centers(self) -> np.ndarray:
        """Normalized triangle centroids, one direction per face."""
        centers = self.vertices[self.triangles].mean(axis=1)
        return centers / np.linalg.norm(centers, axis=1, keepdims=True)

    def to_off(self) -> str:
        lines = ["OFF", f"{self.n_vertices} {self.n_triangles} 0"]
        lines += [f"{x:.17g} {y:.17g} {z:.17g}" for x, y, z in self.vertices]
        lines += [f"3 {a} {b} {c}" for a, b, c in self.triangles]
        return "\n".join(lines) + "\n"


def _subdivide(vertices: list[np.ndarray], triangles: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    midpoint_index: dict[tuple[int, int], int] = {}

    def midpoint(i: int, j: int) -> int:
        key = (i, j) if i < j else (j, i)
        idx = midpoint_index.get(key)
        if idx is None:
            m = vertices[i] + vertices[j]
            vertices.append(m / np.linalg.norm(m))
            idx = len(vertices) - 1
            midpoint_index[key] = idx
        return idx

    out = []
    for a, b, c in triangles:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    return vertices, np.array(out, dtype=np.int64)


@lru_cache(maxsize=None)
def build_geodesic_sphere(level: int) -> GeodesicSphere:
    """Regular octahedron (level 1) refined ``level - 1`` times by 1-to-4 splits.

    Level 3 has 66 vertices and 128 triangles.
    """
    if not isinstance(level, (int, np.integer)) or not 1 <= level <= MAX_LEVEL:
        raise ValueError(f"geodesic sphere level must be in [1, {MAX_LEVEL}], got {level!r}")
    vertices = [v.copy() for v in _OCTAHEDRON_VERTICES]
    triangles = _OCTAHEDRON_TRIANGLES
    for _ in range(level - 1):
        vertices, triangles = _subdivide(vertices, triangles)
    verts = np.array(vertices)
    verts.setflags(write=False)
    triangles.setflags(write=False)
    return GeodesicSphere(vertices=verts, triangles=triangles, level=int(level))


def nearest_vertex(sphere: GeodesicSphere | np.ndarray, direction) -> int | np.ndarray:
    """Index of the bin direction with the largest dot product.

    ``direction`` may be a single 3-vector or an (n, 3) array. Ties go to the
    lowest index.
    """
    bins = sphere.vertices if isinstance(sphere, GeodesicSphere) else sphere
    d = np.asarray(direction, dtype=float)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(norms == 0):
        raise ValueError("zero-length direction")
    return np.argmax(d @ bins.T, axis=-1)


@lru_cache(maxsize=None)
def bin_directions(n_bins: int) -> tuple[np.ndarray, np.ndarray | None]:
    """Histogram bin directions for a supported bin count.

    Vertex counts (6, 18, 66, 258, ...) use the sphere vertices; face counts
    (8, 32, 128, 512, ...) use the normalized face centers of the same level,
    which is how 32 and 128 bins per subblock are obtained. The second item
    is the triangle list for vertex bins (needed for soft assignment) or None.
    """
    for level in range(1, MAX_LEVEL + 1):
        sphere = build_geodesic_sphere(level)
        if sphere.n_vertices == n_bins:
            return sphere.vertices, sphere.triangles
        if sphere.n_triangles == n_bins:
            centers = sphere.face_centers()
            centers.setflags(write=False)
            return centers, None
    raise ValueError(f"unsupported bin count {n_bins}")
