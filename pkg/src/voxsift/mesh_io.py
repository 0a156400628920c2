"""OFF/OBJ triangle mesh loading and normalization into the voxel grid frame."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DegenerateMeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, matrix=None, offset=None) -> "TriangleMesh":
        """Apply ``v -> matrix @ v + offset`` to every vertex."""
        v = self.vertices
        if matrix is not None:
            v = v @ np.asarray(matrix, dtype=float).T
        if offset is not None:
            v = v + np.asarray(offset, dtype=float)
        return TriangleMesh(v, self.triangles)


def _lines(source):
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, bytes):
        data = source
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode()
    text = data.decode("utf-8", errors="replace")
    return io.StringIO(text).read().splitlines()


def _parse_off(lines: list[str]) -> TriangleMesh:
    # (line number, tokens) with comments and blank lines dropped
    records = []
    for no, raw in enumerate(lines, start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            records.append((no, body))
    if not records:
        raise MeshParseError("empty file", 1)

    no, head = records[0]
    keyword = head[0]
    if not keyword.endswith("OFF"):
        raise MeshParseError(f"expected OFF header, found {keyword!r}", no)
    # "OFF nV nF nE" on a single line is also seen in the wild
    rest = head[1:]
    pos = 1
    if not rest:
        if len(records) < 2:
            raise MeshParseError("missing counts line", no)
        no, rest = records[1]
        pos = 2
    try:
        n_vertices, n_faces = int(rest[0]), int(rest[1])
    except (ValueError, IndexError):
        raise MeshParseError("malformed counts line", no) from None
    if n_vertices < 0 or n_faces < 0:
        raise MeshParseError("negative element count", no)

    if len(records) < pos + n_vertices + n_faces:
        last = records[-1][0]
        raise MeshParseError(
            f"expected {n_vertices} vertices and {n_faces} faces, file ends early", last
        )

    vertices = np.empty((n_vertices, 3))
    for idx in range(n_vertices):
        no, tok = records[pos + idx]
        try:
            # trailing color/normal values (COFF, NOFF) are ignored
            vertices[idx] = [float(t) for t in tok[:3]]
        except ValueError:
            raise MeshParseError("malformed vertex", no) from None
        if len(tok) < 3:
            raise MeshParseError("vertex needs 3 coordinates", no)
    pos += n_vertices

    triangles = []
    for idx in range(n_faces):
        no, tok = records[pos + idx]
        try:
            count = int(tok[0])
            ids = [int(t) for t in tok[1 : 1 + count]]
        except ValueError:
            raise MeshParseError("malformed face", no) from None
        if count < 3 or len(ids) != count:
            raise MeshParseError("face needs at least 3 vertex indices", no)
        for i in ids:
            if not 0 <= i < n_vertices:
                raise MeshParseError(f"vertex index {i} out of range [0, {n_vertices})", no)
        triangles += [(ids[0], ids[k], ids[k + 1]) for k in range(1, count - 1)]
    if not triangles:
        raise MeshParseError("mesh has no faces", records[-1][0])
    return TriangleMesh(vertices, np.array(triangles, dtype=np.int64))


def _parse_obj(lines: list[str]) -> TriangleMesh:
    vertices = []
    triangles = []
    last = 0
    for no, raw in enumerate(lines, start=1):
        last = no
        tok = raw.split("#", 1)[0].split()
        if not tok:
            continue
        if tok[0] == "v":
            try:
                vertices.append([float(t) for t in tok[1:4]])
            except ValueError:
                raise MeshParseError("malformed vertex", no) from None
            if len(vertices[-1]) != 3:
                raise MeshParseError("vertex needs 3 coordinates", no)
        elif tok[0] == "f":
            ids = []
            for ref in tok[1:]:
                try:
                    i = int(ref.split("/", 1)[0])
                except ValueError:
                    raise MeshParseError(f"malformed face reference {ref!r}", no) from None
                if i > 0:
                    i -= 1
                elif i < 0:
                    i += len(vertices)
                else:
                    raise MeshParseError("OBJ indices are 1-based; found 0", no)
                if not 0 <= i < len(vertices):
                    raise MeshParseError(f"vertex reference {ref} out of range", no)
                ids.append(i)
            if len(ids) < 3:
                raise MeshParseError("face needs at least 3 vertices", no)
            triangles += [(ids[0], ids[k], ids[k + 1]) for k in range(1, len(ids) - 1)]
    if not triangles:
        raise MeshParseError("mesh has no faces", last)
    return TriangleMesh(np.array(vertices, dtype=float), np.array(triangles, dtype=np.int64))


def load_mesh(source, format: str | None = None) -> TriangleMesh:
    """Load an OFF or OBJ mesh from a path, bytes, or a binary/text stream.

    ``format`` defaults to the file suffix when ``source`` is a path.
    """
    if format is None:
        if isinstance(source, (str, Path)):
            format = Path(source).suffix.lstrip(".")
        else:
            raise ValueError("format is required for non-path sources")
    fmt = format.upper()
    lines = _lines(source)
    if fmt == "OFF":
        return _parse_off(lines)
    if fmt == "OBJ":
        return _parse_obj(lines)
    raise ValueError(f"unsupported mesh format {format!r}")


def write_off(path, mesh: TriangleMesh) -> None:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} 0"]
    out += ["%.9g %.9g %.9g" % tuple(v) for v in mesh.vertices]
    out += ["3 %d %d %d" % tuple(t) for t in mesh.triangles]
    Path(path).write_text("\n".join(out) + "\n")


def normalization_transform(mesh: TriangleMesh, resolution: int, padding: int) -> tuple[float, np.ndarray]:
    """Scale and bounding-box center used by :func:`normalize_mesh`."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    if padding < 1 or 2 * padding >= resolution:
        raise ValueError("padding must satisfy 1 <= padding and 2*padding < resolution")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if not extent > 0:
        raise DegenerateMeshError("mesh bounding box has zero extent")
    return (resolution - 2 * padding) / extent, (lo + hi) / 2.0


def normalize_mesh(mesh: TriangleMesh, resolution: int = 64, padding: int = 4) -> TriangleMesh:
    """Center the bounding box on the grid and scale its longest edge to ``resolution - 2*padding``."""
    scale, center = normalization_transform(mesh, resolution, padding)
    v = (mesh.vertices - center) * scale + resolution / 2.0
    return TriangleMesh(v, mesh.triangles)
