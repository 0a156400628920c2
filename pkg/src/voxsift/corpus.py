"""Seeded synthetic corpus of deformed solids and the manifest format.

Each family is an implicit solid (negative inside) sampled on a regular
lattice and meshed with marching cubes, which yields closed surfaces.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation
from skimage.measure import marching_cubes

from .mesh_io import TriangleMesh, write_off
from .rotations import rotation_matrices_24

FAMILIES = ("ellipsoid", "box-with-protrusions", "torus", "multi-limb-star")
STAR_LIMBS = 5
SAMPLES = 56


@dataclass(frozen=True)
class ManifestEntry:
    model_id: str
    label: str
    path: Path


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]
    seed: int | None = None

    @property
    def labels(self) -> dict[str, str]:
        return {e.model_id: e.label for e in self.entries}


def read_manifest(path) -> CorpusManifest:
    """Read ``model_id,class,path``; relative paths resolve against the manifest directory."""
    path = Path(path)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["model_id", "class", "path"]:
            raise ValueError(f"{path}: manifest header must be model_id,class,path")
        for row in reader:
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            entries.append(ManifestEntry(row["model_id"], row["class"], p))
    ids = [e.model_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate model ids")
    return CorpusManifest(tuple(entries))


def write_manifest(path, manifest: CorpusManifest) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "class", "path"])
        for e in manifest.entries:
            p = e.path
            try:
                p = p.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([e.model_id, e.label, p.as_posix()])


# signed distance helpers; arrays of points have shape (..., 3)


def _sd_box(p, center, half):
    q = np.abs(p - center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    return outside + np.minimum(q.max(axis=-1), 0.0)


def _sd_capsule(p, a, b, radius):
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[..., None] * ab), axis=-1) - radius


def _ellipsoid(rng):
    axes = np.array([1.0, 0.62, 0.42]) * rng.uniform(0.9, 1.1, 3)
    # two low-frequency bumps along the long axis
    amp = rng.uniform(0.03, 0.08, 2)
    freq = rng.uniform(1.5, 2.5, 2)

    def sdf(p):
        r = np.linalg.norm(p / axes, axis=-1)
        wobble = amp[0] * np.sin(freq[0] * p[..., 0]) + amp[1] * np.cos(freq[1] * p[..., 1])
        return (r - 1.0 - wobble) * axes.min()

    return sdf, 1.3


def _box_with_protrusions(rng):
    half = np.array([0.7, 0.5, 0.35]) * rng.uniform(0.9, 1.1, 3)
    lengths = rng.uniform(0.25, 0.45, 3)
    parts = [(np.zeros(3), half)]
    # posts on +x, +y and -z faces
    parts.append((np.array([half[0] + lengths[0] / 2, 0.15, 0.0]), np.array([lengths[0] / 2 + 0.05, 0.12, 0.12])))
    parts.append((np.array([-0.3, half[1] + lengths[1] / 2, 0.0]), np.array([0.12, lengths[1] / 2 + 0.05, 0.12])))
    parts.append((np.array([0.25, -0.1, -half[2] - lengths[2] / 2]), np.array([0.14, 0.14, lengths[2] / 2 + 0.05])))

    def sdf(p):
        return np.min(np.stack([_sd_box(p, c, h) for c, h in parts]), axis=0)

    return sdf, 1.4


def _torus(rng):
    major = 0.8 * rng.uniform(0.9, 1.1)
    minor = 0.3 * rng.uniform(0.85, 1.15)
    squash = rng.uniform(0.85, 1.15)

    def sdf(p):
        q = np.hypot(p[..., 0], p[..., 1] * squash) - major
        return np.hypot(q, p[..., 2]) - minor

    return sdf, 1.4


def _limb_directions(n: int) -> np.ndarray:
    # fixed, roughly even directions (Fibonacci sphere)
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    t = math.pi * (3 - math.sqrt(5)) * i
    return np.stack([r * np.cos(t), r * np.sin(t), z], axis=1)


def _multi_limb_star(rng, return_angles: bool = False):
    dirs = _limb_directions(STAR_LIMBS)
    body = 0.42
    radius = 0.13
    segments = []
    angles = []
    for d in dirs:
        joint = d * (body + 0.45)
        # bend about a random axis perpendicular to the limb
        perp = np.cross(d, rng.normal(size=3))
        perp /= np.linalg.norm(perp)
        angle = rng.uniform(-0.9, 0.9)
        angles.append(angle)
        d2 = Rotation.from_rotvec(perp * angle).apply(d)
        tip = joint + d2 * 0.45
        segments.append((d * body * 0.5, joint))
        segments.append((joint, tip))

    def sdf(p):
        parts = [np.linalg.norm(p, axis=-1) - body]
        parts += [_sd_capsule(p, a, b, radius) for a, b in segments]
        return np.min(np.stack(parts), axis=0)

    if return_angles:
        return sdf, 1.5, np.array(angles)
    return sdf, 1.5


_BUILDERS = {
    "ellipsoid": _ellipsoid,
    "box-with-protrusions": _box_with_protrusions,
    "torus": _torus,
    "multi-limb-star": _multi_limb_star,
}


def star_bend_angles(seed: int) -> np.ndarray:
    """Limb bend angles drawn for a star built from ``seed``; exposed for inspection."""
    return _multi_limb_star(np.random.default_rng(seed), return_angles=True)[2]


def canonical_family(name: str) -> str:
    """Family name with spaces and underscores written as hyphens, e.g. "multi-limb star"."""
    family = "-".join(str(name).strip().lower().replace("_", " ").split())
    if family not in _BUILDERS:
        raise ValueError(f"unsupported shape family {name!r}; choose from {FAMILIES}")
    return family


def make_shape(family: str, seed: int, samples: int = SAMPLES, pose: bool = True) -> TriangleMesh:
    """One closed mesh of ``family``; ``pose`` applies the random scale and rotation."""
    family = canonical_family(family)
    rng = np.random.default_rng(seed)
    sdf, extent = _BUILDERS[family](rng)
    axis = np.linspace(-extent, extent, samples)
    pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
    values = sdf(pts)
    step = axis[1] - axis[0]
    verts, faces, _, _ = marching_cubes(values, 0.0, spacing=(step, step, step))
    verts = verts - extent
    if pose:
        scale = rng.uniform(0.8, 1.2)
        if rng.random() < 0.5:
            rot = rotation_matrices_24()[int(rng.integers(24))].astype(float)
        else:
            rot = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
        verts = scale * verts @ rot.T
    return TriangleMesh(verts, faces.astype(np.int64))


def generate_corpus(classes, per_class: int, seed: int, out_dir) -> CorpusManifest:
    """Write ``per_class`` OFF meshes per family and a ``manifest.csv`` into ``out_dir``."""
    classes = [canonical_family(c) for c in classes]
    if len(set(classes)) != len(classes):
        raise ValueError("shape families must be distinct")
    if per_class < 2:
        raise ValueError("per_class must be at least 2")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(seed).generate_state(len(classes) * per_class)
    entries = []
    for ci, family in enumerate(classes):
        for j in range(per_class):
            model_id = f"{family}-{j:03d}"
            mesh = make_shape(family, int(seeds[ci * per_class + j]))
            path = out / f"{model_id}.off"
            write_off(path, mesh)
            entries.append(ManifestEntry(model_id, family, path))
    manifest = CorpusManifest(tuple(entries), seed)
    write_manifest(out / "manifest.csv", manifest)
    return manifest
