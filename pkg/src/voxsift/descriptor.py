"""Rotation-normalized orientation histograms over an 8x8x8 window.

The window is split into 2x2x2 subblocks of 4x4x4 samples. Every sample's
gradient is rotated into the keypoint frame (surface normal on +z, dominant
azimuth on +x) and its magnitude is added to the nearest bin direction of
its subblock.

Two window placements are supported. ``canonical`` (default) samples the
window on the lattice {-3.5, ..., 3.5}^3 of the keypoint frame, so the
keypoint sits exactly at the window center and the subblock layout turns
with the frame; gradients are trilinearly interpolated. ``grid`` uses the
voxels at offsets -4..+3 along the grid axes with subblocks fixed to the
grid; it is cheaper but not invariant to rotations of the grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .geodesic import bin_directions
from .keypoints import Keypoint

WINDOW = 8
SUBBLOCK = 4
N_SUBBLOCKS = 8
DEFAULT_N_BINS = 66
DEFAULT_CLAMP = 0.2
WINDOW_MODES = ("canonical", "grid")

_POLAR_EPS = 1e-6
_AZIMUTH_MASS_EPS = 1e-9

_HALF = np.arange(WINDOW) - (WINDOW - 1) / 2.0
# canonical sample offsets, x-fastest
_CANONICAL_OFFSETS = np.array([(x, y, z) for z in _HALF for y in _HALF for x in _HALF])
_GRID_OFFSETS = np.array(
    [(x, y, z) for z in range(-4, 4) for y in range(-4, 4) for x in range(-4, 4)], dtype=np.int64
)
# integer ball used to fix the azimuth in canonical mode; invariant under axis-aligned rotations
_BALL_OFFSETS = np.array(
    [o for o in product(range(-4, 5), repeat=3) if o[0] ** 2 + o[1] ** 2 + o[2] ** 2 <= 16],
    dtype=np.int64,
)


class DegenerateDescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorOptions:
    n_bins: int = DEFAULT_N_BINS
    window: str = "canonical"
    azimuth_alignment: bool = True
    soft_binning: bool = False
    spatial_weighting: bool = False
    clamp: float = DEFAULT_CLAMP

    def __post_init__(self):
        if self.window not in WINDOW_MODES:
            raise ValueError(f"window must be one of {WINDOW_MODES}")
        directions, triangles = bin_directions(self.n_bins)
        if self.soft_binning and triangles is None:
            raise ValueError("soft binning needs vertex bins (6, 18, 66, 258, ...)")
        if not 0 < self.clamp <= 1:
            raise ValueError("clamp must be in (0, 1]")

    @property
    def length(self) -> int:
        return N_SUBBLOCKS * self.n_bins


@dataclass(frozen=True)
class Descriptor:
    keypoint: Keypoint
    bins: np.ndarray


def gradient_field(field: np.ndarray) -> np.ndarray:
    """Central differences inside, one-sided differences on the boundary; shape (..., 3)."""
    field = np.asarray(field, dtype=float)
    if min(field.shape) < 3:
        raise ValueError("gradient_field needs at least 3 samples per axis")
    return np.stack(np.gradient(field), axis=-1)


def spherical_angles(v) -> tuple[float, float]:
    """Polar angle phi in [0, pi] and azimuth theta in [0, 2pi) of a nonzero vector.

    theta uses the arcsin form: asin(y/S) for x >= 0, pi - asin(y/S)
    otherwise, with theta = 0 for vectors on the polar axis.
    """
    x, y, z = (float(c) for c in v)
    r = math.sqrt(x * x + y * y + z * z)
    if r <= 1e-12:
        raise ValueError("spherical_angles of a zero vector")
    phi = math.acos(max(-1.0, min(1.0, z / r)))
    s = math.sqrt(x * x + y * y)
    if s < 1e-12:
        return phi, 0.0
    a = math.asin(max(-1.0, min(1.0, y / s)))
    theta = a if x >= 0 else math.pi - a
    theta %= 2.0 * math.pi
    return phi, theta


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    kx, ky, kz = axis
    k = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def align_to_pole(normal) -> np.ndarray:
    """Smallest rotation taking ``normal`` to +z."""
    n = np.asarray(normal, dtype=float)
    axis = np.cross(n, [0.0, 0.0, 1.0])
    s = float(np.linalg.norm(axis))
    c = float(n[2])
    if s < 1e-15:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    return _rotation_about(axis / s, math.atan2(s, c))


def normalization_rotation(normal, window_gradients) -> np.ndarray:
    """Rotation mapping the normal to +z and the mean gradient azimuth to theta = 0."""
    n = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("normal must be a unit vector")
    r_align = align_to_pole(n)
    g = np.asarray(window_gradients, dtype=float).reshape(-1, 3)
    if len(g) == 0:
        return r_align
    h = g @ r_align.T
    s = np.hypot(h[:, 0], h[:, 1])
    keep = s >= _POLAR_EPS
    if not keep.any():
        return r_align
    mass = np.linalg.norm(g[keep], axis=1)
    cx = np.sum(mass * h[keep, 0] / s[keep])
    cy = np.sum(mass * h[keep, 1] / s[keep])
    if math.hypot(cx, cy) < _AZIMUTH_MASS_EPS:
        return r_align
    alpha = math.atan2(cy, cx)
    ca, sa = math.cos(alpha), math.sin(alpha)
    r_az = np.array([[ca, sa, 0.0], [-sa, ca, 0.0], [0.0, 0.0, 1.0]])
    return r_az @ r_align


def _gather(grad: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Gradient vectors at integer positions, zero outside the grid."""
    shape = np.array(grad.shape[:3])
    inside = np.all((idx >= 0) & (idx < shape), axis=1)
    out = np.zeros((len(idx), 3))
    p = idx[inside]
    out[inside] = grad[p[:, 0], p[:, 1], p[:, 2]]
    return out


def _trilinear(grad: np.ndarray, points: np.ndarray) -> np.ndarray:
    base = np.floor(points).astype(np.int64)
    frac = points - base
    out = np.zeros((len(points), 3))
    for corner in product((0, 1), repeat=3):
        c = np.array(corner)
        w = np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1)
        out += w[:, None] * _gather(grad, base + c)
    return out


def _soft_weights(directions: np.ndarray, vertices: np.ndarray, triangles: np.ndarray):
    """Barycentric weights of each direction within its containing sphere triangle."""
    mats = np.transpose(vertices[triangles], (0, 2, 1))  # columns are vertices
    inv = np.linalg.inv(mats)
    bary = np.einsum("tij,nj->nti", inv, directions)
    inside = np.all(bary >= -1e-12, axis=2)
    tri = np.argmax(inside, axis=1)
    w = np.clip(bary[np.arange(len(directions)), tri], 0.0, None)
    w /= w.sum(axis=1, keepdims=True)
    return triangles[tri], w


def window_samples(grad: np.ndarray, kp: Keypoint, options: DescriptorOptions):
    """(rotation, rotated gradients, subblock index, spatial weight) for the keypoint window."""
    p = np.asarray(kp.position, dtype=np.int64)
    if options.window == "grid":
        g = _gather(grad, p + _GRID_OFFSETS)
        rot = normalization_rotation(kp.normal, g) if options.azimuth_alignment else align_to_pole(kp.normal)
        offsets = _GRID_OFFSETS + 0.5
    else:
        if options.azimuth_alignment:
            rot = normalization_rotation(kp.normal, _gather(grad, p + _BALL_OFFSETS))
        else:
            rot = align_to_pole(kp.normal)
        offsets = _CANONICAL_OFFSETS
        # sample positions: keypoint + R^T c
        g = _trilinear(grad, p + offsets @ rot)
    rotated = g @ rot.T
    block = (offsets[:, 0] > 0) + 2 * (offsets[:, 1] > 0) + 4 * (offsets[:, 2] > 0)
    if options.spatial_weighting:
        sigma = WINDOW / 2.0
        weight = np.exp(-np.sum(offsets * offsets, axis=1) / (2.0 * sigma * sigma))
    else:
        weight = np.ones(len(offsets))
    return rot, rotated, block.astype(np.int64), weight


def raw_histogram(grad: np.ndarray, kp: Keypoint, options: DescriptorOptions) -> np.ndarray:
    """Unnormalized (n_subblocks, n_bins) gradient-magnitude histogram."""
    if kp.normal is None:
        raise ValueError("keypoint has no normal")
    directions, triangles = bin_directions(options.n_bins)
    _, rotated, block, weight = window_samples(grad, kp, options)
    mag = np.linalg.norm(rotated, axis=1)
    keep = mag > 0
    hist = np.zeros((N_SUBBLOCKS, options.n_bins))
    if not keep.any():
        return hist
    unit = rotated[keep] / mag[keep, None]
    mass = mag[keep] * weight[keep]
    blk = block[keep]
    if options.soft_binning:
        verts, w = _soft_weights(unit, directions, triangles)
        for j in range(3):
            np.add.at(hist, (blk, verts[:, j]), mass * w[:, j])
    else:
        np.add.at(hist, (blk, np.argmax(unit @ directions.T, axis=1)), mass)
    return hist


def normalize_descriptor(values: np.ndarray, clamp: float = DEFAULT_CLAMP) -> np.ndarray:
    """L2 normalize, clamp each entry at ``clamp``, L2 normalize again."""
    v = np.asarray(values, dtype=float).ravel()
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise DegenerateDescriptorError("descriptor window has zero gradient mass")
    v = np.minimum(v / norm, clamp)
    return v / np.linalg.norm(v)


def compute_descriptor(field_or_gradient: np.ndarray, kp: Keypoint, options: DescriptorOptions | None = None) -> Descriptor:
    """Descriptor of one keypoint.

    Accepts either the smoothed field at the keypoint's scale or its
    precomputed gradient (shape (..., 3)).
    """
    options = options or DescriptorOptions()
    arr = np.asarray(field_or_gradient)
    grad = arr if arr.ndim == 4 else gradient_field(arr)
    hist = raw_histogram(grad, kp, options)
    return Descriptor(kp, normalize_descriptor(hist, options.clamp))


def compute_descriptors(space, keypoints: list[Keypoint], options: DescriptorOptions | None = None):
    """Descriptors for all keypoints with normals; returns (descriptors, skipped keypoints)."""
    options = options or DescriptorOptions()
    gradients: dict[int, np.ndarray] = {}
    out, skipped = [], []
    for kp in keypoints:
        if kp.normal is None:
            skipped.append(kp)
            continue
        if kp.scale_index not in gradients:
            gradients[kp.scale_index] = gradient_field(space.level_for_dog(kp.scale_index))
        try:
            out.append(compute_descriptor(gradients[kp.scale_index], kp, options))
        except DegenerateDescriptorError:
            skipped.append(kp)
    return out, skipped


def write_descriptors_csv(path, descriptors: list[Descriptor], length: int | None = None) -> None:
    if length is None:
        length = len(descriptors[0].bins) if descriptors else N_SUBBLOCKS * DEFAULT_N_BINS
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", "scale_index"] + [f"b{i}" for i in range(length)])
        for d in descriptors:
            w.writerow([*d.keypoint.position, d.keypoint.scale_index] + [f"{b:.9g}" for b in d.bins])


def read_descriptors_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (positions with scale index as (n, 4) ints, descriptor matrix (n, D))."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:4] != ["x", "y", "z", "scale_index"]:
            raise ValueError(f"{path}: not a descriptor file")
        length = len(header) - 4
        meta, rows = [], []
        for row in reader:
            if len(row) != length + 4:
                raise ValueError(f"{path}: row of length {len(row)}, expected {length + 4}")
            meta.append([int(v) for v in row[:4]])
            rows.append([float(v) for v in row[4:]])
    return np.array(meta, dtype=np.int64).reshape(-1, 4), np.array(rows, dtype=float).reshape(-1, length)
