"""DoG extrema detection, surface filtering and keypoint normals."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from itertools import product

import numpy as np

from .scale_space import ScaleSpace

DEFAULT_THRESHOLD = 0.01
NORMAL_EPS = 1e-9

_OFFSETS_26 = [o for o in product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]
_OFFSETS_27 = list(product((-1, 0, 1), repeat=3))


class DegenerateNormalError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    position: tuple[int, int, int]
    scale_index: int
    dog_value: float
    polarity: str
    normal: tuple[float, float, float] | None = None

    def with_normal(self, normal) -> "Keypoint":
        return replace(self, normal=tuple(float(c) for c in normal))

    @property
    def sort_key(self):
        x, y, z = self.position
        return (self.scale_index, z, y, x)


def _shifted(arr: np.ndarray, offset) -> np.ndarray:
    """View of ``arr`` over the interior, shifted by ``offset``."""
    n = arr.shape
    return arr[tuple(slice(1 + o, n[a] - 1 + o) for a, o in enumerate(offset))]


EXTREMA_MODES = ("adjacent", "all", "persistent", "spatial")


def _spatial_extrema(dog: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    center = _shifted(dog, (0, 0, 0))
    is_max = np.abs(center) >= threshold
    is_min = is_max.copy()
    for o in _OFFSETS_26:
        nb = _shifted(dog, o)
        is_max &= center > nb
        is_min &= center < nb
    return is_max, is_min


def detect_extrema(
    space: ScaleSpace,
    threshold: float = DEFAULT_THRESHOLD,
    mode: str = "adjacent",
) -> list[Keypoint]:
    """Strict DoG extrema, never on the grid boundary.

    ``adjacent``: at scale indices 1..S-2, strictly above (below) the 26
    spatial neighbors and the 3x3x3 neighborhoods one scale up and down.
    ``all``: as ``adjacent`` but against the 3x3x3 neighborhood of every
    other level.
    ``spatial``: at scale indices 1..S-2, strictly above (below) the 26
    spatial neighbors only.
    ``persistent``: a strict spatial extremum of the same polarity among its
    26 neighbors at every DoG level; it is reported at the scale index in
    1..S-2 with the largest ``|DoG|``.
    """
    dogs = space.dog_levels
    n_levels = len(dogs)
    if n_levels < 3:
        raise ValueError("extrema detection needs at least 3 DoG levels")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if mode not in EXTREMA_MODES:
        raise ValueError(f"mode must be one of {EXTREMA_MODES}")
    if min(space.shape) < 3:
        return []

    found: list[Keypoint] = []
    if mode == "persistent":
        masks = [_spatial_extrema(d, 0.0) for d in dogs]
        inner = np.stack([_shifted(d, (0, 0, 0)) for d in dogs[1:-1]])
        best = np.argmax(np.abs(inner), axis=0) + 1
        best_val = np.take_along_axis(inner, best[None] - 1, axis=0)[0]
        strong = np.abs(best_val) >= threshold
        for polarity, which in (("maximum", 0), ("minimum", 1)):
            mask = np.logical_and.reduce([m[which] for m in masks]) & strong
            for x, y, z in np.argwhere(mask):
                s = int(best[x, y, z])
                pos = (int(x) + 1, int(y) + 1, int(z) + 1)
                found.append(Keypoint(pos, s, float(dogs[s][pos]), polarity))
        found.sort(key=lambda k: k.sort_key)
        return found

    for s in range(1, n_levels - 1):
        center = _shifted(dogs[s], (0, 0, 0))
        is_max, is_min = _spatial_extrema(dogs[s], threshold)
        if mode == "spatial":
            others = []
        elif mode == "all":
            others = [t for t in range(n_levels) if t != s]
        else:
            others = [s - 1, s + 1]
        for t in others:
            for o in _OFFSETS_27:
                nb = _shifted(dogs[t], o)
                is_max &= center > nb
                is_min &= center < nb
        for mask, polarity in ((is_max, "maximum"), (is_min, "minimum")):
            for x, y, z in np.argwhere(mask):
                pos = (int(x) + 1, int(y) + 1, int(z) + 1)
                found.append(Keypoint(pos, s, float(dogs[s][pos]), polarity))
    found.sort(key=lambda k: k.sort_key)
    return found


def filter_surface(keypoints: list[Keypoint], surface: np.ndarray) -> list[Keypoint]:
    return [kp for kp in keypoints if surface[kp.position]]


def _central_gradient_at(field: np.ndarray, p) -> np.ndarray:
    x, y, z = p
    return 0.5 * np.array(
        [
            field[x + 1, y, z] - field[x - 1, y, z],
            field[x, y + 1, z] - field[x, y - 1, z],
            field[x, y, z + 1] - field[x, y, z - 1],
        ]
    )


def estimate_normal(space: ScaleSpace, kp: Keypoint) -> np.ndarray:
    """Outward unit normal: the negated smoothed-occupancy gradient at the keypoint's level.

    Falls back to the direction from the occupied centroid of the 5x5x5
    neighborhood when the gradient vanishes.
    """
    field = space.level_for_dog(kp.scale_index)
    p = kp.position
    if any(c < 1 or c > n - 2 for c, n in zip(p, field.shape)):
        raise ValueError(f"keypoint {p} is on the grid boundary")
    g = _central_gradient_at(field, p)
    norm = np.sqrt(np.sum(np.sort(g * g)))
    if norm >= NORMAL_EPS:
        return -g / norm

    base = space.base
    lo = [max(c - 2, 0) for c in p]
    hi = [min(c + 3, n) for c, n in zip(p, base.shape)]
    block = base[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    idx = np.argwhere(block > 0.5)
    if len(idx):
        centroid = idx.mean(axis=0) + lo
        d = np.asarray(p, dtype=float) - centroid
        dn = np.linalg.norm(d)
        if dn >= NORMAL_EPS:
            return d / dn
    raise DegenerateNormalError(f"no usable normal at {p}")


def attach_normals(space: ScaleSpace, keypoints: list[Keypoint]) -> tuple[list[Keypoint], list[Keypoint]]:
    """Split keypoints into (with normals, degenerate)."""
    ok, flagged = [], []
    for kp in keypoints:
        try:
            ok.append(kp.with_normal(estimate_normal(space, kp)))
        except DegenerateNormalError:
            flagged.append(kp)
    return ok, flagged


KEYPOINT_HEADER = ["x", "y", "z", "scale_index", "dog_value", "polarity", "nx", "ny", "nz"]


def write_keypoints_csv(path, keypoints: list[Keypoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KEYPOINT_HEADER)
        for kp in sorted(keypoints, key=lambda k: k.sort_key):
            n = kp.normal if kp.normal is not None else ("", "", "")
            w.writerow(
                [*kp.position, kp.scale_index, f"{kp.dog_value:.9g}", kp.polarity]
                + [f"{c:.9g}" if c != "" else "" for c in n]
            )


def read_keypoints_csv(path) -> list[Keypoint]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != KEYPOINT_HEADER:
            raise ValueError(f"{path}: unexpected keypoint header {reader.fieldnames}")
        for row in reader:
            normal = None
            if row["nx"]:
                normal = (float(row["nx"]), float(row["ny"]), float(row["nz"]))
            out.append(
                Keypoint(
                    (int(row["x"]), int(row["y"]), int(row["z"])),
                    int(row["scale_index"]),
                    float(row["dog_value"]),
                    row["polarity"],
                    normal,
                )
            )
    return out
