"""3D Gaussian scale space and difference-of-Gaussians stack.

Smoothing is separable and zero-padded. Each 1D pass sums symmetric tap
pairs before weighting and the three axis orders are combined with a
sorted, order-independent sum, so results are bitwise equivariant under
the 24 axis-aligned rotations of the grid (flips and axis permutations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

DEFAULT_BASE_DELTA = 1.6
DEFAULT_K_VALUES = tuple(2.0 ** (i / 3.0) for i in range(5))
DOG_MODES = ("vs-base", "adjacent")


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized Gaussian weights on [-r, r] with r = ceil(3 sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    radius = int(math.ceil(3.0 * sigma))
    i = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-(i * i) / (2.0 * sigma * sigma))
    w /= w.sum()
    # enforce exact symmetry after the division
    w = 0.5 * (w + w[::-1])
    return w


def _pass_1d(field: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    r = len(weights) // 2
    n = field.shape[axis]
    pad = [(0, 0)] * field.ndim
    pad[axis] = (r, r)
    padded = np.pad(field, pad)

    def window(offset: int) -> np.ndarray:
        sl = [slice(None)] * field.ndim
        sl[axis] = slice(r + offset, r + offset + n)
        return padded[tuple(sl)]

    out = weights[r] * field
    for i in range(1, r + 1):
        out = out + weights[r + i] * (window(i) + window(-i))
    return out


def smooth(field: np.ndarray, sigma: float) -> np.ndarray:
    """Convolve a 3D field with the truncated, normalized Gaussian of width ``sigma``."""
    weights = gaussian_kernel_1d(sigma)
    field = np.asarray(field, dtype=float)
    if field.ndim != 3:
        raise ValueError("smooth expects a 3D field")
    first = {a: _pass_1d(field, weights, a) for a in range(3)}
    results = []
    for a, b, c in permutations(range(3)):
        results.append(_pass_1d(_pass_1d(first[a], weights, b), weights, c))
    stacked = np.sort(np.stack(results), axis=0)
    total = stacked[0]
    for k in range(1, len(stacked)):
        total = total + stacked[k]
    return total / len(stacked)


@dataclass(frozen=True)
class ScaleSpace:
    base_delta: float
    k_values: tuple[float, ...]
    base: np.ndarray
    levels: tuple[np.ndarray, ...]
    dog_levels: tuple[np.ndarray, ...]
    dog_mode: str = "vs-base"

    @property
    def sigmas(self) -> tuple[float, ...]:
        return tuple(k * self.base_delta for k in self.k_values)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.base.shape

    def level_for_dog(self, scale_index: int) -> np.ndarray:
        """Gaussian level whose gradients describe a DoG scale index."""
        return self.levels[scale_index]


def build_scale_space(
    grid,
    base_delta: float = DEFAULT_BASE_DELTA,
    k_values=DEFAULT_K_VALUES,
    dog_mode: str = "vs-base",
) -> ScaleSpace:
    """Smooth the occupancy at sigma = k * base_delta for each k and form the DoG stack.

    ``vs-base`` subtracts the unsmoothed model from every level;
    ``adjacent`` subtracts consecutive levels (one fewer DoG level).
    """
    occupancy = getattr(grid, "occupancy", grid)
    if not base_delta > 0:
        raise ValueError("base_delta must be positive")
    k_values = tuple(float(k) for k in k_values)
    if not k_values:
        raise ValueError("k_values must be nonempty")
    if any(k <= 0 for k in k_values) or any(b <= a for a, b in zip(k_values, k_values[1:])):
        raise ValueError("k_values must be positive and strictly increasing")
    if dog_mode not in DOG_MODES:
        raise ValueError(f"dog_mode must be one of {DOG_MODES}")

    base = np.asarray(occupancy, dtype=float)
    levels = tuple(smooth(base, k * base_delta) for k in k_values)
    if dog_mode == "vs-base":
        dogs = tuple(level - base for level in levels)
    else:
        dogs = tuple(hi - lo for lo, hi in zip(levels, levels[1:]))
    for arr in (base, *levels, *dogs):
        arr.setflags(write=False)
    return ScaleSpace(
        base_delta=float(base_delta),
        k_values=k_values,
        base=base,
        levels=levels,
        dog_levels=dogs,
        dog_mode=dog_mode,
    )


def write_scalar_field(path, field: np.ndarray) -> None:
    """Debug dump in the VOXG container, version 2 (float32 values)."""
    from .voxelizer import write_voxg

    write_voxg(path, np.asarray(field, dtype=np.float32), voxel_size=1.0, origin=(0.0, 0.0, 0.0))
