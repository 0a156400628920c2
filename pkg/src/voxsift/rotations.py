"""Axis-aligned rotations of vectors and cubic grids."""

from __future__ import annotations

from itertools import product

import numpy as np


def rotation_matrices_24() -> list[np.ndarray]:
    """The 24 proper rotations that map coordinate axes onto coordinate axes."""
    mats = []
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        for signs in product((1, -1), repeat=3):
            q = np.zeros((3, 3), dtype=int)
            for r, (c, s) in enumerate(zip(perm, signs)):
                q[r, c] = s
            if round(np.linalg.det(q)) == 1:
                mats.append(q)
    return mats


def rotate_grid(arr: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Rotate a cubic grid about its center so that voxel ``p`` moves to ``rotate_index(p, q, n)``."""
    q = np.asarray(q)
    perm = [int(np.flatnonzero(q[r])[0]) for r in range(3)]
    out = np.transpose(arr, perm)
    for r in range(3):
        if q[r, perm[r]] < 0:
            out = np.flip(out, axis=r)
    return np.ascontiguousarray(out)


def rotate_index(p, q: np.ndarray, n: int) -> tuple[int, int, int]:
    c = (n - 1) / 2.0
    v = np.asarray(q) @ (np.asarray(p, dtype=float) - c) + c
    return tuple(int(round(t)) for t in v)
