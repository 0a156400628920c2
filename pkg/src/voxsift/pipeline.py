"""Mesh -> grid -> scale space -> surface keypoints -> descriptors."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import PipelineConfig
from .descriptor import Descriptor, compute_descriptors
from .keypoints import Keypoint, attach_normals, detect_extrema, filter_surface
from .mesh_io import TriangleMesh, normalization_transform, normalize_mesh
from .scale_space import ScaleSpace, build_scale_space
from .voxelizer import VoxelGrid, surface_voxels, voxelize

log = logging.getLogger(__name__)


@dataclass
class ModelFeatures:
    grid: VoxelGrid
    space: ScaleSpace
    keypoints: list[Keypoint]
    descriptors: list[Descriptor]
    skipped: list[Keypoint]

    @property
    def matrix(self) -> np.ndarray:
        if not self.descriptors:
            return np.zeros((0, 0))
        return np.stack([d.bins for d in self.descriptors])


def voxelize_mesh(mesh: TriangleMesh, config: PipelineConfig) -> VoxelGrid:
    """Normalize into the grid frame and voxelize, recording the original units."""
    scale, center = normalization_transform(mesh, config.resolution, config.padding)
    normalized = normalize_mesh(mesh, config.resolution, config.padding)
    origin = center - (config.resolution / 2.0) / scale
    return voxelize(normalized, config.resolution, voxel_size=1.0 / scale, origin=origin)


def detect_keypoints(grid, config: PipelineConfig) -> tuple[ScaleSpace, list[Keypoint], list[Keypoint]]:
    """Surface extrema with normals; returns (scale space, keypoints, degenerate-normal keypoints)."""
    occupancy = getattr(grid, "occupancy", grid)
    space = build_scale_space(occupancy, config.base_delta, config.k_values, config.dog_mode)
    raw = detect_extrema(space, config.extrema_threshold, mode=config.extrema_mode)
    on_surface = filter_surface(raw, surface_voxels(occupancy))
    keypoints, flagged = attach_normals(space, on_surface)
    return space, keypoints, flagged


def features_from_grid(grid, config: PipelineConfig) -> ModelFeatures:
    space, keypoints, flagged = detect_keypoints(grid, config)
    descriptors, skipped = compute_descriptors(space, keypoints, config.descriptor_options())
    if not isinstance(grid, VoxelGrid):
        grid = VoxelGrid(np.asarray(grid, dtype=bool))
    return ModelFeatures(grid, space, keypoints, descriptors, flagged + skipped)


def features_from_mesh(mesh: TriangleMesh, config: PipelineConfig) -> ModelFeatures:
    return features_from_grid(voxelize_mesh(mesh, config), config)
