"""Voxel-grid 3D salient local features and bag-of-words shape retrieval."""

__version__ = "0.1.0"
