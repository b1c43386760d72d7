"""Layered 3D halftoning of textured meshes into per-voxel material assignments."""
__version__ = "0.1.0"
