"""Arbitrary-scale super-resolution of 3D volumes with a local implicit voxel function."""

__version__ = "0.1.0"
