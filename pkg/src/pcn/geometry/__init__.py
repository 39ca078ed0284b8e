"""Point-cloud and mesh primitives."""

from .camera import Camera, DepthImage, backproject, render_depth, viewpoint_camera
from .cloud import bbox_diagonal, normalize_cloud
from .kdtree import KdTree, kdtree_build, nearest, nearest_neighbors
from .mesh import TriangleMesh, read_off, sample_mesh_surface, write_off
from .ply import PlyError, ply_read, ply_write
from .transform import RigidTransform, apply_transform, look_at

__all__ = [
    "Camera", "DepthImage", "KdTree", "PlyError", "RigidTransform", "TriangleMesh",
    "apply_transform", "backproject", "bbox_diagonal", "kdtree_build", "look_at",
    "nearest", "nearest_neighbors", "normalize_cloud", "ply_read", "ply_write",
    "read_off", "render_depth", "sample_mesh_surface", "viewpoint_camera", "write_off",
]
