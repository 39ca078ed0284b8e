"""Pinhole depth rendering by ray casting, and back-projection of depth maps."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import TriangleMesh
from .transform import RigidTransform, look_at

INVALID_DEPTH = 0.0
D_MAX = 1.6


@dataclass(frozen=True)
class Camera:
    width: int = 160
    height: int = 120
    fx: float = 60.0
    fy: float = 60.0
    cx: float | None = None
    cy: float | None = None
    pose: RigidTransform = field(default_factory=RigidTransform)
    d_max: float = D_MAX

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.cx is None:
            object.__setattr__(self, "cx", (self.width - 1) / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", (self.height - 1) / 2.0)

    def with_pose(self, pose: RigidTransform) -> "Camera":
        return replace(self, pose=pose)

    def ray_directions(self) -> np.ndarray:
        """Per-pixel ray directions in the camera frame, scaled so z = 1."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones(u.shape)], axis=-1)
        return d.reshape(-1, 3)


@dataclass
class DepthImage:
    depth: np.ndarray
    camera: Camera

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0

    def copy(self) -> "DepthImage":
        return DepthImage(self.depth.copy(), self.camera)


def viewpoint_camera(base: Camera, rng: np.random.Generator, radius: float = 1.0) -> Camera:
    """Camera on a sphere of ``radius`` around the origin, uniformly distributed, looking inward."""
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return base.with_pose(look_at(radius * direction))


def render_depth(mesh: TriangleMesh, camera: Camera, chunk: int = 2048) -> DepthImage:
    """Nearest ray-triangle hit per pixel (Möller–Trumbore); misses stay ``INVALID_DEPTH``.

    Hits farther than ``camera.d_max`` are treated as misses.
    """
    h, w = camera.height, camera.width
    depth = np.full(h * w, INVALID_DEPTH)
    if len(mesh.triangles) == 0:
        return DepthImage(depth.reshape(h, w), camera)

    R = camera.pose.matrix
    origin = camera.pose.translation
    # rays written as origin + t * dir with dir's camera-frame z equal to 1,
    # so the ray parameter t is the depth directly
    dirs = camera.ray_directions() @ R.T
    a, b, c = mesh.corners()
    e1, e2 = b - a, c - a
    s = origin - a  # (T, 3)
    qvec = np.cross(s, e1)  # (T, 3), ray independent
    t_num = (qvec * e2).sum(axis=1)
    eps = 1e-12
    for start in range(0, len(dirs), chunk):
        d = dirs[start:start + chunk]
        pvec = np.cross(d[:, None, :], e2[None, :, :])  # (P, T, 3)
        det = (pvec * e1[None]).sum(axis=2)
        ok = np.abs(det) > eps
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = (pvec * s[None]).sum(axis=2) * inv
        v = (d @ qvec.T) * inv
        t = t_num[None, :] * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > eps) & (t <= camera.d_max)
        t = np.where(hit, t, np.inf)
        nearest = t.min(axis=1)
        depth[start:start + chunk] = np.where(np.isfinite(nearest), nearest, INVALID_DEPTH)
    return DepthImage(depth.reshape(h, w), camera)


def backproject(image: DepthImage) -> np.ndarray:
    """World-frame points for every valid pixel, in row-major pixel order."""
    cam = image.camera
    v, u = np.nonzero(image.depth > 0)
    d = image.depth[v, u]
    pts = np.stack([(u - cam.cx) * d / cam.fx, (v - cam.cy) * d / cam.fy, d], axis=1)
    if len(pts) == 0:
        return np.zeros((0, 3))
    return cam.pose.apply(pts)
