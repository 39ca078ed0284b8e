"""Triangle meshes: area-weighted surface sampling and OFF persistence."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError(f"triangle index out of range for {len(v)} vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        tri = self.vertices[self.triangles]
        return tri[:, 0], tri[:, 1], tri[:, 2]

    def face_areas(self) -> np.ndarray:
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def transformed(self, T) -> "TriangleMesh":
        return TriangleMesh(T.apply(self.vertices), self.triangles)

    @staticmethod
    def merge(meshes) -> "TriangleMesh":
        verts, tris, offset = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            tris.append(m.triangles + offset)
            offset += len(m.vertices)
        return TriangleMesh(np.concatenate(verts), np.concatenate(tris))


def sample_mesh_surface(mesh: TriangleMesh, n: int, seed=0, return_faces: bool = False):
    """Draw ``n`` points uniformly over the surface area of ``mesh``.

    Faces are picked with probability proportional to area, then a point is
    placed uniformly inside the face with the square-root barycentric trick.
    With ``return_faces`` the face index and barycentric weights of every
    sample are returned as well.
    """
    areas = mesh.face_areas()
    total = areas.sum() if len(areas) else 0.0
    if not total > 0:
        raise ValueError("cannot sample a mesh with zero surface area")
    rng = np.random.default_rng(seed)
    faces = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    bary = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=1)
    a, b, c = mesh.corners()
    pts = bary[:, :1] * a[faces] + bary[:, 1:2] * b[faces] + bary[:, 2:] * c[faces]
    if return_faces:
        return pts, faces, bary
    return pts


def read_off(path) -> TriangleMesh:
    tokens: list[str] = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].strip().startswith("OFF"):
        raise ValueError(f"{path}: line 1: missing OFF header")
    first = lines[0].strip()[3:].split()
    tokens.extend(first)
    for line in lines[1:]:
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
        pos = 3
        verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
        pos += 3 * nv
        tris = []
        for _ in range(nf):
            k = int(tokens[pos])
            idx = [int(t) for t in tokens[pos + 1:pos + 1 + k]]
            pos += 1 + k
            # fan-triangulate polygons
            tris.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, k - 1))
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed OFF body ({exc})") from exc
    return TriangleMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_off(mesh: TriangleMesh, path) -> None:
    out = ["OFF", f"{len(mesh.vertices)} {len(mesh.triangles)} 0"]
    out.extend(" ".join(repr(float(c)) for c in v) for v in mesh.vertices)
    out.extend(f"3 {a} {b} {c}" for a, b, c in mesh.triangles)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
