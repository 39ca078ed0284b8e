"""Synthetic partial/complete training pairs from procedural meshes.

Complete clouds are uniform surface samples; partial clouds are
back-projected depth renders from random viewpoints on a sphere around the
object. Every random draw comes from a stream keyed by
``(seed, shape_id, view_id, purpose)``, so output does not depend on
generation order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import format_sections, from_items, read_sections, to_items
from .geometry.camera import Camera, DepthImage, backproject, render_depth
from .geometry.mesh import TriangleMesh, read_off, sample_mesh_surface, write_off
from .geometry.ply import ply_read, ply_write
from .geometry.transform import RigidTransform, look_at

SHAPE_KINDS = ("box", "cylinder", "lamp", "table", "chair")
SHAPE_RADIUS = 0.5
MAX_VIEW_ATTEMPTS = 8
FORMAT = "pcn-dataset-1"

_COMPLETE, _VIEW, _SUBSAMPLE, _PERTURB, _PARAMS = 1, 2, 3, 4, 5


def stream(seed: int, shape_id: str = "", view_id: int = 0, purpose: int = 0) -> np.random.Generator:
    key = zlib.crc32(shape_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), key, int(view_id), int(purpose)]))


# ------------------------------------------------------------ procedural meshes

def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    sx, sy, sz = (s / 2.0 for s in size)
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    faces = [
        (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),  # -x, +x
        (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),  # -y, +y
        (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),  # -z, +z
    ]
    return TriangleMesh(corners + np.asarray(center, dtype=np.float64), np.array(faces))


def cylinder_mesh(radius=0.5, height=1.0, segments=16, center=(0.0, 0.0, 0.0), top_radius=None) -> TriangleMesh:
    """Closed (optionally tapered) cylinder along z: 2 triangles per side segment plus one per cap segment."""
    if segments < 3 or radius <= 0 or height <= 0:
        raise ValueError("cylinder needs segments >= 3 and positive radius/height")
    top = radius if top_radius is None else top_radius
    if top < 0:
        raise ValueError("top radius must be non-negative")
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    bottom = np.column_stack([radius * ring, np.full(segments, -height / 2)])
    upper = np.column_stack([top * ring, np.full(segments, height / 2)])
    verts = np.vstack([bottom, upper, [[0, 0, -height / 2], [0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + j), (i, segments + j, segments + i)]
        tris += [(cb, j, i), (ct, segments + i, segments + j)]
    return TriangleMesh(verts + np.asarray(center, dtype=np.float64), np.array(tris))


def normalize_mesh(mesh: TriangleMesh, radius: float = SHAPE_RADIUS) -> TriangleMesh:
    """Centre the bounding box at the origin and scale the farthest vertex to ``radius``."""
    v = mesh.vertices
    center = (v.min(axis=0) + v.max(axis=0)) / 2
    extent = np.linalg.norm(v - center, axis=1).max()
    if not extent > 0:
        raise ValueError("degenerate mesh")
    return TriangleMesh((v - center) * (radius / extent), mesh.triangles)


_DEFAULTS = {
    "box": {"size": (1.0, 1.0, 1.0)},
    "cylinder": {"radius": 0.5, "height": 1.0, "segments": 16},
    "lamp": {"base_radius": 0.3, "base_height": 0.05, "pole_radius": 0.03, "pole_height": 0.8,
             "shade_bottom": 0.3, "shade_top": 0.15, "shade_height": 0.3, "segments": 12},
    "table": {"width": 1.2, "depth": 0.8, "top_thickness": 0.06, "leg_height": 0.7, "leg_width": 0.07},
    "chair": {"width": 0.6, "depth": 0.6, "seat_thickness": 0.06, "leg_height": 0.5, "leg_width": 0.06,
              "back_height": 0.6, "back_thickness": 0.06},
}


def random_shape_params(kind: str, rng: np.random.Generator) -> dict:
    u = rng.uniform
    if kind == "box":
        return {"size": tuple(u(0.3, 1.0, size=3))}
    if kind == "cylinder":
        return {"radius": u(0.2, 0.5), "height": u(0.4, 1.2), "segments": 16}
    if kind == "lamp":
        return {"base_radius": u(0.15, 0.35), "base_height": u(0.03, 0.08), "pole_radius": u(0.02, 0.05),
                "pole_height": u(0.5, 1.0), "shade_bottom": u(0.2, 0.4), "shade_top": u(0.05, 0.2),
                "shade_height": u(0.2, 0.4), "segments": 12}
    if kind == "table":
        return {"width": u(0.8, 1.6), "depth": u(0.5, 1.0), "top_thickness": u(0.04, 0.1),
                "leg_height": u(0.4, 0.9), "leg_width": u(0.05, 0.12)}
    if kind == "chair":
        return {"width": u(0.4, 0.8), "depth": u(0.4, 0.8), "seat_thickness": u(0.04, 0.1),
                "leg_height": u(0.3, 0.6), "leg_width": u(0.04, 0.08), "back_height": u(0.4, 0.8),
                "back_thickness": u(0.04, 0.08)}
    raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")


def _legs(width, depth, leg_w, leg_h, z_top):
    hx, hy = width / 2 - leg_w / 2, depth / 2 - leg_w / 2
    return [box_mesh((leg_w, leg_w, leg_h), (sx * hx, sy * hy, z_top - leg_h / 2))
            for sx in (-1, 1) for sy in (-1, 1)]


def procedural_shape(kind: str, params: dict | None = None, seed: int = 0) -> TriangleMesh:
    """Mesh of a simple or composite procedural object, normalised into a sphere of radius 0.5.

    Without ``params`` the dimensions are drawn from ``seed``.
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    p = dict(_DEFAULTS[kind])
    p.update(random_shape_params(kind, stream(seed, kind, 0, _PARAMS)) if params is None else params)
    for name, value in p.items():
        vals = value if isinstance(value, (tuple, list)) else (value,)
        if not all(np.isfinite(x) and x > 0 for x in vals):
            raise ValueError(f"shape parameter {name!r} must be positive, got {value!r}")

    if kind == "box":
        mesh = box_mesh(p["size"])
    elif kind == "cylinder":
        mesh = cylinder_mesh(p["radius"], p["height"], int(p["segments"]))
    elif kind == "lamp":
        seg = int(p["segments"])
        z = 0.0
        base = cylinder_mesh(p["base_radius"], p["base_height"], seg, (0, 0, z + p["base_height"] / 2))
        z += p["base_height"]
        pole = cylinder_mesh(p["pole_radius"], p["pole_height"], seg, (0, 0, z + p["pole_height"] / 2))
        z += p["pole_height"]
        shade = cylinder_mesh(p["shade_bottom"], p["shade_height"], seg, (0, 0, z - p["shade_height"] / 4),
                              top_radius=p["shade_top"])
        mesh = TriangleMesh.merge([base, pole, shade])
    elif kind == "table":
        top_z = p["leg_height"] + p["top_thickness"] / 2
        top = box_mesh((p["width"], p["depth"], p["top_thickness"]), (0, 0, top_z))
        mesh = TriangleMesh.merge([top] + _legs(p["width"], p["depth"], p["leg_width"], p["leg_height"], p["leg_height"]))
    else:
        seat_z = p["leg_height"] + p["seat_thickness"] / 2
        seat = box_mesh((p["width"], p["depth"], p["seat_thickness"]), (0, 0, seat_z))
        back_z = p["leg_height"] + p["seat_thickness"] + p["back_height"] / 2
        back = box_mesh((p["width"], p["back_thickness"], p["back_height"]),
                        (0, p["depth"] / 2 - p["back_thickness"] / 2, back_z))
        mesh = TriangleMesh.merge([seat, back] + _legs(p["width"], p["depth"], p["leg_width"], p["leg_height"], p["leg_height"]))
    return normalize_mesh(mesh)


# ---------------------------------------------------------------- pairs

@dataclass
class DataConfig:
    shapes: int = 10
    views: int = 8
    complete_points: int = 16384
    coarse_points: int = 1024
    kinds: list[str] = field(default_factory=lambda: list(SHAPE_KINDS))
    width: int = 160
    height: int = 120
    fx: float = 60.0
    fy: float = 60.0
    camera_distance: float = 1.0
    d_max: float = 1.6
    val_shapes: int = 0
    test_shapes: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.shapes < 1 or self.views < 1:
            raise ValueError("shapes and views must be >= 1")
        if self.coarse_points > self.complete_points:
            raise ValueError("coarse_points cannot exceed complete_points")
        if self.val_shapes + self.test_shapes > self.shapes:
            raise ValueError("val_shapes + test_shapes exceeds the number of shapes")
        for k in self.kinds:
            if k not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {k!r}")

    def base_camera(self) -> Camera:
        return Camera(self.width, self.height, self.fx, self.fy, d_max=self.d_max)


DATA_PRESETS = {
    "full": DataConfig(),
    "toy": DataConfig(shapes=4, complete_points=1024, coarse_points=64, width=64, height=48, fx=24.0, fy=24.0),
}


@dataclass
class TrainingPair:
    partial: np.ndarray
    complete: np.ndarray
    complete_sub: np.ndarray
    shape_id: str
    view_id: int
    seed: int
    camera: Camera | None = None

    @property
    def pair_id(self) -> str:
        return f"{self.shape_id}_{self.view_id}"


def view_camera(config: DataConfig, seed: int, shape_id: str, view_id: int, attempt: int = 0) -> Camera:
    """Viewpoint uniformly distributed on a sphere of radius ``camera_distance``, looking at the origin."""
    rng = stream(seed, shape_id, view_id * MAX_VIEW_ATTEMPTS + attempt, _VIEW)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    return config.base_camera().with_pose(look_at(config.camera_distance * direction))


def complete_cloud(mesh: TriangleMesh, config: DataConfig, seed: int, shape_id: str) -> np.ndarray:
    pts = sample_mesh_surface(mesh, config.complete_points, stream(seed, shape_id, 0, _COMPLETE))
    return pts.astype(np.float32)


def subsample(complete: np.ndarray, s: int, seed: int, shape_id: str, view_id: int) -> np.ndarray:
    idx = stream(seed, shape_id, view_id, _SUBSAMPLE).choice(len(complete), size=s, replace=False)
    return complete[np.sort(idx)]


def make_pair(mesh: TriangleMesh, view_id: int, config: DataConfig, seed: int, shape_id: str = "shape",
              complete: np.ndarray | None = None) -> TrainingPair:
    if complete is None:
        complete = complete_cloud(mesh, config, seed, shape_id)
    for attempt in range(MAX_VIEW_ATTEMPTS):
        camera = view_camera(config, seed, shape_id, view_id, attempt)
        partial = backproject(render_depth(mesh, camera))
        if len(partial):
            break
    else:
        raise RuntimeError(f"{shape_id} view {view_id}: no foreground pixels after {MAX_VIEW_ATTEMPTS} camera attempts")
    sub = subsample(complete, config.coarse_points, seed, shape_id, view_id)
    return TrainingPair(partial.astype(np.float32), complete, sub, shape_id, view_id, seed, camera)


# ----------------------------------------------------------- perturbation

def _occlusion_mask(valid: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Axis-aligned rectangle covering about ``p`` of the valid pixels."""
    h, w = valid.shape
    n_valid = int(valid.sum())
    target = math.ceil(p * n_valid)
    if target <= 0:
        return np.zeros_like(valid)
    vs, us = np.nonzero(valid)
    k = rng.integers(n_valid)
    cv, cu = vs[k], us[k]
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    cum = np.cumsum(np.cumsum(valid.astype(np.int64), axis=0), axis=1)

    def covered(half):
        hu, hv = half * aspect, half / aspect
        u0, u1 = max(int(math.ceil(cu - hu)), 0), min(int(math.floor(cu + hu)), w - 1)
        v0, v1 = max(int(math.ceil(cv - hv)), 0), min(int(math.floor(cv + hv)), h - 1)
        if u1 < u0 or v1 < v0:
            return 0, (0, -1, 0, -1)
        total = cum[v1, u1]
        if v0 > 0:
            total -= cum[v0 - 1, u1]
        if u0 > 0:
            total -= cum[v1, u0 - 1]
        if v0 > 0 and u0 > 0:
            total += cum[v0 - 1, u0 - 1]
        return int(total), (v0, v1, u0, u1)

    lo, hi = 0.0, float(2 * max(h, w)) * 2.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if covered(mid)[0] >= target:
            hi = mid
        else:
            lo = mid
    _, (v0, v1, u0, u1) = covered(hi)
    return (rows >= v0) & (rows <= v1) & (cols >= u0) & (cols <= u1)


def perturb(image: DepthImage, noise_sigma_rel: float = 0.0, occlusion_p: float = 0.0,
            outlier_frac: float = 0.0, d_max: float | None = None, seed=0) -> DepthImage:
    """Noisy, partly occluded copy of a depth image.

    Valid pixels receive Gaussian noise with standard deviation
    ``noise_sigma_rel`` times the largest valid depth; one rectangle
    invalidates about ``occlusion_p`` of the valid pixels; ``outlier_frac`` of
    the remaining valid pixels are set to ``d_max``.
    """
    if not 0.0 <= occlusion_p <= 1.0:
        raise ValueError(f"occlusion fraction must lie in [0, 1], got {occlusion_p}")
    if not 0.0 <= outlier_frac <= 1.0 or noise_sigma_rel < 0:
        raise ValueError("outlier_frac must lie in [0, 1] and noise_sigma_rel must be >= 0")
    d_max = image.camera.d_max if d_max is None else d_max
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    depth = image.depth.copy()
    valid = depth > 0
    if valid.any():
        scale = depth[valid].max()
        noise = rng.normal(0.0, 1.0, size=int(valid.sum())) * (noise_sigma_rel * scale)
        depth[valid] = np.maximum(depth[valid] + noise, 1e-6)
        depth[_occlusion_mask(valid, occlusion_p, rng) & valid] = 0.0
        remaining = np.flatnonzero(depth.ravel() > 0)
        n_out = int(round(outlier_frac * len(remaining)))
        if n_out:
            flat = depth.ravel()
            flat[rng.choice(remaining, size=n_out, replace=False)] = d_max
            depth = flat.reshape(depth.shape)
    return DepthImage(depth, image.camera)


# ---------------------------------------------------------------- dataset

@dataclass
class DatasetManifest:
    root: Path
    config: DataConfig
    splits: dict[str, str]
    shapes: dict[str, str]  # shape_id -> kind
    poses: dict[str, RigidTransform]  # pair_id -> camera pose
    perturbation: dict[str, str] = field(default_factory=dict)

    def pair_ids(self, split: str | None = None) -> list[str]:
        ids = []
        for pid in self.poses:
            shape_id = pid.rsplit("_", 1)[0]
            if split is None or self.splits[shape_id] == split:
                ids.append(pid)
        return ids

    def pair_paths(self, pair_id: str) -> dict[str, Path]:
        return {k: self.root / "pairs" / f"{pair_id}_{k}.ply" for k in ("partial", "complete", "sub")}

    def mesh(self, shape_id: str) -> TriangleMesh:
        return read_off(self.root / "meshes" / f"{shape_id}.off")

    def camera(self, pair_id: str) -> Camera:
        return self.config.base_camera().with_pose(self.poses[pair_id])

    def load_pair(self, pair_id: str) -> TrainingPair:
        paths = self.pair_paths(pair_id)
        try:
            partial, complete, sub = (ply_read(paths[k]) for k in ("partial", "complete", "sub"))
        except OSError as exc:
            raise OSError(f"cannot read pair {pair_id}: {exc}") from exc
        shape_id, view = pair_id.rsplit("_", 1)
        return TrainingPair(partial, complete, sub, shape_id, int(view), self.config.seed, self.camera(pair_id))

    def load(self, split: str | None = None) -> list[TrainingPair]:
        return [self.load_pair(pid) for pid in self.pair_ids(split)]


def _pose_text(T: RigidTransform) -> str:
    return ", ".join(repr(float(x)) for x in np.concatenate([T.rotation, T.translation]))


def _pose_parse(text: str) -> RigidTransform:
    vals = [float(x) for x in text.split(",")]
    return RigidTransform(vals[:4], vals[4:7])


def write_manifest(m: DatasetManifest) -> None:
    sections = {
        "dataset": {"format": FORMAT},
        "generation": to_items(m.config),
        "shapes": dict(m.shapes),
        "splits": dict(m.splits),
        "poses": {pid: _pose_text(T) for pid, T in m.poses.items()},
    }
    if m.perturbation:
        sections["perturbation"] = dict(m.perturbation)
    path = m.root / "manifest"
    try:
        path.write_text(format_sections(sections), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_dataset(root) -> DatasetManifest:
    root = Path(root)
    sections = read_sections(root / "manifest")
    if sections.get("dataset", {}).get("format") != FORMAT:
        raise ValueError(f"{root / 'manifest'}: not a {FORMAT} manifest")
    config = from_items(DataConfig, sections["generation"], "generation")
    poses = {pid: _pose_parse(t) for pid, t in sections.get("poses", {}).items()}
    return DatasetManifest(root, config, sections["splits"], sections["shapes"], poses,
                           sections.get("perturbation", {}))


def assign_splits(shape_ids: list[str], config: DataConfig) -> dict[str, str]:
    order = stream(config.seed, "splits", 0, 0).permutation(len(shape_ids))
    splits = {}
    for rank, i in enumerate(order):
        if rank < config.test_shapes:
            splits[shape_ids[i]] = "test"
        elif rank < config.test_shapes + config.val_shapes:
            splits[shape_ids[i]] = "val"
        else:
            splits[shape_ids[i]] = "train"
    return {sid: splits[sid] for sid in shape_ids}


def _write_pair(m: DatasetManifest, pair: TrainingPair) -> None:
    paths = m.pair_paths(pair.pair_id)
    try:
        ply_write(pair.partial, paths["partial"])
        ply_write(pair.complete, paths["complete"])
        ply_write(pair.complete_sub, paths["sub"])
    except OSError as exc:
        raise OSError(f"cannot write pair files under {paths['partial'].parent}: {exc}") from exc


def build_dataset(config: DataConfig, root) -> DatasetManifest:
    root = Path(root)
    try:
        (root / "pairs").mkdir(parents=True, exist_ok=True)
        (root / "meshes").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    seed = config.seed
    shapes = {}
    for i in range(config.shapes):
        kind = config.kinds[i % len(config.kinds)]
        shapes[f"{kind}{i:04d}"] = kind
    m = DatasetManifest(root, config, assign_splits(list(shapes), config), shapes, {})
    for shape_id, kind in shapes.items():
        mesh = procedural_shape(kind, seed=int(stream(seed, shape_id, 0, _PARAMS).integers(2**31)))
        write_off(mesh, root / "meshes" / f"{shape_id}.off")
        complete = complete_cloud(mesh, config, seed, shape_id)
        for view in range(config.views):
            pair = make_pair(mesh, view, config, seed, shape_id, complete=complete)
            m.poses[pair.pair_id] = pair.camera.pose
            _write_pair(m, pair)
    write_manifest(m)
    return m


def perturb_dataset(src: DatasetManifest, root, noise_sigma_rel: float, occlusion_p: float,
                    outlier_frac: float, seed: int) -> DatasetManifest:
    """Copy of a dataset whose partial clouds are re-rendered with perturbed depth."""
    root = Path(root)
    (root / "pairs").mkdir(parents=True, exist_ok=True)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    out = replace(src, root=root, poses=dict(src.poses), perturbation={
        "noise_sigma_rel": repr(float(noise_sigma_rel)), "occlusion_p": repr(float(occlusion_p)),
        "outlier_frac": repr(float(outlier_frac)), "seed": str(seed)})
    meshes = {}
    for pid in src.pair_ids():
        shape_id, view = pid.rsplit("_", 1)
        if shape_id not in meshes:
            meshes[shape_id] = src.mesh(shape_id)
            write_off(meshes[shape_id], root / "meshes" / f"{shape_id}.off")
        pair = src.load_pair(pid)
        image = perturb(render_depth(meshes[shape_id], src.camera(pid)), noise_sigma_rel, occlusion_p,
                        outlier_frac, seed=stream(seed, shape_id, int(view), _PERTURB))
        partial = backproject(image).astype(np.float32)
        _write_pair(out, replace(pair, partial=partial))
    write_manifest(out)
    return out
