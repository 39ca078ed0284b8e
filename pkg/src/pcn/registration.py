"""Point-to-point ICP and the partial-vs-completed registration comparison."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry.camera import Camera, backproject, render_depth
from .geometry.cloud import bbox_diagonal
from .geometry.kdtree import KdTree
from .geometry.mesh import TriangleMesh, sample_mesh_surface
from .geometry.transform import RigidTransform, look_at
from .metrics import rotation_error, translation_error


class DegenerateCorrespondenceError(ValueError):
    pass


def best_rigid_transform(src, dst, correspondences=None) -> RigidTransform:
    """Least-squares rotation and translation taking ``src`` onto ``dst`` (Kabsch).

    ``correspondences`` is an optional (k, 2) array of (src index, dst index);
    by default row i of src pairs with row i of dst.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if correspondences is not None:
        c = np.asarray(correspondences, dtype=np.intp)
        src, dst = src[c[:, 0]], dst[c[:, 1]]
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"correspondence arrays must be matching (k, 3), got {src.shape} and {dst.shape}")
    if len(src) < 3:
        raise DegenerateCorrespondenceError("need at least 3 correspondences")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - mu_s, dst - mu_d
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    for name, x in (("source", a), ("target", b)):
        sv = np.linalg.svd(x, compute_uv=False)
        if sv[1] <= 1e-9 * scale * np.sqrt(len(x)):
            raise DegenerateCorrespondenceError(f"{name} correspondences are collinear or coincident")
    H = a.T @ b
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    return RigidTransform.from_matrix(R, mu_d - R @ mu_s)


@dataclass
class IcpResult:
    transform: RigidTransform
    iterations: int
    final_mean_nn_distance: float
    converged: bool
    objective: list[float] = field(default_factory=list)  # RMS nn distance after each correspondence step


def icp(src, dst, max_iters: int = 50, tol: float | None = None, init: RigidTransform | None = None,
        trim: float | None = None) -> IcpResult:
    """Point-to-point ICP aligning ``src`` to ``dst``.

    The tracked objective is the RMS nearest-neighbour distance, which each
    iteration cannot increase. Stops once the improvement drops below
    ``tol`` (default 1e-6 of the target bounding-box diagonal). ``trim``
    optionally keeps only that fraction of the closest correspondences.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 3 or len(dst) < 3:
        raise DegenerateCorrespondenceError("ICP needs at least 3 points in each cloud")
    tree = KdTree(dst)
    tol = 1e-6 * bbox_diagonal(dst) if tol is None else tol
    T = init or RigidTransform.identity()

    def correspond(T):
        idx, dist = tree.query(T.apply(src))
        return idx, dist

    idx, dist = correspond(T)
    history = [float(np.sqrt(np.mean(dist ** 2)))]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        keep = np.arange(len(src))
        if trim is not None:
            keep = np.argsort(dist, kind="stable")[: max(3, int(trim * len(src)))]
        T_new = best_rigid_transform(src[keep], dst[idx[keep]])
        idx_new, dist_new = correspond(T_new)
        rms = float(np.sqrt(np.mean(dist_new ** 2)))
        if rms > history[-1] and trim is None:
            # only possible through round-off; keep the previous estimate
            converged = True
            break
        T, idx, dist = T_new, idx_new, dist_new
        improvement = history[-1] - rms
        history.append(rms)
        if improvement < tol:
            converged = True
            break
    return IcpResult(T, it, float(dist.mean()), converged, history)


# -------------------------------------------------------------- experiment

@dataclass
class Frame:
    """One observation: partial cloud, object pose, and optional completed cloud (world frame)."""
    partial: np.ndarray
    pose: RigidTransform
    completion: np.ndarray | None = None


@dataclass
class RegistrationRow:
    pair_id: int
    input_kind: str
    rot_err: float
    trans_err: float
    iterations: int
    failed: bool = False


def registration_experiment(frames: Sequence[Frame], complete_fn: Callable[[Frame], np.ndarray] | None = None,
                            max_iters: int = 50) -> list[RegistrationRow]:
    """ICP between consecutive frames on partial inputs and on completed inputs.

    The ground-truth motion from frame i to frame i+1 is ``pose[i+1] ∘ pose[i]^-1``.
    ``complete_fn`` maps a frame to its world-frame completion when the frame
    does not already carry one.
    """
    if len(frames) < 2:
        raise ValueError("registration needs at least two frames")
    completions = []
    for f in frames:
        if f.completion is not None:
            completions.append(np.asarray(f.completion))
        elif complete_fn is not None:
            completions.append(np.asarray(complete_fn(f)) if len(f.partial) else np.zeros((0, 3)))
        else:
            raise ValueError("frames lack completions and no complete_fn was given")

    rows = []
    for i in range(len(frames) - 1):
        truth = frames[i + 1].pose.compose(frames[i].pose.inverse())
        for kind, a, b in (("partial", frames[i].partial, frames[i + 1].partial),
                           ("complete", completions[i], completions[i + 1])):
            if len(a) < 3 or len(b) < 3:
                rows.append(RegistrationRow(i, kind, float("nan"), float("nan"), 0, failed=True))
                continue
            res = icp(a, b, max_iters=max_iters)
            rows.append(RegistrationRow(
                i, kind,
                rotation_error(truth.rotation, res.transform.rotation),
                translation_error(truth.translation, res.transform.translation),
                res.iterations,
            ))
    return rows


def _random_unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def overlap_fraction(a, b, radius: float) -> float:
    """Fraction of points of ``a`` lying within ``radius`` of some point of ``b``."""
    _, d = KdTree(b).query(a)
    return float(np.mean(d <= radius))


def low_overlap_frames(mesh: TriangleMesh, camera: Camera, rng: np.random.Generator, rotation_deg: float = 10.0,
                       translation: float = 0.05, max_overlap: float = 0.4, overlap_radius: float = 0.02,
                       complete_points: int = 1024, attempts: int = 100) -> tuple[Frame, Frame]:
    """Two observations of ``mesh`` whose partial views share little surface.

    The object moves by a rotation of ``rotation_deg`` about a random axis and
    a translation of norm ``translation``; each frame is seen from its own
    random viewpoint, and viewpoints are redrawn until at most
    ``max_overlap`` of the first (motion-compensated) view lies within
    ``overlap_radius`` of the second. Completions are dense samples of the
    posed mesh drawn independently per frame, i.e. an oracle completion.
    """
    for attempt in range(attempts):
        pose0 = RigidTransform.from_axis_angle(_random_unit(rng), rng.uniform(0, np.pi))
        motion = RigidTransform.from_axis_angle(_random_unit(rng), np.deg2rad(rotation_deg),
                                                translation * _random_unit(rng))
        pose1 = motion.compose(pose0)
        partials = []
        for pose in (pose0, pose1):
            cam = camera.with_pose(look_at(1.0 * _random_unit(rng)))
            partials.append(backproject(render_depth(mesh.transformed(pose), cam)))
        if min(len(p) for p in partials) < 3:
            continue
        if overlap_fraction(motion.apply(partials[0]), partials[1], overlap_radius) > max_overlap:
            continue
        # independent samples per frame so no exact correspondences exist
        c0, c1 = (sample_mesh_surface(mesh, complete_points, rng) for _ in range(2))
        return Frame(partials[0], pose0, pose0.apply(c0)), Frame(partials[1], pose1, pose1.apply(c1))
    raise RuntimeError(f"no view pair with overlap <= {max_overlap} after {attempts} attempts")


def write_registration_csv(rows: Sequence[RegistrationRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "input_kind", "rot_err", "trans_err", "iterations", "failed"])
        for r in rows:
            w.writerow([r.pair_id, r.input_kind, repr(r.rot_err), repr(r.trans_err), r.iterations, int(r.failed)])
