"""Set distances and evaluation scores for point clouds.

Distances are unsquared Euclidean norms throughout: Chamfer averages each
direction over its own cloud, EMD is the mean matched distance under the
best bijection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry.cloud import bbox_diagonal
from .geometry.kdtree import KdTree


def _cloud(x, what="cloud") -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{what} must be an (n, 3) array, got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError(f"{what} is empty")
    return pts


def pairwise_distances(a, b) -> np.ndarray:
    diff = np.asarray(a, dtype=np.float64)[:, None, :] - np.asarray(b, dtype=np.float64)[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


# ------------------------------------------------------------------ Chamfer

def chamfer(s1, s2) -> float:
    a, b = _cloud(s1, "S1"), _cloud(s2, "S2")
    _, d_ab = KdTree(b).query(a)
    _, d_ba = KdTree(a).query(b)
    return float(d_ab.mean() + d_ba.mean())


def fidelity(inp, out) -> float:
    """Mean distance from each input point to its nearest output point."""
    a, b = _cloud(inp, "input"), _cloud(out, "output")
    _, d = KdTree(b).query(a)
    return float(d.mean())


def mmd(output, database: Sequence) -> tuple[float, int]:
    """Chamfer distance to the closest database model, and that model's index."""
    if len(database) == 0:
        raise ValueError("mmd needs a non-empty database")
    best, best_i = np.inf, -1
    for i, model in enumerate(database):
        d = chamfer(output, model)
        if d < best:
            best, best_i = d, i
    return best, best_i


def consistency(outputs: Sequence) -> float:
    """Mean Chamfer distance between consecutive frames."""
    if len(outputs) < 2:
        raise ValueError("consistency needs at least two frames")
    return float(np.mean([chamfer(outputs[i], outputs[i + 1]) for i in range(len(outputs) - 1)]))


# ---------------------------------------------------------------------- EMD

@dataclass
class AssignmentResult:
    matching: np.ndarray  # matching[i] = index in S2 assigned to S1[i]
    cost: float


def _same_size(s1, s2):
    a, b = _cloud(s1, "S1"), _cloud(s2, "S2")
    if len(a) != len(b):
        raise ValueError(f"EMD requires clouds of equal size, got {len(a)} and {len(b)}")
    return a, b


def emd_exact(s1, s2) -> AssignmentResult:
    """Optimal bijection by dynamic programming over subsets (n <= 10)."""
    a, b = _same_size(s1, s2)
    n = len(a)
    if n > 10:
        raise ValueError(f"emd_exact is limited to n <= 10, got {n}")
    cost = pairwise_distances(a, b)
    full = (1 << n) - 1
    dp = np.full(1 << n, np.inf)
    choice = np.full(1 << n, -1, dtype=np.int64)
    dp[0] = 0.0
    for mask in range(full):
        base = dp[mask]
        if not np.isfinite(base):
            continue
        i = bin(mask).count("1")
        for j in range(n):
            bit = 1 << j
            if mask & bit:
                continue
            c = base + cost[i, j]
            if c < dp[mask | bit]:
                dp[mask | bit] = c
                choice[mask | bit] = j
    matching = np.empty(n, dtype=np.int64)
    mask = full
    for i in range(n - 1, -1, -1):
        j = choice[mask]
        matching[i] = j
        mask ^= 1 << j
    return AssignmentResult(matching, float(cost[np.arange(n), matching].mean()))


def auction_assignment(cost, epsilon: float, eps_start: float | None = None, scaling: float = 4.0) -> np.ndarray:
    """Min-cost perfect matching by the Jacobi auction with ε-scaling.

    The returned assignment's total cost is within ``n * epsilon`` of optimal.
    Bids are resolved per object by highest bid, then lowest bidder index.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    benefit = -cost
    prices = np.zeros(n)
    spread = float(cost.max() - cost.min())
    eps = max(eps_start if eps_start is not None else spread / scaling, epsilon)
    while True:
        owner = np.full(n, -1, dtype=np.int64)
        assigned = np.full(n, -1, dtype=np.int64)
        bidders = np.arange(n)
        while len(bidders):
            rows = np.arange(len(bidders))
            values = benefit[bidders] - prices
            best = np.argmax(values, axis=1)
            v1 = values[rows, best]
            values[rows, best] = -np.inf
            v2 = values.max(axis=1)
            bids = prices[best] + (v1 - v2) + eps

            order = np.lexsort((bidders, -bids, best))
            objs = best[order]
            first = np.ones(len(order), dtype=bool)
            first[1:] = objs[1:] != objs[:-1]
            win_obj = objs[first]
            win_person = bidders[order][first]
            prev = owner[win_obj]
            assigned[prev[prev >= 0]] = -1
            owner[win_obj] = win_person
            assigned[win_person] = win_obj
            prices[win_obj] = bids[order][first]
            bidders = np.flatnonzero(assigned < 0)
        if eps <= epsilon:
            return assigned
        eps = max(eps / scaling, epsilon)


def default_epsilon(s1, s2) -> float:
    diag = bbox_diagonal(s1, s2)
    return 1e-3 * diag if diag > 0 else 1e-12


def emd_assignment(s1, s2, epsilon: float | None = None) -> AssignmentResult:
    a, b = _same_size(s1, s2)
    eps = default_epsilon(a, b) if epsilon is None else epsilon
    cost = pairwise_distances(a, b)
    matching = auction_assignment(cost, eps)
    return AssignmentResult(matching, float(cost[np.arange(len(a)), matching].mean()))


def emd_approx(s1, s2, epsilon: float | None = None) -> float:
    """Mean matched distance of an auction assignment; at most optimum + epsilon."""
    return emd_assignment(s1, s2, epsilon).cost


# ------------------------------------------------------------ distance fields

@dataclass(frozen=True)
class DistanceField:
    resolution: int
    origin: np.ndarray
    voxel_size: float
    values: np.ndarray

    def same_grid(self, other: "DistanceField") -> bool:
        return (
            self.resolution == other.resolution
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12)
            and abs(self.voxel_size - other.voxel_size) <= 1e-12
        )

    def centers(self) -> np.ndarray:
        return voxel_centers(self.resolution, self.origin, self.voxel_size)


def voxel_centers(resolution: int, origin, voxel_size: float) -> np.ndarray:
    idx = np.arange(resolution)
    i, j, k = np.meshgrid(idx, idx, idx, indexing="ij")
    grid = np.stack([i, j, k], axis=-1).reshape(-1, 3)
    return np.asarray(origin, dtype=np.float64) + (grid + 0.5) * voxel_size


def to_distance_field(cloud, resolution: int, bounds=(-0.5, 0.5)) -> DistanceField:
    """Distance from every voxel centre of a cubic grid to the nearest cloud point."""
    pts = _cloud(cloud)
    if resolution < 1:
        raise ValueError("resolution must be positive")
    lo, hi = float(bounds[0]), float(bounds[1])
    if not hi > lo:
        raise ValueError("bounds must satisfy lo < hi")
    origin = np.full(3, lo)
    voxel = (hi - lo) / resolution
    _, d = KdTree(pts).query(voxel_centers(resolution, origin, voxel))
    return DistanceField(resolution, origin, voxel, d.reshape(resolution, resolution, resolution))


def l1_field(df1: DistanceField, df2: DistanceField, mask=None) -> float:
    """Mean absolute difference of two fields on the same grid, in metric units."""
    if not df1.same_grid(df2):
        raise ValueError("distance fields live on different grids")
    diff = np.abs(df1.values - df2.values)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != diff.shape:
            raise ValueError(f"mask shape {mask.shape} does not match grid {diff.shape}")
        if not mask.any():
            raise ValueError("mask selects no voxels")
        diff = diff[mask]
    return float(diff.mean())


# --------------------------------------------------------- registration error

def _unit_quat(q, name):
    q = np.asarray(q, dtype=np.float64).reshape(4)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a unit quaternion")
    return q


def rotation_error(q1, q2) -> float:
    """2 * arccos(2 <q1, q2>^2 - 1), argument clamped to [-1, 1]."""
    a, b = _unit_quat(q1, "q1"), _unit_quat(q2, "q2")
    arg = 2.0 * float(a @ b) ** 2 - 1.0
    return float(2.0 * np.arccos(np.clip(arg, -1.0, 1.0)))


def translation_error(t1, t2) -> float:
    return float(np.linalg.norm(np.asarray(t1, dtype=np.float64) - np.asarray(t2, dtype=np.float64)))
