"""Point-cloud level helpers."""

from __future__ import annotations

import numpy as np


def normalize_cloud(cloud) -> tuple[np.ndarray, np.ndarray, float]:
    """Centre the cloud on its centroid and scale its largest radius to 1.

    Returns ``(normalized, center, scale)`` with ``cloud == normalized * scale + center``.
    """
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
        raise ValueError("normalize_cloud needs a non-empty (n, 3) cloud")
    center = pts.mean(axis=0)
    scale = float(np.linalg.norm(pts - center, axis=1).max())
    if not scale > 0:
        raise ValueError("cannot normalize a cloud whose points are all identical")
    return (pts - center) / scale, center, scale


def bbox_diagonal(*clouds) -> float:
    pts = np.concatenate([np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in clouds])
    if len(pts) == 0:
        return 0.0
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
