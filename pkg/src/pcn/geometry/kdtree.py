"""Exact nearest-neighbour search with a median-split KD-tree.

Queries are answered in batches: every query first descends to the leaf
that contains it to obtain an upper bound, then a level-synchronous sweep
over (query, node) pairs visits every node whose bounding box could still
hold a point at least as close. Ties on distance resolve to the lowest
point index, so results match a brute-force argmin exactly.
"""

from __future__ import annotations

import numpy as np

LEAF_SIZE = 16


class KdTree:
    def __init__(self, points, leaf_size: int = LEAF_SIZE):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
        if len(pts) == 0:
            raise ValueError("cannot build a KD-tree over an empty cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts
        self.leaf_size = leaf_size

        lo, hi, axis, split, left, right, leaf_of = [], [], [], [], [], [], []
        leaves: list[np.ndarray] = []

        def build(idx: np.ndarray) -> int:
            node = len(lo)
            sub = pts[idx]
            lo.append(sub.min(axis=0))
            hi.append(sub.max(axis=0))
            axis.append(-1)
            split.append(0.0)
            left.append(-1)
            right.append(-1)
            leaf_of.append(-1)
            if len(idx) <= leaf_size:
                leaf_of[node] = len(leaves)
                leaves.append(np.sort(idx))
                return node
            ax = int(np.argmax(hi[node] - lo[node]))
            half = len(idx) // 2
            order = np.argpartition(sub[:, ax], half)
            axis[node] = ax
            split[node] = float(sub[order[half], ax])
            left[node] = build(idx[order[:half]])
            right[node] = build(idx[order[half:]])
            return node

        build(np.arange(len(pts)))
        self._lo = np.array(lo)
        self._hi = np.array(hi)
        self._axis = np.array(axis)
        self._split = np.array(split)
        self._left = np.array(left)
        self._right = np.array(right)
        self._leaf_of = np.array(leaf_of)

        width = max(len(leaf) for leaf in leaves)
        self._leaf_index = np.full((len(leaves), width), -1, dtype=np.intp)
        self._leaf_points = np.full((len(leaves), width, 3), np.inf)
        for i, leaf in enumerate(leaves):
            self._leaf_index[i, : len(leaf)] = leaf
            self._leaf_points[i, : len(leaf)] = pts[leaf]

    def __len__(self) -> int:
        return len(self.points)

    def _scan(self, queries, q_ids, leaves, best_d2, best_idx):
        """Brute-force (query, leaf) pairs and fold the results into the running best."""
        if len(q_ids) == 0:
            return
        diff = self._leaf_points[leaves] - queries[q_ids][:, None, :]
        d2 = (diff * diff).sum(axis=2)
        cand = self._leaf_index[leaves]
        big = np.iinfo(np.intp).max
        pair_min = d2.min(axis=1)
        pair_idx = np.where(d2 == pair_min[:, None], cand, big).min(axis=1)

        # lexicographic (distance, index) minimum per query
        order = np.lexsort((pair_idx, pair_min, q_ids))
        q_sorted = q_ids[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = q_sorted[1:] != q_sorted[:-1]
        q = q_sorted[first]
        d = pair_min[order][first]
        i = pair_idx[order][first]
        better = (d < best_d2[q]) | ((d == best_d2[q]) & (i < best_idx[q]))
        best_d2[q[better]] = d[better]
        best_idx[q[better]] = i[better]

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        """Nearest point for every row of ``queries``: (indices, unsquared distances)."""
        q = np.asarray(queries, dtype=np.float64)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        if q.shape[1] != 3:
            raise ValueError(f"queries must have 3 columns, got shape {q.shape}")
        m = len(q)
        best_d2 = np.full(m, np.inf)
        best_idx = np.full(m, np.iinfo(np.intp).max, dtype=np.intp)
        if m == 0:
            return best_idx, best_d2

        # descend to the home leaf for an initial bound
        node = np.zeros(m, dtype=np.intp)
        while True:
            internal = self._leaf_of[node] < 0
            if not internal.any():
                break
            nd = node[internal]
            go_left = q[internal, self._axis[nd]] < self._split[nd]
            node[internal] = np.where(go_left, self._left[nd], self._right[nd])
        self._scan(q, np.arange(m), self._leaf_of[node], best_d2, best_idx)
        home = node

        fq = np.arange(m)
        fn = np.zeros(m, dtype=np.intp)
        while len(fq):
            gap = np.maximum(self._lo[fn] - q[fq], 0) + np.maximum(q[fq] - self._hi[fn], 0)
            box_d2 = (gap * gap).sum(axis=1)
            keep = box_d2 <= best_d2[fq]
            fq, fn = fq[keep], fn[keep]
            is_leaf = self._leaf_of[fn] >= 0
            scan = is_leaf & (fn != home[fq])
            self._scan(q, fq[scan], self._leaf_of[fn[scan]], best_d2, best_idx)
            inner = ~is_leaf
            fq = np.concatenate([fq[inner], fq[inner]])
            fn = np.concatenate([self._left[fn[inner]], self._right[fn[inner]]])

        dist = np.sqrt(best_d2)
        if single:
            return best_idx[0], dist[0]
        return best_idx, dist

    def nearest(self, point) -> tuple[int, float]:
        idx, dist = self.query(np.asarray(point, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])


def kdtree_build(cloud) -> KdTree:
    return KdTree(cloud)


def nearest(tree: KdTree, query) -> tuple[int, float]:
    return tree.nearest(query)


def nearest_neighbors(queries, cloud) -> tuple[np.ndarray, np.ndarray]:
    """Index and distance of the nearest ``cloud`` point for each query."""
    return KdTree(cloud).query(queries)
