"""Point-cloud container and local-geometry kernels.

Neighborhoods are always the K nearest points in Euclidean distance,
ordered ascending by distance with ties broken lexicographically by
(x, y, z).  The coordinate-based tie-break (rather than an index-based
one) is what makes every downstream feature strictly permutation
invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateNeighborhoodError(ValueError):
    """All RBF weights underflowed to zero (neighbors extremely far away)."""


@dataclass(frozen=True)
class PointCloud:
    """Ordered list of N points in meters, stored as an (N, 3) float array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (N, 3) points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def lex_ranks(points: np.ndarray) -> np.ndarray:
    """Rank of each point in the lexicographic (x, y, z) order.

    Equal points get distinct ranks (stable), but since they are
    identical their relative order never changes any computed value.
    Works for any row dimension (also used on latent codes).
    """
    order = np.lexsort(points.T[::-1])
    ranks = np.empty(len(points), dtype=np.int64)
    ranks[order] = np.arange(len(points))
    return ranks


def knn(cloud: PointCloud, query: int, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors of ``query``, excluding itself.

    Ascending by distance; exact distance ties broken lexicographically
    by coordinates.  Exhaustive scan: trivially correct at N=1024.
    """
    pts = cloud.points
    n = len(pts)
    if not 0 <= query < n:
        raise ValueError(f"query index {query} out of range for N={n}")
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range [1, {n - 1}]")
    d = np.einsum("ij,ij->i", pts - pts[query], pts - pts[query])
    d[query] = np.inf
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], d))
    return order[:k]


def knn_all(points: np.ndarray, k: int, ranks: np.ndarray | None = None) -> np.ndarray:
    """K-nearest-neighbor indices for every point at once, shape (N, K).

    Same ordering contract as :func:`knn`.  Uses an argpartition
    prefilter with a per-row exact fallback when distance ties cross
    the partition boundary, so results are identical to the full scan.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k={k} out of range [1, {n - 1}]")
    if ranks is None:
        ranks = lex_ranks(points)

    m = min(k + 6, n - 1)
    if points.shape[1] == 3 and n >= 64:
        # candidate preselection; final ordering below uses exact per-pair
        # float64 distances, whose values are independent of row order
        from scipy.spatial import cKDTree

        _, q = cKDTree(points).query(points, k=m + 1)
        cand = np.ascontiguousarray(q[:, 1:])
        # the tree may have put the query point anywhere among equals
        self_mask = cand == np.arange(n)[:, None]
        cand[self_mask] = q[np.nonzero(self_mask)[0], 0]
        diff = points[:, None, :] - points[cand]
        cd = np.einsum("ijk,ijk->ij", diff, diff)
        dist_row = None
    else:
        # high-dimensional inputs: one float64 Gram pass; each distance is a
        # symmetric function of the pair, so ordering is independent of row
        # order (and ties between identical rows stay exact)
        sq = np.einsum("ij,ij->i", points, points)
        d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
        np.fill_diagonal(d2, np.inf)
        cand = np.argpartition(d2, m - 1, axis=1)[:, :m]
        cd = np.take_along_axis(d2, cand, axis=1)
        dist_row = d2

    order = np.lexsort((ranks[cand], cd), axis=1)
    cand = np.take_along_axis(cand, order, axis=1)
    cd = np.take_along_axis(cd, order, axis=1)
    out = cand[:, :k].copy()

    if m > k:
        # near-ties at the boundary may extend past the candidate set
        risky = np.flatnonzero(cd[:, m - 1] - cd[:, k - 1] <= 1e-6 * cd[:, m - 1])
        for i in risky:
            if dist_row is None:
                di = np.einsum("ij,ij->i", points - points[i], points - points[i])
                di[i] = np.inf
            else:
                di = dist_row[i]
            full = np.lexsort((ranks, di))
            out[i] = full[:k]
    return out


def furthest_point_sample(cloud: PointCloud, n: int, seed_index: int = 0) -> PointCloud:
    """Greedy max-min subsampling; output order is selection order."""
    idx = furthest_point_indices(cloud.points, n, seed_index)
    return PointCloud(cloud.points[idx])


def furthest_point_indices(points: np.ndarray, n: int, seed_index: int = 0) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    total = len(points)
    if not 1 <= n <= total:
        raise ValueError(f"n={n} out of range [1, {total}]")
    if not 0 <= seed_index < total:
        raise ValueError(f"seed_index {seed_index} out of range")
    ranks = lex_ranks(points)
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = seed_index
    d = np.einsum("ij,ij->i", points - points[seed_index], points - points[seed_index])
    for s in range(1, n):
        best = d.max()
        tied = np.flatnonzero(d == best)
        nxt = tied[np.argmin(ranks[tied])]
        chosen[s] = nxt
        dn = np.einsum("ij,ij->i", points - points[nxt], points - points[nxt])
        np.minimum(d, dn, out=d)
    return chosen


def uniform_delta(cloud: PointCloud, i: int, neighbors: np.ndarray) -> np.ndarray:
    """Uniform differential coordinate: mean of (v_i - v_j) over neighbors."""
    diffs = cloud.points[i] - cloud.points[np.asarray(neighbors)]
    return diffs.mean(axis=0)


def rbf_delta(cloud: PointCloud, i: int, neighbors: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Gaussian-RBF-weighted differential coordinate.

    Weights are exp(-||v_i - v_j||^2 / scale^2); the default scale of 1
    is the verbatim kernel, the parameter is an extension knob only.
    """
    diffs = cloud.points[i] - cloud.points[np.asarray(neighbors)]
    w = np.exp(-np.einsum("ij,ij->i", diffs, diffs) / scale**2)
    tot = w.sum()
    if tot == 0.0:
        raise DegenerateNeighborhoodError(
            f"all RBF weights underflowed for point {i}"
        )
    return (w[:, None] * diffs).sum(axis=0) / tot


def weighted_deltas_all(
    points: np.ndarray,
    nbr_idx: np.ndarray,
    use_rbf: bool = True,
    scale: float = 1.0,
):
    """Vectorized differential coordinates for every point.

    Returns (delta, weights, weight_sums): delta is (N, 3), weights the
    per-neighbor coefficients w_ij (already including the RBF kernel or
    the uniform 1/K), and weight_sums the RBF denominators (ones for
    uniform weighting).  weights / weight_sums are reused verbatim by
    the network feature construction so both stages share denominators.
    """
    points = np.asarray(points, dtype=np.float64)
    diffs = points[:, None, :] - points[nbr_idx]  # (N, K, 3)
    k = nbr_idx.shape[1]
    if use_rbf:
        w = np.exp(-np.einsum("ijk,ijk->ij", diffs, diffs) / scale**2)
        tot = w.sum(axis=1)
        if np.any(tot == 0.0):
            bad = int(np.flatnonzero(tot == 0.0)[0])
            raise DegenerateNeighborhoodError(
                f"all RBF weights underflowed for point {bad}"
            )
    else:
        w = np.full(nbr_idx.shape, 1.0 / k)
        tot = np.ones(len(points))
    delta = np.einsum("ij,ijk->ik", w, diffs) / tot[:, None]
    return delta, w, tot


def save_cloud(path, cloud: PointCloud, comments: list[str] | None = None) -> None:
    """Plain-text cloud file: one ``x y z`` line per point, meters."""
    with open(path, "w") as f:
        for line in comments or []:
            f.write(f"# {line}\n")
        for p in cloud.points:
            f.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def load_cloud(path) -> PointCloud:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(" ")
            if len(parts) != 3:
                raise ValueError(f"bad cloud line: {line!r}")
            rows.append([float(x) for x in parts])
    return PointCloud(np.array(rows, dtype=np.float64))
