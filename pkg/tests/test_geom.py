"""Neighbor search, furthest-point sampling, and differential coordinates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asfnet import geom
from asfnet.geom import DegenerateNeighborhoodError, PointCloud


def brute_force_knn(points, query, k):
    """Independent exhaustive reference: sort by (distance, x, y, z)."""
    keyed = []
    for j, p in enumerate(points):
        if j == query:
            continue
        d = float(np.sum((p - points[query]) ** 2))
        keyed.append((d, tuple(p), j))
    keyed.sort()
    return [j for _, _, j in keyed[:k]]


def reference_fps(points, n, seed_index):
    """Quadratic reference: recompute all pairwise distances every step.

    Larger min-distance wins; exact ties go to the lexicographically
    smaller point.
    """
    chosen = [seed_index]
    while len(chosen) < n:
        best_key, best = None, None
        for j in range(len(points)):
            if j in chosen:
                continue
            d = min(float(np.sum((points[j] - points[c]) ** 2)) for c in chosen)
            key = (-d, tuple(points[j]))
            if best_key is None or key < best_key:
                best_key, best = key, j
        chosen.append(best)
    return chosen


class TestPointCloud:
    def test_shape_checked(self):
        with pytest.raises(ValueError):
            PointCloud(np.zeros((4, 2)))

    def test_finite_checked(self):
        pts = np.zeros((4, 3))
        pts[2, 1] = np.nan
        with pytest.raises(ValueError):
            PointCloud(pts)

    def test_len(self):
        assert len(PointCloud(np.zeros((7, 3)))) == 7


class TestKnn:
    def test_nearest_by_inspection(self):
        cloud = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], float))
        assert list(geom.knn(cloud, 0, 1)) == [1]

    def test_tie_break_lexicographic(self):
        # two corners of the unit square at distance 1 from the origin
        cloud = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float))
        assert list(geom.knn(cloud, 0, 2)) == [2, 1]  # (0,1,0) before (1,0,0)

    def test_k_out_of_range(self):
        cloud = PointCloud(np.zeros((5, 3)))
        with pytest.raises(ValueError):
            geom.knn(cloud, 0, 5)
        with pytest.raises(ValueError):
            geom.knn(cloud, 0, 0)

    def test_query_out_of_range(self):
        cloud = PointCloud(np.zeros((5, 3)))
        with pytest.raises(ValueError):
            geom.knn(cloud, 5, 2)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(42)
        pts = rng.normal(size=(200, 3))
        cloud = PointCloud(pts)
        for query in [0, 17, 99, 199]:
            assert list(geom.knn(cloud, query, 5)) == brute_force_knn(pts, query, 5)

    def test_knn_all_matches_per_point(self):
        rng = np.random.default_rng(3)
        for pts in [
            rng.normal(size=(150, 3)),
            np.repeat(rng.normal(size=(40, 3)), 3, axis=0),  # many duplicates
            np.stack(np.meshgrid(*[np.arange(5.0)] * 3), -1).reshape(-1, 3),  # grid ties
        ]:
            cloud = PointCloud(pts)
            all_idx = geom.knn_all(pts, 5)
            for i in range(len(pts)):
                assert list(all_idx[i]) == list(geom.knn(cloud, i, 5))

    def test_duplicate_points_allowed(self):
        cloud = PointCloud(np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]], float))
        assert list(geom.knn(cloud, 0, 2)) == [1, 2]


class TestFurthestPointSample:
    def test_full_cloud_is_permutation(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(30, 3))
        out = geom.furthest_point_sample(PointCloud(pts), 30)
        assert sorted(map(tuple, out.points)) == sorted(map(tuple, pts))

    def test_collinear_extremes(self):
        pts = np.stack([np.arange(11.0), np.zeros(11), np.zeros(11)], axis=1)
        out = geom.furthest_point_sample(PointCloud(pts), 2, seed_index=0)
        assert out.points[0, 0] == 0.0 and out.points[1, 0] == 10.0

    def test_matches_quadratic_reference(self):
        rng = np.random.default_rng(7)
        pts = rng.normal(size=(500, 3))
        got = geom.furthest_point_indices(pts, 64, seed_index=3)
        assert list(got) == reference_fps(pts, 64, 3)

    def test_n_out_of_range(self):
        with pytest.raises(ValueError):
            geom.furthest_point_sample(PointCloud(np.zeros((5, 3))), 6)


class TestUniformDelta:
    def test_symmetric_cancellation(self):
        cloud = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0]], float))
        np.testing.assert_allclose(geom.uniform_delta(cloud, 0, [1, 2]), 0.0)

    def test_single_neighbor(self):
        cloud = PointCloud(np.array([[0, 0, 0], [0, 0, 1]], float))
        np.testing.assert_allclose(geom.uniform_delta(cloud, 0, [1]), [0, 0, -1])

    def test_hexagon(self):
        ang = np.arange(6) * math.pi / 3
        hexagon = np.stack([np.cos(ang), np.sin(ang), np.zeros(6)], axis=1)
        cloud = PointCloud(np.vstack([[0, 0, 0], hexagon]))
        np.testing.assert_allclose(geom.uniform_delta(cloud, 0, range(1, 7)), 0.0, atol=1e-15)


class TestRbfDelta:
    def test_symmetric_cancellation(self):
        cloud = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0]], float))
        np.testing.assert_allclose(geom.rbf_delta(cloud, 0, [1, 2]), 0.0, atol=1e-16)

    def test_hand_computed_value(self):
        # weights e^{-1} and e^{-4} on differences (-1,0,0) and (0,-2,0)
        cloud = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0]], float))
        got = geom.rbf_delta(cloud, 0, [1, 2])
        w1, w2 = math.exp(-1.0), math.exp(-4.0)
        expected = np.array([-w1, -2.0 * w2, 0.0]) / (w1 + w2)
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        np.testing.assert_allclose(got[:2], [-0.95257, -0.09485], atol=5e-6)

    def test_rotation_equivariance(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(30, 3))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        cloud = PointCloud(pts)
        rotated = PointCloud(pts @ q.T)
        nbrs = geom.knn(cloud, 0, 5)
        base = geom.rbf_delta(cloud, 0, nbrs)
        np.testing.assert_allclose(geom.rbf_delta(rotated, 0, nbrs), q @ base, atol=1e-9)

    def test_degenerate_neighborhood(self):
        cloud = PointCloud(np.array([[0, 0, 0], [1e4, 0, 0]], float))
        with pytest.raises(DegenerateNeighborhoodError):
            geom.rbf_delta(cloud, 0, [1])

    def test_convex_combination_bound(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=(50, 3))
        cloud = PointCloud(pts)
        for i in range(0, 50, 7):
            nbrs = geom.knn(cloud, i, 5)
            delta = geom.rbf_delta(cloud, i, nbrs)
            max_diff = np.linalg.norm(pts[i] - pts[nbrs], axis=1).max()
            assert np.linalg.norm(delta) <= max_diff + 1e-12


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_translation_invariance(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(20, 3))
    t = rng.normal(size=3) * 100
    nbrs = geom.knn_all(pts, 4)
    d0, _, _ = geom.weighted_deltas_all(pts, nbrs)
    d1, _, _ = geom.weighted_deltas_all(pts + t, nbrs)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance_of_delta_multiset(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(25, 3))
    perm = rng.permutation(25)
    nbrs = geom.knn_all(pts, 5)
    d0, _, _ = geom.weighted_deltas_all(pts, nbrs)
    nbrs_p = geom.knn_all(pts[perm], 5)
    d1, _, _ = geom.weighted_deltas_all(pts[perm], nbrs_p)
    # per-point results follow their points exactly
    np.testing.assert_array_equal(d0[perm], d1)


class TestCloudFile:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        cloud = PointCloud(rng.normal(size=(17, 3)))
        path = tmp_path / "c.xyz"
        geom.save_cloud(path, cloud, comments=["unit test"])
        got = geom.load_cloud(path)
        np.testing.assert_array_equal(got.points, cloud.points)

    def test_comments_ignored(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("# header\n0 0 0\n\n1 2 3\n")
        got = geom.load_cloud(path)
        np.testing.assert_array_equal(got.points, [[0, 0, 0], [1, 2, 3]])

    def test_bad_line_rejected(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("1 2\n")
        with pytest.raises(ValueError):
            geom.load_cloud(path)
