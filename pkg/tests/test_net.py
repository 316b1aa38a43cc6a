"""Permutation-invariant network: forward, gradients, checkpoints."""

import numpy as np
import pytest

from asfnet import geom, net
from asfnet.geom import PointCloud
from asfnet.net import ArchConfig, CheckpointFormatError, CheckpointVersionError

TINY = ArchConfig(k=2, latent_dim=4, encoder_widths=(5,), conv_channels=3,
                  mlp_widths=(4, 3), fc_widths=(3, 3, 3))


def random_cloud(n, seed):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.normal(size=(n, 3)))


def brute_knn(points, k, ranks=None):
    """Quadratic reference: ascending distance, ties by lexicographic rank."""
    points = np.asarray(points, dtype=np.float64)
    if ranks is None:
        ranks = geom.lex_ranks(points)
    out = np.empty((len(points), k), dtype=np.int64)
    for i in range(len(points)):
        d = np.einsum("ij,ij->i", points - points[i], points - points[i])
        order = sorted((j for j in range(len(points)) if j != i),
                       key=lambda j: (d[j], ranks[j]))
        out[i] = order[:k]
    return out


def reference_forward(model, cloud):
    """Independent loop transliteration of the documented pipeline."""
    arch = model.arch
    p = {k: np.asarray(v, dtype=np.float64) for k, v in model.params.items()}
    pts = cloud.points
    n, k = len(pts), arch.k

    nbr = brute_knn(pts, k)
    delta = np.zeros((n, 3))
    coeff = np.zeros((n, k))
    for i in range(n):
        w = np.array([np.exp(-np.dot(pts[i] - pts[j], pts[i] - pts[j])
                             / arch.rbf_scale**2) for j in nbr[i]])
        if not arch.use_rbf_delta:
            w = np.full(k, 1.0 / k)
        coeff[i] = w / w.sum() if arch.use_rbf_delta else w
        delta[i] = sum(coeff[i][jj] * (pts[i] - pts[nbr[i][jj]]) for jj in range(k))

    z = delta
    if arch.use_surface_encoder:
        for li in range(len(arch.encoder_widths) + 1):
            z = np.maximum(z @ p[f"enc{li}_W"] + p[f"enc{li}_b"], 0.0)

    lat_nbr = brute_knn(z, k, ranks=geom.lex_ranks(z))
    pooled = np.full(arch.mlp_widths[-1], -np.inf)
    rows_per_point = []
    for i in range(n):
        rows = [z[i]]
        for jj in range(k):
            rows.append(coeff[i][jj] * (z[i] - z[nbr[i][jj]]))
        if arch.use_rbf_delta:
            u = np.array([np.exp(-np.dot(z[i] - z[j], z[i] - z[j])
                                 / arch.rbf_scale**2) for j in lat_nbr[i]])
            a = u / u.sum()
        else:
            a = np.full(k, 1.0 / k)
        for jj in range(k):
            rows.append(a[jj] * (z[i] - z[lat_nbr[i][jj]]))
        x = np.concatenate(rows)
        rows_per_point.append(x)
        h = np.maximum(x @ p["conv_W"] + p["conv_b"], 0.0)
        h = np.maximum(h @ p["mlp0_W"] + p["mlp0_b"], 0.0)
        h = np.maximum(h @ p["mlp1_W"] + p["mlp1_b"], 0.0)
        pooled = np.maximum(pooled, h)

    h = pooled
    for li in range(len(arch.fc_widths) + 1):
        h = np.tanh(h @ p[f"fc{li}_W"] + p[f"fc{li}_b"])
    return h, np.array(rows_per_point)


class TestInit:
    def test_default_parameter_count(self):
        model = net.init_params(ArchConfig(), 125, seed=0)
        assert model.n_params() == 35216

    def test_seeded_reproducible(self):
        a = net.init_params(TINY, 125, seed=7)
        b = net.init_params(TINY, 125, seed=7)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_float32_storage(self):
        model = net.init_params(TINY, 125, seed=0)
        assert all(p.dtype == np.float32 for p in model.params.values())

    def test_encoder_ablation_strictly_fewer_params(self):
        full = net.init_params(ArchConfig(), 125, seed=0)
        ablated = net.init_params(ArchConfig(use_surface_encoder=False), 125, seed=0)
        assert ablated.n_params() < full.n_params()

    def test_bad_pooling_rejected(self):
        with pytest.raises(ValueError):
            ArchConfig(pooling="median")

    def test_bad_input_scale_rejected(self):
        with pytest.raises(ValueError):
            ArchConfig(input_scale=0.0)

    def test_input_scale_scales_differential_coordinates(self):
        cloud = random_cloud(24, 3)
        arch_c = ArchConfig(k=TINY.k, latent_dim=TINY.latent_dim,
                            encoder_widths=TINY.encoder_widths,
                            conv_channels=TINY.conv_channels,
                            mlp_widths=TINY.mlp_widths, fc_widths=TINY.fc_widths,
                            input_scale=100.0)
        g1 = net.prepare_geometry(TINY, cloud)
        gc = net.prepare_geometry(arch_c, cloud)
        np.testing.assert_allclose(gc.delta, 100.0 * g1.delta, rtol=0, atol=1e-12)
        np.testing.assert_array_equal(gc.nbr_idx, g1.nbr_idx)
        np.testing.assert_array_equal(gc.ranks, g1.ranks)
        np.testing.assert_allclose(gc.coeff, g1.coeff, rtol=0, atol=0)

    def test_input_scale_equals_first_layer_boost(self):
        # scaling the input is the same function as scaling the first
        # encoder weight matrix (relu is positively homogeneous, biases 0)
        cloud = random_cloud(24, 4)
        arch_c = ArchConfig(k=TINY.k, latent_dim=TINY.latent_dim,
                            encoder_widths=TINY.encoder_widths,
                            conv_channels=TINY.conv_channels,
                            mlp_widths=TINY.mlp_widths, fc_widths=TINY.fc_widths,
                            input_scale=7.0)
        scaled = net.init_params(arch_c, 125, seed=5)
        boosted = net.init_params(TINY, 125, seed=5)
        boosted.params["enc0_W"] = boosted.params["enc0_W"] * np.float32(7.0)
        # float32 parameter storage limits the agreement to single precision
        np.testing.assert_allclose(net.forward(scaled, cloud),
                                   net.forward(boosted, cloud),
                                   rtol=0, atol=1e-5)


class TestForward:
    def test_zero_params_zero_output(self):
        model = net.init_params(TINY, 125, seed=0)
        for name in model.params:
            model.params[name] = np.zeros_like(model.params[name])
        out = net.forward(model, random_cloud(16, 0))
        np.testing.assert_array_equal(out, np.zeros(16))

    def test_matches_loop_reference(self):
        model = net.init_params(TINY, 125, seed=3)
        cloud = random_cloud(12, 4)
        expected, _ = reference_forward(model, cloud)
        np.testing.assert_allclose(net.forward(model, cloud), expected, atol=1e-12)

    def test_matches_loop_reference_no_rbf(self):
        arch = ArchConfig(k=2, latent_dim=4, encoder_widths=(5,), conv_channels=3,
                          mlp_widths=(4, 3), fc_widths=(3, 3, 3), use_rbf_delta=False)
        model = net.init_params(arch, 125, seed=3)
        cloud = random_cloud(12, 4)
        expected, _ = reference_forward(model, cloud)
        np.testing.assert_allclose(net.forward(model, cloud), expected, atol=1e-12)

    def test_matches_loop_reference_no_encoder(self):
        arch = ArchConfig(k=2, encoder_widths=(5,), conv_channels=3,
                          mlp_widths=(4, 3), fc_widths=(3, 3, 3),
                          use_surface_encoder=False)
        model = net.init_params(arch, 125, seed=3)
        cloud = random_cloud(12, 4)
        expected, _ = reference_forward(model, cloud)
        np.testing.assert_allclose(net.forward(model, cloud), expected, atol=1e-12)

    def test_outputs_in_open_unit_interval(self):
        model = net.init_params(TINY, 125, seed=1)
        out = net.forward(model, random_cloud(32, 2))
        assert out.shape == (16,)
        assert np.all(np.abs(out) < 1.0)

    def test_permutation_invariance(self):
        model = net.init_params(ArchConfig(), 125, seed=0)
        cloud = random_cloud(64, 5)
        ref = net.forward(model, cloud)
        rng = np.random.default_rng(6)
        for _ in range(20):
            perm = rng.permutation(len(cloud))
            out = net.forward(model, PointCloud(cloud.points[perm]))
            assert np.abs(out - ref).max() <= 1e-6

    def test_translation_invariance(self):
        # only differences of coordinates enter the pipeline
        model = net.init_params(TINY, 125, seed=2)
        cloud = random_cloud(24, 7)
        a = net.forward(model, cloud)
        b = net.forward(model, PointCloud(cloud.points + np.array([10.0, -3.0, 0.5])))
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_too_few_points_rejected(self):
        model = net.init_params(TINY, 125, seed=0)
        with pytest.raises(ValueError):
            net.forward(model, random_cloud(2, 0))


class TestNamedStages:
    def test_encode_points_permutation_equivariant(self):
        model = net.init_params(TINY, 125, seed=1)
        cloud = random_cloud(20, 8)
        z = net.encode_points(model, cloud)
        perm = np.random.default_rng(9).permutation(20)
        zp = net.encode_points(model, PointCloud(cloud.points[perm]))
        np.testing.assert_allclose(zp, z[perm], atol=1e-12)

    def test_encode_points_hand_computed(self):
        # single-layer encoder (no hidden widths), 1-d latent code:
        # z_i = relu(delta_i . W + b)
        arch = ArchConfig(k=2, latent_dim=1, encoder_widths=(), conv_channels=3,
                          mlp_widths=(4, 3), fc_widths=(3,))
        model = net.init_params(arch, 125, seed=0)
        W = model.params["enc0_W"].astype(np.float64)
        b = model.params["enc0_b"].astype(np.float64)
        cloud = random_cloud(8, 3)
        nbr = brute_knn(cloud.points, 2)
        z = net.encode_points(model, cloud)
        for i in range(8):
            diffs = cloud.points[i] - cloud.points[nbr[i]]
            w = np.exp(-np.einsum("ij,ij->i", diffs, diffs))
            delta = (w[:, None] * diffs).sum(axis=0) / w.sum()
            np.testing.assert_allclose(z[i], np.maximum(delta @ W + b, 0.0),
                                       atol=1e-12)

    def test_build_features_shape_and_reference(self):
        model = net.init_params(TINY, 125, seed=3)
        cloud = random_cloud(12, 4)
        feat = net.build_features(model, cloud)
        assert feat.shape == (12, 1 + 2 * TINY.k, TINY.latent_dim)
        _, rows = reference_forward(model, cloud)
        np.testing.assert_allclose(feat.reshape(12, -1), rows, atol=1e-12)

    def test_build_features_zero_difference_rows_for_equal_codes(self):
        # identical latent codes for all points -> every difference row 0
        model = net.init_params(TINY, 125, seed=0)
        cloud = random_cloud(10, 1)
        codes = np.tile(np.array([0.3, -0.1, 0.7, 0.2]), (10, 1))
        feat = net.build_features(model, cloud, codes=codes)
        np.testing.assert_array_equal(feat[:, 1:, :], 0.0)
        np.testing.assert_allclose(feat[:, 0, :], codes)


class TestGradients:
    def test_loss_zero_at_target(self):
        model = net.init_params(TINY, 125, seed=4)
        cloud = random_cloud(16, 5)
        target = net.forward(model, cloud)
        loss, grads, out = net.loss_and_gradients(model, cloud, target)
        assert loss == 0.0
        assert all(np.all(g == 0.0) for g in grads.values())
        np.testing.assert_array_equal(out, target)

    def test_finite_difference_all_parameters(self):
        model = net.init_params(TINY, 125, seed=6)
        # float64 parameters make central differences exact to O(eps^2)
        model.params = {k: v.astype(np.float64) for k, v in model.params.items()}
        cloud = random_cloud(14, 6)
        gm = net.prepare_geometry(model.arch, cloud)
        target = np.random.default_rng(7).uniform(-0.5, 0.5, 16)
        _, grads, _ = net.loss_and_gradients(model, cloud, target, gm)
        eps = 1e-6
        rng = np.random.default_rng(8)
        for name, g in grads.items():
            flat = model.params[name].reshape(-1)
            picks = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for idx in picks:
                orig = flat[idx]
                flat[idx] = orig + eps
                lp, _, _ = net.loss_and_gradients(model, cloud, target, gm)
                flat[idx] = orig - eps
                lm, _, _ = net.loss_and_gradients(model, cloud, target, gm)
                flat[idx] = orig
                fd = (lp - lm) / (2 * eps)
                an = g.reshape(-1)[idx]
                assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd)), (name, idx, fd, an)

    def test_gradients_permutation_invariant(self):
        model = net.init_params(TINY, 125, seed=9)
        cloud = random_cloud(18, 10)
        target = np.random.default_rng(11).uniform(-0.5, 0.5, 16)
        _, ga, _ = net.loss_and_gradients(model, cloud, target)
        perm = np.random.default_rng(12).permutation(18)
        _, gb, _ = net.loss_and_gradients(model, PointCloud(cloud.points[perm]), target)
        for name in ga:
            np.testing.assert_allclose(gb[name], ga[name], atol=1e-9)

    def test_loss_matches_forward(self):
        model = net.init_params(TINY, 125, seed=13)
        cloud = random_cloud(16, 14)
        target = np.linspace(-0.5, 0.5, 16)
        out = net.forward(model, cloud)
        loss, _, out2 = net.loss_and_gradients(model, cloud, target)
        np.testing.assert_array_equal(out, out2)
        assert loss == pytest.approx(float((out - target) @ (out - target)))


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        model = net.init_params(ArchConfig(), 250, seed=15)
        path = tmp_path / "m.ckpt"
        net.save_model(path, model)
        loaded = net.load_model(path)
        assert loaded.frequency == 250
        assert loaded.arch == model.arch
        for name in model.params:
            np.testing.assert_array_equal(loaded.params[name], model.params[name])

    def test_round_trip_preserves_forward(self, tmp_path):
        model = net.init_params(TINY, 500, seed=16)
        path = tmp_path / "m.ckpt"
        net.save_model(path, model)
        cloud = random_cloud(16, 17)
        np.testing.assert_array_equal(net.forward(net.load_model(path), cloud),
                                      net.forward(model, cloud))

    def test_truncated_rejected(self, tmp_path):
        model = net.init_params(TINY, 125, seed=0)
        path = tmp_path / "m.ckpt"
        net.save_model(path, model)
        data = path.read_bytes()
        for cut in (3, 9, len(data) // 2, len(data) - 1):
            bad = tmp_path / f"cut{cut}.ckpt"
            bad.write_bytes(data[:cut])
            with pytest.raises(CheckpointFormatError):
                net.load_model(bad)

    def test_trailing_bytes_rejected(self, tmp_path):
        model = net.init_params(TINY, 125, seed=0)
        path = tmp_path / "m.ckpt"
        net.save_model(path, model)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(CheckpointFormatError):
            net.load_model(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError):
            net.load_model(path)

    def test_wrong_version_rejected(self, tmp_path):
        model = net.init_params(TINY, 125, seed=0)
        path = tmp_path / "m.ckpt"
        net.save_model(path, model)
        data = bytearray(path.read_bytes())
        # bump the version field inside the JSON descriptor
        idx = data.find(b'"version": 1')
        assert idx >= 0
        data[idx : idx + 12] = b'"version": 2'
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointVersionError):
            net.load_model(path)


class TestAblations:
    def test_no_rbf_changes_output(self):
        cloud = random_cloud(16, 18)
        a = net.init_params(TINY, 125, seed=19)
        arch_b = ArchConfig(k=2, latent_dim=4, encoder_widths=(5,), conv_channels=3,
                            mlp_widths=(4, 3), fc_widths=(3, 3, 3), use_rbf_delta=False)
        b = net.init_params(arch_b, 125, seed=19)
        assert not np.allclose(net.forward(a, cloud), net.forward(b, cloud))

    def test_no_encoder_still_permutation_invariant(self):
        arch = ArchConfig(k=3, use_surface_encoder=False)
        model = net.init_params(arch, 125, seed=20)
        cloud = random_cloud(32, 21)
        ref = net.forward(model, cloud)
        perm = np.random.default_rng(22).permutation(32)
        out = net.forward(model, PointCloud(cloud.points[perm]))
        assert np.abs(out - ref).max() <= 1e-6
