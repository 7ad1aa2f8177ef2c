import numpy as np
import pytest
import torch

from recapguard.channel import sample_params, simulate_recapture
from recapguard.checkpoint import load_checkpoint, save_checkpoint
from recapguard.detector import (
    Model,
    ModelConfig,
    ProbabilityPair,
    build_model,
    edge_kernels,
    edge_response_maps,
    feature_maps,
    forward,
    parameter_breakdown,
    predict,
    spatial_trace,
    visualize_edge_responses,
    visualize_feature_maps,
)
from recapguard.errors import CheckpointError, ConfigError, ModelUnavailableError, ShapeError
from recapguard.imaging import ImageBuffer, preprocess
from recapguard.sources import make_source_image

EXPECTED_PARAMS = 7_667_362


def _rand_tensor(seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 1, (3, 224, 224)).astype(np.float32)


class TestEdgeKernels:
    def test_exact_values(self):
        sx, sy, lap = edge_kernels()
        assert np.array_equal(sx, [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]])
        assert np.array_equal(sy, sx.T)
        assert np.array_equal(lap, [[0, 1, 0], [1, -4, 1], [0, 1, 0]])

    def test_zero_dc(self):
        for k in edge_kernels():
            assert k.sum() == 0.0

    def test_constant_image_zero_response(self):
        sx = edge_kernels()[0]
        const = np.full((16, 16), 0.7, dtype=np.float32)
        resp = _correlate2d_valid(const, sx)
        assert np.abs(resp).max() < 1e-5

    def test_sobel_x_on_ramp_constant_positive(self):
        # independent oracle: direct correlation of v(x, y) = x / W
        w = 32
        ramp = np.tile(np.arange(w, dtype=np.float32) / w, (w, 1))
        sx = edge_kernels()[0]
        resp = _correlate2d_valid(ramp, sx)
        assert resp.min() > 0.0
        assert np.allclose(resp, resp[0, 0])  # constant in the interior
        assert resp[0, 0] == pytest.approx(8.0 / w, abs=1e-6)


def _correlate2d_valid(img, kernel):
    h, w = img.shape
    out = np.zeros((h - 2, w - 2), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * img[dy:dy + h - 2, dx:dx + w - 2]
    return out


class TestBuildModel:
    def test_parameter_count(self):
        model = build_model(ModelConfig(), init_seed=0)
        assert model.parameter_count() == EXPECTED_PARAMS
        assert 6_900_000 <= model.parameter_count() <= 10_000_000
        breakdown = parameter_breakdown(model)
        assert sum(count for _, _, count in breakdown) == EXPECTED_PARAMS

    def test_spatial_trace(self):
        model = build_model(ModelConfig(), init_seed=0)
        assert spatial_trace(model) == [224, 112, 56, 28, 14]

    def test_edge_layer_init_exact(self):
        model = build_model(ModelConfig(), init_seed=1)
        weight = model.net.edge.weight.detach().numpy()
        kernels = edge_kernels()
        for k in range(3):
            for c in range(3):
                f = 3 * k + c
                assert np.array_equal(weight[f, c], kernels[k])
                for other in range(3):
                    if other != c:
                        assert np.all(weight[f, other] == 0.0)

    def test_same_seed_same_weights(self):
        a = build_model(ModelConfig(), init_seed=3)
        b = build_model(ModelConfig(), init_seed=3)
        assert a.version == b.version
        c = build_model(ModelConfig(), init_seed=4)
        assert c.version != a.version

    def test_freeze_flag(self):
        model = build_model(ModelConfig(freeze_edge_kernels=True), init_seed=0)
        assert not model.net.edge.weight.requires_grad

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ModelConfig(block_channels=(32, 64, 128))
        with pytest.raises(ConfigError):
            ModelConfig(block_channels=(64, 64, 128, 256))
        with pytest.raises(ConfigError):
            ModelConfig(fc_dims=(256, 128))
        with pytest.raises(ConfigError):
            ModelConfig(dropout=(0.4, 0.3))


class TestForward:
    def test_softmax_sums_to_one(self):
        model = build_model(ModelConfig(), init_seed=0)
        pairs = forward(model, [_rand_tensor(i) for i in range(8)])
        for p in pairs:
            assert abs(p.p_orig + p.p_recap - 1.0) < 1e-6

    def test_deterministic_in_inference_mode(self):
        model = build_model(ModelConfig(), init_seed=0)
        x = _rand_tensor(5)
        a = forward(model, [x])[0]
        b = forward(model, [x])[0]
        assert (a.p_orig, a.p_recap) == (b.p_orig, b.p_recap)

    def test_batch_permutation_equivariance(self):
        model = build_model(ModelConfig(), init_seed=0)
        batch = [_rand_tensor(i) for i in range(6)]
        perm = [3, 0, 5, 1, 4, 2]
        direct = forward(model, batch)
        permuted = forward(model, [batch[i] for i in perm])
        for j, i in enumerate(perm):
            assert permuted[j].p_recap == pytest.approx(direct[i].p_recap, abs=1e-6)

    def test_shape_error(self):
        model = build_model(ModelConfig(), init_seed=0)
        with pytest.raises(ShapeError):
            forward(model, [np.zeros((3, 128, 128), dtype=np.float32)])
        with pytest.raises(ShapeError):
            forward(model, [])

    def test_untrained_models_favor_neither_class(self):
        # Monte-Carlo over fresh seeds: random heads must not lean one way
        means = []
        for seed in range(5):
            model = build_model(ModelConfig(), init_seed=100 + seed)
            rng = np.random.default_rng(seed)
            batch = [rng.normal(0, 1, (3, 224, 224)).astype(np.float32) for _ in range(40)]
            pairs = forward(model, batch)
            means.append(np.mean([p.p_recap for p in pairs]))
        assert 0.35 <= float(np.mean(means)) <= 0.65


class TestPredict:
    def test_requires_trained_model(self, sample_image):
        with pytest.raises(ModelUnavailableError):
            predict(None, sample_image)
        untrained = build_model(ModelConfig(), init_seed=0)
        with pytest.raises(ModelUnavailableError):
            predict(untrained, sample_image)

    def test_decision_rule(self, sample_image, monkeypatch):
        model = build_model(ModelConfig(), init_seed=0)
        model.trained = True

        import recapguard.detector as det

        monkeypatch.setattr(det, "forward", lambda *a, **k: [ProbabilityPair(0.97, 0.03)])
        res = det.predict(model, sample_image, threshold=0.5)
        assert res.label == "original" and res.confidence == pytest.approx(0.97)

        monkeypatch.setattr(det, "forward", lambda *a, **k: [ProbabilityPair(0.40, 0.60)])
        assert det.predict(model, sample_image, threshold=0.5).label == "recaptured"
        assert det.predict(model, sample_image, threshold=0.7).label == "original"

    def test_tie_resolves_to_original(self, sample_image, monkeypatch):
        import recapguard.detector as det

        model = build_model(ModelConfig(), init_seed=0)
        model.trained = True
        monkeypatch.setattr(det, "forward", lambda *a, **k: [ProbabilityPair(0.5, 0.5)])
        assert det.predict(model, sample_image, threshold=0.5).label == "original"

    def test_threshold_monotonicity(self, sample_image, toy_trained):
        model, _ = toy_trained
        labels = [predict(model, sample_image, threshold=t).label for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        # once original, raising the threshold can never flip back to recaptured
        first_original = labels.index("original") if "original" in labels else len(labels)
        assert all(lab == "original" for lab in labels[first_original:])

    def test_matches_evaluate_confusion(self, toy_trained, toy_splits):
        from recapguard.channel import LABEL_RECAPTURED
        from recapguard.evaluation import evaluate
        from recapguard.imaging import load_image

        model, _ = toy_trained
        test_manifest = toy_splits[2]
        report = evaluate(model, test_manifest, threshold=0.5)
        cm = np.zeros((2, 2), dtype=int)
        for entry in test_manifest.entries:
            result = predict(model, load_image(test_manifest.resolve(entry)), threshold=0.5)
            t = 1 if entry.label == LABEL_RECAPTURED else 0
            p = 1 if result.label == LABEL_RECAPTURED else 0
            cm[t, p] += 1
        assert cm.tolist() == report.confusion_matrix


class TestVisualizations:
    def test_edge_response_grid_layout(self, sample_image, tmp_path):
        model = build_model(ModelConfig(), init_seed=0)
        grid = visualize_edge_responses(model, sample_image, tmp_path / "edges.png")
        assert grid.shape == (4 * 224, 4 * 224)
        assert (tmp_path / "edges.png").exists()

    def test_constant_input_fixed_maps_zero(self):
        model = build_model(ModelConfig(), init_seed=0)
        const = ImageBuffer(np.full((64, 64, 3), 0.5, dtype=np.float32))
        maps = edge_response_maps(model, const)
        assert np.abs(maps[:9]).max() < 1e-4  # fixed kernels: zero before normalization

    def test_recapture_raises_laplacian_activation(self):
        model = build_model(ModelConfig(), init_seed=0)
        wins = 0
        n = 25
        for i in range(n):
            src = make_source_image(300 + i, size=160)
            recap = simulate_recapture(src, sample_params(600 + i))
            lap_src = np.abs(edge_response_maps(model, src)[6:9]).mean()
            lap_recap = np.abs(edge_response_maps(model, recap)[6:9]).mean()
            wins += lap_recap > lap_src
        assert wins >= int(0.9 * n)

    def test_feature_map_sizes(self, sample_image, tmp_path):
        model = build_model(ModelConfig(), init_seed=0)
        assert feature_maps(model, sample_image, 1).shape == (16, 112, 112)
        assert feature_maps(model, sample_image, 2).shape == (16, 56, 56)
        grid = visualize_feature_maps(model, sample_image, 1, tmp_path / "b1.png")
        assert grid.shape == (4 * 112, 4 * 112)
        with pytest.raises(IndexError):
            feature_maps(model, sample_image, 5)

    def test_feature_maps_deterministic(self, sample_image):
        model = build_model(ModelConfig(), init_seed=0)
        a = feature_maps(model, sample_image, 3)
        b = feature_maps(model, sample_image, 3)
        assert np.array_equal(a, b)

    def test_trained_model_separates_channel_activations(self, toy_trained):
        model, _ = toy_trained
        src = make_source_image(555, size=160)
        recap = simulate_recapture(src, sample_params(556))
        a = feature_maps(model, src, 2).reshape(16, -1).mean(axis=1)
        b = feature_maps(model, recap, 2).reshape(16, -1).mean(axis=1)
        differing = np.sum(~np.isclose(a, b, rtol=1e-3))
        assert differing >= int(0.8 * 16)


class TestCheckpoint:
    def test_roundtrip_preserves_outputs(self, toy_trained, tmp_path):
        model, _ = toy_trained
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.version == model.version
        assert loaded.trained == model.trained
        x = _rand_tensor(11)
        a = forward(model, [x])[0]
        b = forward(loaded, [x])[0]
        assert a.p_recap == pytest.approx(b.p_recap, abs=1e-7)

    def test_rejects_config_hash_mismatch(self, tmp_path):
        import json

        model = build_model(ModelConfig(), init_seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)

        data = dict(np.load(path, allow_pickle=False))
        meta = json.loads(str(data["meta"]))
        meta["config"]["adaptive_pool_out"] = 6  # tamper without re-hashing
        data["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **data)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rejects_weight_tamper(self, tmp_path):
        model = build_model(ModelConfig(), init_seed=0)
        path = tmp_path / "m.ckpt"
        save_checkpoint(model, path)
        data = dict(np.load(path, allow_pickle=False))
        name = "tensor/head.1.weight"
        arr = np.array(data[name])
        arr[0, 0] += 1.0
        data[name] = arr
        with open(path, "wb") as fh:
            np.savez(fh, **data)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "absent.ckpt")
