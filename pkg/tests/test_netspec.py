import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from astropretext import netspec
from astropretext.netspec import (
    BackboneSpec,
    CheckpointError,
    HeadSpec,
    VGG16_STAGES,
    apply_max_norm,
    build_model,
    cross_entropy_loss,
    extract_features,
    images_to_tensor,
    load_checkpoint,
    loss,
    mae_loss,
    parameter_count,
    saturating_relu,
    save_checkpoint,
)


class TestSaturatingRelu:
    def test_truth_table(self):
        assert saturating_relu(-0.5) == 0.0
        assert saturating_relu(0.37) == pytest.approx(0.37, abs=0)
        assert saturating_relu(1.7) == 1.0

    def test_torch_matches_numpy(self):
        x = np.linspace(-2, 3, 41)
        t = saturating_relu(torch.from_numpy(x))
        assert np.allclose(t.numpy(), saturating_relu(x))

    @given(st.floats(-5, 5))
    @settings(max_examples=100, deadline=None)
    def test_idempotent_and_bounded(self, x):
        y = float(saturating_relu(x))
        assert 0.0 <= y <= 1.0
        assert saturating_relu(y) == y

    def test_monotone(self):
        x = np.sort(np.random.default_rng(0).uniform(-3, 3, 100))
        y = saturating_relu(x)
        assert np.all(np.diff(y) >= 0)

    def test_gradient_zero_outside_and_at_kinks(self):
        x = torch.tensor([-1.0, 0.0, 0.5, 1.0, 2.0], requires_grad=True)
        saturating_relu(x).sum().backward()
        assert x.grad.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]


class TestMaxNorm:
    def test_short_vector_unchanged(self):
        w = np.array([[0.6, 0.8]])  # unit norm
        assert np.array_equal(apply_max_norm(w, 2.0), w)

    def test_long_vector_rescaled_to_gamma(self):
        w = np.array([[6.0, 8.0]])  # norm 10
        out = apply_max_norm(w, 2.0)
        norm = np.linalg.norm(out)
        assert abs(norm - 2.0) <= 1e-9
        cos = float((out @ w.T).item()) / (norm * 10.0)
        assert abs(cos - 1.0) <= 1e-9

    def test_zero_matrix_fixed_point(self):
        w = np.zeros((4, 7))
        assert np.array_equal(apply_max_norm(w, 2.0), w)

    def test_idempotent_random_matrices(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            w = rng.normal(0, 3, (8, 5))
            once = apply_max_norm(w, 2.0)
            twice = apply_max_norm(once, 2.0)
            assert np.allclose(once, twice, atol=1e-12)
            assert np.all(np.linalg.norm(once, axis=1) <= 2.0 + 1e-9)

    def test_torch_path(self):
        w = torch.full((3, 4), 5.0)
        out = apply_max_norm(w, 2.0)
        assert torch.allclose(out.norm(dim=1), torch.full((3,), 2.0), atol=1e-6)

    def test_gamma_positive(self):
        with pytest.raises(ValueError):
            apply_max_norm(np.ones((2, 2)), 0.0)


class TestSpecs:
    def test_backbone_validation(self):
        with pytest.raises(ValueError):
            BackboneSpec("resnet", 64)
        with pytest.raises(ValueError):
            BackboneSpec("tiny", 64, (16,))  # needs >= 2 stages
        with pytest.raises(ValueError, match="incompatible"):
            BackboneSpec("tiny", 24, (8, 16, 32, 64))  # 24 not divisible by 16
        with pytest.raises(ValueError, match="incompatible"):
            BackboneSpec("vgg16", 48)

    def test_head_validation(self):
        with pytest.raises(ValueError):
            HeadSpec(0, "softmax")
        with pytest.raises(ValueError):
            HeadSpec(2, "sigmoid")
        with pytest.raises(ValueError):
            HeadSpec(2, "softmax", dropout=1.0)
        with pytest.raises(ValueError):
            HeadSpec(2, "softmax", max_norm=0.0)

    def test_feature_dims(self):
        assert BackboneSpec("tiny", 64, (16, 32)).feature_dim == 16 * 16 * 32
        assert BackboneSpec("vgg16", 64).feature_dim == 2 * 2 * 512


class TestBuildModel:
    def test_tiny_shapes_and_range(self):
        model = build_model(
            BackboneSpec("tiny", 64, (16, 32)),
            HeadSpec(12, "saturating-relu"),
            seed=0,
        )
        with torch.no_grad():
            out = model(torch.rand(3, 3, 64, 64))
        assert out.shape == (3, 12)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_softmax_rows_sum_to_one(self):
        model = build_model(BackboneSpec("tiny", 32, (8, 16)), HeadSpec(3, "softmax", hidden_units=32), seed=1)
        with torch.no_grad():
            out = model(torch.rand(5, 3, 32, 32))
        assert torch.allclose(out.sum(dim=1), torch.ones(5), atol=1e-6)
        assert float(out.min()) >= 0.0

    def test_vgg16_parameter_count_closed_form(self):
        backbone = BackboneSpec("vgg16", 64)
        head = HeadSpec(2, "softmax")
        model = build_model(backbone, head, seed=0)
        # independent arithmetic over the 13 conv layers plus the head
        expected = 0
        c_in = 3
        for stage in VGG16_STAGES:
            for c_out in stage:
                expected += 9 * c_in * c_out + c_out
                c_in = c_out
        feat = 512 * (64 // 32) ** 2
        expected += feat * 2048 + 2048
        expected += 2048 * 2 + 2
        assert sum(p.numel() for p in model.parameters()) == expected
        assert parameter_count(backbone, head) == expected

    def test_seeded_build_is_deterministic(self):
        spec = (BackboneSpec("tiny", 32, (8, 16)), HeadSpec(2, "softmax", hidden_units=32))
        a, b = build_model(*spec, seed=7), build_model(*spec, seed=7)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)
        c = build_model(*spec, seed=8)
        assert any(not torch.equal(pa, pc) for pa, pc in zip(a.parameters(), c.parameters()))

    def test_inference_deterministic_with_dropout_disabled(self):
        model = build_model(BackboneSpec("tiny", 32, (8, 16)), HeadSpec(4, "softmax", hidden_units=32), seed=0)
        model.eval()
        x = torch.rand(2, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(model(x), model(x))

    def test_images_to_tensor_layout(self):
        imgs = np.zeros((2, 8, 8, 3), dtype=np.float32)
        imgs[0, :, :, 1] = 1.0
        t = images_to_tensor(imgs)
        assert t.shape == (2, 3, 8, 8)
        assert float(t[0, 1].min()) == 1.0
        with pytest.raises(ValueError):
            images_to_tensor(np.zeros((2, 8, 8)))


class TestLoss:
    def test_mae_perfect_fit(self):
        p = torch.tensor([[0.1, 0.2]])
        assert float(loss("mae", p, p)) == 0.0

    def test_mae_arithmetic(self):
        assert float(mae_loss(torch.tensor([0.5]), torch.tensor([0.6]))) == pytest.approx(0.1)

    def test_cross_entropy_perfect(self):
        p = torch.tensor([[1.0, 0.0, 0.0]])
        assert float(loss("cross-entropy", p, torch.tensor([0]))) == pytest.approx(0.0, abs=1e-6)

    def test_cross_entropy_zero_probability_clamped(self):
        p = torch.tensor([[0.0, 1.0]])
        value = float(cross_entropy_loss(p, torch.tensor([0])))
        assert value == pytest.approx(-np.log(1e-7), rel=1e-6)
        assert np.isfinite(value)

    def test_losses_non_negative(self):
        rng = np.random.default_rng(0)
        p = torch.from_numpy(rng.uniform(0, 1, (6, 4)))
        t = torch.from_numpy(rng.uniform(0, 1, (6, 4)))
        assert float(mae_loss(p, t)) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mae_loss(torch.zeros(2, 3), torch.zeros(2, 4))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            loss("huber", torch.zeros(1), torch.zeros(1))


class TestGradientCheck:
    """Analytic gradients vs central finite differences on a small head."""

    @staticmethod
    def _fd_grad(f, param, eps=1e-6):
        grad = torch.zeros_like(param)
        flat = param.view(-1)
        gflat = grad.view(-1)
        with torch.no_grad():
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                hi = float(f())
                flat[i] = orig - eps
                lo = float(f())
                flat[i] = orig
                gflat[i] = (hi - lo) / (2 * eps)
        return grad

    def _check(self, output_activation, loss_kind, targets):
        torch.manual_seed(0)
        model = torch.nn.Sequential(
            torch.nn.Linear(6, 8), torch.nn.ReLU(), torch.nn.Linear(8, 3)
        ).double()
        x = torch.randn(5, 6, dtype=torch.float64)

        def forward():
            z = model(x)
            if output_activation == "saturating-relu":
                # scale into the open interval so the clamp is inactive
                p = saturating_relu(0.1 * z + 0.5)
            else:
                p = torch.softmax(z, dim=-1)
            return loss(loss_kind, p, targets)

        value = forward()
        value.backward()
        for param in model.parameters():
            analytic = param.grad.clone()
            numeric = self._fd_grad(forward, param.data)
            denom = np.maximum(np.abs(numeric.numpy()), 1e-3)
            rel = np.abs((analytic - numeric).numpy()) / denom
            assert rel.max() <= 1e-4

    def test_mae_through_saturating_relu(self):
        targets = torch.rand(5, 3, dtype=torch.float64) * 0.5 + 0.25
        self._check("saturating-relu", "mae", targets)

    def test_cross_entropy_through_softmax(self):
        targets = torch.tensor([0, 1, 2, 1, 0])
        self._check("softmax", "cross-entropy", targets)


class TestExtractFeatures:
    def test_identical_images_identical_rows(self):
        model = build_model(BackboneSpec("tiny", 32, (8, 16)), HeadSpec(2, "softmax", hidden_units=32), seed=0)
        img = np.random.default_rng(0).uniform(0, 1, (1, 32, 32, 3)).astype(np.float32)
        batch = np.concatenate([img, img])
        feats = extract_features(model, batch)
        assert feats.shape == (2, BackboneSpec("tiny", 32, (8, 16)).feature_dim)
        assert np.array_equal(feats[0], feats[1])

    def test_differently_seeded_models_differ(self):
        imgs = np.random.default_rng(1).uniform(0, 1, (3, 32, 32, 3)).astype(np.float32)
        a = build_model(BackboneSpec("tiny", 32, (8, 16)), HeadSpec(2, "softmax", hidden_units=32), seed=0)
        b = build_model(BackboneSpec("tiny", 32, (8, 16)), HeadSpec(2, "softmax", hidden_units=32), seed=1)
        assert not np.allclose(extract_features(a, imgs), extract_features(b, imgs))

    def test_restores_training_mode(self):
        model = build_model(BackboneSpec("tiny", 32, (8, 16)), HeadSpec(2, "softmax", hidden_units=32), seed=0)
        model.train()
        extract_features(model, np.zeros((1, 32, 32, 3), dtype=np.float32))
        assert model.training


class TestCheckpoints:
    def _model(self):
        return build_model(
            BackboneSpec("tiny", 32, (8, 16)), HeadSpec(12, "saturating-relu", hidden_units=32), seed=3
        )

    def test_round_trip(self, tmp_path):
        model = self._model()
        save_checkpoint(model, tmp_path / "ck", "magnitudes", seed=3)
        loaded, meta = load_checkpoint(tmp_path / "ck")
        assert meta.provenance == "magnitudes"
        assert meta.seed == 3
        assert meta.backbone == model.backbone_spec
        for a, b in zip(model.parameters(), loaded.parameters()):
            assert torch.equal(a, b)

    def test_bad_provenance_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_checkpoint(self._model(), tmp_path / "ck", "random", seed=0)

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(tmp_path / "nope")

    def test_shape_mismatch_fails_loudly(self, tmp_path):
        model = self._model()
        save_checkpoint(model, tmp_path / "ck", "imagenet", seed=0)
        meta = json.loads((tmp_path / "ck" / "model.json").read_text())
        meta["backbone"]["stage_channels"] = [8, 32]  # widths no longer match weights
        (tmp_path / "ck" / "model.json").write_text(json.dumps(meta))
        with pytest.raises(CheckpointError, match="do not match"):
            load_checkpoint(tmp_path / "ck")

    def test_malformed_metadata(self, tmp_path):
        model = self._model()
        save_checkpoint(model, tmp_path / "ck", "none", seed=0)
        (tmp_path / "ck" / "model.json").write_text("{\"backbone\": {}}")
        with pytest.raises(CheckpointError, match="malformed"):
            load_checkpoint(tmp_path / "ck")

    def test_preprocessing_recorded(self, tmp_path):
        model = self._model()
        save_checkpoint(model, tmp_path / "ck", "imagenet", seed=0, preprocessing="imagenet-mean-std")
        _, meta = load_checkpoint(tmp_path / "ck")
        assert meta.preprocessing == "imagenet-mean-std"
        with pytest.raises(ValueError, match="preprocessing"):
            save_checkpoint(model, tmp_path / "ck2", "imagenet", seed=0, preprocessing="whiten")


class TestPreprocessing:
    def test_unit_range_is_identity(self):
        x = torch.rand(2, 3, 4, 4)
        assert torch.equal(netspec.apply_preprocessing(x, "unit-range"), x)

    def test_channel_normalization(self):
        x = torch.zeros(1, 3, 2, 2)
        out = netspec.apply_preprocessing(x, "imagenet-mean-std")
        expected = -torch.tensor([0.485, 0.456, 0.406]) / torch.tensor([0.229, 0.224, 0.225])
        assert torch.allclose(out[0, :, 0, 0], expected, atol=1e-6)

    def test_unknown_rejected(self):
        with pytest.raises(ValueError):
            netspec.apply_preprocessing(torch.zeros(1, 3, 2, 2), "zscore")
