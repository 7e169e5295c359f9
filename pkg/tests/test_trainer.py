import pytest
import torch

from astropretext import catalog, netspec, trainer
from astropretext.netspec import HeadSpec
from astropretext.trainer import (
    EarlyStopPolicy,
    OptimizerPhase,
    PretextConfig,
    RunResult,
    SchemeConfig,
    check_early_stop,
    low_data_schedule,
    scheme_preset,
    train_pretext,
    train_scheme,
)


def small_scheme(name, epochs, seed=0):
    base = scheme_preset(name, seed=seed)
    phases = tuple(
        OptimizerPhase(p.optimizer, p.learning_rate, min(p.max_epochs, epochs), p.frozen, p.early_stop, p.momentum)
        for p in base.phases
    )
    return SchemeConfig(base.scheme, base.pretraining, phases, seed=seed)


@pytest.fixture(scope="module")
def pretext_checkpoint(small_dataset, tiny_backbone32, tmp_path_factory):
    _, data, split = small_dataset
    model = netspec.build_model(tiny_backbone32, HeadSpec(12, "saturating-relu", hidden_units=64), seed=0)
    cfg = PretextConfig(learning_rate=1e-2, momentum=0.9, max_epochs=3, seed=0)
    result = train_pretext(model, data, split, cfg)
    out = tmp_path_factory.mktemp("ck") / "magnitudes"
    netspec.save_checkpoint(model, out, "magnitudes", seed=0)
    return out, result


class TestSchemeConfig:
    def test_five_presets_constructible(self):
        names = set()
        for name in trainer.SCHEME_PRESET_NAMES:
            cfg = scheme_preset(name)
            names.add((cfg.scheme, cfg.pretraining))
        assert names == {
            ("scratch", "none"),
            ("feature-extraction", "imagenet"),
            ("feature-extraction", "magnitudes"),
            ("fine-tuning", "imagenet"),
            ("fine-tuning", "magnitudes"),
        }

    def test_scratch_uses_adam_200(self):
        cfg = scheme_preset("scratch")
        (phase,) = cfg.phases
        assert (phase.optimizer, phase.learning_rate, phase.max_epochs) == ("adam", 1e-3, 200)
        assert not phase.frozen

    def test_feature_extraction_freezes_conv_100_epochs(self):
        cfg = scheme_preset("feature-extraction-magnitudes")
        (phase,) = cfg.phases
        assert phase.frozen == frozenset({"conv"})
        assert (phase.optimizer, phase.max_epochs) == ("adam", 100)

    def test_fine_tuning_two_phase_protocol(self):
        cfg = scheme_preset("fine-tuning-imagenet")
        warmup, full = cfg.phases
        assert (warmup.optimizer, warmup.max_epochs, warmup.frozen) == ("adam", 10, frozenset({"conv"}))
        assert warmup.early_stop is False
        assert (full.optimizer, full.learning_rate, full.max_epochs) == ("sgd", 1e-4, 200)
        assert not full.frozen

    def test_low_data_scratch_swaps_to_sgd(self):
        (phase,) = scheme_preset("scratch", low_data=True).phases
        assert (phase.optimizer, phase.learning_rate) == ("sgd", 1e-4)

    def test_invalid_combinations(self):
        phases = (OptimizerPhase("adam", 1e-3, 1),)
        with pytest.raises(ValueError):
            SchemeConfig("scratch", "imagenet", phases)
        with pytest.raises(ValueError):
            SchemeConfig("fine-tuning", "none", phases)
        with pytest.raises(ValueError):
            SchemeConfig("scratch", "none", ())

    def test_alias_names(self):
        assert scheme_preset("finetune-magnitudes").name == "fine-tuning-magnitudes"
        assert scheme_preset("fe-imagenet").name == "feature-extraction-imagenet"
        with pytest.raises(ValueError):
            scheme_preset("fancy-scheme")


class TestEarlyStop:
    def test_strictly_decreasing_never_stops(self):
        history = [(1.0, 1.0 - 0.01 * i) for i in range(50)]
        stop, best = check_early_stop(history, EarlyStopPolicy())
        assert not stop
        assert best == 50

    def test_patience_arithmetic(self):
        # best at epoch 5, flat for 11 epochs -> stop at epoch 16
        history = [(1.0, 1.0 - 0.1 * i) for i in range(5)] + [(1.0, 0.6)] * 11
        stop, best = check_early_stop(history, EarlyStopPolicy(patience=10))
        assert stop
        assert best == 5
        stop_15, _ = check_early_stop(history[:15], EarlyStopPolicy(patience=10))
        assert not stop_15

    def test_single_epoch_no_stop(self):
        stop, best = check_early_stop([(1.0, 0.4)], EarlyStopPolicy())
        assert not stop and best == 1

    def test_ties_break_earliest(self):
        history = [(1.0, 0.5), (1.0, 0.5), (1.0, 0.5)]
        _, best = check_early_stop(history, EarlyStopPolicy())
        assert best == 1

    def test_gap_monitor_mode(self):
        # validation loss keeps improving but diverges from training loss
        history = [(1.0 - 0.05 * i, 1.0 - 0.01 * i) for i in range(13)]
        stop_val, _ = check_early_stop(history, EarlyStopPolicy(patience=10, monitor="val_loss"))
        stop_gap, _ = check_early_stop(history, EarlyStopPolicy(patience=10, monitor="gap"))
        assert not stop_val
        assert stop_gap

    def test_empty_history_rejected(self):
        with pytest.raises(ValueError):
            check_early_stop([], EarlyStopPolicy())


class TestSchedule:
    def test_full_schedule(self):
        expected = [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000, 1500, 2000, 2500, 3000, 10000, 20000, 30000, 40000]
        schedule = low_data_schedule(40000)
        assert schedule == expected
        assert len(schedule) == 18
        assert all(a < b for a, b in zip(schedule, schedule[1:]))

    def test_truncation(self):
        assert low_data_schedule(1000) == list(range(100, 1001, 100))
        assert low_data_schedule(119) == [100]

    def test_below_minimum(self):
        with pytest.raises(ValueError):
            low_data_schedule(99)


class TestTrainPretext:
    def test_rejects_unscaled_targets(self, small_dataset, tiny_backbone32):
        _, data, split = small_dataset
        model = netspec.build_model(tiny_backbone32, HeadSpec(12, "saturating-relu", hidden_units=64), seed=0)
        with pytest.raises(ValueError, match="rescale"):
            train_pretext(model, data, split, PretextConfig(max_epochs=1), targets=data.magnitudes)

    def test_zero_epochs_returns_initial_state(self, small_dataset, tiny_backbone32):
        _, data, split = small_dataset
        head = HeadSpec(12, "saturating-relu", hidden_units=64)
        model = netspec.build_model(tiny_backbone32, head, seed=0)
        before = [p.detach().clone() for p in model.parameters()]
        result = train_pretext(model, data, split, PretextConfig(max_epochs=0))
        assert result.epochs_run == 0
        assert result.best_epoch == 0
        assert result.final_metric > 0.0
        for p, b in zip(model.parameters(), before):
            assert torch.equal(p, b)

    def test_raw_mae_is_thirty_times_scaled(self, small_dataset, tiny_backbone32):
        _, data, split = small_dataset
        model = netspec.build_model(tiny_backbone32, HeadSpec(12, "saturating-relu", hidden_units=64), seed=0)
        result = train_pretext(model, data, split, PretextConfig(learning_rate=1e-2, max_epochs=2))
        assert result.metrics["raw_mae"] == 30.0 * result.metrics["scaled_mae"]

    def test_deterministic_traces(self, small_dataset, tiny_backbone32):
        _, data, split = small_dataset
        cfg = PretextConfig(learning_rate=1e-2, momentum=0.9, max_epochs=3, seed=1)
        head = HeadSpec(12, "saturating-relu", hidden_units=64)
        r1 = train_pretext(netspec.build_model(tiny_backbone32, head, seed=1), data, split, cfg)
        r2 = train_pretext(netspec.build_model(tiny_backbone32, head, seed=1), data, split, cfg)
        assert r1.train_losses == r2.train_losses
        assert r1.val_losses == r2.val_losses

    def test_loss_decreases(self, pretext_checkpoint):
        _, result = pretext_checkpoint
        assert result.train_losses[-1] < result.train_losses[0]

    def test_max_norm_after_training(self, small_dataset, tiny_backbone32):
        _, data, split = small_dataset
        head = HeadSpec(12, "saturating-relu", hidden_units=64, max_norm=0.5)
        model = netspec.build_model(tiny_backbone32, head, seed=0)
        train_pretext(model, data, split, PretextConfig(learning_rate=5e-2, max_epochs=2))
        with torch.no_grad():
            norms = model.hidden.weight.norm(dim=1)
        assert float(norms.max()) <= 0.5 + 1e-6

    def test_writes_run_directory(self, small_dataset, tiny_backbone32, tmp_path):
        _, data, split = small_dataset
        model = netspec.build_model(tiny_backbone32, HeadSpec(12, "saturating-relu", hidden_units=64), seed=0)
        result = train_pretext(model, data, split, PretextConfig(max_epochs=1), out_dir=tmp_path)
        assert (tmp_path / "result.json").is_file()
        header, first = (tmp_path / "history.csv").read_text().splitlines()[:2]
        assert header == "epoch,phase,train_loss,val_loss,val_acc"
        assert first.startswith("1,0,")
        loaded = RunResult.load(tmp_path)
        assert loaded.val_losses == pytest.approx(result.val_losses)


class TestTrainScheme:
    def test_feature_extraction_conv_bit_identical(self, small_dataset, pretext_checkpoint, tmp_path):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        cfg = small_scheme("feature-extraction-magnitudes", epochs=3)
        out = tmp_path / "fe"
        result = train_scheme(
            cfg, data, split, checkpoint=checkpoint,
            head=HeadSpec(2, "softmax", hidden_units=64), out_dir=out,
        )
        source, _ = netspec.load_checkpoint(checkpoint)
        trained, _ = netspec.load_checkpoint(out / "checkpoint")
        for (ks, vs), (kt, vt) in zip(source.state_dict().items(), trained.state_dict().items()):
            if ks.startswith("features."):
                assert kt == ks and torch.equal(vs, vt)
        assert set(result.phase_markers) == {0}
        assert 0.0 <= result.final_metric <= 1.0

    def test_fine_tuning_phase_markers(self, small_dataset, pretext_checkpoint):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        base = scheme_preset("fine-tuning-magnitudes")
        cfg = SchemeConfig(
            base.scheme,
            base.pretraining,
            (
                OptimizerPhase("adam", 1e-3, 2, frozenset({"conv"}), early_stop=False),
                OptimizerPhase("sgd", 1e-4, 3),
            ),
            seed=0,
        )
        result = train_scheme(cfg, data, split, checkpoint=checkpoint, head=HeadSpec(2, "softmax", hidden_units=64))
        assert result.phase_markers[:2] == (0, 0)
        assert set(result.phase_markers[2:]) == {1}

    def test_missing_checkpoint_error(self, small_dataset):
        _, data, split = small_dataset
        cfg = small_scheme("feature-extraction-magnitudes", epochs=1)
        with pytest.raises(ValueError, match="run pretrain first or pass --checkpoint"):
            train_scheme(cfg, data, split, head=HeadSpec(2, "softmax", hidden_units=64))

    def test_provenance_mismatch_rejected(self, small_dataset, pretext_checkpoint):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        cfg = small_scheme("feature-extraction-imagenet", epochs=1)
        with pytest.raises(ValueError, match="provenance"):
            train_scheme(cfg, data, split, checkpoint=checkpoint, head=HeadSpec(2, "softmax", hidden_units=64))

    def test_scratch_needs_no_checkpoint(self, small_dataset, tiny_backbone32):
        _, data, split = small_dataset
        cfg = small_scheme("scratch", epochs=2)
        result = train_scheme(cfg, data, split, backbone=tiny_backbone32, head=HeadSpec(2, "softmax", hidden_units=64))
        assert result.epochs_run == 2

    def test_missing_class_warning(self, small_dataset, pretext_checkpoint):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        stars_only = [i for i in split.train if i.startswith("star")][:6]
        cfg = small_scheme("feature-extraction-magnitudes", epochs=1)
        result = train_scheme(
            cfg, data, split, subsample=stars_only, checkpoint=checkpoint,
            head=HeadSpec(2, "softmax", hidden_units=64),
        )
        assert any("galaxy" in w for w in result.warnings)

    def test_subsample_must_come_from_train_split(self, small_dataset, pretext_checkpoint):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        cfg = small_scheme("feature-extraction-magnitudes", epochs=1)
        with pytest.raises(ValueError, match="train split"):
            train_scheme(
                cfg, data, split, subsample=[split.val[0]], checkpoint=checkpoint,
                head=HeadSpec(2, "softmax", hidden_units=64),
            )

    def test_deterministic_traces(self, small_dataset, pretext_checkpoint):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        cfg = small_scheme("feature-extraction-magnitudes", epochs=2, seed=5)
        r1 = train_scheme(cfg, data, split, checkpoint=checkpoint, head=HeadSpec(2, "softmax", hidden_units=64))
        r2 = train_scheme(cfg, data, split, checkpoint=checkpoint, head=HeadSpec(2, "softmax", hidden_units=64))
        assert r1.train_losses == r2.train_losses
        assert r1.val_losses == r2.val_losses

    def test_checkpoint_preprocessing_applied_and_recorded(self, small_dataset, tiny_backbone32, tmp_path):
        _, data, split = small_dataset
        model = netspec.build_model(tiny_backbone32, HeadSpec(12, "saturating-relu", hidden_units=64), seed=9)
        ck = netspec.save_checkpoint(
            model, tmp_path / "ext", "imagenet", seed=9, preprocessing="imagenet-mean-std"
        )
        cfg = small_scheme("feature-extraction-imagenet", epochs=1)
        result = train_scheme(cfg, data, split, checkpoint=ck, head=HeadSpec(2, "softmax", hidden_units=64))
        assert result.metadata["preprocessing"] == "imagenet-mean-std"
        plain = train_scheme(
            cfg, data, split,
            checkpoint=netspec.save_checkpoint(model, tmp_path / "plain", "imagenet", seed=9),
            head=HeadSpec(2, "softmax", hidden_units=64),
        )
        assert plain.metadata["preprocessing"] == "unit-range"
        assert result.train_losses != plain.train_losses  # the transform changed the inputs


class TestSingleStepDescent:
    def test_small_step_decreases_batch_loss(self, small_dataset, tiny_backbone32):
        """One SGD step at lr=1e-5 lowers that batch's loss (dropout off)."""
        _, data, split = small_dataset
        model = netspec.build_model(tiny_backbone32, HeadSpec(12, "saturating-relu", hidden_units=64), seed=0)
        idx = data.index_of(split.train[:16])
        x = netspec.images_to_tensor(data.images[idx])
        y = torch.from_numpy(catalog.scale_magnitudes(data.magnitudes[idx])).float()
        model.eval()  # deterministic forward; parameters still trainable
        optimizer = torch.optim.SGD(model.parameters(), lr=1e-5)
        before = netspec.loss("mae", model(x), y)
        before.backward()
        optimizer.step()
        with torch.no_grad():
            after = float(netspec.loss("mae", model(x), y))
        assert after < float(before.detach())


class TestLowDataExperiment:
    def test_bookkeeping_contract(self, small_dataset, pretext_checkpoint, tiny_backbone32, tmp_path):
        _, data, split = small_dataset
        checkpoint, _ = pretext_checkpoint
        fe = small_scheme("feature-extraction-magnitudes", epochs=2)
        scratch = small_scheme("scratch", epochs=2)
        curves = trainer.run_low_data_experiment(
            data,
            [fe, scratch],
            seed=0,
            split=split,
            sizes=[8, 16],
            checkpoints={"magnitudes": checkpoint},
            backbone=tiny_backbone32,
            out_dir=tmp_path,
            experiment="toy",
        )
        assert set(curves) == {"feature-extraction-magnitudes", "scratch"}
        for curve in curves.values():
            assert curve.sizes == (8, 16)
        # 2 schemes x 2 sizes -> 4 run directories, shared validation set
        results = sorted(tmp_path.glob("toy/*/*/*/result.json"))
        assert len(results) == 4
        import json

        val_sizes = {json.loads(p.read_text())["metadata"]["val_size"] for p in results}
        assert val_sizes == {len(split.val)}
        # nested subsets: the size-8 subset is inside the size-16 subset
        labels = data.label_map()
        nested = catalog.nested_subsamples(split, [8, 16], 0, labels)
        assert set(nested[0]) <= set(nested[1])

    def test_needs_labels(self, small_dataset):
        _, data, split = small_dataset
        unlabeled = catalog.ImageDataset(
            name="u", ids=data.ids, images=data.images, magnitudes=data.magnitudes
        )
        with pytest.raises(ValueError, match="labeled"):
            trainer.run_low_data_experiment(unlabeled, ["scratch"], seed=0, split=split, sizes=[8])
