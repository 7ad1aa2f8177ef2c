import json
from dataclasses import asdict, replace

import numpy as np
import pytest

from recapguard.channel import DatasetManifest, ManifestEntry, LABEL_ORIGINAL, LABEL_RECAPTURED
from recapguard.detector import ModelConfig, build_model
from recapguard.errors import ConfigError, DivergenceError, InsufficientDataError
from recapguard.imaging import AugmentConfig
from recapguard.training import (
    EarlyStopTracker,
    TrainConfig,
    TrainingHistory,
    export_history_plot,
    split_dataset,
    train,
)


def _fake_manifest(n_per_class):
    entries = [ManifestEntry(f"originals/{i}.jpg", LABEL_ORIGINAL, f"s{i}") for i in range(n_per_class)]
    entries += [ManifestEntry(f"recaptures/{i}.jpg", LABEL_RECAPTURED, f"s{i}", {"seed": i})
                for i in range(n_per_class)]
    return DatasetManifest(entries=entries, seed=0, created_at="t", base_dir=".")


class TestTrainConfig:
    def test_published_defaults(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 1e-4
        assert cfg.weight_decay == 1e-4
        assert cfg.epochs == 50
        assert cfg.early_stop_patience == 10
        assert cfg.batch_size == 32
        assert cfg.split_ratios == (0.70, 0.15, 0.15)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(split_ratios=(0.8, 0.15, 0.15))
        with pytest.raises(ConfigError):
            TrainConfig(epochs=10, early_stop_patience=10)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)


class TestSplitDataset:
    def test_exact_ratio_split(self):
        manifest = _fake_manifest(500)
        tr, va, te = split_dataset(manifest, TrainConfig(seed=1))
        assert (len(tr.entries), len(va.entries), len(te.entries)) == (700, 150, 150)
        for split in (tr, va, te):
            per_class = len(split.by_label(LABEL_ORIGINAL))
            assert per_class == len(split.entries) // 2  # 350/75/75 per class

    def test_partition_disjoint_exhaustive(self, toy_dataset):
        cfg = TrainConfig(epochs=4, early_stop_patience=3, seed=5)
        tr, va, te = split_dataset(toy_dataset, cfg)
        all_paths = [e.path for e in tr.entries + va.entries + te.entries]
        assert sorted(all_paths) == sorted(e.path for e in toy_dataset.entries)
        assert len(set(all_paths)) == len(all_paths)

    def test_deterministic(self, toy_dataset):
        cfg = TrainConfig(epochs=4, early_stop_patience=3, seed=5)
        a = split_dataset(toy_dataset, cfg)
        b = split_dataset(toy_dataset, cfg)
        for sa, sb in zip(a, b):
            assert [e.path for e in sa.entries] == [e.path for e in sb.entries]

    def test_stratified_within_one_item(self):
        manifest = _fake_manifest(17)
        tr, va, te = split_dataset(manifest, TrainConfig(seed=2))
        total = len(manifest.entries)
        for split, ratio in zip((tr, va, te), (0.7, 0.15, 0.15)):
            for label in (LABEL_ORIGINAL, LABEL_RECAPTURED):
                got = len(split.by_label(label))
                assert abs(got - ratio * 17) <= 1.0

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            split_dataset(_fake_manifest(3), TrainConfig(seed=0))


class TestEarlyStopTracker:
    def test_strictly_worsening_stops_at_k_plus_patience(self):
        tracker = EarlyStopTracker(patience=10)
        stopped_at = None
        losses = [1.0, 0.5] + [0.5 + 0.01 * i for i in range(1, 40)]  # best at epoch 2
        for epoch, loss in enumerate(losses, start=1):
            if tracker.update(epoch, loss):
                stopped_at = epoch
                break
        assert tracker.best_epoch == 2
        assert stopped_at == 12  # k + patience

    def test_improvement_resets_patience(self):
        tracker = EarlyStopTracker(patience=3)
        for epoch, loss in enumerate([1.0, 0.9, 0.95, 0.96, 0.85, 0.9], start=1):
            assert not tracker.update(epoch, loss)
        assert tracker.best_epoch == 5


class TestTrain:
    def test_overfit_sanity(self, toy_splits):
        # a model that cannot fit ~20 samples in 5 epochs is defective
        cfg = TrainConfig(epochs=5, early_stop_patience=4, batch_size=16, seed=7)
        model = build_model(ModelConfig(), init_seed=7)
        model, history = train(model, toy_splits, cfg)
        assert history.train_loss[4] < history.train_loss[0]
        assert model.trained

    def test_same_seed_identical_history(self, toy_splits):
        cfg = TrainConfig(epochs=2, early_stop_patience=1, batch_size=16, seed=13)
        _, h1 = train(build_model(ModelConfig(), init_seed=13), toy_splits, cfg)
        _, h2 = train(build_model(ModelConfig(), init_seed=13), toy_splits, cfg)
        assert h1.to_json() == h2.to_json()

    def test_divergence_error(self, toy_splits):
        cfg = TrainConfig(epochs=3, early_stop_patience=2, batch_size=16, seed=1,
                          learning_rate=1e12)
        with pytest.raises(DivergenceError):
            train(build_model(ModelConfig(), init_seed=1), toy_splits, cfg)

    def test_best_epoch_invariant(self, toy_trained):
        _, history = toy_trained
        assert history.best_epoch <= history.stopped_epoch
        assert history.val_loss[history.best_epoch - 1] == min(history.val_loss)
        assert len(history.val_loss) == history.stopped_epoch

    def test_history_json_roundtrip(self, toy_trained):
        _, history = toy_trained
        again = TrainingHistory.from_json(history.to_json())
        assert asdict(again) == asdict(history)


class TestHistoryPlot:
    def test_plot_written(self, toy_trained, tmp_path):
        _, history = toy_trained
        out = tmp_path / "hist.png"
        export_history_plot(history, out)
        assert out.exists() and out.stat().st_size > 0

    def test_single_epoch_plot(self, tmp_path):
        history = TrainingHistory(
            train_loss=[0.6], val_loss=[0.5], train_acc=[0.7], val_acc=[0.75],
            stopped_epoch=1, best_epoch=1,
        )
        export_history_plot(history, tmp_path / "one.png")
        assert (tmp_path / "one.png").exists()

    def test_empty_history_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            export_history_plot(TrainingHistory(), tmp_path / "x.png")
