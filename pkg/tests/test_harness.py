import math
from dataclasses import replace

import numpy as np
import pytest

from gradsplit.data import LabeledDataset, gaussian_noise_dataset, synthetic_blobs
from gradsplit.errors import ConfigError, ContractError, DivergenceError
from gradsplit.harness import (CSV_COLUMNS, EpochRow, StopRule, SweepError, TrialConfig,
                               dataset_quality_score, emit_csv, epochs_to_generalize,
                               epochs_to_memorize, median_epochs, naive_threshold, read_csv,
                               run_trial, severe_overfit_rule, sweep_dataset_size,
                               sweep_noise_fraction, train_model)
from gradsplit.models import ModelConfig
from gradsplit.objectives import ObjectiveSpec, accuracy


def blobs_pair(n=200, dim=16, seed=0, sigma=1.0):
    return (synthetic_blobs(n, 10, dim, 10.0, seed=2 * seed + 1, sigma=sigma),
            synthetic_blobs(n, 10, dim, 10.0, seed=2 * seed + 2, sigma=sigma))


def config(objective="standard", epochs=3, stop=None, n=200, dim=16, seed=0, lr=1e-3, **kw):
    train, test = blobs_pair(n, dim, seed)
    return TrialConfig(ModelConfig("mlp", (dim,), 10, (16,), seed=seed), ObjectiveSpec(objective, **kw),
                       train, test, "adam", lr, 32, epochs, stop or StopRule(fixed_epochs=True), seed)


class TestRunTrial:
    def test_bookkeeping(self):
        rec = run_trial(config(epochs=4))
        assert [r.epoch for r in rec.rows] == [1, 2, 3, 4]
        for r in rec.rows:
            assert r.overfit_gap == pytest.approx(r.train_acc - r.test_acc, abs=1e-12)
            assert r.first_layer_grad_norm > 0
            assert r.branch == "train_only"
        assert rec.outcome.epochs_to_threshold is None and not rec.outcome.reached
        norms = rec.column("first_layer_grad_norm")
        assert rec.outcome.peak_grad_norm == max(norms)
        assert rec.outcome.final_grad_norm == norms[-1]
        assert rec.config["seed"] == 0

    def test_one_epoch_one_row(self):
        assert len(run_trial(config(epochs=1)).rows) == 1

    def test_zero_epochs_forbidden(self):
        with pytest.raises(ConfigError):
            config(epochs=0)

    def test_shape_mismatch(self):
        cfg = config()
        with pytest.raises(ConfigError):
            replace(cfg, model=replace(cfg.model, input_shape=(17,)))

    def test_standard_blobs_generalize_within_50_epochs(self):
        tr, te = blobs_pair(500, 32, sigma=0.1)
        cfg = TrialConfig(ModelConfig("mlp", (32,), 10, (64,)), ObjectiveSpec("standard"), tr, te,
                          "adam", 1e-4, 32, 50, StopRule(train_acc=0.9, test_acc_min=0.9))
        rec = run_trial(cfg)
        assert rec.outcome.reached and rec.outcome.epochs_to_threshold <= 50
        last = rec.rows[-1]
        assert last.train_acc >= 0.9 and last.test_acc >= 0.9

    def test_first_epoch_satisfying_rule(self):
        cfg = config(epochs=30, stop=StopRule(train_acc=0.5, halt=False))
        rec = run_trial(cfg)
        first = next(r.epoch for r in rec.rows if r.train_acc >= 0.5)
        assert rec.outcome.epochs_to_threshold == first
        assert len(rec.rows) == 30

    def test_split_drives_test_accuracy_down(self):
        rec = run_trial(config("split", epochs=40, n=200, dim=64))
        assert rec.rows[-1].test_acc < 0.2
        assert rec.rows[-1].train_acc > rec.rows[-1].test_acc
        assert all(r.branch == "train_minus_test" for r in rec.rows)

    def test_capped_branches_follow_previous_test_accuracy(self):
        rec = run_trial(config("capped", epochs=15, k=0.11))
        for prev, row in zip(rec.rows, rec.rows[1:]):
            expected = "train_minus_test" if prev.test_acc > 0.11 else "train_only"
            assert row.branch == expected

    def test_deterministic(self):
        a, b = run_trial(config("capped", epochs=5)), run_trial(config("capped", epochs=5))
        assert a.rows == b.rows

    def test_train_model_returns_final_parameters(self):
        model, rec = train_model(config(epochs=2))
        test = config().test
        assert accuracy(model.forward(test.inputs), test.labels) == rec.rows[-1].test_acc

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self):
        train, test = blobs_pair()
        bad = LabeledDataset(np.where(np.arange(16) == 0, np.inf, train.inputs), train.labels)
        cfg = TrialConfig(ModelConfig("mlp", (16,), 10, (4,)), ObjectiveSpec("standard"), bad, test,
                          max_epochs=3)
        with pytest.raises(DivergenceError) as err:
            run_trial(cfg)
        assert err.value.last_good_epoch == 0
        assert err.value.record.rows == []


class TestStopRule:
    row = EpochRow(1, "train_only", 0.0, 0.0, 0.0, 0.95, 0.1, 0.85, 0.0)

    def test_all_conditions(self):
        assert StopRule(train_acc=0.9, test_acc_max=0.12).satisfied(self.row)
        assert not StopRule(train_acc=0.9, test_acc_max=0.05).satisfied(self.row)
        assert StopRule(overfit_gap=0.8).satisfied(self.row)
        assert not StopRule(test_acc_min=0.5).satisfied(self.row)

    def test_empty_and_fixed(self):
        assert not StopRule().satisfied(self.row)
        assert not StopRule(train_acc=0.1, fixed_epochs=True).satisfied(self.row)

    def test_severe_overfit_rule(self):
        rule = severe_overfit_rule(10)
        assert rule.train_acc == 0.9 and rule.test_acc_max == pytest.approx(0.12)
        assert naive_threshold(10) == 0.1

    def test_range(self):
        with pytest.raises(ConfigError):
            StopRule(train_acc=3.0)


class TestDifficulty:
    def test_memorize_requires_capped_with_same_k(self):
        with pytest.raises(ContractError):
            epochs_to_memorize(config("standard"), 0.11)
        with pytest.raises(ContractError):
            epochs_to_memorize(config("capped", k=0.2), 0.11)

    def test_k_one_degenerates_to_train_threshold(self):
        cfg = config("capped", epochs=40, k=1.0)
        e_mem = epochs_to_memorize(cfg, 1.0)
        rec = run_trial(replace(cfg, objective=ObjectiveSpec("standard"), stop_rule=StopRule(train_acc=0.9)))
        assert e_mem is not None
        assert e_mem == rec.outcome.epochs_to_threshold

    def test_noise_memorizes(self):
        tr = gaussian_noise_dataset((128,), 100, seed=1)
        te = gaussian_noise_dataset((128,), 100, seed=2)
        cfg = TrialConfig(ModelConfig("mlp", (128,), 10, (64,)), ObjectiveSpec("capped", k=0.11),
                          tr, te, "adam", 1e-3, 10, 200)
        assert epochs_to_memorize(cfg, 0.11) is not None

    def test_generalize(self):
        assert epochs_to_generalize(config(epochs=60, lr=1e-3)) is not None

    def test_median(self):
        assert median_epochs([3, None, 5]) == 5
        assert median_epochs([None, None, 1]) == math.inf
        assert median_epochs([4, 2]) == 3


class TestSweeps:
    def base(self):
        return config("capped", epochs=3, k=0.11)

    def test_size_rows_and_seed_policy(self):
        seen = []

        def make(size, seed):
            seen.append((size, seed))
            return blobs_pair(size, 16, seed)

        rows = sweep_dataset_size(self.base(), [100, 200], make, seeds=(0, 1))
        assert [r.setting for r in rows] == [100, 200]
        assert seen == [(100, 0), (100, 1), (200, 0), (200, 1)]
        assert all(len(r.epochs) == 2 for r in rows)

    def test_single_size_equals_direct(self):
        base = config("capped", epochs=25, k=0.11, lr=1e-2)

        def make(size, seed):
            return blobs_pair(size, 16, seed)

        rows = sweep_dataset_size(base, [200], make, seeds=(3,))
        tr, te = make(200, 3)
        direct = epochs_to_memorize(replace(base, train=tr, test=te, seed=3,
                                            model=replace(base.model, seed=3)), 0.11)
        assert rows[0].epochs == [direct]

    def test_errors_annotated(self):
        def make(size, seed):
            raise ValueError("boom")

        with pytest.raises(SweepError, match="size 100, seed 0"):
            sweep_dataset_size(self.base(), [100], make)
        with pytest.raises(ConfigError):
            sweep_dataset_size(self.base(), [], make)
        with pytest.raises(ConfigError):
            sweep_dataset_size(self.base(), ["3k"], make)
        with pytest.raises(ConfigError):
            sweep_noise_fraction(self.base(), [], make)

    def test_noise_fraction(self):
        rows = sweep_noise_fraction(self.base(), [0.0, 1.0], lambda f, s: blobs_pair(100, 16, s))
        assert [r.setting for r in rows] == [0.0, 1.0]


class TestQuality:
    probe = ModelConfig("mlp", (16,), 10, (16,))

    def test_identical_sets_indeterminate(self):
        tr, _ = blobs_pair(100)
        q = dataset_quality_score(tr, tr, self.probe, max_epochs=5, lr=1e-3)
        assert q.indeterminate and q.did_not_reach and math.isnan(q.score)
        assert q.split_epochs is None

    def test_blobs_vs_noise(self):
        tr, te = blobs_pair(200, 16, sigma=0.3)
        blobs = dataset_quality_score(tr, te, self.probe, max_epochs=40, lr=1e-3, batch_size=32)
        assert blobs.standard_epochs is not None
        assert blobs.score > 0
        ntr = gaussian_noise_dataset((16,), 200, seed=1)
        nte = gaussian_noise_dataset((16,), 200, seed=2)
        noise = dataset_quality_score(ntr, nte, self.probe, max_epochs=40, lr=1e-3, batch_size=32)
        # standard never generalises on noise, so the score cannot be a large positive number
        assert noise.standard_epochs is None or noise.score <= blobs.score
        assert not noise.score > blobs.score


class TestCsv:
    def test_rows_and_header(self, tmp_path):
        rec = run_trial(config(epochs=3))
        emit_csv(rec, tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert len(lines) == 4
        assert lines[0].split(",") == CSV_COLUMNS

    def test_byte_identical_rerun(self, tmp_path):
        emit_csv(run_trial(config("split", epochs=3)), tmp_path / "a.csv")
        emit_csv(run_trial(config("split", epochs=3)), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_parse_back(self, tmp_path):
        rec = run_trial(config("capped", epochs=4))
        emit_csv(rec, tmp_path / "t.csv")
        back = read_csv(tmp_path / "t.csv")
        assert len(back) == len(rec.rows)
        for a, b in zip(back, rec.rows):
            assert (a.epoch, a.branch) == (b.epoch, b.branch)
            for name in CSV_COLUMNS[2:]:
                assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-8, abs=1e-300)

    def test_unwritable(self, tmp_path):
        with pytest.raises(OSError):
            emit_csv(run_trial(config(epochs=1)), tmp_path / "missing" / "t.csv")
