"""Training loop: determinism, schedule, metrics, checkpointing, aborts."""

import json
from dataclasses import replace

import numpy as np
import pytest

from dualpath.contrastive import ContrastiveWeights
from dualpath.dataio import read_dataset
from dualpath.model import ModelConfig, build_model_params
from dualpath.synthetic import default_scripts, generate_dataset
from dualpath.train import (
    MetricsRecord,
    NumericalFailure,
    RunConfig,
    epoch_permutation,
    evaluate,
    load_model,
    schedule_lr,
    train,
)

SMALL_MODEL = ModelConfig(variant="dual", scene_fusion="late", feature_dim=12, scene_dim=12,
                          model_dim=16, embed_dim=8, heads=2, ffn_dim=16, groups=6, actions=4)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    generate_dataset(default_scripts(), 8, d / "train.gard", d / "test.gard", seed=1)
    return d


def small_config(dataset, out, **kw):
    base = RunConfig(
        model=SMALL_MODEL,
        weights=ContrastiveWeights(1, 1, 1),
        train_path=str(dataset / "train.gard"),
        test_path=str(dataset / "test.gard"),
        out_dir=str(out),
        epochs=3,
        decay_epochs=(2,),
        batch_size=4,
        seed=0,
    )
    return replace(base, **kw)


class TestRunConfig:
    def test_decay_epochs_must_increase(self):
        with pytest.raises(ValueError, match="decay"):
            RunConfig(decay_epochs=(10, 5), epochs=20)

    def test_decay_epochs_before_end(self):
        with pytest.raises(ValueError, match="decay"):
            RunConfig(decay_epochs=(40,), epochs=30)

    def test_data_ratio_range(self):
        with pytest.raises(ValueError, match="data_ratio"):
            RunConfig(data_ratio=0.0)

    def test_json_round_trip(self, tmp_path):
        cfg = RunConfig(epochs=7, decay_epochs=(3, 5), seed=9,
                        weights=ContrastiveWeights(1, 0, 0.5))
        cfg.save(tmp_path / "c.json")
        loaded = RunConfig.from_file(tmp_path / "c.json")
        assert loaded == cfg


class TestSchedule:
    def test_decay_steps(self):
        decays = (15, 25)
        assert schedule_lr(1e-3, 0.1, decays, 0) == 1e-3
        assert schedule_lr(1e-3, 0.1, decays, 14) == 1e-3
        assert schedule_lr(1e-3, 0.1, decays, 15) == pytest.approx(1e-4)
        assert schedule_lr(1e-3, 0.1, decays, 25) == pytest.approx(1e-5)

    def test_reference_schedule_shape(self):
        # long-run default: decade drops after epochs 60 and 100 of 140
        lrs = {e: schedule_lr(1e-4, 0.1, (60, 100), e) for e in (0, 59, 60, 99, 100, 139)}
        assert lrs[0] == lrs[59] == 1e-4
        assert lrs[60] == lrs[99] == pytest.approx(1e-5)
        assert lrs[100] == lrs[139] == pytest.approx(1e-6)

    def test_permutation_is_counter_based(self):
        a = epoch_permutation(3, 5, 50)
        b = epoch_permutation(3, 5, 50)
        c = epoch_permutation(3, 6, 50)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert sorted(a.tolist()) == list(range(50))


class TestTraining:
    def test_metrics_logs_byte_identical_across_runs(self, dataset, tmp_path):
        r1 = train(small_config(dataset, tmp_path / "a"), quiet=True)
        r2 = train(small_config(dataset, tmp_path / "b"), quiet=True)
        assert r1.metrics_path.read_bytes() == r2.metrics_path.read_bytes()
        assert r1.steps_path.read_bytes() == r2.steps_path.read_bytes()
        assert r1.checkpoint_path.read_bytes() == r2.checkpoint_path.read_bytes()

    def test_seed_changes_logs(self, dataset, tmp_path):
        r1 = train(small_config(dataset, tmp_path / "a"), quiet=True)
        r2 = train(small_config(dataset, tmp_path / "b", seed=1), quiet=True)
        assert r1.metrics_path.read_bytes() != r2.metrics_path.read_bytes()

    def test_total_is_cls_plus_contrastive_in_every_record(self, dataset, tmp_path):
        result = train(small_config(dataset, tmp_path / "run"), quiet=True)
        for path in (result.steps_path, result.metrics_path):
            for line in path.read_text().splitlines():
                rec = json.loads(line)
                assert rec["l_total"] == rec["l_cls"] + rec["l_contrastive"]
                manual = rec["l_ff"] * 1.0 + rec["l_fv"] * 1.0 + rec["l_vv"] * 1.0
                assert rec["l_contrastive"] == manual

    def test_lr_schedule_visible_in_log(self, dataset, tmp_path):
        result = train(small_config(dataset, tmp_path / "run"), quiet=True)
        by_epoch = {}
        for line in result.metrics_path.read_text().splitlines():
            rec = json.loads(line)
            by_epoch[rec["epoch"]] = rec["lr"]
        assert by_epoch[0] == by_epoch[1] == 1e-3
        assert by_epoch[2] == pytest.approx(1e-4)

    def test_mpca_equals_mean_of_per_class(self, dataset, tmp_path):
        result = train(small_config(dataset, tmp_path / "run"), quiet=True)
        rec = result.final_test
        assert rec.mpca == pytest.approx(np.mean(rec.per_class_accuracy), abs=1e-12)

    def test_data_ratio_shrinks_training_set(self, dataset, tmp_path):
        full = train(small_config(dataset, tmp_path / "a"), quiet=True)
        half = train(small_config(dataset, tmp_path / "b", data_ratio=0.5), quiet=True)
        steps_full = len(full.steps_path.read_text().splitlines())
        steps_half = len(half.steps_path.read_text().splitlines())
        assert steps_half < steps_full

    def test_checkpoint_loads_back(self, dataset, tmp_path):
        result = train(small_config(dataset, tmp_path / "run"), quiet=True)
        cfg, params = load_model(tmp_path / "run" / "config.json", result.checkpoint_path)
        _, test_eps = read_dataset(cfg.test_path)
        record, confusion = evaluate(params, cfg, test_eps)
        assert record.group_accuracy == pytest.approx(result.final_test.group_accuracy)
        assert confusion.sum() == len(test_eps)

    def test_incompatible_checkpoint_lists_names(self, dataset, tmp_path):
        result = train(small_config(dataset, tmp_path / "run"), quiet=True)
        other = small_config(dataset, tmp_path / "other",
                             model=replace(SMALL_MODEL, variant="st"))
        other.save(tmp_path / "other.json")
        with pytest.raises(ValueError, match="missing.*extra|extra.*missing"):
            load_model(tmp_path / "other.json", result.checkpoint_path)

    def test_nan_loss_aborts_with_diagnostic(self, dataset, tmp_path):
        from dualpath.dataio import write_dataset

        header, eps = read_dataset(dataset / "train.gard")
        eps[0].features[0, 0, 0] = np.nan
        bad = tmp_path / "bad.gard"
        write_dataset(bad, header, eps)
        cfg = small_config(dataset, tmp_path / "run", train_path=str(bad))
        with pytest.raises(NumericalFailure, match="epoch"):
            train(cfg, quiet=True)

    def test_per_class_csv_written(self, dataset, tmp_path):
        train(small_config(dataset, tmp_path / "run"), quiet=True)
        text = (tmp_path / "run" / "per_class_accuracy.csv").read_text()
        assert text.startswith("class,accuracy")
        assert len(text.splitlines()) == 7


class TestEvaluate:
    def test_perfect_predictions_metrics(self, dataset):
        # a model evaluated on its own argmax labels scores 1.0 everywhere
        cfg = RunConfig(model=SMALL_MODEL, train_path="x", test_path="y")
        params = build_model_params(SMALL_MODEL, seed=0)
        _, eps = read_dataset(cfg.train_path if False else dataset / "test.gard")
        from dualpath.train import _batch_loss

        relabelled = []
        for ep in eps:
            _, _, preds, _ = _batch_loss(params, cfg, [ep])
            ep2 = replace_episode_labels(ep, int(np.argmax(preds.fused_group.data[0])),
                                         np.argmax(preds.fused_individual.data[0], axis=1))
            relabelled.append(ep2)
        record, confusion = evaluate(params, cfg, relabelled)
        assert record.group_accuracy == 1.0
        assert record.individual_accuracy == 1.0
        assert record.mpca == 1.0
        assert np.array_equal(confusion.sum(axis=1), np.bincount(
            [e.group_label for e in relabelled], minlength=6))

    def test_mpca_definition_two_classes(self):
        from dualpath.train import _confusion_metrics

        confusion = np.array([[4, 0], [2, 2]])
        acc, mpca, per_class = _confusion_metrics(confusion)
        assert per_class == [1.0, 0.5]
        assert mpca == 0.75
        assert acc == 0.75

    def test_confusion_row_sums_match_counts(self, dataset):
        cfg = RunConfig(model=SMALL_MODEL, train_path="x", test_path="y")
        params = build_model_params(SMALL_MODEL, seed=3)
        _, eps = read_dataset(dataset / "test.gard")
        _, confusion = evaluate(params, cfg, eps)
        counts = np.bincount([e.group_label for e in eps], minlength=6)
        assert np.array_equal(confusion.sum(axis=1), counts)


def replace_episode_labels(ep, group, individual):
    from dualpath.dataio import Episode

    return Episode(features=ep.features, centers=ep.centers, scene=ep.scene,
                   group_label=group,
                   individual_labels=np.asarray(individual, dtype=np.uint16))
