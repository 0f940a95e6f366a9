"""Fold arithmetic against a sliding enumerator, leakage checks, early
stopping behavior, and experiment bookkeeping."""

import numpy as np
import pytest

import lagfusion.walkforward as wf
from lagfusion.data import ValidationError, align_event
from lagfusion.models import ModelConfig
from lagfusion.synth import SynthConfig, gen_corpus
from lagfusion.walkforward import (
    PROTOCOLS,
    ProtocolConfig,
    TrainConfig,
    fold_count,
    get_protocol,
    load_run_predictions,
    make_folds,
    read_predictions,
    run_experiment,
    train_fold,
)

RNG = np.random.default_rng(246)


def sliding_enumerator(n, proto):
    """Brute-force fold enumerator: slide the full train+val+test block by
    k_step while it fits."""
    folds = []
    start = 0
    while start + proto.min_samples <= n:
        folds.append(start)
        start += proto.k_step
    return folds


@pytest.fixture(scope="module")
def small_dataset():
    # seed chosen so the leading standard-protocol folds carry both classes
    # in train and validation (skips are exercised by dedicated tests below)
    bars, web, _ = gen_corpus(SynthConfig(n_bars=1000, seed=18, events_per_day=24.0))
    return align_event(bars, web)


# -- protocols and folds ------------------------------------------------------------


def test_protocol_table():
    assert PROTOCOLS["standard"] == ProtocolConfig("standard", 40, 16, 12, 8)
    assert PROTOCOLS["scaling"] == ProtocolConfig("scaling", 500, 200, 200, 100)
    assert PROTOCOLS["nonoverlap"] == ProtocolConfig("nonoverlap", 500, 200, 200, 200)
    assert PROTOCOLS["nonoverlap"].k_step == PROTOCOLS["nonoverlap"].k_test


def test_unknown_protocol():
    with pytest.raises(ValidationError):
        get_protocol("weekly")


def test_minimum_case_single_fold():
    folds = make_folds(68, PROTOCOLS["standard"])
    assert len(folds) == 1
    assert folds[0].train == (0, 40)
    assert folds[0].val == (40, 56)
    assert folds[0].test == (56, 68)


def test_nonoverlap_disjoint_tests():
    assert fold_count(900, PROTOCOLS["nonoverlap"]) == 1
    folds = make_folds(1100, PROTOCOLS["nonoverlap"])
    assert len(folds) == 2
    assert folds[0].test == (700, 900)
    assert folds[1].test == (900, 1100)


def test_too_few_samples_is_explicit_error():
    with pytest.raises(ValidationError, match="at least 68"):
        make_folds(67, PROTOCOLS["standard"])


def test_fold_count_matches_enumerator_on_random_instances():
    protos = list(PROTOCOLS.values())
    for trial in range(200):
        rng = np.random.default_rng(trial)
        proto = protos[trial % 3]
        n = int(rng.integers(proto.min_samples, proto.min_samples * 4))
        starts = sliding_enumerator(n, proto)
        assert fold_count(n, proto) == len(starts)
        folds = make_folds(n, proto)
        assert [f.train[0] for f in folds] == starts
        for f in folds:
            assert f.train[1] == f.val[0] and f.val[1] == f.test[0]
            assert f.test[1] <= n


def test_no_leakage_all_protocols(small_dataset):
    ds = small_dataset
    for proto in PROTOCOLS.values():
        if len(ds) < proto.min_samples:
            continue
        for fold in make_folds(len(ds), proto):
            tv = ds.decision_time[fold.train[0]:fold.val[1]]
            te = ds.decision_time[fold.test[0]:fold.test[1]]
            assert tv.max() <= te.min()


# -- training ------------------------------------------------------------------------


def separable_dataset(n=120):
    """Toy corpus where the text embedding linearly encodes the label."""
    bars, web, _ = gen_corpus(SynthConfig(n_bars=n + 80, seed=23, events_per_day=48.0))
    ds = align_event(bars, web)
    ds = ds.subset(np.arange(min(n, len(ds))))
    ds.text_embedding[:] = 0.0
    ds.text_embedding[:, 0] = np.where(ds.label == 1, 1.0, -1.0)
    return ds


def test_separable_fold_learns():
    ds = separable_dataset(120)
    fold = make_folds(len(ds), PROTOCOLS["standard"])[0]
    rec, model, probs = train_fold(ds, fold, ModelConfig(kind="text_only", dropout=0.0),
                                   TrainConfig(epochs=12, patience=11), seed=0)
    assert rec.status == "done"
    losses = rec.train_loss_curve
    assert all(losses[i + 1] < losses[i] for i in range(min(4, len(losses) - 1)))
    assert max(rec.val_auc_curve) == 1.0


def test_patience_counter_arithmetic(monkeypatch, small_dataset):
    # Scripted validation AUC [0.6, 0.61, 0.60, 0.60, ...]: improvement at
    # epoch 2, then patience 7 exhausts at epoch 9.
    seq = iter([0.6, 0.61] + [0.60] * 28)
    monkeypatch.setattr(wf, "auc", lambda p, y: next(seq))
    fold = make_folds(len(small_dataset), PROTOCOLS["standard"])[0]
    rec, _, _ = train_fold(small_dataset, fold, ModelConfig(kind="text_only"),
                           TrainConfig(epochs=30, patience=7), seed=0)
    assert rec.epochs_run == 9
    assert rec.best_epoch == 2
    assert rec.best_val_auc == 0.61


def test_identical_seeds_identical_checkpoints(small_dataset):
    fold = make_folds(len(small_dataset), PROTOCOLS["standard"])[0]
    cfg = ModelConfig(kind="gated_xattn")
    tc = TrainConfig(epochs=4, patience=3)
    rec1, m1, p1 = train_fold(small_dataset, fold, cfg, tc, seed=9)
    rec2, m2, p2 = train_fold(small_dataset, fold, cfg, tc, seed=9)
    assert rec1.best_epoch == rec2.best_epoch
    assert np.array_equal(p1, p2)
    for name, p in m1.params().items():
        assert np.array_equal(p.data, m2.params()[name].data)


def test_different_seeds_differ(small_dataset):
    fold = make_folds(len(small_dataset), PROTOCOLS["standard"])[0]
    cfg = ModelConfig(kind="text_only")
    tc = TrainConfig(epochs=3, patience=2)
    _, _, p1 = train_fold(small_dataset, fold, cfg, tc, seed=0)
    _, _, p2 = train_fold(small_dataset, fold, cfg, tc, seed=1)
    assert not np.array_equal(p1, p2)


def test_single_class_training_split_skipped(small_dataset):
    ds = small_dataset.subset(np.arange(68))
    ds.label[:40] = 1
    fold = make_folds(len(ds), PROTOCOLS["standard"])[0]
    rec, model, probs = train_fold(ds, fold, ModelConfig(kind="text_only"),
                                   TrainConfig(), seed=0)
    assert rec.status == "skipped"
    assert "training split" in rec.reason
    assert model is None and probs is None


def test_single_class_validation_split_skipped(small_dataset):
    ds = small_dataset.subset(np.arange(68))
    ds.label[:40] = np.arange(40) % 2
    ds.label[40:56] = 0
    fold = make_folds(len(ds), PROTOCOLS["standard"])[0]
    rec, _, _ = train_fold(ds, fold, ModelConfig(kind="text_only"), TrainConfig(), seed=0)
    assert rec.status == "skipped"
    assert "validation split" in rec.reason


def test_checkpoint_is_argmax_of_curve(small_dataset):
    fold = make_folds(len(small_dataset), PROTOCOLS["standard"])[0]
    rec, _, _ = train_fold(small_dataset, fold, ModelConfig(kind="text_only"),
                           TrainConfig(epochs=6, patience=5), seed=2)
    curve = np.array(rec.val_auc_curve)
    assert rec.best_epoch == int(np.argmax(curve)) + 1
    assert rec.best_val_auc == curve.max()


# -- experiment bookkeeping --------------------------------------------------------------


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory, small_dataset):
    ds = small_dataset.subset(np.arange(84))  # 3 standard folds
    run_dir = tmp_path_factory.mktemp("run")
    tc = TrainConfig(epochs=3, patience=2)
    manifest = run_experiment(ds, run_dir, PROTOCOLS["standard"],
                              ["text_only", "price_tx"], [0, 1], train_config=tc)
    return ds, run_dir, manifest, tc


def test_experiment_bookkeeping_counts(mini_run):
    ds, run_dir, manifest, _ = mini_run
    assert len(manifest.records) == 2 * 2 * 3
    done = [r for r in manifest.records.values() if r.status == "done"]
    for rec in done:
        assert rec.checkpoint_path and rec.predictions_path
        preds = read_predictions(run_dir / rec.predictions_path)
        assert len(preds["sample_id"]) == PROTOCOLS["standard"].k_test


def test_experiment_resumption_is_noop(mini_run):
    ds, run_dir, manifest, tc = mini_run
    before = {p.name: p.stat().st_mtime_ns for p in (run_dir / "predictions").glob("*.csv")}
    man2 = run_experiment(ds, run_dir, PROTOCOLS["standard"],
                          ["text_only", "price_tx"], [0, 1], train_config=tc)
    after = {p.name: p.stat().st_mtime_ns for p in (run_dir / "predictions").glob("*.csv")}
    assert before == after
    assert len(man2.records) == len(manifest.records)


def test_execution_order_invariance(tmp_path, mini_run):
    ds, run_dir, _, tc = mini_run
    reordered = tmp_path / "reordered"
    run_experiment(ds, reordered, PROTOCOLS["standard"],
                   ["price_tx", "text_only"], [1, 0], train_config=tc)
    for f in sorted((run_dir / "predictions").glob("*.csv")):
        assert (reordered / "predictions" / f.name).read_bytes() == f.read_bytes()


def test_load_run_predictions_concatenates(mini_run):
    _, run_dir, manifest, _ = mini_run
    preds = load_run_predictions(run_dir)
    done = [r for r in manifest.records.values() if r.status == "done"]
    assert len(preds["sample_id"]) == sum(r.n_test for r in done)
    assert set(np.unique(preds["model"])) == {"text_only", "price_tx"}


def test_parallel_jobs_match_sequential(tmp_path, mini_run):
    ds, run_dir, _, tc = mini_run
    par = tmp_path / "parallel"
    run_experiment(ds, par, PROTOCOLS["standard"], ["text_only", "price_tx"], [0, 1],
                   train_config=tc, jobs=2)
    for f in sorted((run_dir / "predictions").glob("*.csv")):
        assert (par / "predictions" / f.name).read_bytes() == f.read_bytes()


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(epochs=5, patience=5)
