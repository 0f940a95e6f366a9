"""Command-line front end: round trips, exit codes, config-file precedence,
and byte-level reproducibility of emitted artifacts."""

import json
from pathlib import Path

import numpy as np
import pytest

from lagfusion.cli import main
from lagfusion.data import AlignedDataset


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = main(["synth", "--out", str(out), "--n-bars", "420", "--seed", "5",
               "--events-per-day", "24"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def dataset_path(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("ds") / "dataset.bin"
    rc = main(["build", "--prices", str(corpus_dir / "prices.csv"),
               "--web", str(corpus_dir / "web.jsonl"), "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, dataset_path):
    out = tmp_path_factory.mktemp("run")
    rc = main(["train", "--dataset", str(dataset_path), "--out", str(out),
               "--protocol", "standard", "--kinds", "price_tx,text_only",
               "--seeds", "0", "--epochs", "3", "--patience", "2"])
    assert rc == 0
    return out


def test_synth_same_seed_byte_identical(tmp_path, corpus_dir):
    again = tmp_path / "again"
    assert main(["synth", "--out", str(again), "--n-bars", "420", "--seed", "5",
                 "--events-per-day", "24"]) == 0
    for name in ("prices.csv", "web.jsonl", "synth_manifest.json"):
        assert (again / name).read_bytes() == (corpus_dir / name).read_bytes()


def test_synth_row_count(tmp_path):
    out = tmp_path / "c"
    assert main(["synth", "--out", str(out), "--n-bars", "100", "--seed", "1"]) == 0
    rows = (out / "prices.csv").read_text().strip().splitlines()
    assert len(rows) == 101  # header + bars


def test_synth_manifest_provenance(corpus_dir):
    man = json.loads((corpus_dir / "synth_manifest.json").read_text())
    assert man["seed"] == 5
    assert len(man["config_sha256"]) == 64
    assert man["files"]["prices"] == "prices.csv"


def test_build_prints_corpus_stats(capsys, corpus_dir, tmp_path):
    out = tmp_path / "ds.bin"
    rc = main(["build", "--prices", str(corpus_dir / "prices.csv"),
               "--web", str(corpus_dir / "web.jsonl"), "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "samples:" in text and "mean lag:" in text and "pos. rate:" in text
    assert "hash:" in text


def test_build_rebuild_same_hash(capsys, corpus_dir, tmp_path):
    hashes = []
    for name in ("a.bin", "b.bin"):
        rc = main(["build", "--prices", str(corpus_dir / "prices.csv"),
                   "--web", str(corpus_dir / "web.jsonl"), "--out", str(tmp_path / name)])
        assert rc == 0
        out = capsys.readouterr().out
        hashes.append([l for l in out.splitlines() if l.startswith("hash:")][0])
    assert hashes[0] == hashes[1]
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_build_tau_max_zero_keeps_only_zero_lag(corpus_dir, tmp_path):
    out = tmp_path / "zero.bin"
    rc = main(["build", "--prices", str(corpus_dir / "prices.csv"),
               "--web", str(corpus_dir / "web.jsonl"), "--out", str(out),
               "--tau-max", "0"])
    assert rc == 0
    ds = AlignedDataset.load(out)
    assert len(ds) == 0 or np.all(ds.tau_lag == 0.0)


def test_build_missing_file_exit_code(tmp_path):
    rc = main(["build", "--prices", str(tmp_path / "nope.csv"),
               "--web", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "x.bin")])
    assert rc == 1  # unusable input is a validation failure


def test_train_rerun_is_noop(dataset_path, run_dir):
    before = {p.name: p.read_bytes() for p in (run_dir / "predictions").glob("*.csv")}
    rc = main(["train", "--dataset", str(dataset_path), "--out", str(run_dir),
               "--protocol", "standard", "--kinds", "price_tx,text_only",
               "--seeds", "0", "--epochs", "3", "--patience", "2"])
    assert rc == 0
    after = {p.name: p.read_bytes() for p in (run_dir / "predictions").glob("*.csv")}
    assert before == after


def test_train_manifest_has_both_kind_blocks(run_dir):
    lines = (run_dir / "manifest.jsonl").read_text().strip().splitlines()
    kinds = {json.loads(l)["kind"] for l in lines}
    assert kinds == {"price_tx", "text_only"}


def test_train_unknown_kind_is_validation_failure(dataset_path, tmp_path):
    rc = main(["train", "--dataset", str(dataset_path), "--out", str(tmp_path / "r"),
               "--kinds", "alpha_go"])
    assert rc == 1


def test_report_emits_tables_and_deltas(run_dir, tmp_path, capsys):
    out = tmp_path / "report"
    rc = main(["report", "--run", str(run_dir), "--out", str(out),
               "--baselines", "price_tx", "--resamples", "200"])
    assert rc == 0
    main_csv = (out / "main_comparison.csv").read_text()
    assert "delta_vs_price_tx" in main_csv
    assert (out / "auxiliary_metrics.csv").exists()
    assert (out / "report.json").exists()
    assert "model" in capsys.readouterr().out


def test_report_recomputation_byte_identical(run_dir, tmp_path):
    a, b = tmp_path / "ra", tmp_path / "rb"
    for out in (a, b):
        assert main(["report", "--run", str(run_dir), "--out", str(out),
                     "--baselines", "price_tx", "--resamples", "200"]) == 0
    for f in sorted(a.glob("*")):
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_report_missing_baseline_warns_but_succeeds(run_dir, tmp_path, capsys):
    out = tmp_path / "report2"
    rc = main(["report", "--run", str(run_dir), "--out", str(out),
               "--baselines", "bilstm", "--resamples", "100"])
    assert rc == 0
    assert "delta_vs_bilstm" not in (out / "main_comparison.csv").read_text()
    assert "warning" in capsys.readouterr().err


def test_report_single_seed_has_no_interval(run_dir, tmp_path):
    out = tmp_path / "report3"
    assert main(["report", "--run", str(run_dir), "--out", str(out),
                 "--resamples", "100"]) == 0
    payload = json.loads((out / "report.json").read_text())
    for model in payload["models"].values():
        assert model["ci_half_width"] is None  # one seed -> undefined interval


def test_lag_analysis_writes_bin_table(corpus_dir, tmp_path, capsys):
    out = tmp_path / "lag.csv"
    rc = main(["lag-analysis", "--prices", str(corpus_dir / "prices.csv"),
               "--web", str(corpus_dir / "web.jsonl"), "--out", str(out)])
    assert rc == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "bin_lo,bin_hi,count,annualised_sharpe,low_count"
    assert len(rows) == 7  # header + six 30-minute bins over [0, 180]


def test_config_file_supplies_defaults_flags_win(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[synth]\nn_bars = 50\nseed = 9\n")
    out1 = tmp_path / "c1"
    assert main(["synth", "--config", str(cfg), "--out", str(out1)]) == 0
    assert len((out1 / "prices.csv").read_text().strip().splitlines()) == 51
    out2 = tmp_path / "c2"
    assert main(["synth", "--config", str(cfg), "--out", str(out2), "--n-bars", "70"]) == 0
    assert len((out2 / "prices.csv").read_text().strip().splitlines()) == 71


def test_missing_required_flag_is_validation_failure():
    assert main(["synth"]) == 1


def test_unknown_command_is_validation_failure():
    assert main(["frobnicate"]) == 1
