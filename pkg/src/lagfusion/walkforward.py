"""Rolling walk-forward fold generation and per-fold from-scratch training.

Folds are index ranges over the chronologically ordered sample list; each
fold trains a fresh model on its train range, early-stops on validation AUC,
and predicts its test range without re-fitting. Web-scalar normalization is
refit on every fold's train split, which together with per-window price
features keeps the whole pipeline free of look-ahead.

Every (kind, seed, fold) task is independently seeded, so results do not
depend on execution order and folds can run in parallel processes. The run
manifest is an append-only JSONL file; completed triples are skipped on
resumption.
"""

from __future__ import annotations

import csv
import json
import logging
import multiprocessing
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import storage
from .data import AlignedDataset, ValidationError, WebNormalizer
from .metrics import auc
from .models import Batch, FusionModel, ModelConfig, build_model, make_optimizer
from .tensor import Tape

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolConfig:
    """Named rolling protocol: train/val/test sizes and the step between
    consecutive folds, all in samples."""

    name: str
    k_train: int
    k_val: int
    k_test: int
    k_step: int

    @property
    def min_samples(self) -> int:
        return self.k_train + self.k_val + self.k_test


PROTOCOLS = {
    "standard": ProtocolConfig("standard", 40, 16, 12, 8),
    "scaling": ProtocolConfig("scaling", 500, 200, 200, 100),
    "nonoverlap": ProtocolConfig("nonoverlap", 500, 200, 200, 200),
}


def get_protocol(name: str) -> ProtocolConfig:
    try:
        return PROTOCOLS[name]
    except KeyError:
        raise ValidationError(f"unknown protocol '{name}'; known: {', '.join(PROTOCOLS)}") from None


@dataclass(frozen=True)
class FoldSpec:
    """Half-open index ranges of one fold. train end == val start and
    val end == test start by construction."""

    index: int
    train: tuple[int, int]
    val: tuple[int, int]
    test: tuple[int, int]


def fold_count(n_samples: int, protocol: ProtocolConfig) -> int:
    if n_samples < protocol.min_samples:
        return 0
    return (n_samples - protocol.min_samples) // protocol.k_step + 1


def make_folds(n_samples: int, protocol: ProtocolConfig) -> list[FoldSpec]:
    """Enumerate rolling folds: fold f trains on [f*step, f*step + k_train)
    with validation and test immediately after."""
    if n_samples < protocol.min_samples:
        raise ValidationError(
            f"protocol '{protocol.name}' needs at least {protocol.min_samples} samples, got {n_samples}")
    folds = []
    for f in range(fold_count(n_samples, protocol)):
        a = f * protocol.k_step
        b = a + protocol.k_train
        c = b + protocol.k_val
        d = c + protocol.k_test
        folds.append(FoldSpec(f, (a, b), (b, c), (c, d)))
    return folds


@dataclass
class TrainConfig:
    epochs: int = 30
    patience: int = 7
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 1e-3

    def __post_init__(self):
        if not self.patience < self.epochs:
            raise ValidationError(f"patience {self.patience} must be < epochs {self.epochs}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CheckpointRecord:
    """Outcome of one (kind, seed, fold) training task."""

    kind: str
    seed: int
    fold: int
    status: str                      # "done" | "skipped"
    reason: str = ""
    best_epoch: int = -1
    best_val_auc: float | None = None
    epochs_run: int = 0
    train_loss_curve: list[float] = field(default_factory=list)
    val_auc_curve: list[float] = field(default_factory=list)
    gate_mean: float | None = None
    n_test: int = 0
    checkpoint_path: str = ""
    predictions_path: str = ""

    def key(self) -> tuple[str, int, int]:
        return (self.kind, self.seed, self.fold)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _task_seed(seed: int, kind: str, fold: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((seed, zlib.crc32(kind.encode()), fold, 0x544B))


def _iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_fold(dataset: AlignedDataset, fold: FoldSpec, model_config: ModelConfig,
               train_config: TrainConfig, seed: int) -> tuple[CheckpointRecord, FusionModel | None,
                                                              np.ndarray | None]:
    """Train one model from scratch on one fold.

    Minimizes binary cross-entropy over seeded shuffled mini-batches, scores
    validation AUC after every epoch, keeps the best-AUC parameter snapshot,
    and stops once ``patience`` epochs pass without improvement. Returns the
    record, the best model (restored), and its test-split probabilities.
    Folds whose train or validation split is single-class are skipped (AUC
    selection is undefined there).
    """
    with threadpool_limits(limits=1):
        return _train_fold_inner(dataset, fold, model_config, train_config, seed)


def _train_fold_inner(dataset, fold, model_config, train_config, seed):
    # BLAS threading is pure overhead at this model scale and fights the
    # process-level fold parallelism, so training runs single-threaded.
    tr = np.arange(*fold.train)
    va = np.arange(*fold.val)
    te = np.arange(*fold.test)
    rec = CheckpointRecord(kind=model_config.kind, seed=seed, fold=fold.index, status="done",
                           n_test=len(te))
    train_labels = dataset.label[tr]
    if len(np.unique(train_labels)) < 2:
        rec.status, rec.reason = "skipped", "single-class training split"
        return rec, None, None
    if len(np.unique(dataset.label[va])) < 2:
        rec.status, rec.reason = "skipped", "single-class validation split"
        return rec, None, None

    normalizer = WebNormalizer.fit(dataset.web_scalars[tr])
    val_batch = Batch.from_dataset(dataset, va, normalizer.transform)
    test_batch = Batch.from_dataset(dataset, te, normalizer.transform)

    ss = _task_seed(seed, model_config.kind, fold.index)
    data_rng = np.random.default_rng(ss)
    model_seed = int(ss.generate_state(1, dtype=np.uint32)[0])
    cfg = ModelConfig(**{**model_config.to_dict(), "seed": model_seed})
    model = build_model(cfg)
    opt = make_optimizer(model, lr=train_config.lr, weight_decay=train_config.weight_decay)

    best_auc = -np.inf
    best_state: dict[str, np.ndarray] | None = None
    since_best = 0
    for epoch in range(1, train_config.epochs + 1):
        losses = []
        for idx in _iter_batches(len(tr), train_config.batch_size, data_rng):
            batch = Batch.from_dataset(dataset, tr[idx], normalizer.transform)
            with Tape() as tape:
                loss = model.loss(batch, training=True)
                tape.backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(loss.item())
        rec.train_loss_curve.append(float(np.mean(losses)))
        val_auc = auc(model.predict_proba(val_batch), val_batch.label)
        rec.val_auc_curve.append(float(val_auc))
        rec.epochs_run = epoch
        if val_auc > best_auc:
            best_auc = val_auc
            best_state = model.state_arrays()
            rec.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.patience:
                break

    model.load_state(best_state)
    rec.best_val_auc = float(best_auc)
    probs = model.predict_proba(test_batch)
    if model.last_gate is not None:
        rec.gate_mean = float(model.last_gate.mean())
    return rec, model, probs


# -- experiment runner ------------------------------------------------------------


PREDICTION_HEADER = ["sample_id", "fold", "seed", "model", "probability", "label",
                     "future_return", "tau_lag"]


def write_predictions(path: Path, dataset: AlignedDataset, test_idx: np.ndarray,
                      probs: np.ndarray, kind: str, seed: int, fold: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTION_HEADER)
        for i, p in zip(test_idx, probs):
            w.writerow([int(i), fold, seed, kind, repr(float(p)),
                        int(dataset.label[i]), repr(float(dataset.future_return[i])),
                        repr(float(dataset.tau_lag[i]))])


def read_predictions(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    return {
        "sample_id": np.array([int(r["sample_id"]) for r in rows]),
        "fold": np.array([int(r["fold"]) for r in rows]),
        "seed": np.array([int(r["seed"]) for r in rows]),
        "model": np.array([r["model"] for r in rows]),
        "probability": np.array([float(r["probability"]) for r in rows]),
        "label": np.array([int(r["label"]) for r in rows]),
        "future_return": np.array([float(r["future_return"]) for r in rows]),
        "tau_lag": np.array([float(r["tau_lag"]) for r in rows]),
    }


@dataclass
class RunManifest:
    """Append-only record of an experiment run."""

    path: Path
    records: dict[tuple[str, int, int], CheckpointRecord] = field(default_factory=dict)

    @classmethod
    def open(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / "manifest.jsonl"
        man = cls(path=path)
        if path.exists():
            with open(path) as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = CheckpointRecord(**json.loads(line))
                    man.records[rec.key()] = rec
        return man

    def append(self, rec: CheckpointRecord) -> None:
        self.records[rec.key()] = rec
        with open(self.path, "a") as fh:
            fh.write(rec.to_json() + "\n")

    def done(self, kind: str, seed: int, fold: int) -> bool:
        return (kind, seed, fold) in self.records


# Module-level dataset shared with forked workers; loading the dataset once in
# the parent keeps worker startup cheap.
_WORKER_DATASET: AlignedDataset | None = None


def _run_task(args):
    fold, model_config, train_config, seed = args
    rec, model, probs = train_fold(_WORKER_DATASET, fold, model_config, train_config, seed)
    test_idx = np.arange(*fold.test) if probs is not None else None
    # Model state and its exact config travel back as plain arrays/dicts so
    # the parent can persist them (worker processes share nothing else).
    state = model.state_arrays() if model is not None else None
    cfg = model.config.to_dict() if model is not None else None
    return rec, probs, test_idx, state, cfg


def run_experiment(dataset: AlignedDataset, run_dir: str | Path, protocol: ProtocolConfig,
                   kinds: list[str], seeds: list[int],
                   model_config: ModelConfig | None = None,
                   train_config: TrainConfig | None = None,
                   jobs: int = 1, progress: bool = False) -> RunManifest:
    """Train every (kind, seed, fold) combination, persisting a checkpoint,
    a prediction CSV and a manifest record per task. Completed tasks found in
    the manifest are skipped, so interrupted runs resume where they stopped."""
    global _WORKER_DATASET
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "predictions").mkdir(parents=True, exist_ok=True)
    train_config = train_config or TrainConfig()
    folds = make_folds(len(dataset), protocol)
    manifest = RunManifest.open(run_dir)

    tasks = []
    for kind in kinds:
        base = model_config.to_dict() if model_config else {}
        base["kind"] = kind
        cfg = ModelConfig.from_dict(base)
        for seed in seeds:
            for fold in folds:
                if manifest.done(kind, seed, fold.index):
                    continue
                tasks.append((fold, cfg, train_config, seed))

    def finish(rec: CheckpointRecord, probs, test_idx, state, cfg_dict) -> None:
        if probs is not None:
            ck = run_dir / "checkpoints" / f"{rec.kind}_s{rec.seed}_f{rec.fold}.bin"
            pr = run_dir / "predictions" / f"{rec.kind}_s{rec.seed}_f{rec.fold}.csv"
            storage.save_arrays(ck, state, {"config": cfg_dict})
            write_predictions(pr, dataset, test_idx, probs, rec.kind, rec.seed, rec.fold)
            rec.checkpoint_path = str(ck.relative_to(run_dir))
            rec.predictions_path = str(pr.relative_to(run_dir))
        manifest.append(rec)
        if progress:
            tail = f"best_epoch={rec.best_epoch} val_auc={rec.best_val_auc:.3f}" \
                if rec.status == "done" else rec.reason
            print(f"[{rec.kind} seed={rec.seed} fold={rec.fold}] {rec.status} {tail}", flush=True)

    _WORKER_DATASET = dataset
    try:
        if jobs > 1 and len(tasks) > 1:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                for rec, probs, test_idx, state, cfg_dict in pool.map(_run_task, tasks, chunksize=1):
                    finish(rec, probs, test_idx, state, cfg_dict)
        else:
            for task in tasks:
                finish(*_run_task(task))
    finally:
        _WORKER_DATASET = None
    return manifest


def load_run_predictions(run_dir: str | Path) -> dict[str, np.ndarray]:
    """Concatenate every prediction CSV under a run directory in sorted file
    order (stable regardless of execution order)."""
    run_dir = Path(run_dir)
    files = sorted((run_dir / "predictions").glob("*.csv"))
    if not files:
        raise ValidationError(f"no prediction files under {run_dir}")
    parts = [read_predictions(f) for f in files]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
