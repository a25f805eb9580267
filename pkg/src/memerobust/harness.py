"""Training loop, availability-sweep evaluation, and experiment orchestration.

The defaults reproduce the training recipe the shipped models use: AdamW at
base lr 1e-4 with 20% linear warmup decaying to 10%, global-norm clipping at
2.0, batch size 8, 5 epochs, 5-fold cross-validation repeated over 3 seeds,
and a text-availability sweep over 100/90/70/50/30/10/0 percent.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .data import (
    AVAILABILITY_LEVELS,
    AvailabilityMask,
    EmbeddingDataset,
    EmbeddingRecord,
    apply_availability_mask,
    kfold_split,
    load_dataset,
    to_binary_labels,
)
from .errors import ConfigError, DataError, NumericError
from .layers import BN_EPS, BN_MOMENTUM, DTYPE, softmax_cross_entropy
from .model import FR, SR, ModalBatch, ModelParams, forward, model_backward, predict
from .optim import AdamWState, ScheduleSpec, adamw_step, clip_global_norm, clip_value, lr_at
from .report import EvalReport, ReportRow


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one experiment; serializable to/from JSON."""

    task: str = "binary"                  # binary | multiclass
    variant: str = SR                     # sr | fr
    epochs: int = 5
    batch_size: int = 8
    base_lr: float = 1e-4
    clip: float = 2.0
    clip_mode: str = "norm"               # norm | value
    warmup_frac: float = 0.20
    final_frac: float = 0.10
    folds: int = 5
    seeds: tuple[int, ...] = (0, 1, 2)
    levels: tuple[int, ...] = AVAILABILITY_LEVELS
    hidden1: int = 512
    hidden2: int = 256
    dropout_rate: float = 0.2
    bn_eps: float = BN_EPS
    bn_momentum: float = BN_MOMENTUM
    pool_bn: bool = True                  # pool both modalities in one BN batch
    split_mode: str = "auto"              # auto | cv | fixed
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mask_seed: int = 9041                 # independent of training seeds
    modality_dropout: float = 0.0         # train-time text dropping, off by default

    def __post_init__(self):
        if self.task not in ("binary", "multiclass"):
            raise ConfigError(f"task must be binary or multiclass, got {self.task!r}")
        if self.variant not in (SR, FR):
            raise ConfigError(f"variant must be sr or fr, got {self.variant!r}")
        if self.clip_mode not in ("norm", "value"):
            raise ConfigError(f"clip_mode must be norm or value, got {self.clip_mode!r}")
        if self.split_mode not in ("auto", "cv", "fixed"):
            raise ConfigError(f"split_mode must be auto, cv or fixed, got {self.split_mode!r}")
        for lv in self.levels:
            if lv not in AVAILABILITY_LEVELS:
                raise ConfigError(f"level {lv} not in {AVAILABILITY_LEVELS}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        obj = json.loads(text)
        for key in ("seeds", "levels"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @property
    def n_classes(self) -> int:
        return 2 if self.task == "binary" else 3


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: float
    skipped: bool = False


@dataclass
class TrainHistory:
    steps: list = field(default_factory=list)
    val_f1: list = field(default_factory=list)
    best_epoch: int = -1
    total_steps: int = 0


def make_batch(records: Sequence[EmbeddingRecord],
               mask: Optional[AvailabilityMask] = None,
               with_labels: bool = True) -> ModalBatch:
    """Assemble a ModalBatch; a mask can hide the text of stored-text records."""
    n = len(records)
    if n == 0:
        raise ConfigError("cannot build a batch from zero records")
    dim = records[0].image_embedding.shape[0]
    image = np.stack([r.image_embedding for r in records])
    text = np.zeros((n, dim), dtype=DTYPE)
    present = np.zeros(n, dtype=bool)
    for i, r in enumerate(records):
        ok = r.has_text and (mask is None or mask.text_present.get(r.id, False))
        if ok:
            text[i] = r.text_embedding
            present[i] = True
    labels = np.array([r.label for r in records]) if with_labels else None
    return ModalBatch(image=image, text=text, text_present=present, labels=labels)


def _batch_sizes(n: int, batch_size: int) -> list[int]:
    """Consecutive batch sizes; a trailing batch of 1 merges into the previous
    one so BN always sees at least 2 rows."""
    sizes = [batch_size] * (n // batch_size)
    rem = n % batch_size
    if rem:
        sizes.append(rem)
    if len(sizes) > 1 and sizes[-1] == 1:
        sizes.pop()
        sizes[-1] += 1
    return sizes


def steps_per_epoch(n: int, batch_size: int) -> int:
    return len(_batch_sizes(n, batch_size))


def task_f1(preds, labels, task: str) -> float:
    if task == "binary":
        return metrics.f1_binary(preds, labels, positive_class=1)
    return metrics.f1_macro(preds, labels, n_classes=3)


def evaluate(params: ModelParams, records: Sequence[EmbeddingRecord], task: str,
             mask: Optional[AvailabilityMask] = None) -> float:
    """Eval-mode F1 over the given records under an optional availability mask."""
    batch = make_batch(records, mask)
    logits, _ = forward(params, batch, mode="eval")
    return task_f1(predict(logits), batch.labels, task)


def train(config: ExperimentConfig, train_records: Sequence[EmbeddingRecord],
          val_records: Sequence[EmbeddingRecord], seed) -> tuple[ModelParams, TrainHistory]:
    """Train one model; returns the epoch checkpoint with the best validation F1.

    The run is a deterministic function of (config, records, seed). Validation
    uses the full modality; the availability sweep belongs to test time.
    """
    if len(train_records) == 0:
        raise ConfigError("empty training set")
    if len(train_records) < 2:
        raise ConfigError("training needs at least 2 records (BN batch statistics)")
    n = len(train_records)
    dim = train_records[0].image_embedding.shape[0]
    rng = np.random.default_rng(seed)

    params = ModelParams.create(
        config.variant, dim, config.hidden1, config.hidden2,
        config.n_classes, config.dropout_rate, rng,
        config.bn_eps, config.bn_momentum)
    trainable = params.trainable_arrays()
    opt = AdamWState.create(trainable, config.beta1, config.beta2,
                            config.adam_eps, config.weight_decay)

    per_epoch = steps_per_epoch(n, config.batch_size)
    total_steps = config.epochs * per_epoch
    spec = ScheduleSpec(config.base_lr, total_steps, config.warmup_frac,
                        config.final_frac)

    history = TrainHistory(total_steps=total_steps)
    best_f1 = -1.0
    best = params.copy()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        cursor = 0
        for size in _batch_sizes(n, config.batch_size):
            idx = order[cursor:cursor + size]
            cursor += size
            batch = make_batch([train_records[i] for i in idx])
            if config.modality_dropout > 0.0 and batch.text_present.any():
                keep = rng.random(batch.size) >= config.modality_dropout
                batch.text_present = batch.text_present & keep

            lr = lr_at(spec, step)
            logits, tape = forward(params, batch, mode="train", rng=rng,
                                   pool_bn=config.pool_bn)
            loss, dlogits = softmax_cross_entropy(logits, batch.labels)
            if not np.isfinite(loss):
                raise NumericError(f"divergent loss at step {step}")
            grads = model_backward(tape, dlogits)
            try:
                if config.clip_mode == "norm":
                    grads = clip_global_norm(grads, config.clip)
                else:
                    grads = clip_value(grads, config.clip)
            except NumericError:
                history.steps.append(StepRecord(step, lr, loss, skipped=True))
                step += 1
                continue
            adamw_step(trainable, grads, opt, lr)
            history.steps.append(StepRecord(step, lr, loss))
            step += 1

        if len(val_records):
            f1 = evaluate(params, val_records, config.task)
            improved = f1 > best_f1
        else:
            f1, improved = float("nan"), True  # no signal: keep the latest epoch
        history.val_f1.append(f1)
        if improved:
            best_f1 = f1 if len(val_records) else best_f1
            best = params.copy()
            history.best_epoch = epoch
    return best, history


def evaluate_sweep(params: ModelParams, test_records: Sequence[EmbeddingRecord],
                   levels: Sequence[int], mask_seed: int, task: str) -> list[tuple[int, float]]:
    """F1 at each availability level under nested stratified masks."""
    out = []
    for level in levels:
        mask = apply_availability_mask(test_records, level, mask_seed)
        out.append((level, evaluate(params, test_records, task, mask)))
    return out


def _prepare_dataset(config: ExperimentConfig, dataset: EmbeddingDataset) -> EmbeddingDataset:
    if config.task == "binary":
        return to_binary_labels(dataset)
    if dataset.scheme.task != "multiclass":
        raise ConfigError("multiclass task needs a 3-class dataset")
    return dataset


def _resolve_split_mode(config: ExperimentConfig, dataset: EmbeddingDataset) -> str:
    if config.split_mode != "auto":
        if config.split_mode == "fixed" and not dataset.has_split_tags:
            raise ConfigError("fixed split mode requires split tags on every record")
        return config.split_mode
    return "fixed" if dataset.has_split_tags else "cv"


def run_experiment(config: ExperimentConfig, dataset: EmbeddingDataset,
                   threads: int = 1) -> EvalReport:
    """Full protocol: train per (seed, fold) cell, sweep availability, aggregate.

    Cells are independent and may run on a thread pool; rows are sorted
    deterministically so the report does not depend on scheduling.
    """
    dataset = _prepare_dataset(config, dataset)
    mode = _resolve_split_mode(config, dataset)

    cells = []  # (seed, fold, train_records, val_records, test_records)
    if mode == "fixed":
        train_ds = dataset.split_subset("train")
        val_ds = dataset.split_subset("val")
        test_ds = dataset.split_subset("test")
        if not len(train_ds) or not len(test_ds):
            raise ConfigError("fixed split mode needs non-empty train and test splits")
        for seed in config.seeds:
            cells.append((seed, 0, train_ds.records, val_ds.records, test_ds.records))
    else:
        for seed in config.seeds:
            folds = kfold_split(dataset, config.folds, seed)
            for fold, (train_idx, val_idx) in enumerate(folds):
                train_recs = [dataset.records[i] for i in train_idx]
                held_out = [dataset.records[i] for i in val_idx]
                # the held-out fold serves both model selection and the sweep
                cells.append((seed, fold, train_recs, held_out, held_out))

    def run_cell(cell):
        seed, fold, train_recs, val_recs, test_recs = cell
        params, _ = train(config, train_recs, val_recs, seed=[seed, fold])
        sweep = evaluate_sweep(params, test_recs, config.levels,
                               config.mask_seed, config.task)
        return [ReportRow(config.task, config.variant, level, fold, seed, f1)
                for level, f1 in sweep]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]

    level_order = {lv: i for i, lv in enumerate(config.levels)}
    rows = [row for rows in results for row in rows]
    rows.sort(key=lambda r: (r.seed, r.fold, level_order[r.level]))

    report = EvalReport(meta={
        "config": json.loads(config.to_json()),
        "config_hash": config.config_hash(),
        "dataset_hash": dataset.fingerprint(),
        "split_mode": mode,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    })
    report.extend(rows)
    return report


def substitute_noisy_text(dataset: EmbeddingDataset, noisy_manifest,
                          scope: str = "both") -> tuple[EmbeddingDataset, int]:
    """Swap in replacement text embeddings keyed by record id.

    scope selects which records are eligible by split tag: 'train', 'test',
    or 'both' (every record). Unmatched records keep their original text.
    Returns (new dataset, substitution count).
    """
    if scope not in ("train", "test", "both"):
        raise ConfigError(f"scope must be train, test or both, got {scope!r}")
    noisy = load_dataset(noisy_manifest)
    if noisy.dim != dataset.dim:
        raise DataError(f"replacement dim {noisy.dim} != dataset dim {dataset.dim}")
    replacements = {r.id: r.text_embedding for r in noisy.records if r.has_text}

    count = 0
    records = []
    for r in dataset.records:
        eligible = scope == "both" or r.split_tag == scope
        if eligible and r.id in replacements:
            records.append(replace(r, text_embedding=replacements[r.id].copy()))
            count += 1
        else:
            records.append(r)
    return EmbeddingDataset(dataset.name, dataset.dim, dataset.scheme, records), count
