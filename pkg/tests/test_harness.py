"""Training loop, sweep protocol, experiment orchestration and reports."""
import json
from dataclasses import replace

import numpy as np
import pytest

import memerobust.harness as harness
from memerobust.data import (
    apply_availability_mask,
    save_dataset,
    synth_generate,
)
from memerobust.errors import ConfigError, DataError, NumericError
from memerobust.harness import (
    ExperimentConfig,
    _batch_sizes,
    evaluate,
    evaluate_sweep,
    make_batch,
    run_experiment,
    steps_per_epoch,
    substitute_noisy_text,
    train,
)
from memerobust.model import save_checkpoint
from memerobust.optim import ScheduleSpec, lr_at
from memerobust.report import EvalReport, ReportRow, emit_report, load_jsonl, write_jsonl


def small_config(**overrides):
    base = dict(task="binary", epochs=2, folds=3, seeds=(0, 1),
                levels=(100, 50, 0), hidden1=16, hidden2=8, dropout_rate=0.1)
    base.update(overrides)
    return ExperimentConfig(**base)


def small_dataset(per_class=30, d=8, sigma=0.2, seed=0, split=None):
    return synth_generate(2, per_class, d, 1.0, 1.0, sigma, seed=seed, split=split)


# ---------------------------------------------------------------------------
# batching and bookkeeping
# ---------------------------------------------------------------------------

def test_batch_sizes_merge_trailing_singleton():
    assert _batch_sizes(16, 8) == [8, 8]
    assert _batch_sizes(17, 8) == [8, 9]
    assert _batch_sizes(12, 8) == [8, 4]
    assert _batch_sizes(9, 8) == [9]
    assert steps_per_epoch(17, 8) == 2


def test_train_history_matches_schedule():
    ds = small_dataset()
    config = small_config()
    recs = ds.records
    params, history = train(config, recs[:40], recs[40:50], seed=[0])
    assert history.total_steps == config.epochs * steps_per_epoch(40, config.batch_size)
    assert len(history.steps) == history.total_steps
    spec = ScheduleSpec(config.base_lr, history.total_steps,
                        config.warmup_frac, config.final_frac)
    for k, step in enumerate(history.steps):
        assert step.step == k
        assert step.lr == lr_at(spec, k)
    assert lr_at(spec, history.total_steps) == pytest.approx(
        config.final_frac * config.base_lr)


def test_train_deterministic_checkpoints(tmp_path):
    ds = small_dataset()
    config = small_config()

    def run(path):
        params, _ = train(config, ds.records[:40], ds.records[40:50], seed=[3])
        save_checkpoint(path, params)
        return path.read_bytes()

    assert run(tmp_path / "a.mrsr") == run(tmp_path / "b.mrsr")


def test_train_empty_training_set():
    ds = small_dataset()
    with pytest.raises(ConfigError):
        train(small_config(), [], ds.records[:5], seed=[0])


def test_train_divergent_loss_aborts_with_step_index():
    ds = small_dataset()
    recs = [r for r in ds.records[:16]]
    recs[3].image_embedding = np.full_like(recs[3].image_embedding, np.inf)
    with np.errstate(invalid="ignore", over="ignore"):
        with pytest.raises(NumericError, match="step"):
            train(small_config(), recs, ds.records[20:24], seed=[0])


def test_train_skips_step_on_non_finite_grads(monkeypatch):
    ds = small_dataset()
    calls = {"n": 0}
    real = harness.clip_global_norm

    def flaky(grads, max_norm):
        calls["n"] += 1
        if calls["n"] == 1:
            raise NumericError("injected")
        return real(grads, max_norm)

    monkeypatch.setattr(harness, "clip_global_norm", flaky)
    config = small_config(epochs=1)
    _, history = train(config, ds.records[:24], ds.records[30:36], seed=[0])
    assert history.steps[0].skipped
    assert not any(s.skipped for s in history.steps[1:])
    assert len(history.steps) == history.total_steps


def test_train_sanity_on_separable_data():
    ds = synth_generate(2, 200, 16, 1.0, 1.0, 0.05, seed=0, split=(0.7, 0.1, 0.2))
    config = ExperimentConfig()  # the full default recipe
    params, history = train(config, ds.split_subset("train").records,
                            ds.split_subset("val").records, seed=[0])
    final_loss = float(np.mean([s.loss for s in history.steps[-10:]]))
    assert final_loss < 0.1
    assert max(history.val_f1) > 0.95


# ---------------------------------------------------------------------------
# evaluation sweep
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def trained_sr():
    ds = small_dataset(per_class=60, sigma=0.3, split=(0.7, 0.1, 0.2))
    config = small_config(epochs=3)
    params, _ = train(config, ds.split_subset("train").records,
                      ds.split_subset("val").records, seed=[0])
    return params, ds


def test_sweep_level_100_equals_unmasked(trained_sr):
    params, ds = trained_sr
    test_recs = ds.split_subset("test").records
    [(_, masked)] = evaluate_sweep(params, test_recs, [100], mask_seed=1, task="binary")
    assert masked == evaluate(params, test_recs, "binary")


def test_sweep_level_0_equals_image_only(trained_sr):
    params, ds = trained_sr
    test_recs = ds.split_subset("test").records
    [(_, masked)] = evaluate_sweep(params, test_recs, [0], mask_seed=1, task="binary")
    stripped = [replace_text_none(r) for r in test_recs]
    assert masked == evaluate(params, stripped, "binary")


def replace_text_none(record):
    from dataclasses import replace as dc_replace
    return dc_replace(record, text_embedding=None)


def test_sweep_rejects_bad_level(trained_sr):
    params, ds = trained_sr
    with pytest.raises(ConfigError):
        evaluate_sweep(params, ds.records, [42], mask_seed=1, task="binary")


def test_masked_batch_never_reads_masked_text(trained_sr):
    params, ds = trained_sr
    test_recs = ds.split_subset("test").records
    mask = apply_availability_mask(test_recs, 50, seed=2)
    batch = make_batch(test_recs, mask)
    hidden = [i for i, r in enumerate(test_recs) if not mask.text_present[r.id]]
    assert not batch.text_present[hidden].any()
    assert not batch.text[hidden].any()  # zero placeholders, never read


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------

def test_run_experiment_cv_arity():
    ds = small_dataset()
    config = small_config(epochs=1)
    report = run_experiment(config, ds)
    for level in config.levels:
        rows = [r for r in report.rows if r.level == level]
        assert len(rows) == config.folds * len(config.seeds)
    for agg in report.aggregates():
        assert agg["count"] == config.folds * len(config.seeds)


def test_run_experiment_fixed_split_arity():
    ds = small_dataset(split=(0.6, 0.2, 0.2))
    config = small_config(epochs=1, split_mode="fixed")
    report = run_experiment(config, ds)
    for level in config.levels:
        rows = [r for r in report.rows if r.level == level]
        assert len(rows) == len(config.seeds)
        assert {r.fold for r in rows} == {0}


def test_run_experiment_threads_match_sequential():
    ds = small_dataset()
    config = small_config(epochs=1)
    sequential = run_experiment(config, ds)
    threaded = run_experiment(config, ds, threads=4)
    assert sequential.rows == threaded.rows


def test_run_experiment_deterministic_reports(tmp_path):
    ds = small_dataset()
    config = small_config(epochs=1)

    def emit(tag):
        report = run_experiment(config, ds)
        path = write_jsonl(report, tmp_path / f"{tag}.jsonl")
        lines = [l for l in path.read_text().splitlines()
                 if '"kind":"timestamp"' not in l]
        return "\n".join(lines)

    assert emit("a") == emit("b")


def test_run_experiment_multiclass_task():
    ds = synth_generate(3, 12, 8, 1.0, 1.0, 0.3, seed=4)
    config = ExperimentConfig(task="multiclass", epochs=1, folds=2, seeds=(0,),
                              levels=(100, 0), hidden1=8, hidden2=4)
    report = run_experiment(config, ds)
    assert all(r.task == "multiclass" for r in report.rows)
    assert len(report.rows) == 2 * 1 * 2


def test_config_json_round_trip():
    config = small_config(variant="fr", modality_dropout=0.1)
    again = ExperimentConfig.from_json(config.to_json())
    assert again == config
    assert again.config_hash() == config.config_hash()


def test_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(task="ternary")
    with pytest.raises(ConfigError):
        ExperimentConfig(levels=(100, 42))
    with pytest.raises(ConfigError):
        ExperimentConfig(clip_mode="sideways")


# ---------------------------------------------------------------------------
# noisy text substitution
# ---------------------------------------------------------------------------

def test_substitute_empty_manifest(tmp_path):
    ds = small_dataset(per_class=5)
    empty = synth_generate(2, 1, 8, 1.0, 1.0, 0.2, seed=9, name="noisy")
    empty.records = []  # no replacements on offer
    manifest, _ = save_dataset(empty, tmp_path / "noisy.json")
    out, count = substitute_noisy_text(ds, manifest)
    assert count == 0
    assert [r.id for r in out.records] == [r.id for r in ds.records]


def test_substitute_full_coverage(tmp_path):
    ds = small_dataset(per_class=5)
    noisy = synth_generate(2, 5, 8, 0.0, 1.0, 0.2, seed=10, name="noisy")
    for a, b in zip(noisy.records, ds.records):
        a.id = b.id
    manifest, _ = save_dataset(noisy, tmp_path / "noisy.json")
    out, count = substitute_noisy_text(ds, manifest)
    assert count == len(ds)
    changed = sum(not np.array_equal(a.text_embedding, b.text_embedding)
                  for a, b in zip(out.records, ds.records))
    assert changed == len(ds)
    # originals untouched
    assert ds.records[0].text_embedding is not out.records[0].text_embedding


def test_substitute_scope_filters_by_split(tmp_path):
    ds = small_dataset(per_class=10, split=(0.5, 0.0, 0.5))
    noisy = synth_generate(2, 10, 8, 0.0, 1.0, 0.2, seed=11, name="noisy")
    for a, b in zip(noisy.records, ds.records):
        a.id = b.id
    manifest, _ = save_dataset(noisy, tmp_path / "noisy.json")
    _, n_test = substitute_noisy_text(ds, manifest, scope="test")
    _, n_train = substitute_noisy_text(ds, manifest, scope="train")
    _, n_both = substitute_noisy_text(ds, manifest, scope="both")
    assert n_test == sum(1 for r in ds.records if r.split_tag == "test")
    assert n_train == sum(1 for r in ds.records if r.split_tag == "train")
    assert n_both == len(ds)


def test_substitute_dim_mismatch(tmp_path):
    ds = small_dataset(per_class=4, d=8)
    noisy = synth_generate(2, 4, 16, 0.0, 1.0, 0.2, seed=12, name="noisy")
    manifest, _ = save_dataset(noisy, tmp_path / "noisy.json")
    with pytest.raises(DataError):
        substitute_noisy_text(ds, manifest)


def test_substitute_pure_noise_text_degrades_f1(tmp_path):
    # text replaced by class-uninformative vectors: fused logits lose signal
    ds = synth_generate(2, 80, 16, 1.0, 1.0, 0.6, seed=13, split=(0.7, 0.1, 0.2))
    config = small_config(epochs=3, hidden1=32, hidden2=16)
    params, _ = train(config, ds.split_subset("train").records,
                      ds.split_subset("val").records, seed=[0])
    noisy = synth_generate(2, 80, 16, 0.0, 1.0, 0.6, seed=14, name="noisy",
                           split=(0.7, 0.1, 0.2))
    for a, b in zip(noisy.records, ds.records):
        a.id = b.id
    manifest, _ = save_dataset(noisy, tmp_path / "noisy.json")
    substituted, _ = substitute_noisy_text(ds, manifest, scope="test")
    clean = evaluate(params, ds.split_subset("test").records, "binary")
    degraded = evaluate(params, substituted.split_subset("test").records, "binary")
    assert degraded < clean


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def sample_report():
    report = EvalReport(meta={"config_hash": "abc", "dataset_hash": "def",
                              "timestamp": "2025-01-01T00:00:00"})
    for seed in (0, 1):
        for level in (100, 0):
            report.add_row(ReportRow("binary", "sr", level, 0, seed, 0.5 + 0.1 * seed))
    return report


def test_report_round_trip(tmp_path):
    report = sample_report()
    path = write_jsonl(report, tmp_path / "r.jsonl")
    loaded = load_jsonl(path)
    assert loaded.rows == report.rows
    assert loaded.meta == report.meta
    assert loaded.aggregates() == report.aggregates()


def test_report_aggregates_recompute():
    report = sample_report()
    for agg in report.aggregates():
        vals = [r.f1 for r in report.rows
                if (r.variant, r.level) == (agg["variant"], agg["level"])]
        assert agg["mean"] == pytest.approx(sum(vals) / len(vals))
        assert agg["count"] == len(vals)


def test_report_identical_values_zero_std():
    report = EvalReport()
    for seed in range(5):
        report.add_row(ReportRow("binary", "sr", 100, 0, seed, 0.75))
    [agg] = report.aggregates()
    assert agg["mean"] == 0.75 and agg["std"] == 0.0


def test_report_table_has_level_columns(tmp_path):
    report = sample_report()
    paths = emit_report(report, tmp_path, basename="x")
    table = (tmp_path / "x.txt").read_text()
    assert "100" in table and "0" in table and "sr" in table
    assert (tmp_path / "x.jsonl").exists()


def test_emit_refuses_empty_report(tmp_path):
    from memerobust.errors import UsageError
    with pytest.raises(UsageError):
        emit_report(EvalReport(), tmp_path)
