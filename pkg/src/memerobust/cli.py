"""Command-line entry points: train, eval, sweep, ablate, synth, metrics, report."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics as text_metrics
from .data import kfold_split, load_dataset, save_dataset, synth_generate, to_binary_labels
from .harness import (
    ExperimentConfig,
    evaluate,
    evaluate_sweep,
    run_experiment,
    train,
)
from .model import FR, SR, load_checkpoint, save_checkpoint
from .report import EvalReport, ReportRow, emit_report, load_jsonl, write_curve, write_table


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="experiment config JSON (defaults match the training recipe)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's seed list with one seed")
    parser.add_argument("--out-dir", type=Path, default=Path("out"))
    parser.add_argument("--threads", type=int, default=1)


def _load_config(args) -> ExperimentConfig:
    if args.config is not None:
        config = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    return config


def _task_dataset(config: ExperimentConfig, manifest: Path):
    dataset = load_dataset(manifest)
    if config.task == "binary" and dataset.scheme.task == "multiclass":
        dataset = to_binary_labels(dataset)
    return dataset


def _infer_task(n_classes: int) -> str:
    return "binary" if n_classes == 2 else "multiclass"


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = _task_dataset(config, args.manifest)
    seed = config.seeds[0]
    if dataset.has_split_tags:
        train_recs = dataset.split_subset("train").records
        val_recs = dataset.split_subset("val").records
    else:
        train_idx, val_idx = kfold_split(dataset, max(config.folds, 2), seed)[0]
        train_recs = [dataset.records[i] for i in train_idx]
        val_recs = [dataset.records[i] for i in val_idx]
    params, history = train(config, train_recs, val_recs, seed=[seed, 0])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    out = args.out or (args.out_dir / "model.mrsr")
    save_checkpoint(out, params)
    print(json.dumps({
        "checkpoint": str(out),
        "steps": history.total_steps,
        "best_epoch": history.best_epoch,
        "val_f1": history.val_f1,
    }))
    return 0


def cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    task = _infer_task(params.n_classes)
    dataset = load_dataset(args.manifest)
    if task == "binary" and dataset.scheme.task == "multiclass":
        dataset = to_binary_labels(dataset)
    records = (dataset.split_subset("test").records
               if dataset.has_split_tags else dataset.records)
    if args.level == 100:
        f1 = evaluate(params, records, task)
    else:
        [(_, f1)] = evaluate_sweep(params, records, [args.level], args.mask_seed, task)
    print(json.dumps({"task": task, "variant": params.variant,
                      "level": args.level, "f1": f1}))
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    params, _ = load_checkpoint(args.checkpoint)
    task = _infer_task(params.n_classes)
    dataset = load_dataset(args.manifest)
    if task == "binary" and dataset.scheme.task == "multiclass":
        dataset = to_binary_labels(dataset)
    records = (dataset.split_subset("test").records
               if dataset.has_split_tags else dataset.records)
    levels = tuple(int(x) for x in args.levels.split(",")) if args.levels else config.levels
    sweep = evaluate_sweep(params, records, levels, args.mask_seed, task)
    report = EvalReport(meta={"config_hash": config.config_hash(),
                              "dataset_hash": dataset.fingerprint()})
    report.extend(ReportRow(task, params.variant, level, 0, config.seeds[0], f1)
                  for level, f1 in sweep)
    emit_report(report, args.out_dir, basename="sweep", curve=args.curve)
    print(json.dumps({"rows": [{"level": lv, "f1": f1} for lv, f1 in sweep]}))
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.manifest)
    merged = EvalReport()
    for variant in (SR, FR):
        report = run_experiment(replace(config, variant=variant), dataset,
                                threads=args.threads)
        merged.meta.update(report.meta)
        merged.extend(report.rows)
    paths = emit_report(merged, args.out_dir, basename="ablation", curve=args.curve)
    print(json.dumps({"written": [str(p) for p in paths],
                      "aggregates": merged.aggregates()}))
    return 0


def cmd_synth(args) -> int:
    split = None
    if args.split:
        split = tuple(float(x) for x in args.split.split(","))
    dataset = synth_generate(args.classes, args.per_class, args.dim,
                             args.rho_text, args.rho_image, args.sigma,
                             args.seed if args.seed is not None else 0,
                             cone=args.cone, split=split)
    manifest, store = save_dataset(dataset, args.out)
    print(json.dumps({"manifest": str(manifest), "store": str(store),
                      "records": len(dataset)}))
    return 0


def _read_lines(path: Path) -> list[str]:
    return Path(path).read_text().splitlines()


def cmd_metrics(args) -> int:
    refs = _read_lines(args.ref)
    hyps = _read_lines(args.hyp)
    if len(refs) != len(hyps):
        raise ValueError(f"line counts differ: {len(refs)} refs vs {len(hyps)} hyps")
    if args.metric == "wer":
        value = text_metrics.corpus_wer(refs, hyps)
    else:
        value = text_metrics.bleu(refs, hyps)
    print(json.dumps({"metric": args.metric, "value": value, "pairs": len(refs)}))
    return 0


def cmd_report(args) -> int:
    report = load_jsonl(args.input)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    written = [write_table(report, args.out_dir / "report.txt")]
    if args.curve:
        written.append(write_curve(report, args.out_dir / "report.png"))
    print(json.dumps({"written": [str(p) for p in written],
                      "aggregates": report.aggregates()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memerobust",
        description="Missing-text-robust multimodal meme classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and save a checkpoint")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="F1 of a checkpoint at one availability level")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--level", type=int, default=100)
    p.add_argument("--mask-seed", type=int, default=9041)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="availability sweep for a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--levels", type=str, default=None, help="comma-separated levels")
    p.add_argument("--mask-seed", type=int, default=9041)
    p.add_argument("--curve", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ablate", help="full experiment for both variants")
    _common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--curve", action="store_true")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic embedding dataset")
    _common(p)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--per-class", type=int, default=400)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--rho-text", type=float, default=1.0)
    p.add_argument("--rho-image", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--cone", type=float, default=6.0,
                   help="shared offset weight per modality (0 disables)")
    p.add_argument("--split", type=str, default=None,
                   help="train,val,test fractions, e.g. 0.7,0.1,0.2")
    p.add_argument("--out", type=Path, required=True, help="manifest path to write")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("metrics", help="text similarity metrics on line-aligned files")
    _common(p)
    p.add_argument("metric", choices=["wer", "bleu"])
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--hyp", type=Path, required=True)
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("report", help="render a structured report file")
    _common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--curve", action="store_true")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # machine-readable failure line, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
