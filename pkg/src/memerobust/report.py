"""Evaluation report container and emission (JSONL, text table, curve image)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, UsageError


@dataclass(frozen=True)
class ReportRow:
    task: str
    variant: str
    level: int
    fold: int
    seed: int
    f1: float


@dataclass
class EvalReport:
    """Append-only rows plus aggregates recomputed from them."""

    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def add_row(self, row: ReportRow) -> None:
        self.rows.append(row)

    def extend(self, rows) -> None:
        self.rows.extend(rows)

    def aggregates(self) -> list[dict]:
        """Mean and sample (n-1) standard deviation per (task, variant, level)."""
        groups: dict[tuple, list[float]] = {}
        order: list[tuple] = []
        for r in self.rows:
            key = (r.task, r.variant, r.level)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(r.f1)
        out = []
        for key in order:
            vals = groups[key]
            n = len(vals)
            mean = sum(vals) / n
            std = math.sqrt(sum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
            out.append({"task": key[0], "variant": key[1], "level": key[2],
                        "mean": mean, "std": std, "count": n})
        return out

    def mean_f1(self, variant: str, level: int) -> float:
        vals = [r.f1 for r in self.rows if r.variant == variant and r.level == level]
        if not vals:
            raise UsageError(f"no rows for variant={variant!r} level={level}")
        return sum(vals) / len(vals)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_jsonl(report: EvalReport, path) -> Path:
    """One meta line, one line per row, then the aggregates section.

    The timestamp lives in its own line so byte comparisons can drop it.
    """
    path = Path(path)
    lines = []
    meta = dict(report.meta)
    timestamp = meta.pop("timestamp", None)
    lines.append(_dump({"kind": "meta", **meta}))
    if timestamp is not None:
        lines.append(_dump({"kind": "timestamp", "timestamp": timestamp}))
    for r in report.rows:
        lines.append(_dump({"kind": "row", "task": r.task, "variant": r.variant,
                            "level": r.level, "fold": r.fold, "seed": r.seed,
                            "f1": r.f1}))
    for agg in report.aggregates():
        lines.append(_dump({"kind": "aggregate", **agg}))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_jsonl(path) -> EvalReport:
    report = EvalReport()
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj.pop("kind")
        if kind == "meta":
            report.meta.update(obj)
        elif kind == "timestamp":
            report.meta["timestamp"] = obj["timestamp"]
        elif kind == "row":
            report.add_row(ReportRow(obj["task"], obj["variant"], int(obj["level"]),
                                     int(obj["fold"]), int(obj["seed"]),
                                     float(obj["f1"])))
        elif kind == "aggregate":
            pass  # recomputed from rows
        else:
            raise UsageError(f"unknown report line kind {kind!r}")
    return report


def format_table(report: EvalReport) -> str:
    """Plain-text table, availability levels as columns, one row per variant."""
    if not report.rows:
        raise UsageError("empty report")
    levels = sorted({r.level for r in report.rows}, reverse=True)
    tasks = sorted({r.task for r in report.rows})
    out = []
    for task in tasks:
        out.append(f"task: {task} (F1, mean +/- std over folds x seeds)")
        header = ["variant"] + [str(lv) for lv in levels]
        widths = [9] + [15] * len(levels)
        out.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        aggs = {(a["variant"], a["level"]): a for a in report.aggregates()
                if a["task"] == task}
        variants = sorted({r.variant for r in report.rows if r.task == task})
        for variant in variants:
            cells = [variant.ljust(widths[0])]
            for lv, w in zip(levels, widths[1:]):
                a = aggs.get((variant, lv))
                cell = f"{a['mean']:.4f} +/- {a['std']:.4f}" if a else "-"
                cells.append(cell.ljust(w))
            out.append("  ".join(cells))
        out.append("")
    return "\n".join(out)


def write_table(report: EvalReport, path) -> Path:
    path = Path(path)
    path.write_text(format_table(report))
    return path


def write_curve(report: EvalReport, path) -> Path:
    """Availability-vs-F1 curve; needs matplotlib (optional extra)."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("curve output requires matplotlib") from exc
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for task in sorted({r.task for r in report.rows}):
        aggs = [a for a in report.aggregates() if a["task"] == task]
        for variant in sorted({a["variant"] for a in aggs}):
            pts = sorted(((a["level"], a["mean"], a["std"]) for a in aggs
                          if a["variant"] == variant), reverse=True)
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            es = [p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3,
                        label=f"{task}/{variant}")
    ax.set_xlabel("text availability (%)")
    ax.set_ylabel("F1")
    ax.invert_xaxis()
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_report(report: EvalReport, out_dir, basename: str = "report",
                formats=("jsonl", "txt"), curve: bool = False) -> list[Path]:
    """Write the report in the requested formats; returns the paths written."""
    if not report.rows:
        raise UsageError("refusing to emit an empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "jsonl" in formats:
        written.append(write_jsonl(report, out_dir / f"{basename}.jsonl"))
    if "txt" in formats:
        written.append(write_table(report, out_dir / f"{basename}.txt"))
    if curve:
        written.append(write_curve(report, out_dir / f"{basename}.png"))
    return written
