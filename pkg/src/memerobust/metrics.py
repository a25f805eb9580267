"""Classification and text-similarity metrics.

All functions are pure; classification metrics run on plain ints/floats so
results are independent of any array library. Text metrics tokenize by
lowercased whitespace splitting, the one fixed tokenization of the toolkit.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .errors import UndefinedMetricError, UsageError


def _as_int_list(values, name: str) -> list[int]:
    out = [int(v) for v in values]
    return out


def confusion_counts(preds: Sequence[int], labels: Sequence[int],
                     n_classes: int) -> list[tuple[int, int, int]]:
    """Per-class (tp, fp, fn) counts."""
    preds = _as_int_list(preds, "preds")
    labels = _as_int_list(labels, "labels")
    if len(preds) != len(labels):
        raise UsageError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    counts = []
    for c in range(n_classes):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        counts.append((tp, fp, fn))
    return counts


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f1_binary(preds: Sequence[int], labels: Sequence[int],
              positive_class: int = 1) -> float:
    """F1 of the positive class; 0 by convention when precision+recall is 0."""
    preds = _as_int_list(preds, "preds")
    labels = _as_int_list(labels, "labels")
    if len(preds) != len(labels):
        raise UsageError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    if not preds:
        raise UsageError("f1_binary needs at least one sample")
    tp = sum(1 for p, y in zip(preds, labels) if p == positive_class and y == positive_class)
    fp = sum(1 for p, y in zip(preds, labels) if p == positive_class and y != positive_class)
    fn = sum(1 for p, y in zip(preds, labels) if p != positive_class and y == positive_class)
    return _f1_from_counts(tp, fp, fn)


def f1_macro(preds: Sequence[int], labels: Sequence[int], n_classes: int) -> float:
    """Unweighted mean of per-class F1 over all n_classes classes."""
    if len(preds) == 0:
        raise UsageError("f1_macro needs at least one sample")
    counts = confusion_counts(preds, labels, n_classes)
    return sum(_f1_from_counts(*c) for c in counts) / n_classes


# ---------------------------------------------------------------------------
# text metrics
# ---------------------------------------------------------------------------

def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class TextPair:
    reference: tuple[str, ...]
    hypothesis: tuple[str, ...]

    @classmethod
    def from_strings(cls, reference: str, hypothesis: str) -> "TextPair":
        return cls(tuple(tokenize(reference)), tuple(tokenize(hypothesis)))


def _tokens(value) -> list[str]:
    if isinstance(value, str):
        return tokenize(value)
    return list(value)


def edit_distance(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Word-level Levenshtein distance, unit costs, two-row DP."""
    ref, hyp = list(reference), list(hypothesis)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1,            # deletion
                         cur[j - 1] + 1,         # insertion
                         prev[j - 1] + (r != h))  # substitution / match
        prev = cur
    return prev[-1]


def wer(reference, hypothesis) -> float:
    """Word error rate of one pair: edit distance over reference length.

    Accepts raw strings (tokenized here) or pre-split token sequences.
    May exceed 1 for long hypotheses.
    """
    ref = _tokens(reference)
    hyp = _tokens(hypothesis)
    if not ref:
        raise UndefinedMetricError("WER is undefined for an empty reference")
    return edit_distance(ref, hyp) / len(ref)


def corpus_wer(references: Sequence, hypotheses: Sequence) -> float:
    """Corpus-level WER: total edits divided by total reference words."""
    if len(references) != len(hypotheses):
        raise UsageError("references and hypotheses must pair up")
    refs = [_tokens(r) for r in references]
    hyps = [_tokens(h) for h in hypotheses]
    total_words = sum(len(r) for r in refs)
    if total_words == 0:
        raise UndefinedMetricError("WER is undefined for an empty reference corpus")
    total_edits = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    return total_edits / total_words


_BLEU_EPS = 1e-9


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(references: Sequence, hypotheses: Sequence, max_order: int = 4) -> float:
    """Corpus BLEU with one reference per hypothesis.

    Geometric mean of modified n-gram precisions (orders 1..max_order),
    zero counts smoothed by an additive epsilon, times the brevity penalty
    exp(min(0, 1 - ref_len / hyp_len)).
    """
    if len(references) != len(hypotheses):
        raise UsageError("references and hypotheses must pair up")
    if not references:
        raise UsageError("bleu needs a non-empty corpus")
    refs = [_tokens(r) for r in references]
    hyps = [_tokens(h) for h in hypotheses]

    matched = [0] * max_order
    total = [0] * max_order
    ref_len = sum(len(r) for r in refs)
    hyp_len = sum(len(h) for h in hyps)
    for ref, hyp in zip(refs, hyps):
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matched[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total[n - 1] += max(len(hyp) - n + 1, 0)

    if hyp_len == 0:
        return 0.0
    log_precision = 0.0
    for n in range(max_order):
        num = matched[n] if matched[n] > 0 else _BLEU_EPS
        den = total[n] if total[n] > 0 else 1
        log_precision += math.log(num / den)
    geo_mean = math.exp(log_precision / max_order)
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return geo_mean * brevity
