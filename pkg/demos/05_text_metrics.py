"""WER and BLEU for judging OCR transcript quality.

These are the metrics behind deciding whether extracted meme text is usable
at all: high word error rates are exactly why the missing-text scenario
matters in the first place.
"""
from memerobust.metrics import bleu, corpus_wer, wer

ground_truth = [
    "when you finally fix the bug at 3am",
    "nobody expects the spanish inquisition",
    "one does not simply walk into mordor",
]
ocr_output = [
    "when you tinally fix the bug at 3am",
    "nobody expects spanish inquisition",
    "one does not simplu walk in to mordor",
]

print("per-pair word error rate:")
for ref, hyp in zip(ground_truth, ocr_output):
    print(f"  {wer(ref, hyp):.3f}  {hyp!r}")

print(f"\ncorpus WER : {corpus_wer(ground_truth, ocr_output):.4f}")
print(f"corpus BLEU: {bleu(ground_truth, ocr_output):.4f}")

print("\nsingle substitution -> WER 1/3:", wer("a b c", "a x c"))
print("identical corpus -> BLEU 1.0 :", bleu(ground_truth, ground_truth))
