"""Synthetic embeddings, binary label merging, and the availability masks.

The masking protocol keeps each class's text-present proportion equal to the
global availability level, and masks are nested: the records that keep text
at 10% are a subset of those that keep it at 30%, and so on. That makes the
degradation curves comparisons of the same samples, not resampling noise.
"""
from memerobust.data import (
    AVAILABILITY_LEVELS,
    apply_availability_mask,
    synth_generate,
    to_binary_labels,
)

ds = synth_generate(3, 120, 16, rho_text=1.0, rho_image=1.0, sigma=0.3, seed=0)
print(f"{len(ds)} records, dim {ds.dim}, classes {ds.scheme.class_names}")

binary = to_binary_labels(ds)
pos = sum(r.label for r in binary.records)
print(f"binary merge: {pos} harmful / {len(binary) - pos} not harmful")

print("\nlevel  kept  per-class")
previous = None
for level in AVAILABILITY_LEVELS:
    mask = apply_availability_mask(binary.records, level, seed=7)
    kept = {0: 0, 1: 0}
    for r in binary.records:
        kept[r.label] += mask.text_present[r.id]
    current = {rid for rid, ok in mask.text_present.items() if ok}
    nested = "" if previous is None else ("  nested" if current <= previous else "  BROKEN")
    print(f"{level:5d}  {mask.present_count():4d}  {kept}{nested}")
    previous = current
