"""Dataset container, file formats, folds, masking and the synthetic generator."""
import json

import numpy as np
import pytest

from memerobust.data import (
    AVAILABILITY_LEVELS,
    EmbeddingDataset,
    EmbeddingRecord,
    LabelScheme,
    apply_availability_mask,
    kfold_split,
    load_dataset,
    save_dataset,
    synth_generate,
    to_binary_labels,
)
from memerobust.errors import ConfigError, DataError, LoadError


def make_record(rid, label, d=4, with_text=True, split=None, seed=0):
    rng = np.random.default_rng([seed, hash(rid) % (2 ** 31)])
    return EmbeddingRecord(
        id=rid,
        image_embedding=rng.normal(size=d).astype(np.float32),
        text_embedding=rng.normal(size=d).astype(np.float32) if with_text else None,
        label=label,
        split_tag=split,
    )


def make_dataset(labels, d=4, text_flags=None, name="test"):
    text_flags = text_flags or [True] * len(labels)
    records = [make_record(f"r{i:03d}", lab, d, with_text=flag, seed=i)
               for i, (lab, flag) in enumerate(zip(labels, text_flags))]
    scheme = LabelScheme.multiclass() if max(labels) > 1 else LabelScheme.binary()
    return EmbeddingDataset(name, d, scheme, records)


# ---------------------------------------------------------------------------
# store round-trip and validation
# ---------------------------------------------------------------------------

def test_roundtrip_field_for_field(tmp_path):
    ds = make_dataset([0, 1, 2, 1], text_flags=[True, False, True, True])
    ds.records[0].split_tag = "train"
    ds.records[1].split_tag = "test"
    manifest, _ = save_dataset(ds, tmp_path / "ds.json")
    loaded = load_dataset(manifest)
    assert loaded.name == ds.name and loaded.dim == ds.dim
    assert loaded.scheme == ds.scheme
    assert len(loaded) == len(ds)
    for a, b in zip(ds.records, loaded.records):
        assert a.id == b.id and a.label == b.label and a.split_tag == b.split_tag
        assert np.array_equal(a.image_embedding, b.image_embedding)
        if a.has_text:
            assert np.array_equal(a.text_embedding, b.text_embedding)
        else:
            assert b.text_embedding is None


def test_two_record_manifest(tmp_path):
    ds = make_dataset([0, 1])
    manifest, _ = save_dataset(ds, tmp_path / "two.json")
    loaded = load_dataset(manifest)
    assert [r.id for r in loaded.records] == ["r000", "r001"]


def test_load_rejects_bad_offset_naming_record(tmp_path):
    ds = make_dataset([0, 1, 1])
    manifest_path, _ = save_dataset(ds, tmp_path / "ds.json")
    manifest = json.loads(manifest_path.read_text())
    manifest["records"][1]["offset"] -= 4  # implies a text vector shorter than d
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(LoadError, match="r001"):
        load_dataset(manifest_path)


def test_load_rejects_duplicate_ids(tmp_path):
    ds = make_dataset([0, 1])
    manifest_path, _ = save_dataset(ds, tmp_path / "ds.json")
    manifest = json.loads(manifest_path.read_text())
    manifest["records"][1]["id"] = manifest["records"][0]["id"]
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(LoadError, match="duplicate"):
        load_dataset(manifest_path)


def test_load_rejects_non_finite(tmp_path):
    ds = make_dataset([0, 1])
    ds.records[1].image_embedding[2] = np.inf
    manifest_path, _ = save_dataset(ds, tmp_path / "ds.json")
    with pytest.raises(LoadError, match="r001"):
        load_dataset(manifest_path)


def test_load_rejects_truncated_store(tmp_path):
    ds = make_dataset([0, 1])
    manifest_path, store_path = save_dataset(ds, tmp_path / "ds.json")
    raw = store_path.read_bytes()
    store_path.write_bytes(raw[:-8])
    with pytest.raises(LoadError):
        load_dataset(manifest_path)


def test_load_rejects_label_outside_scheme(tmp_path):
    ds = make_dataset([0, 1])
    manifest_path, _ = save_dataset(ds, tmp_path / "ds.json")
    manifest = json.loads(manifest_path.read_text())
    manifest["records"][0]["label"] = 7
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(LoadError, match="label"):
        load_dataset(manifest_path)


def test_fingerprint_tracks_content():
    a = make_dataset([0, 1, 2])
    b = make_dataset([0, 1, 2])
    assert a.fingerprint() == b.fingerprint()
    b.records[0].image_embedding[0] += 1.0
    assert a.fingerprint() != b.fingerprint()


# ---------------------------------------------------------------------------
# binary label mapping
# ---------------------------------------------------------------------------

def test_binary_merge_rule():
    ds = make_dataset([0, 1, 2, 2])
    out = to_binary_labels(ds)
    assert [r.label for r in out.records] == [0, 1, 1, 1]
    assert out.scheme == LabelScheme.binary()
    assert [r.id for r in out.records] == [r.id for r in ds.records]


def test_binary_mapping_all_zero_unchanged():
    ds = make_dataset([0, 0, 0])
    assert [r.label for r in to_binary_labels(ds).records] == [0, 0, 0]


def test_binary_mapping_is_idempotent():
    ds = make_dataset([0, 1, 2, 1, 0])
    once = to_binary_labels(ds)
    twice = to_binary_labels(once)
    assert [r.label for r in once.records] == [r.label for r in twice.records]


def test_binary_counting_oracle():
    rng = np.random.default_rng(6)
    labels = rng.integers(0, 3, 60).tolist()
    out = to_binary_labels(make_dataset(labels))
    positives = sum(1 for r in out.records if r.label == 1)
    assert positives == labels.count(1) + labels.count(2)


def test_binary_rejects_unknown_label():
    ds = make_dataset([0, 1])
    ds.records[0].label = 5
    with pytest.raises(DataError):
        to_binary_labels(ds)


# ---------------------------------------------------------------------------
# k-fold
# ---------------------------------------------------------------------------

def test_kfold_exact_divisibility():
    ds = make_dataset([0] * 5 + [1] * 5)
    folds = kfold_split(ds, 5, seed=0)
    for _, val in folds:
        labels = [ds.records[i].label for i in val]
        assert sorted(labels) == [0, 1]


def test_kfold_deterministic():
    ds = make_dataset([0, 1] * 20)
    assert kfold_split(ds, 5, seed=3) == kfold_split(ds, 5, seed=3)
    assert kfold_split(ds, 5, seed=3) != kfold_split(ds, 5, seed=4)


def test_kfold_103_records_partition_arithmetic():
    ds = make_dataset([0] * 51 + [1] * 52)
    folds = kfold_split(ds, 5, seed=1)
    sizes = [len(val) for _, val in folds]
    assert sorted(set(sizes)) in ([20, 21], [20], [21])
    assert sum(sizes) == 103
    assert set(sizes) <= {20, 21}


def test_kfold_disjoint_and_exhaustive():
    ds = make_dataset(list(np.random.default_rng(7).integers(0, 3, 47)))
    folds = kfold_split(ds, 5, seed=2)
    seen = []
    for train, val in folds:
        assert not set(train) & set(val)
        seen.extend(val)
    assert sorted(seen) == list(range(47))


def test_kfold_per_class_balance():
    ds = make_dataset([0] * 23 + [1] * 9 + [2] * 17)
    folds = kfold_split(ds, 5, seed=5)
    for label in (0, 1, 2):
        counts = [sum(1 for i in val if ds.records[i].label == label)
                  for _, val in folds]
        assert max(counts) - min(counts) <= 1


def test_kfold_small_class_warns():
    ds = make_dataset([0] * 10 + [1] * 3)
    with pytest.warns(UserWarning, match="best effort"):
        kfold_split(ds, 5, seed=0)


def test_kfold_rejects_k_too_large():
    ds = make_dataset([0, 1, 0])
    with pytest.raises(ConfigError):
        kfold_split(ds, 4, seed=0)


# ---------------------------------------------------------------------------
# availability masking
# ---------------------------------------------------------------------------

def test_mask_degenerate_levels():
    ds = make_dataset([0] * 6 + [1] * 4)
    full = apply_availability_mask(ds.records, 100, seed=0)
    none = apply_availability_mask(ds.records, 0, seed=0)
    assert full.present_count() == 10
    assert none.present_count() == 0


def test_mask_exact_stratification():
    ds = make_dataset([0] * 10 + [1] * 10)
    mask = apply_availability_mask(ds.records, 50, seed=1)
    by_class = {0: 0, 1: 0}
    for r in ds.records:
        by_class[r.label] += mask.text_present[r.id]
    assert by_class == {0: 5, 1: 5}


def test_mask_proportions_within_one_record():
    ds = make_dataset(list(np.random.default_rng(8).integers(0, 3, 123)))
    n_c = {c: sum(1 for r in ds.records if r.label == c) for c in range(3)}
    for level in AVAILABILITY_LEVELS:
        mask = apply_availability_mask(ds.records, level, seed=2)
        assert mask.present_count() == round(level / 100 * len(ds))
        kept = {c: 0 for c in range(3)}
        for r in ds.records:
            kept[r.label] += mask.text_present[r.id]
        for c in range(3):
            assert abs(kept[c] / n_c[c] - level / 100) <= 1 / n_c[c] + 1e-12


def test_masks_nested_across_levels():
    ds = make_dataset(list(np.random.default_rng(9).integers(0, 3, 200)))
    previous = None
    for level in sorted(AVAILABILITY_LEVELS):  # 0 upward
        mask = apply_availability_mask(ds.records, level, seed=3)
        current = {rid for rid, ok in mask.text_present.items() if ok}
        if previous is not None:
            assert previous <= current
        previous = current


def test_mask_deterministic_and_seed_sensitive():
    ds = make_dataset([0] * 30 + [1] * 30)
    a = apply_availability_mask(ds.records, 50, seed=4)
    b = apply_availability_mask(ds.records, 50, seed=4)
    c = apply_availability_mask(ds.records, 50, seed=5)
    assert a.text_present == b.text_present
    assert a.text_present != c.text_present


def test_mask_never_marks_textless_records():
    ds = make_dataset([0] * 8, text_flags=[True, False, True, False] * 2)
    mask = apply_availability_mask(ds.records, 100, seed=0)
    for r in ds.records:
        assert mask.text_present[r.id] == r.has_text


def test_mask_rejects_unsupported_level():
    ds = make_dataset([0, 1])
    with pytest.raises(ConfigError):
        apply_availability_mask(ds.records, 42, seed=0)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def nearest_prototype_accuracy(ds, channel):
    """Centroids fitted on even records, scored on odd ones (held-out oracle)."""
    fit = ds.records[0::2]
    score = ds.records[1::2]
    protos = []
    for c in range(ds.scheme.n_classes):
        vecs = [getattr(r, channel) for r in fit if r.label == c]
        protos.append(np.mean(vecs, axis=0))
    hits = 0
    for r in score:
        sims = [float(getattr(r, channel) @ p) for p in protos]
        hits += int(np.argmax(sims)) == r.label
    return hits / len(score)


def test_synth_informative_image_channel():
    ds = synth_generate(2, 200, 16, rho_text=1.0, rho_image=1.0, sigma=0.05, seed=0)
    assert nearest_prototype_accuracy(ds, "image_embedding") >= 0.99


def test_synth_uninformative_text_channel():
    ds = synth_generate(2, 400, 16, rho_text=0.0, rho_image=1.0, sigma=0.05, seed=1)
    acc = nearest_prototype_accuracy(ds, "text_embedding")
    assert abs(acc - 0.5) <= 0.05


def test_synth_deterministic_bytes(tmp_path):
    a = synth_generate(2, 20, 8, 1.0, 1.0, 0.2, seed=7)
    b = synth_generate(2, 20, 8, 1.0, 1.0, 0.2, seed=7)
    pa, sa = save_dataset(a, tmp_path / "a.json")
    pb, sb = save_dataset(b, tmp_path / "b.json")
    assert sa.read_bytes() == sb.read_bytes()
    assert a.fingerprint() == b.fingerprint()


def test_synth_unit_norm_and_schema():
    ds = synth_generate(3, 10, 8, 0.5, 0.5, 0.3, seed=2)
    assert ds.scheme == LabelScheme.multiclass()
    for r in ds.records:
        assert abs(np.linalg.norm(r.image_embedding) - 1.0) < 1e-5
        assert abs(np.linalg.norm(r.text_embedding) - 1.0) < 1e-5


def test_synth_split_tags_stratified():
    ds = synth_generate(2, 100, 8, 1.0, 1.0, 0.2, seed=3, split=(0.7, 0.1, 0.2))
    for c in (0, 1):
        tags = [r.split_tag for r in ds.records if r.label == c]
        assert tags.count("train") == 70
        assert tags.count("val") == 10
        assert tags.count("test") == 20


def test_synth_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        synth_generate(1, 10, 8, 1.0, 1.0, 0.2, seed=0)
    with pytest.raises(ConfigError):
        synth_generate(2, 10, 1, 1.0, 1.0, 0.2, seed=0)
    with pytest.raises(ConfigError):
        synth_generate(2, 10, 8, 1.0, 1.0, 0.0, seed=0)
    with pytest.raises(ConfigError):
        synth_generate(2, 10, 8, 1.5, 1.0, 0.2, seed=0)
