"""Embedding dataset container, on-disk formats, folds, masking, synthetic data.

A dataset is a manifest (JSON: name, dimension, label scheme, per-record id /
label / split tag / byte offset) plus a binary embedding store:

    magic "MREB" | version u32 | N u32 | d u32 | N flag bytes |
    per record: [text vector if flag bit 0] image vector   (little-endian f32)

Datasets are immutable after load; every operation returns new values.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError, LoadError
from .layers import DTYPE

STORE_MAGIC = b"MREB"
STORE_VERSION = 1

AVAILABILITY_LEVELS = (100, 90, 70, 50, 30, 10, 0)

MULTICLASS_NAMES = ("not harmful", "somewhat harmful", "very harmful")
BINARY_NAMES = ("not harmful", "harmful")


@dataclass(frozen=True)
class LabelScheme:
    task: str  # "binary" | "multiclass"
    class_names: tuple[str, ...]

    @classmethod
    def multiclass(cls) -> "LabelScheme":
        return cls("multiclass", MULTICLASS_NAMES)

    @classmethod
    def binary(cls) -> "LabelScheme":
        return cls("binary", BINARY_NAMES)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass
class EmbeddingRecord:
    id: str
    image_embedding: np.ndarray
    text_embedding: Optional[np.ndarray]
    label: int
    split_tag: Optional[str] = None

    @property
    def has_text(self) -> bool:
        return self.text_embedding is not None


@dataclass
class EmbeddingDataset:
    name: str
    dim: int
    scheme: LabelScheme
    records: list[EmbeddingRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def subset(self, indices: Sequence[int], name_suffix: str = "") -> "EmbeddingDataset":
        recs = [self.records[i] for i in indices]
        return EmbeddingDataset(self.name + name_suffix, self.dim, self.scheme, recs)

    def split_subset(self, tag: str) -> "EmbeddingDataset":
        recs = [r for r in self.records if r.split_tag == tag]
        return EmbeddingDataset(f"{self.name}:{tag}", self.dim, self.scheme, recs)

    @property
    def has_split_tags(self) -> bool:
        return bool(self.records) and all(r.split_tag in ("train", "val", "test")
                                          for r in self.records)

    def fingerprint(self) -> str:
        """Content hash over ids, labels, split tags and embedding bytes."""
        h = hashlib.sha256()
        h.update(f"{self.dim}|{self.scheme.task}".encode())
        for r in self.records:
            h.update(f"{r.id}|{r.label}|{r.split_tag or ''}|".encode())
            h.update(r.text_embedding.tobytes() if r.has_text else b"-")
            h.update(r.image_embedding.tobytes())
        return h.hexdigest()


def _validated_vector(values, dim: int, record_id: str, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise LoadError(f"record {record_id!r}: {what} length {arr.shape} != dim {dim}")
    if not np.all(np.isfinite(arr)):
        raise LoadError(f"record {record_id!r}: non-finite values in {what}")
    return arr


# ---------------------------------------------------------------------------
# manifest + store io
# ---------------------------------------------------------------------------

def save_dataset(dataset: EmbeddingDataset, manifest_path,
                 store_path=None) -> tuple[Path, Path]:
    """Write the manifest JSON and the MREB embedding store."""
    manifest_path = Path(manifest_path)
    if store_path is None:
        store_path = manifest_path.with_suffix(".mreb")
    store_path = Path(store_path)

    header_size = 4 + 4 + 4 + 4 + len(dataset.records)
    offsets = []
    cursor = header_size
    with open(store_path, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<III", STORE_VERSION, len(dataset.records), dataset.dim))
        flags = bytes((1 if r.has_text else 0) for r in dataset.records)
        fh.write(flags)
        for r in dataset.records:
            offsets.append(cursor)
            if r.has_text:
                payload = np.ascontiguousarray(r.text_embedding, dtype="<f4").tobytes()
                fh.write(payload)
                cursor += len(payload)
            payload = np.ascontiguousarray(r.image_embedding, dtype="<f4").tobytes()
            fh.write(payload)
            cursor += len(payload)

    manifest = {
        "format": "memerobust-manifest",
        "version": 1,
        "name": dataset.name,
        "dim": dataset.dim,
        "task": dataset.scheme.task,
        "class_names": list(dataset.scheme.class_names),
        "store": store_path.name,
        "records": [
            {"id": r.id, "label": r.label,
             **({"split": r.split_tag} if r.split_tag else {}),
             "offset": off}
            for r, off in zip(dataset.records, offsets)
        ],
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest_path, store_path


def load_dataset(manifest_path) -> EmbeddingDataset:
    """Load and validate a dataset; raises LoadError naming the offending record."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot read manifest {manifest_path}: {exc}") from exc

    for key in ("name", "dim", "task", "class_names", "store", "records"):
        if key not in manifest:
            raise LoadError(f"manifest missing field {key!r}")
    dim = int(manifest["dim"])
    task = manifest["task"]
    if task == "binary":
        scheme = LabelScheme.binary()
    elif task == "multiclass":
        scheme = LabelScheme.multiclass()
    else:
        raise LoadError(f"unknown task {task!r}")
    if tuple(manifest["class_names"]) != scheme.class_names:
        raise LoadError(f"class names {manifest['class_names']} do not match task {task!r}")

    store_path = manifest_path.parent / manifest["store"]
    try:
        raw = store_path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read store {store_path}: {exc}") from exc
    if raw[:4] != STORE_MAGIC:
        raise LoadError(f"bad store magic {raw[:4]!r}")
    version, n, store_dim = struct.unpack_from("<III", raw, 4)
    if version != STORE_VERSION:
        raise LoadError(f"unsupported store version {version}")
    if store_dim != dim:
        raise LoadError(f"store dim {store_dim} != manifest dim {dim}")
    entries = manifest["records"]
    if n != len(entries):
        raise LoadError(f"store has {n} records, manifest lists {len(entries)}")
    flags_start = 16
    flags = raw[flags_start:flags_start + n]
    if len(flags) != n:
        raise LoadError("store truncated in flags region")

    records: list[EmbeddingRecord] = []
    seen_ids = set()
    cursor = flags_start + n
    vec_bytes = dim * 4
    for i, entry in enumerate(entries):
        rid = str(entry["id"])
        if rid in seen_ids:
            raise LoadError(f"duplicate record id {rid!r}")
        seen_ids.add(rid)
        label = int(entry["label"])
        if not 0 <= label < scheme.n_classes:
            raise LoadError(f"record {rid!r}: label {label} outside scheme {task!r}")
        split = entry.get("split")
        if split not in (None, "train", "val", "test"):
            raise LoadError(f"record {rid!r}: unknown split tag {split!r}")
        if int(entry["offset"]) != cursor:
            raise LoadError(
                f"record {rid!r}: offset {entry['offset']} != expected {cursor}; "
                "embedding lengths inconsistent with the declared dimension"
            )
        has_text = bool(flags[i] & 1)
        text = None
        if has_text:
            if cursor + vec_bytes > len(raw):
                raise LoadError(f"record {rid!r}: store truncated in text vector")
            text = np.frombuffer(raw, dtype="<f4", count=dim, offset=cursor).astype(DTYPE)
            text = _validated_vector(text, dim, rid, "text embedding")
            cursor += vec_bytes
        if cursor + vec_bytes > len(raw):
            raise LoadError(f"record {rid!r}: store truncated in image vector")
        image = np.frombuffer(raw, dtype="<f4", count=dim, offset=cursor).astype(DTYPE)
        image = _validated_vector(image, dim, rid, "image embedding")
        cursor += vec_bytes
        records.append(EmbeddingRecord(rid, image, text, label, split))
    if cursor != len(raw):
        raise LoadError(f"store has {len(raw) - cursor} trailing bytes")
    return EmbeddingDataset(str(manifest["name"]), dim, scheme, records)


# ---------------------------------------------------------------------------
# label mapping
# ---------------------------------------------------------------------------

def to_binary_labels(dataset: EmbeddingDataset) -> EmbeddingDataset:
    """Merge the two harmful grades into one positive class (0->0, 1/2->1)."""
    records = []
    for r in dataset.records:
        if r.label not in (0, 1, 2):
            raise DataError(f"record {r.id!r}: unknown label {r.label}")
        records.append(replace(r, label=0 if r.label == 0 else 1))
    return EmbeddingDataset(dataset.name, dataset.dim, LabelScheme.binary(), records)


# ---------------------------------------------------------------------------
# cross-validation folds
# ---------------------------------------------------------------------------

def kfold_split(dataset: EmbeddingDataset, k: int, seed: int):
    """Stratified k-fold partitions: list of (train_indices, val_indices).

    Per class, members are shuffled and dealt round-robin; the starting fold
    rotates between classes so overall fold sizes stay within one of each
    other. Validation folds are disjoint and cover the dataset exactly once.
    """
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if len(dataset) < k:
        raise ConfigError(f"dataset of {len(dataset)} records cannot make {k} folds")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, r in enumerate(dataset.records):
        by_class.setdefault(r.label, []).append(i)

    folds: list[list[int]] = [[] for _ in range(k)]
    offset = 0
    for label in sorted(by_class):
        members = by_class[label]
        if len(members) < k:
            warnings.warn(
                f"class {label} has {len(members)} records (< {k} folds); "
                "distributing best effort", stacklevel=2)
        order = rng.permutation(len(members))
        for j, m in enumerate(order):
            folds[(offset + j) % k].append(members[m])
        offset = (offset + len(members)) % k

    out = []
    for f in range(k):
        val = sorted(folds[f])
        train = sorted(i for g in range(k) if g != f for i in folds[g])
        out.append((train, val))
    return out


# ---------------------------------------------------------------------------
# availability masking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AvailabilityMask:
    level: int
    seed: int
    text_present: dict  # record id -> bool

    def present_count(self) -> int:
        return sum(1 for v in self.text_present.values() if v)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def apply_availability_mask(records: Sequence[EmbeddingRecord], level: int,
                            seed: int) -> AvailabilityMask:
    """Stratified text-availability mask at one level.

    Per class the keep-count is floor(level% * n_c) with largest-remainder
    top-up so the total hits round(level% * N); within each class the kept
    records are a prefix of one seeded random ranking, making masks at lower
    levels subsets of masks at higher levels under the same seed. Records
    stored without a text embedding are always absent.
    """
    if level not in AVAILABILITY_LEVELS:
        raise ConfigError(f"level {level} not in {AVAILABILITY_LEVELS}")
    by_class: dict[int, list[EmbeddingRecord]] = {}
    for r in records:
        by_class.setdefault(r.label, []).append(r)
    n_total = len(records)
    target = _round_half_up(level / 100.0 * n_total)

    quotas: dict[int, int] = {}
    remainders: list[tuple[float, int]] = []
    for label, members in sorted(by_class.items()):
        exact = level / 100.0 * len(members)
        quotas[label] = int(math.floor(exact))
        remainders.append((exact - quotas[label], label))
    shortfall = target - sum(quotas.values())
    capacity = {label: sum(1 for r in members if r.has_text)
                for label, members in by_class.items()}
    # largest remainder first; ties resolve to the lower class index
    for _, label in sorted(remainders, key=lambda t: (-t[0], t[1])):
        if shortfall <= 0:
            break
        if quotas[label] < capacity[label]:
            quotas[label] += 1
            shortfall -= 1

    text_present = {r.id: False for r in records}
    for label, members in sorted(by_class.items()):
        with_text = sorted((r.id for r in members if r.has_text))
        rng = np.random.default_rng([seed, label])
        ranking = [with_text[j] for j in rng.permutation(len(with_text))]
        for rid in ranking[:min(quotas[label], len(ranking))]:
            text_present[rid] = True
    return AvailabilityMask(level=level, seed=seed, text_present=text_present)


# ---------------------------------------------------------------------------
# synthetic generator
# ---------------------------------------------------------------------------

def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def synth_generate(n_classes: int, per_class: int, dim: int,
                   rho_text: float, rho_image: float, sigma: float, seed: int,
                   cone: float = 6.0,
                   split: Optional[tuple[float, float, float]] = None,
                   name: str = "synthetic") -> EmbeddingDataset:
    """Prototype-plus-noise embeddings with controllable per-modality signal.

    Each class gets one text and one image prototype on the unit sphere; a
    record's modality vector is cone * shared_direction + rho * prototype +
    sigma * gaussian noise, renormalized. rho = 0 makes that modality carry
    no class signal. The cone term gives every modality one shared offset
    direction, mimicking real encoders, whose embeddings cluster in a narrow
    cone far from the origin; it is what makes a zero-imputed vector a large
    off-manifold perturbation rather than a benign one (cone=0 disables it).
    Optional split fractions tag records train/val/test, stratified within
    each class.
    """
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if dim < 2:
        raise ConfigError(f"need dim >= 2, got {dim}")
    if sigma <= 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if cone < 0:
        raise ConfigError(f"cone must be >= 0, got {cone}")
    for rho_name, rho in (("rho_text", rho_text), ("rho_image", rho_image)):
        if not 0.0 <= rho <= 1.0:
            raise ConfigError(f"{rho_name} must be in [0, 1], got {rho}")
    if split is not None:
        if len(split) != 3 or any(s < 0 for s in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be 3 non-negatives summing to 1, got {split}")

    rng = np.random.default_rng(seed)
    cone_text = _unit(rng.standard_normal(dim))
    cone_image = _unit(rng.standard_normal(dim))
    protos = [(_unit(rng.standard_normal(dim)), _unit(rng.standard_normal(dim)))
              for _ in range(n_classes)]

    def draw(rho: float, proto: np.ndarray, shared: np.ndarray) -> np.ndarray:
        v = cone * shared + rho * proto + sigma * rng.standard_normal(dim)
        return _unit(v).astype(DTYPE)

    scheme = (LabelScheme.binary() if n_classes == 2 else LabelScheme.multiclass())
    if n_classes > 3:
        raise ConfigError("label schemes support at most 3 classes")
    records: list[EmbeddingRecord] = []
    for c in range(n_classes):
        proto_t, proto_v = protos[c]
        tags = [None] * per_class
        if split is not None:
            counts = _largest_remainder([per_class * s for s in split], per_class)
            tags = (["train"] * counts[0] + ["val"] * counts[1] + ["test"] * counts[2])
        for i in range(per_class):
            records.append(EmbeddingRecord(
                id=f"synth-{c:02d}-{i:05d}",
                image_embedding=draw(rho_image, proto_v, cone_image),
                text_embedding=draw(rho_text, proto_t, cone_text),
                label=c,
                split_tag=tags[i],
            ))
    return EmbeddingDataset(name, dim, scheme, records)


def _largest_remainder(exact: Sequence[float], total: int) -> list[int]:
    floors = [int(math.floor(x)) for x in exact]
    rema = sorted(((x - f, -i) for i, (x, f) in enumerate(zip(exact, floors))),
                  reverse=True)
    for _ in range(total - sum(floors)):
        _, neg_i = rema.pop(0)
        floors[-neg_i] += 1
    return floors
