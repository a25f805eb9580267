"""Corpus listing parsing and the export pipeline.

The output follows the toolkit's published file formats: a JSON manifest
(name, dim, task, class names, store filename, per-record id/label/split/
offset) and an "MREB" binary store (version, N, d, one flags byte per
record with bit 0 marking text presence, then per record the text vector
when present followed by the image vector, little-endian float32).
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import get_encoder

log = logging.getLogger("clipexport")

STORE_MAGIC = b"MREB"
STORE_VERSION = 1

CLASS_NAMES = {
    "binary": ["not harmful", "harmful"],
    "multiclass": ["not harmful", "somewhat harmful", "very harmful"],
}


class ListingError(ValueError):
    """The corpus listing is malformed."""


@dataclass
class CorpusEntry:
    id: str
    image_path: Path
    text: Optional[str]
    label: int
    split_tag: Optional[str] = None

    @property
    def has_text(self) -> bool:
        return self.text is not None and self.text.strip() != ""


def read_listing(path) -> tuple[str, list[CorpusEntry]]:
    """Parse a listing file: {"task": ..., "entries": [...]}; paths are
    resolved relative to the listing's directory."""
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ListingError(f"cannot read listing {path}: {exc}") from exc
    task = obj.get("task")
    if task not in CLASS_NAMES:
        raise ListingError(f"task must be one of {sorted(CLASS_NAMES)}, got {task!r}")
    n_classes = len(CLASS_NAMES[task])
    entries = []
    seen = set()
    for raw in obj.get("entries", []):
        rid = str(raw["id"])
        if rid in seen:
            raise ListingError(f"duplicate entry id {rid!r}")
        seen.add(rid)
        label = int(raw["label"])
        if not 0 <= label < n_classes:
            raise ListingError(f"entry {rid!r}: label {label} outside task {task!r}")
        split = raw.get("split")
        if split not in (None, "train", "val", "test"):
            raise ListingError(f"entry {rid!r}: unknown split tag {split!r}")
        entries.append(CorpusEntry(
            id=rid,
            image_path=path.parent / raw["image_path"],
            text=raw.get("text"),
            label=label,
            split_tag=split,
        ))
    if not entries:
        raise ListingError("listing has no entries")
    return task, entries


def _load_image(entry: CorpusEntry) -> Optional[Image.Image]:
    try:
        with Image.open(entry.image_path) as img:
            img.load()
            return img.convert("RGB")
    except (OSError, UnidentifiedImageError) as exc:
        log.warning("skipping %s: cannot decode %s (%s)", entry.id,
                    entry.image_path, exc)
        return None


def export(listing_path, encoder_name: str, out_manifest, out_store,
           device: Optional[str] = None, batch_size: int = 32,
           dataset_name: Optional[str] = None) -> dict:
    """Encode every decodable entry and write the manifest + store.

    Entries whose image cannot be decoded are skipped and reported; entries
    with missing or empty text get the text-absent flag. Returns a summary
    dict (records, dim, per-class counts, text-absent count, skipped ids).
    """
    task, entries = read_listing(listing_path)
    encoder = get_encoder(encoder_name, device)

    kept: list[CorpusEntry] = []
    images: list[Image.Image] = []
    skipped: list[str] = []
    for entry in entries:
        img = _load_image(entry)
        if img is None:
            skipped.append(entry.id)
            continue
        kept.append(entry)
        images.append(img)
    if not kept:
        raise ListingError("no decodable images in the listing")

    image_vecs = np.concatenate(
        [encoder.encode_images(images[i:i + batch_size])
         for i in range(0, len(images), batch_size)])
    with_text = [i for i, e in enumerate(kept) if e.has_text]
    text_vecs = np.zeros((len(kept), encoder.dim), dtype=np.float32)
    if with_text:
        encoded = np.concatenate(
            [encoder.encode_texts([kept[j].text for j in with_text[i:i + batch_size]])
             for i in range(0, len(with_text), batch_size)])
        text_vecs[with_text] = encoded
        if encoded.shape[1] != image_vecs.shape[1]:
            raise ListingError(
                f"encoder produced text dim {encoded.shape[1]} != "
                f"image dim {image_vecs.shape[1]}")
    dim = int(image_vecs.shape[1])

    out_manifest = Path(out_manifest)
    out_store = Path(out_store)
    header_size = 4 + 4 + 4 + 4 + len(kept)
    offsets = []
    cursor = header_size
    with open(out_store, "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<III", STORE_VERSION, len(kept), dim))
        fh.write(bytes((1 if e.has_text else 0) for e in kept))
        for i, entry in enumerate(kept):
            offsets.append(cursor)
            if entry.has_text:
                payload = np.ascontiguousarray(text_vecs[i], dtype="<f4").tobytes()
                fh.write(payload)
                cursor += len(payload)
            payload = np.ascontiguousarray(image_vecs[i], dtype="<f4").tobytes()
            fh.write(payload)
            cursor += len(payload)

    manifest = {
        "format": "memerobust-manifest",
        "version": 1,
        "name": dataset_name or Path(listing_path).stem,
        "dim": dim,
        "task": task,
        "class_names": CLASS_NAMES[task],
        "store": out_store.name,
        "encoder": encoder.name,
        "records": [
            {"id": e.id, "label": e.label,
             **({"split": e.split_tag} if e.split_tag else {}),
             "offset": off}
            for e, off in zip(kept, offsets)
        ],
    }
    with open(out_manifest, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")

    per_class: dict[int, int] = {}
    for e in kept:
        per_class[e.label] = per_class.get(e.label, 0) + 1
    return {
        "records": len(kept),
        "dim": dim,
        "encoder": encoder.name,
        "per_class": per_class,
        "text_absent": sum(1 for e in kept if not e.has_text),
        "skipped": skipped,
    }
