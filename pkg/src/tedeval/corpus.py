"""Benchmark and caption-pair corpora: schema types and JSONL loaders.

Files are line-delimited JSON, one record per line, UTF-8. Canonical field
names are ``id, caption, positive, negatives, category`` for benchmark
instances and ``id, caption_a, caption_b, source`` for caption pairs. A
field-name mapping lets released files with different keys load unchanged.
"""

import json
from dataclasses import dataclass

from .errors import ArgumentError, ValidationError

CATEGORIES = frozenset({
    "quantity", "adjective", "coreference", "basic_event", "adverb",
    "spatial_relationship", "ocr", "temporal_relationship", "action",
})


@dataclass(frozen=True)
class Ted6kInstance:
    """One benchmark instance: caption, positive, hard negatives, category."""

    id: str
    caption: str
    positive: str
    negatives: tuple
    category: str

    def __post_init__(self):
        if not self.negatives:
            raise ValidationError("negatives must be non-empty", record_id=self.id)
        if self.category not in CATEGORIES:
            raise ValidationError(
                f"unknown category {self.category!r}", record_id=self.id)
        if self.positive in self.negatives:
            raise ValidationError(
                "positive statement also appears among negatives",
                record_id=self.id)


@dataclass(frozen=True)
class CaptionPair:
    """Two semantically similar captions of the same source image/video."""

    id: str
    caption_a: str
    caption_b: str
    source: str

    def __post_init__(self):
        if self.caption_a == self.caption_b:
            raise ValidationError(
                "caption_a equals caption_b", record_id=self.id)


def _read_records(path, field_map=None):
    field_map = field_map or {}
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    if not any(line.strip() for line in lines):
        raise ArgumentError(f"empty corpus file: {path}")
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"malformed JSON: {exc}", line=lineno) from exc
        if not isinstance(rec, dict):
            raise ValidationError("record is not an object", line=lineno)
        yield lineno, {field_map.get(k, k): v for k, v in rec.items()}


def _require(rec, lineno, *fields):
    for f in fields:
        if f not in rec:
            raise ValidationError(f"missing field {f!r}",
                                  record_id=rec.get("id"), line=lineno)


def load_ted6k(path, field_map=None):
    """Load benchmark instances; any schema violation aborts with the line."""
    instances = []
    seen = set()
    for lineno, rec in _read_records(path, field_map):
        _require(rec, lineno, "id", "caption", "positive", "negatives", "category")
        if rec["id"] in seen:
            raise ValidationError("duplicate id", record_id=rec["id"], line=lineno)
        seen.add(rec["id"])
        try:
            instances.append(Ted6kInstance(
                id=str(rec["id"]),
                caption=rec["caption"],
                positive=rec["positive"],
                negatives=tuple(rec["negatives"]),
                category=rec["category"],
            ))
        except ValidationError as exc:
            raise ValidationError(str(exc), line=lineno) from exc
    return instances


def load_pairs(path, field_map=None):
    """Load caption pairs; duplicate ids and identical captions are rejected."""
    pairs = []
    seen = set()
    for lineno, rec in _read_records(path, field_map):
        _require(rec, lineno, "id", "caption_a", "caption_b", "source")
        if rec["id"] in seen:
            raise ValidationError("duplicate id", record_id=rec["id"], line=lineno)
        seen.add(rec["id"])
        try:
            pairs.append(CaptionPair(
                id=str(rec["id"]),
                caption_a=rec["caption_a"],
                caption_b=rec["caption_b"],
                source=str(rec["source"]),
            ))
        except ValidationError as exc:
            raise ValidationError(str(exc), line=lineno) from exc
    return pairs


def save_jsonl(records, path):
    """Write dataclass records back out as canonical JSONL."""
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            if isinstance(rec, Ted6kInstance):
                obj = {"id": rec.id, "caption": rec.caption,
                       "positive": rec.positive,
                       "negatives": list(rec.negatives),
                       "category": rec.category}
            elif isinstance(rec, CaptionPair):
                obj = {"id": rec.id, "caption_a": rec.caption_a,
                       "caption_b": rec.caption_b, "source": rec.source}
            else:
                raise ArgumentError(f"unsupported record type: {type(rec)!r}")
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")
