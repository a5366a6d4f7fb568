"""Loading, validating and writing question/image/summary records."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    CategoryMismatch,
    ConfigError,
    DuplicateId,
    EmptyDataset,
    ImageMissing,
    MissingField,
    ParseError,
    ValidationError,
)
from .taxonomy import CATEGORIES, DisorderTaxonomy, canonical_name, default_taxonomy

FORMATS = ("jsonl", "csv")

_CSV_COLUMNS = {
    "question": "question",
    "summary": "summary",
    "relative image path": "image_ref",
    "image_ref": "image_ref",
    "id": "id",
    "disorder": "disorder",
    "category": "category",
}


@dataclass(frozen=True)
class MmqsRecord:
    id: str
    question: str
    image_ref: str
    gold_summary: str
    disorder: str | None = None
    category: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "image_ref": self.image_ref,
            "summary": self.gold_summary,
            "disorder": self.disorder,
            "category": self.category,
        }


@dataclass(frozen=True)
class DatasetStats:
    record_count: int
    median_question_words: int
    median_summary_words: int
    per_category_counts: dict

    def to_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "median_question_words": self.median_question_words,
            "median_summary_words": self.median_summary_words,
            "per_category_counts": dict(self.per_category_counts),
        }


def _opt(value):
    if value is None:
        return None
    if not isinstance(value, str):
        value = str(value)
    value = value.strip()
    return value or None


def _record_from_fields(fields: dict, location: str, taxonomy: DisorderTaxonomy) -> MmqsRecord:
    for name in ("id", "question", "image_ref", "summary"):
        value = fields.get(name)
        if value is None or (isinstance(value, str) and not value.strip()):
            raise MissingField(name, fields.get("id") or location)
        if not isinstance(value, str):
            raise ParseError(f"field {name!r} must be a string", fields.get("id") or location)
    rid = fields["id"].strip()
    disorder = _opt(fields.get("disorder"))
    category = _opt(fields.get("category"))
    if disorder is not None:
        disorder = canonical_name(disorder)
    if category is not None:
        category = category.upper()
        if category not in CATEGORIES:
            raise CategoryMismatch(f"unknown category {category!r}", rid)
    if disorder is not None and category is not None:
        label = taxonomy.get(disorder)
        if label is None or label.category != category:
            raise CategoryMismatch(f"disorder {disorder!r} is not in category {category}", rid)
    return MmqsRecord(
        id=rid,
        question=fields["question"],
        image_ref=fields["image_ref"].strip(),
        gold_summary=fields["summary"],
        disorder=disorder,
        category=category,
    )


def _iter_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            loc = f"line {lineno}"
            try:
                obj = json.loads(line)
            except ValueError as exc:
                yield loc, ParseError(f"invalid JSON: {exc.msg}", loc)
                continue
            if not isinstance(obj, dict):
                yield loc, ParseError("expected a JSON object", loc)
                continue
            yield loc, obj


def _iter_csv(path: Path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            yield "row 1", ParseError(str(exc), "row 1")
            return
        keys = [_CSV_COLUMNS.get(h.strip().lower()) for h in header]
        ordinal = 0
        while True:
            try:
                row = next(reader)
            except StopIteration:
                return
            except csv.Error as exc:
                ordinal += 1
                loc = f"row {ordinal}"
                yield loc, ParseError(str(exc), loc)
                continue
            if not any(cell.strip() for cell in row):
                continue
            ordinal += 1
            loc = f"row {ordinal}"
            if len(row) > len(header):
                yield loc, ParseError(f"expected {len(header)} columns, got {len(row)}", loc)
                continue
            fields = {k: v for k, v in zip(keys, row) if k is not None}
            fields.setdefault("id", f"row{ordinal}")
            if not fields["id"].strip():
                fields["id"] = f"row{ordinal}"
            yield loc, fields


def scan_dataset(path, format="jsonl", strict=False, taxonomy=None, image_root=None) -> list:
    """Parse a dataset, returning one entry per input record in file order.

    Each entry is either an ``MmqsRecord`` or the ``ValidationError`` that
    record raised. A missing file or unknown format raises immediately.
    """
    path = Path(path)
    if format not in FORMATS:
        raise ConfigError(f"unknown dataset format {format!r}")
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    taxonomy = taxonomy or default_taxonomy()
    root = Path(image_root) if image_root else path.parent
    source = _iter_jsonl(path) if format == "jsonl" else _iter_csv(path)

    entries, seen = [], set()
    for loc, item in source:
        if isinstance(item, ValidationError):
            entries.append(item)
            continue
        try:
            rec = _record_from_fields(item, loc, taxonomy)
            if rec.id in seen:
                raise DuplicateId(f"duplicate id {rec.id!r} ({loc})", rec.id)
            if strict and not (root / rec.image_ref).is_file():
                raise ImageMissing(f"image not found: {root / rec.image_ref}", rec.id)
        except ValidationError as exc:
            entries.append(exc)
            continue
        seen.add(rec.id)
        entries.append(rec)
    return entries


def read_dataset(path, format="jsonl", strict=False, taxonomy=None, image_root=None):
    """Like ``scan_dataset`` but split into ``(records, errors)``."""
    entries = scan_dataset(path, format, strict, taxonomy, image_root)
    return ([e for e in entries if isinstance(e, MmqsRecord)],
            [e for e in entries if isinstance(e, ValidationError)])


def load_dataset(path, format="jsonl", strict=False, taxonomy=None, image_root=None) -> list[MmqsRecord]:
    """Load a dataset; the first invalid record raises its ``ValidationError``."""
    records, errors = read_dataset(path, format, strict, taxonomy, image_root)
    if errors:
        raise errors[0]
    return records


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), ensure_ascii=False) + "\n")


def _lower_median(values):
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def compute_stats(records) -> DatasetStats:
    records = list(records)
    if not records:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    cats = Counter(r.category for r in records if r.category)
    return DatasetStats(
        record_count=len(records),
        median_question_words=_lower_median(len(r.question.split()) for r in records),
        median_summary_words=_lower_median(len(r.gold_summary.split()) for r in records),
        per_category_counts={c: cats[c] for c in CATEGORIES if c in cats},
    )
