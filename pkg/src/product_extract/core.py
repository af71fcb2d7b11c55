"""Domain types, taxonomy CSV loading and JSONL dataset ingestion."""

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

from .errors import (
    DuplicateBrickCode,
    DuplicateId,
    MalformedLine,
    MalformedRow,
    MissingFile,
    UnknownCategory,
)

log = logging.getLogger(__name__)

TAXONOMY_HEADER = ["segment", "family", "class", "brick", "brick_code"]
RECORD_KEYS = ("id", "name", "description", "shop", "language", "category", "source_category")
_REQUIRED_KEYS = ("id", "name", "description", "shop", "language")


def normalize_language(tag: str) -> str:
    """Reduce a BCP-47-ish tag to its lowercase primary subtag ("de-AT" -> "de")."""
    return tag.strip().replace("_", "-").split("-", 1)[0].lower()


@dataclass(frozen=True)
class GpcCategory:
    segment: str
    family: str
    class_name: str
    brick: str
    brick_code: str


@dataclass(frozen=True)
class Taxonomy:
    name: str
    categories: Dict[str, GpcCategory]

    def __post_init__(self):
        if not self.categories:
            raise MalformedRow(0, "taxonomy has no categories")

    def __contains__(self, brick_code) -> bool:
        return brick_code in self.categories

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self) -> Iterator[GpcCategory]:
        return iter(self.categories.values())

    @property
    def codes(self) -> List[str]:
        return sorted(self.categories)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TAXONOMY_HEADER)
        for c in self.categories.values():
            writer.writerow([c.segment, c.family, c.class_name, c.brick, c.brick_code])
        return buf.getvalue()


def taxonomy_from_categories(name: str, categories: Iterable[GpcCategory]) -> Taxonomy:
    by_code: Dict[str, GpcCategory] = {}
    for cat in categories:
        if cat.brick_code in by_code:
            raise DuplicateBrickCode(cat.brick_code)
        by_code[cat.brick_code] = cat
    return Taxonomy(name=name, categories=by_code)


def parse_taxonomy(text: str, name: str = "taxonomy") -> Taxonomy:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedRow(1, "missing header") from None
    if [h.strip() for h in header] != TAXONOMY_HEADER:
        raise MalformedRow(1, f"expected header {','.join(TAXONOMY_HEADER)}")

    cats = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(TAXONOMY_HEADER):
            raise MalformedRow(line, f"expected 5 fields, got {len(row)}")
        values = [cell.strip() for cell in row]
        if not all(values):
            raise MalformedRow(line, "empty field")
        cats.append(GpcCategory(*values))
    if not cats:
        raise MalformedRow(reader.line_num, "taxonomy has no data rows")
    return taxonomy_from_categories(name, cats)


def load_taxonomy(path) -> Taxonomy:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, encoding="utf-8", newline="") as f:
        text = f.read()
    return parse_taxonomy(text, name=os.path.splitext(os.path.basename(path))[0])


def default_taxonomy() -> Taxonomy:
    """The bundled GPC-style taxonomy shipped as package data."""
    text = resources.files("product_extract").joinpath("data/taxonomy.csv").read_text("utf-8")
    return parse_taxonomy(text, name="gpc-sample")


@dataclass(frozen=True)
class ProductRecord:
    id: str
    name: str
    description: str
    shop: str
    language: str
    category: Optional[str] = None
    source_category: Optional[str] = None
    extras: Tuple[Tuple[str, object], ...] = ()

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "shop": self.shop,
            "language": self.language,
        }
        if self.category is not None:
            out["category"] = self.category
        if self.source_category is not None:
            out["source_category"] = self.source_category
        for k, v in self.extras:
            out[k] = v
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ProductRecord":
        missing = [k for k in _REQUIRED_KEYS if k not in obj]
        if missing:
            raise ValueError(f"missing keys: {', '.join(missing)}")
        for k in RECORD_KEYS:
            v = obj.get(k)
            if v is not None and not isinstance(v, str):
                raise ValueError(f"{k} must be a string")
        if not obj["name"].strip():
            raise ValueError("empty name")
        if not obj["id"]:
            raise ValueError("empty id")
        extras = tuple((k, v) for k, v in obj.items() if k not in RECORD_KEYS)
        return cls(
            id=obj["id"],
            name=obj["name"],
            description=obj["description"],
            shop=obj["shop"],
            language=normalize_language(obj["language"]),
            category=obj.get("category"),
            source_category=obj.get("source_category"),
            extras=extras,
        )


@dataclass(frozen=True)
class Dataset:
    records: Tuple[ProductRecord, ...]
    provenance: str = ""
    dropped: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[ProductRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def labels(self) -> List[str]:
        return sorted({r.category for r in self.records if r.category is not None})

    def subset(self, records: Iterable[ProductRecord], provenance: Optional[str] = None) -> "Dataset":
        return Dataset(tuple(records), provenance=self.provenance if provenance is None else provenance)

    def to_jsonl(self) -> str:
        return "".join(record_to_json(r) + "\n" for r in self.records)


def record_to_json(record: ProductRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False)


def make_dataset(records: Iterable[ProductRecord], provenance: str = "") -> Dataset:
    records = tuple(records)
    seen = set()
    for r in records:
        if r.id in seen:
            raise DuplicateId(r.id)
        seen.add(r.id)
    return Dataset(records, provenance=provenance)


def parse_dataset(lines: Iterable[str], taxonomy: Optional[Taxonomy] = None,
                  strict: bool = True, provenance: str = "") -> Dataset:
    """Parse JSONL lines into a Dataset.

    With a taxonomy, records whose ``category`` is not in it raise
    UnknownCategory (strict) or are dropped and counted (lenient).
    Blank lines are ignored.
    """
    records: List[ProductRecord] = []
    seen = set()
    dropped = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not a JSON object")
            rec = ProductRecord.from_dict(obj)
        except ValueError as exc:
            raise MalformedLine(lineno, str(exc)) from None
        if rec.id in seen:
            raise DuplicateId(rec.id)
        seen.add(rec.id)
        if taxonomy is not None and rec.category is not None and rec.category not in taxonomy:
            if strict:
                raise UnknownCategory(rec.id, rec.category)
            dropped += 1
            continue
        records.append(rec)
    if dropped:
        log.warning("dropped %d record(s) with unknown categories from %s", dropped, provenance or "<input>")
    return Dataset(tuple(records), provenance=provenance, dropped=dropped)


def load_dataset(path, taxonomy: Optional[Taxonomy] = None, strict: bool = True) -> Dataset:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, encoding="utf-8") as f:
        return parse_dataset(f, taxonomy, strict=strict, provenance=path)
