"""Source -> target taxonomy mapping by majority vote over model predictions."""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .classifier import Model, Prediction
from .core import Dataset
from .errors import EmptyDataset, GoldMissing, MissingSourceCategory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MappingEntry:
    target: str
    votes: int
    total: int
    margin: float
    runner_up: Optional[Tuple[str, int]] = None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "votes": self.votes,
            "total": self.total,
            "margin": self.margin,
            "runner_up": list(self.runner_up) if self.runner_up else None,
        }


@dataclass(frozen=True)
class TaxonomyMapping:
    entries: Dict[str, MappingEntry]
    unmapped: Tuple[str, ...] = ()
    unmapped_counts: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "entries": {k: v.to_dict() for k, v in sorted(self.entries.items())},
            "unmapped": list(self.unmapped),
            "unmapped_counts": dict(sorted(self.unmapped_counts.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class MapConfig:
    min_support: int = 5
    min_margin: float = 0.0


def tally(source_labels: Sequence[str], predictions: Sequence[Prediction],
          config: Optional[MapConfig] = None) -> TaxonomyMapping:
    """Aggregate predictions per source category.

    Winner: most votes; ties go to the higher mean confidence, then to the
    lexicographically smaller brick_code. Only aggregate statistics are
    used, so record order never matters.
    """
    config = config or MapConfig()
    votes: Dict[str, Dict[str, int]] = {}
    conf: Dict[str, Dict[str, float]] = {}
    for src, pred in zip(source_labels, predictions):
        v = votes.setdefault(src, {})
        c = conf.setdefault(src, {})
        v[pred.label] = v.get(pred.label, 0) + 1
        c[pred.label] = c.get(pred.label, 0.0) + pred.confidence

    entries: Dict[str, MappingEntry] = {}
    unmapped: List[str] = []
    unmapped_counts: Dict[str, int] = {}
    for src in sorted(votes):
        v = votes[src]
        total = sum(v.values())
        ranked = sorted(v, key=lambda lab: (-v[lab], -(conf[src][lab] / v[lab]), lab))
        target = ranked[0]
        margin = v[target] / total
        if total < config.min_support or margin < config.min_margin:
            unmapped.append(src)
            unmapped_counts[src] = total
            continue
        runner = (ranked[1], v[ranked[1]]) if len(ranked) > 1 else None
        entries[src] = MappingEntry(target, v[target], total, margin, runner)
    return TaxonomyMapping(entries, tuple(unmapped), unmapped_counts)


def map_taxonomies(model: Model, source_records: Dataset, config: Optional[MapConfig] = None) -> TaxonomyMapping:
    if len(source_records) == 0:
        raise EmptyDataset("no source records to map")
    for r in source_records:
        if not r.source_category or not r.source_category.strip():
            raise MissingSourceCategory(r.id)
    # sorted by id so that float summation of confidences is order-free
    records = sorted(source_records.records, key=lambda r: r.id)
    preds = model.predict_many([(r.name, r.description) for r in records])
    return tally([r.source_category for r in records], preds, config)


@dataclass(frozen=True)
class MappingAccuracy:
    correct: int
    total: int
    fraction: float
    unmapped: int = 0

    def to_dict(self) -> dict:
        return {"correct": self.correct, "total": self.total, "fraction": self.fraction, "unmapped": self.unmapped}


def mapping_accuracy(mapping: TaxonomyMapping, gold: Dict[str, str]) -> MappingAccuracy:
    """Share of mapped source categories whose target equals the gold target."""
    for src in mapping.entries:
        if src not in gold:
            raise GoldMissing(src)
    total = len(mapping.entries)
    correct = sum(1 for src, e in mapping.entries.items() if gold[src] == e.target)
    if total == 0:
        log.warning("mapping has no entries; accuracy reported as 0")
        return MappingAccuracy(0, 0, 0.0, len(mapping.unmapped))
    return MappingAccuracy(correct, total, correct / total, len(mapping.unmapped))
