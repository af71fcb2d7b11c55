"""Transfer scenarios (language, shop, both) and weighted-F1 scoring."""

import csv
import io
import json
import logging
import math
from fractions import Fraction
from dataclasses import asdict, dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .classifier import TrainConfig, train
from .core import Dataset, ProductRecord, Taxonomy, normalize_language
from .errors import EmptyInput, EmptySelection, InvalidScenario, LengthMismatch

log = logging.getLogger(__name__)

DEFAULT_HOLDOUT = 0.2


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int


def _f1(tp: int, fp: int, fn: int) -> Fraction:
    # 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); both are 0 when TP is 0
    return Fraction(2 * tp, 2 * tp + fp + fn) if tp else Fraction(0)


def _counts(golds: Sequence[str], preds: Sequence[str]):
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} gold labels vs {len(preds)} predictions")
    if not golds:
        raise EmptyInput("no labels to score")
    tp: Dict[str, int] = {}
    fp: Dict[str, int] = {}
    fn: Dict[str, int] = {}
    for g, p in zip(golds, preds):
        if g == p:
            tp[g] = tp.get(g, 0) + 1
        else:
            fp[p] = fp.get(p, 0) + 1
            fn[g] = fn.get(g, 0) + 1
    labels = sorted(set(golds) | set(preds))
    return [(label, tp.get(label, 0), fp.get(label, 0), fn.get(label, 0)) for label in labels]


def weighted_f1(golds: Sequence[str], preds: Sequence[str]) -> Tuple[float, Dict[str, ClassScore]]:
    """Support-weighted mean of per-class F1, plus the per-class table.

    Precision or recall with a zero denominator counts as 0. Labels that
    occur only in ``preds`` are listed with support 0 and add nothing.
    The sum is exact (rational) and rounded to float once.
    """
    per_class = {}
    total = Fraction(0)
    for label, t, f_p, f_n in _counts(golds, preds):
        p = t / (t + f_p) if t + f_p else 0.0
        r = t / (t + f_n) if t + f_n else 0.0
        f1 = _f1(t, f_p, f_n)
        per_class[label] = ClassScore(p, r, float(f1), t + f_n)
        total += (t + f_n) * f1
    return float(total / len(golds)), per_class


@dataclass(frozen=True)
class RecordFilter:
    shops: FrozenSet[str] = frozenset()
    languages: FrozenSet[str] = frozenset()

    def matches(self, r: ProductRecord) -> bool:
        return (not self.shops or r.shop in self.shops) and (not self.languages or r.language in self.languages)

    def to_dict(self) -> dict:
        return {"shops": sorted(self.shops), "languages": sorted(self.languages)}

    @classmethod
    def from_dict(cls, obj: Optional[dict]) -> "RecordFilter":
        obj = obj or {}
        shops = obj.get("shops", [])
        langs = obj.get("languages", [])
        if isinstance(shops, str):
            shops = [shops]
        if isinstance(langs, str):
            langs = [langs]
        return cls(frozenset(shops), frozenset(normalize_language(l) for l in langs))


@dataclass(frozen=True)
class ScenarioSpec:
    """One train/test regime.

    ``model`` and ``group`` are optional display fields for the report
    table (row label and row group); they default to ``name``.
    """
    name: str
    train_filter: RecordFilter
    test_filter: RecordFilter
    holdout_fraction: float = DEFAULT_HOLDOUT
    model: str = ""
    group: str = ""

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise InvalidScenario(f"{self.name}: holdout_fraction must be in (0, 1)")

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "train_filter": self.train_filter.to_dict(),
            "test_filter": self.test_filter.to_dict(),
            "holdout_fraction": self.holdout_fraction,
        }
        if self.model:
            out["model"] = self.model
        if self.group:
            out["group"] = self.group
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioSpec":
        try:
            return cls(
                name=obj["name"],
                train_filter=RecordFilter.from_dict(obj.get("train_filter")),
                test_filter=RecordFilter.from_dict(obj.get("test_filter")),
                holdout_fraction=float(obj.get("holdout_fraction", DEFAULT_HOLDOUT)),
                model=obj.get("model", ""),
                group=obj.get("group", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidScenario(f"bad scenario object: {exc}") from None


def load_scenarios(text: str) -> List[ScenarioSpec]:
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise InvalidScenario(f"scenario file is not JSON: {exc}") from None
    if not isinstance(data, list):
        raise InvalidScenario("scenario file must hold a JSON array")
    return [ScenarioSpec.from_dict(o) for o in data]


@dataclass(frozen=True)
class Split:
    train: Dataset
    test: Dataset
    uncovered: int = 0

    def __iter__(self):
        return iter((self.train, self.test))


def _check_filter(dataset: Dataset, f: RecordFilter, side: str) -> None:
    shops = {r.shop for r in dataset.records}
    langs = {r.language for r in dataset.records}
    missing = sorted(f.shops - shops) + sorted(f.languages - langs)
    if missing:
        raise InvalidScenario(f"{side} filter names values absent from the dataset: {missing}")


def _allocate(counts: Dict[str, int], fraction: float) -> Dict[str, int]:
    # Largest-remainder allocation hitting round(fraction * total) exactly.
    total = sum(counts.values())
    target = math.floor(fraction * total + 0.5)
    quotas = {label: fraction * n for label, n in counts.items()}
    alloc = {label: math.floor(q) for label, q in quotas.items()}
    rest = target - sum(alloc.values())
    order = sorted(counts, key=lambda label: (-(quotas[label] - alloc[label]), label))
    for label in order[:rest]:
        alloc[label] += 1
    return alloc


def split(dataset: Dataset, spec: ScenarioSpec, seed: int = 42) -> Split:
    """Partition labeled records into disjoint train/test sides.

    Records matched by both filters are divided by a label-stratified
    holdout; test records whose label never occurs in train are dropped
    and counted in ``uncovered``.
    """
    _check_filter(dataset, spec.train_filter, "train")
    _check_filter(dataset, spec.test_filter, "test")
    labeled = sorted((r for r in dataset.records if r.category is not None), key=lambda r: r.id)
    in_train = [spec.train_filter.matches(r) for r in labeled]
    in_test = [spec.test_filter.matches(r) for r in labeled]
    if not any(in_train):
        raise EmptySelection("train")
    if not any(in_test):
        raise EmptySelection("test")

    train_recs, test_recs, both = [], [], []
    for r, a, b in zip(labeled, in_train, in_test):
        if a and b:
            both.append(r)
        elif a:
            train_recs.append(r)
        elif b:
            test_recs.append(r)

    if both:
        rng = np.random.default_rng(seed)
        by_label: Dict[str, List[ProductRecord]] = {}
        for r in both:
            by_label.setdefault(r.category, []).append(r)
        alloc = _allocate({k: len(v) for k, v in by_label.items()}, spec.holdout_fraction)
        held = set()
        for label in sorted(by_label):
            members = by_label[label]
            for i in rng.permutation(len(members))[:alloc[label]]:
                held.add(members[i].id)
        for r in both:
            (test_recs if r.id in held else train_recs).append(r)

    train_labels = {r.category for r in train_recs}
    covered = [r for r in test_recs if r.category in train_labels]
    uncovered = len(test_recs) - len(covered)
    if uncovered:
        log.warning("%s: %d test record(s) have labels unseen in training and are excluded", spec.name, uncovered)

    order = {r.id: i for i, r in enumerate(dataset.records)}
    train_ds = dataset.subset(sorted(train_recs, key=lambda r: order[r.id]))
    test_ds = dataset.subset(sorted(covered, key=lambda r: order[r.id]))
    return Split(train_ds, test_ds, uncovered)


@dataclass(frozen=True)
class EvalReport:
    scenario: ScenarioSpec
    per_class: Dict[str, ClassScore]
    weighted_f1: float
    confusion: Dict[Tuple[str, str], int]
    train_size: int
    test_size: int
    uncovered_count: int = 0

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "weighted_f1": self.weighted_f1,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "uncovered_count": self.uncovered_count,
            "per_class": {k: asdict(v) for k, v in sorted(self.per_class.items())},
            "confusion": [[g, p, c] for (g, p), c in sorted(self.confusion.items())],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(
            scenario=ScenarioSpec.from_dict(obj["scenario"]),
            per_class={k: ClassScore(**v) for k, v in obj["per_class"].items()},
            weighted_f1=obj["weighted_f1"],
            confusion={(g, p): c for g, p, c in obj["confusion"]},
            train_size=obj["train_size"],
            test_size=obj["test_size"],
            uncovered_count=obj.get("uncovered_count", 0),
        )


def run_scenario(dataset: Dataset, taxonomy: Optional[Taxonomy], spec: ScenarioSpec,
                 config: Optional[TrainConfig] = None) -> EvalReport:
    config = config or TrainConfig()
    parts = split(dataset, spec, seed=config.seed)
    model = train(parts.train, taxonomy, config)
    golds = [r.category for r in parts.test]
    preds = [p.label for p in model.predict_many([(r.name, r.description) for r in parts.test])]
    score, per_class = weighted_f1(golds, preds)
    confusion: Dict[Tuple[str, str], int] = {}
    for g, p in zip(golds, preds):
        confusion[(g, p)] = confusion.get((g, p), 0) + 1
    log.info("%s: weighted F1 %.3f (train %d, test %d)", spec.name, score, len(parts.train), len(parts.test))
    return EvalReport(
        scenario=spec,
        per_class=per_class,
        weighted_f1=score,
        confusion=confusion,
        train_size=len(parts.train),
        test_size=len(parts.test),
        uncovered_count=parts.uncovered,
    )


def run_scenarios(dataset: Dataset, taxonomy: Optional[Taxonomy], specs: Iterable[ScenarioSpec],
                  config: Optional[TrainConfig] = None) -> List[EvalReport]:
    return [run_scenario(dataset, taxonomy, spec, config) for spec in specs]


# -- rendering ----------------------------------------------------------

def _column(spec: ScenarioSpec) -> Tuple[str, str]:
    f = spec.test_filter
    langs = "+".join(sorted(f.languages)).upper() or "ALL"
    shops = "+".join(sorted(f.shops)) or "all shops"
    return langs, shops


def table_cells(reports: Sequence[EvalReport]):
    """Row keys, column keys and the (row, column) -> weighted F1 cells."""
    rows: List[Tuple[str, str]] = []
    cols: List[Tuple[str, str]] = []
    cells: Dict[Tuple[Tuple[str, str], Tuple[str, str]], float] = {}
    for rep in reports:
        spec = rep.scenario
        row = (spec.group, spec.model or spec.name)
        col = _column(spec)
        if row not in rows:
            rows.append(row)
        if col not in cols:
            cols.append(col)
        cells[(row, col)] = rep.weighted_f1
    cols.sort()
    return rows, cols, cells


def render_markdown(reports: Sequence[EvalReport]) -> str:
    rows, cols, cells = table_cells(reports)
    header = ["Group", "Model"] + [f"{lang} {shop}" for lang, shop in cols]
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join(["---"] * 2 + ["---:"] * len(cols)) + "|"]
    last_group = None
    for row in rows:
        group, model = row
        shown = group if group != last_group else ""
        last_group = group
        values = [f"{cells[(row, c)]:.3f}" if (row, c) in cells else "-" for c in cols]
        lines.append("| " + " | ".join([shown, model] + values) + " |")
    return "\n".join(lines) + "\n"


def render_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "group", "model", "test_languages", "test_shops", "weighted_f1", "train_size", "test_size", "uncovered"])
    for rep in reports:
        s = rep.scenario
        lang, shop = _column(s)
        w.writerow([s.name, s.group, s.model or s.name, lang, shop, f"{rep.weighted_f1:.6f}",
                    rep.train_size, rep.test_size, rep.uncovered_count])
    return buf.getvalue()


def render_report(reports: Sequence[EvalReport], format: str = "json") -> str:
    if format == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2, ensure_ascii=False) + "\n"
    if format in ("markdown", "markdown-table"):
        return render_markdown(reports)
    if format == "csv":
        return render_csv(reports)
    raise ValueError(f"unknown report format {format!r}")
