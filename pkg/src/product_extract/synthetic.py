"""Deterministic multilingual, multi-shop synthetic product corpora.

Vocabulary model: every category owns a base set of word stems shared by
all shops, and every (category, shop) pair owns a disjoint set of
shop-specific stems. A content token is drawn from the base set with
probability ``vocab_overlap`` and from the shop set otherwise; a fixed
fraction of content tokens is borrowed from another category to keep
the task from being trivially separable.

Languages render stems: about half the stems are replaced by a
language-specific word, the rest are cognates that keep the stem. Every
rendered word carries a language suffix, so cognates share interior
character n-grams across languages but never a whole word. Each language
also has its own category-neutral filler words.

All random streams are keyed by (seed, purpose, names), so two corpora
generated with the same seed share base vocabulary even when their shop
or language lists differ.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from .core import Dataset, GpcCategory, ProductRecord, Taxonomy, default_taxonomy, taxonomy_from_categories
from .errors import InvalidSpec

_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"
BASE_VOCAB = 30
SHOP_VOCAB = 30
FILLER_VOCAB = 25
FILLER_RATE = 0.25
CONFUSION_RATE = 0.15
TRANSLATE_RATE = 0.5


@dataclass(frozen=True)
class CorpusSpec:
    categories: int = 6
    shops: Tuple[str, ...] = ("shopA", "shopB")
    languages: Tuple[str, ...] = ("de", "fr")
    records_per_cell: int = 100
    vocab_overlap: float = 0.7
    noise_rate: float = 0.0
    seed: int = 42

    def validate(self) -> None:
        if self.categories < 2:
            raise InvalidSpec("need at least 2 categories")
        if not self.shops or len(set(self.shops)) != len(self.shops):
            raise InvalidSpec("shops must be a non-empty list of distinct ids")
        if not self.languages or len(set(self.languages)) != len(self.languages):
            raise InvalidSpec("languages must be a non-empty list of distinct ids")
        if self.records_per_cell < 1:
            raise InvalidSpec("records_per_cell must be >= 1")
        if not 0.0 <= self.vocab_overlap <= 1.0:
            raise InvalidSpec("vocab_overlap must be in [0, 1]")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise InvalidSpec("noise_rate must be in [0, 1]")

    @property
    def size(self) -> int:
        return self.categories * len(self.shops) * len(self.languages) * self.records_per_cell


@dataclass(frozen=True)
class NoiseMask:
    """Per-record flip flags (dataset order) and the generative labels."""
    flipped: Tuple[bool, ...]
    true_labels: Tuple[str, ...]
    ids: Tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps({
            "flipped": [i for i, f in zip(self.ids, self.flipped) if f],
            "true_labels": dict(zip(self.ids, self.true_labels)),
        }, ensure_ascii=False, indent=2) + "\n"


class Corpus(NamedTuple):
    dataset: Dataset
    mask: NoiseMask
    taxonomy: Taxonomy


def _rng(seed: int, *keys) -> np.random.Generator:
    material = json.dumps([seed, *keys]).encode("utf-8")
    return np.random.default_rng(int.from_bytes(hashlib.blake2b(material, digest_size=8).digest(), "little"))


def _stem(rng: np.random.Generator) -> str:
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        parts.append(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))])
        if rng.random() < 0.4:
            parts.append(_CONSONANTS[rng.integers(len(_CONSONANTS))])
    return "".join(parts)


def _stems(rng: np.random.Generator, n: int, taken: set) -> List[str]:
    out = []
    while len(out) < n:
        s = _stem(rng)
        if s not in taken:
            taken.add(s)
            out.append(s)
    return out


class _Vocabulary:
    """Lazily built, collision-free stem sets keyed by category/shop/language."""

    def __init__(self, seed: int):
        self.seed = seed
        self._taken: set = set()
        self._cache: Dict[tuple, object] = {}

    def _get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def base(self, category: int) -> List[str]:
        return self._get(("base", category), lambda: _stems(_rng(self.seed, "base", category), BASE_VOCAB, self._taken))

    def shop(self, category: int, shop: str) -> List[str]:
        return self._get(("shop", category, shop),
                         lambda: _stems(_rng(self.seed, "shop", category, shop), SHOP_VOCAB, self._taken))

    def filler(self, language: str) -> List[str]:
        return self._get(("filler", language),
                         lambda: _stems(_rng(self.seed, "filler", language), FILLER_VOCAB, self._taken))

    def suffix(self, language: str) -> str:
        def build():
            rng = _rng(self.seed, "suffix", language)
            return _VOWELS[rng.integers(5)] + _CONSONANTS[rng.integers(15)] + _CONSONANTS[rng.integers(15)]
        return self._get(("suffix", language), build)

    def render(self, stem: str, language: str) -> str:
        key = ("word", stem, language)
        if key not in self._cache:
            rng = _rng(self.seed, "translate", language, stem)
            word = _stem(rng) if rng.random() < TRANSLATE_RATE else stem
            self._cache[key] = word + self.suffix(language)
        return self._cache[key]

    def prime(self, categories: int, shops: Sequence[str], languages: Sequence[str]) -> None:
        # Build in a fixed order so collision avoidance is order-independent
        # of which text happens to be generated first.
        for c in range(categories):
            self.base(c)
        for c in range(categories):
            for s in sorted(shops):
                self.shop(c, s)
        for lang in sorted(languages):
            self.filler(lang)
            self.suffix(lang)


def _text(rng, vocab: _Vocabulary, category: int, categories: int, shop: str, language: str,
          n_tokens: int, overlap: float) -> List[str]:
    filler = vocab.filler(language)
    tokens = []
    for _ in range(n_tokens):
        if rng.random() < FILLER_RATE:
            tokens.append(filler[rng.integers(len(filler))])
            continue
        topic = category
        if rng.random() < CONFUSION_RATE:
            topic = (category + 1 + int(rng.integers(categories - 1))) % categories
        if rng.random() < overlap:
            pool = vocab.base(topic)
        else:
            pool = vocab.shop(topic, shop)
        tokens.append(vocab.render(pool[rng.integers(len(pool))], language))
    return tokens


def synthetic_taxonomy(k: int) -> Taxonomy:
    """First ``k`` bricks of the bundled taxonomy, padded with synthetic bricks."""
    cats = list(default_taxonomy())[:k]
    for i in range(len(cats), k):
        cats.append(GpcCategory("Synthetic", "Synthetic", f"Class {i // 4}", f"Brick {i}", f"9{i:07d}"))
    return taxonomy_from_categories(f"synthetic-{k}", cats)


def _record(vocab, rng, c, k, shop, lang, overlap, rid, label, source=None) -> ProductRecord:
    name = _text(rng, vocab, c, k, shop, lang, int(rng.integers(2, 6)), overlap)
    desc = _text(rng, vocab, c, k, shop, lang, int(rng.integers(5, 31)), overlap)
    return ProductRecord(
        id=rid,
        name=" ".join(t.capitalize() for t in name),
        description=" ".join(desc) + ".",
        shop=shop,
        language=lang,
        category=label,
        source_category=source,
    )


def generate(spec: CorpusSpec) -> Corpus:
    spec.validate()
    taxonomy = synthetic_taxonomy(spec.categories)
    codes = [c.brick_code for c in taxonomy]
    vocab = _Vocabulary(spec.seed)
    vocab.prime(spec.categories, spec.shops, spec.languages)

    records = []
    for shop in spec.shops:
        for lang in spec.languages:
            for c in range(spec.categories):
                rng = _rng(spec.seed, "text", shop, lang, c)
                for i in range(spec.records_per_cell):
                    rid = f"{shop}-{lang}-{c:03d}-{i:05d}"
                    records.append(_record(vocab, rng, c, spec.categories, shop, lang, spec.vocab_overlap, rid, codes[c]))

    true_labels = [r.category for r in records]
    n_flip = math.floor(spec.noise_rate * len(records))
    flipped = [False] * len(records)
    if n_flip:
        rng = _rng(spec.seed, "noise")
        for i in sorted(rng.choice(len(records), size=n_flip, replace=False).tolist()):
            others = [code for code in codes if code != true_labels[i]]
            new = others[int(rng.integers(len(others)))]
            r = records[i]
            records[i] = ProductRecord(r.id, r.name, r.description, r.shop, r.language, new, r.source_category)
            flipped[i] = True

    dataset = Dataset(tuple(records), provenance=f"synthetic:seed={spec.seed}")
    mask = NoiseMask(tuple(flipped), tuple(true_labels), tuple(r.id for r in records))
    return Corpus(dataset, mask, taxonomy)


def generate_source_corpus(spec: CorpusSpec, source_categories: int = 46,
                           shop: str = "sourceshop", language: str = "de") -> Tuple[Dataset, Dict[str, str]]:
    """Records labeled in a foreign taxonomy whose categories rename/split the target ones.

    Every target category receives at least one source category; the rest
    are dealt out in a seeded order. Each source category gets
    ``records_per_cell`` records from ``shop``/``language``; ``category``
    is left unset. Returns the dataset and the gold source -> brick_code map.
    """
    spec.validate()
    if source_categories < spec.categories:
        raise InvalidSpec("need at least one source category per target category")
    taxonomy = synthetic_taxonomy(spec.categories)
    cats = list(taxonomy)
    vocab = _Vocabulary(spec.seed)
    vocab.prime(spec.categories, tuple(spec.shops) + (shop,), tuple(spec.languages) + (language,))

    rng = _rng(spec.seed, "source-assign", source_categories)
    targets = list(range(spec.categories)) + rng.integers(spec.categories, size=source_categories - spec.categories).tolist()
    targets = [targets[i] for i in rng.permutation(len(targets))]

    gold: Dict[str, str] = {}
    records = []
    variant = {}
    for j, c in enumerate(targets):
        variant[c] = variant.get(c, 0) + 1
        source = f"{cats[c].brick.lower()} #{variant[c]}"
        gold[source] = cats[c].brick_code
        text_rng = _rng(spec.seed, "source-text", shop, language, j)
        for i in range(spec.records_per_cell):
            rid = f"{shop}-{language}-s{j:03d}-{i:05d}"
            records.append(_record(vocab, text_rng, c, spec.categories, shop, language, spec.vocab_overlap, rid, None, source))
    return Dataset(tuple(records), provenance=f"synthetic-source:seed={spec.seed}"), gold
