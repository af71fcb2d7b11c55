"""Hashed character n-gram features + multinomial logistic regression.

Feature hashing
---------------
Each feature string is UTF-8 encoded and hashed with BLAKE2b (8-byte
digest, no key), the digest read as an unsigned little-endian 64-bit
integer and reduced modulo ``hash_dims``. Character n-grams are taken
inside whitespace-delimited tokens padded as ``^token$``; word unigrams
are hashed as ``"w:" + token`` so they never collide with n-grams of the
same spelling. Counts only, no signed hashing.

Training
--------
Mini-batch gradient descent on mean softmax cross-entropy plus
``0.5 * l2 * ||W||^2`` (biases unregularized) over raw feature counts.
Learning rate for epoch ``e`` (1-based) is ``learning_rate / sqrt(e)``.
"""

import hashlib
import json
import logging
import struct
import unicodedata
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .core import Dataset, Taxonomy
from .errors import (
    CorruptFile,
    EmptyDataset,
    SingleClassDataset,
    UnknownCategory,
    VersionMismatch,
)
from .util import write_atomic

log = logging.getLogger(__name__)

MAGIC = b"PXCM"
FORMAT_VERSION = 1
_WORD_PREFIX = "w:"


@dataclass(frozen=True)
class FeaturizerConfig:
    hash_dims: int = 2 ** 18
    char_ngram_min: int = 3
    char_ngram_max: int = 5
    include_word_unigrams: bool = True
    lowercase: bool = True
    name_weight: float = 2.0

    def __post_init__(self):
        d = self.hash_dims
        if d < 2 ** 10 or d & (d - 1):
            raise ValueError("hash_dims must be a power of two >= 1024")
        if not 1 <= self.char_ngram_min <= self.char_ngram_max <= 8:
            raise ValueError("need 1 <= char_ngram_min <= char_ngram_max <= 8")
        if not self.name_weight > 0:
            raise ValueError("name_weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.1
    l2: float = 1e-6
    seed: int = 42
    batch_size: int = 16
    featurizer: FeaturizerConfig = field(default_factory=FeaturizerConfig)


@lru_cache(maxsize=1 << 20)
def feature_hash(feature: str) -> int:
    """Stable unsigned 64-bit hash of a feature string."""
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def normalize(text: str, config: FeaturizerConfig) -> str:
    text = unicodedata.normalize("NFC", text)
    return text.lower() if config.lowercase else text


def feature_strings(text: str, config: FeaturizerConfig) -> List[str]:
    out = []
    lo, hi = config.char_ngram_min, config.char_ngram_max
    for token in normalize(text, config).split():
        if config.include_word_unigrams:
            out.append(_WORD_PREFIX + token)
        padded = "^" + token + "$"
        for n in range(lo, min(hi, len(padded)) + 1):
            out.extend(padded[i:i + n] for i in range(len(padded) - n + 1))
    return out


def featurize(name: str, description: str, config: FeaturizerConfig) -> Dict[int, float]:
    """Sparse hashed feature counts; name features count ``name_weight`` each."""
    dims = config.hash_dims
    vec: Dict[int, float] = {}
    for text, weight in ((name, config.name_weight), (description, 1.0)):
        for feat in feature_strings(text, config):
            idx = feature_hash(feat) % dims
            vec[idx] = vec.get(idx, 0.0) + weight
    return vec


def design_matrix(pairs: Sequence[Tuple[str, str]], config: FeaturizerConfig) -> sp.csr_matrix:
    """CSR matrix of hashed feature counts, one row per (name, description) pair."""
    indptr = [0]
    indices: List[int] = []
    data: List[float] = []
    for name, desc in pairs:
        vec = featurize(name, desc, config)
        keys = sorted(vec)
        indices.extend(keys)
        data.extend(vec[k] for k in keys)
        indptr.append(len(indices))
    return sp.csr_matrix(
        (np.array(data, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(pairs), config.hash_dims),
    )


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return np.maximum(p, np.finfo(np.float64).tiny)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: sp.csr_matrix, y: np.ndarray, l2: float):
    """Mean cross-entropy + L2 penalty and its exact gradient.

    ``W`` has shape (hash_dims, k); returns (loss, grad_W, grad_b).
    """
    n = X.shape[0]
    scores = np.asarray(X @ W) + b
    z = scores - scores.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -log_p[np.arange(n), y].mean() + 0.5 * l2 * float(np.sum(W * W))
    delta = np.exp(log_p)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grad_W = np.asarray(X.T @ delta) + l2 * W
    grad_b = delta.sum(axis=0)
    return loss, grad_W, grad_b


def _data_loss(W, b, X, y) -> float:
    scores = np.asarray(X @ W) + b
    z = scores - scores.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_p[np.arange(X.shape[0]), y].mean())


def _sgd_step(W, b, Xb: sp.csr_matrix, yb: np.ndarray, lr: float, l2: float) -> None:
    # Same update as W -= lr * grad_W from loss_and_grad, but the data term
    # only touches the columns present in the batch.
    n = Xb.shape[0]
    cols = np.unique(Xb.indices)
    Xs = Xb[:, cols]
    Wc = W[cols]
    scores = np.asarray(Xs @ Wc) + b
    p = softmax(scores)
    p[np.arange(n), yb] -= 1.0
    p /= n
    data_grad = np.asarray(Xs.T @ p)
    if l2:
        W *= 1.0 - lr * l2
    W[cols] -= lr * data_grad
    b -= lr * p.sum(axis=0)


def fit_arrays(X: sp.csr_matrix, y: np.ndarray, n_labels: int, config: TrainConfig):
    """Train on a prepared design matrix whose rows are already in canonical order.

    Returns (W of shape (hash_dims, k), biases, per-epoch training losses).
    """
    rng = np.random.default_rng(config.seed)
    W = np.zeros((X.shape[1], n_labels), dtype=np.float64)
    b = np.zeros(n_labels, dtype=np.float64)
    losses = []
    n = X.shape[0]
    bs = max(1, config.batch_size)
    for epoch in range(1, config.epochs + 1):
        lr = config.learning_rate / np.sqrt(epoch)
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _sgd_step(W, b, X[idx], y[idx], lr, config.l2)
        losses.append(_data_loss(W, b, X, y) + 0.5 * config.l2 * float(np.sum(W * W)))
    return W, b, losses


@dataclass(frozen=True)
class Prediction:
    label: str
    confidence: float
    distribution: Dict[str, float]

    def top(self, n: int = 5) -> List[Tuple[str, float]]:
        # stable sort keeps canonical label order among equal probabilities
        return sorted(self.distribution.items(), key=lambda kv: -kv[1])[:n]

    def to_dict(self) -> dict:
        return {"label": self.label, "confidence": self.confidence, "distribution": dict(self.distribution)}


@dataclass(frozen=True, eq=False)
class Model:
    featurizer: FeaturizerConfig
    labels: Tuple[str, ...]
    weights: np.ndarray  # (k, hash_dims) float32
    biases: np.ndarray  # (k,) float32
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.labels) != sorted(set(self.labels)):
            raise ValueError("labels must be distinct and sorted")
        if self.weights.shape != (len(self.labels), self.featurizer.hash_dims):
            raise ValueError("weights shape does not match labels x hash_dims")
        if self.biases.shape != (len(self.labels),):
            raise ValueError("biases shape does not match labels")

    def proba_matrix(self, X: sp.csr_matrix) -> np.ndarray:
        W = self.weights.astype(np.float64)
        scores = np.asarray(X @ W.T) + self.biases.astype(np.float64)
        return softmax(scores)

    def predict_proba(self, pairs: Sequence[Tuple[str, str]]) -> np.ndarray:
        return self.proba_matrix(design_matrix(pairs, self.featurizer))

    def predict_many(self, pairs: Sequence[Tuple[str, str]]) -> List[Prediction]:
        probs = self.predict_proba(pairs)
        return [self._prediction(row) for row in probs]

    def _prediction(self, row: np.ndarray) -> Prediction:
        best = int(np.argmax(row))  # first maximum = lexicographically smallest label
        dist = {label: float(p) for label, p in zip(self.labels, row)}
        return Prediction(label=self.labels[best], confidence=float(row[best]), distribution=dist)

    def fingerprint(self) -> str:
        return model_bytes(self)[-8:].hex()


def predict(model: Model, name: str, description: str = "") -> Prediction:
    return model._prediction(model.predict_proba([(name, description)])[0])


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.blake2b(digest_size=16)
    for r in sorted(dataset.records, key=lambda r: r.id):
        h.update(json.dumps([r.id, r.name, r.description, r.category], ensure_ascii=False).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def _canonical(dataset: Dataset):
    return sorted(dataset.records, key=lambda r: r.id)


def _check_trainable(dataset: Dataset, taxonomy: Optional[Taxonomy]) -> List[str]:
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    for r in dataset.records:
        if r.category is None or (taxonomy is not None and r.category not in taxonomy):
            raise UnknownCategory(r.id, r.category)
    labels = sorted({r.category for r in dataset.records})
    if len(labels) < 2:
        raise SingleClassDataset(f"need at least 2 distinct labels, got {labels}")
    return labels


def train(dataset: Dataset, taxonomy: Optional[Taxonomy] = None, config: Optional[TrainConfig] = None) -> Model:
    config = config or TrainConfig()
    labels = _check_trainable(dataset, taxonomy)
    records = _canonical(dataset)
    index = {label: i for i, label in enumerate(labels)}
    X = design_matrix([(r.name, r.description) for r in records], config.featurizer)
    y = np.array([index[r.category] for r in records], dtype=np.int64)
    W, b, losses = fit_arrays(X, y, len(labels), config)
    log.info("trained %d labels on %d records; final loss %.4f", len(labels), len(records), losses[-1] if losses else float("nan"))
    meta = {
        "seed": config.seed,
        "epochs": config.epochs,
        "learning_rate": config.learning_rate,
        "l2": config.l2,
        "batch_size": config.batch_size,
        "dataset_fingerprint": dataset_fingerprint(dataset),
        "train_size": len(records),
        "epoch_losses": losses,
    }
    return Model(
        featurizer=config.featurizer,
        labels=tuple(labels),
        weights=np.ascontiguousarray(W.T, dtype=np.float32),
        biases=b.astype(np.float32),
        train_meta=meta,
    )


# -- label cleaning -----------------------------------------------------

@dataclass(frozen=True)
class CleanConfig:
    folds: int = 5
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class FlaggedRecord:
    id: str
    given_label: str
    suspected_label: str
    probability: float


@dataclass(frozen=True)
class CleanReport:
    flagged: Tuple[FlaggedRecord, ...]
    kept_count: int
    flagged_count: int
    thresholds: Dict[str, float] = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "kept_count": self.kept_count,
            "flagged_count": self.flagged_count,
            "thresholds": self.thresholds,
            "flagged": [asdict(f) for f in self.flagged],
            "warnings": list(self.warnings),
        }


def stratified_folds(labels: Sequence[str], folds: int, seed: int) -> np.ndarray:
    """Fold index per position; each label's members are shuffled then dealt round-robin."""
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    by_label: Dict[str, List[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    offset = 0
    for label in sorted(by_label):
        members = np.array(by_label[label])
        members = members[rng.permutation(len(members))]
        assignment[members] = (offset + np.arange(len(members))) % folds
        offset += len(members)
    return assignment


def out_of_fold_proba(X: sp.csr_matrix, y: np.ndarray, n_labels: int, fold_of: np.ndarray,
                      folds: int, config: TrainConfig) -> np.ndarray:
    probs = np.zeros((X.shape[0], n_labels))
    for f in range(folds):
        test = np.flatnonzero(fold_of == f)
        if len(test) == 0:
            continue
        train_idx = np.flatnonzero(fold_of != f)
        W, b, _ = fit_arrays(X[train_idx], y[train_idx], n_labels, config)
        probs[test] = softmax(np.asarray(X[test] @ W) + b)
    return probs


def clean_labels(dataset: Dataset, taxonomy: Optional[Taxonomy] = None,
                 config: Optional[CleanConfig] = None) -> Tuple[Dataset, CleanReport]:
    """Flag likely label errors with out-of-fold predicted probabilities.

    Per-class threshold t_j is the mean out-of-fold probability of class j
    over records labeled j. A record is flagged when its out-of-fold argmax
    differs from its label and some other class k reaches t_k. This is a
    simplified confident-learning rule; it does not estimate the full
    joint noise distribution.
    """
    config = config or CleanConfig()
    if len(dataset) == 0:
        raise EmptyDataset("cannot clean an empty dataset")
    for r in dataset.records:
        if r.category is None or (taxonomy is not None and r.category not in taxonomy):
            raise UnknownCategory(r.id, r.category)

    warnings: List[str] = []
    labels = sorted({r.category for r in dataset.records})
    if len(labels) < 2:
        msg = "fewer than 2 labels; nothing can be flagged"
        log.warning(msg)
        report = CleanReport((), len(dataset), 0, warnings=(msg,))
        return dataset, report

    counts = {label: 0 for label in labels}
    for r in dataset.records:
        counts[r.category] += 1
    too_small = {label for label, c in counts.items() if c < config.folds}
    for label in sorted(too_small):
        msg = f"label {label!r} has {counts[label]} record(s) < {config.folds} folds; its records are never flagged"
        log.warning(msg)
        warnings.append(msg)

    records = _canonical(dataset)
    index = {label: i for i, label in enumerate(labels)}
    X = design_matrix([(r.name, r.description) for r in records], config.train.featurizer)
    y = np.array([index[r.category] for r in records], dtype=np.int64)
    fold_of = stratified_folds([r.category for r in records], config.folds, config.train.seed)
    probs = out_of_fold_proba(X, y, len(labels), fold_of, config.folds, config.train)

    thresholds = np.array([probs[y == j, j].mean() for j in range(len(labels))])
    flagged_ids = {}
    for i, r in enumerate(records):
        if r.category in too_small:
            continue
        row = probs[i]
        top = int(np.argmax(row))
        if top == y[i]:
            continue
        others = np.arange(len(labels)) != y[i]
        if np.any(row[others] >= thresholds[others]):
            flagged_ids[r.id] = FlaggedRecord(r.id, r.category, labels[top], float(row[top]))

    kept = dataset.subset(r for r in dataset.records if r.id not in flagged_ids)
    flagged = tuple(flagged_ids[r.id] for r in dataset.records if r.id in flagged_ids)
    report = CleanReport(
        flagged=flagged,
        kept_count=len(kept),
        flagged_count=len(flagged),
        thresholds={label: float(t) for label, t in zip(labels, thresholds)},
        warnings=tuple(warnings),
    )
    return kept, report


# -- persistence --------------------------------------------------------

def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def model_bytes(model: Model) -> bytes:
    """Serialize: magic, u16 version, u32-length metadata JSON, f32 rows, 8-byte checksum."""
    meta = {
        "labels": list(model.labels),
        "biases": [float(v) for v in model.biases],
        "featurizer": asdict(model.featurizer),
        "train_meta": model.train_meta,
    }
    meta_raw = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    body = b"".join([
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack("<I", len(meta_raw)),
        meta_raw,
        np.ascontiguousarray(model.weights, dtype="<f4").tobytes(),
    ])
    return body + _checksum(body)


def model_from_bytes(data: bytes) -> Model:
    if len(data) < 4 + 2 + 4 + 8 or data[:4] != MAGIC:
        raise CorruptFile("not a model file (bad magic or too short)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {FORMAT_VERSION}")
    body, checksum = data[:-8], data[-8:]
    if _checksum(body) != checksum:
        raise CorruptFile("checksum mismatch")
    (meta_len,) = struct.unpack_from("<I", data, 6)
    meta_end = 10 + meta_len
    try:
        meta = json.loads(data[10:meta_end].decode("utf-8"))
        featurizer = FeaturizerConfig(**meta["featurizer"])
        labels = tuple(meta["labels"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"bad metadata block: {exc}") from None
    expected = len(labels) * featurizer.hash_dims * 4
    if len(body) - meta_end != expected:
        raise CorruptFile("weight block has the wrong size")
    weights = np.frombuffer(body, dtype="<f4", offset=meta_end).reshape(len(labels), featurizer.hash_dims)
    return Model(
        featurizer=featurizer,
        labels=labels,
        weights=weights.astype(np.float32),
        biases=np.array(meta["biases"], dtype=np.float32),
        train_meta=meta.get("train_meta", {}),
    )


def save_model(model: Model, path) -> None:
    write_atomic(path, model_bytes(model))


def load_model(path) -> Model:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
