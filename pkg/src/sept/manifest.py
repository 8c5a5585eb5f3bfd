"""Dataset manifests: schema-validated JSON, folds, and synthetic generation.

A manifest carries class names with base/new split tags, per-sample audio
embeddings with labels, and explicit train/test folds. Embeddings live
inline as JSON number arrays or in an optional binary sidecar (see
docs/file-formats.md for the byte layout).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError, SchemaError
from .numerics import SeededRng
from .prompting import ClassSet, NeighborSet, DEFAULT_TEMPLATE
from .schemas import validate_document

SIDECAR_MAGIC = b"SEPTF64\x00"

_DEFAULT_CLASS_NAMES = (
    "dog", "rain", "siren", "engine", "piano", "wind", "clock", "seagull",
    "thunder", "violin", "hammer", "bell", "owl", "train", "drum", "wave",
)

# varied lengths on purpose: prompts of different slot counts respond to the
# shared context with different weights, which keeps distance structure
# informative about context drift
_NEIGHBOR_PATTERNS = (
    "{} sound", "{} noise", "{} tone", "{} audio", "{} echo",
    "sound of {}", "noise of a {}", "a faint {} tone",
    "the distant sound of {}", "a soft {} noise nearby",
    "the steady hum of a {}", "a sharp burst of {} noise",
    "the gentle sound of a distant {}", "a muffled {} recording",
    "loud {}", "quiet {}",
)

_NOISE_TOKENS = ("hum", "blur", "fuzz", "murk", "haze")


@dataclass(frozen=True)
class Fold:
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass
class EmbeddingBatch:
    """Audio embeddings with labels and per-sample split tags."""

    vectors: np.ndarray
    labels: np.ndarray
    splits: tuple[str, ...]

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != self.labels.shape[0]:
            raise DataError("embedding batch vectors and labels must align")
        if len(self.splits) != self.labels.shape[0]:
            raise DataError("embedding batch splits must align with labels")

    def __len__(self):
        return self.labels.shape[0]


@dataclass
class DatasetManifest:
    name: str
    classes: ClassSet
    dim: int
    embeddings: np.ndarray
    labels: np.ndarray
    folds: tuple[Fold, ...]
    metadata: dict

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self._check()

    def _check(self):
        k = len(self.classes)
        s = self.labels.shape[0]
        if self.embeddings.shape != (s, self.dim):
            raise DataError(
                f"embeddings shape {self.embeddings.shape} does not match "
                f"{s} samples of dim {self.dim}")
        if not np.all(np.isfinite(self.embeddings)):
            raise DataError("manifest embeddings contain non-finite values")
        if s and (self.labels.min() < 0 or self.labels.max() >= k):
            raise DataError(f"labels must lie in [0, {k})")
        if not self.folds:
            raise DataError("manifest must declare at least one fold")
        for fi, fold in enumerate(self.folds):
            for group in (fold.train, fold.test):
                for idx in group:
                    if not 0 <= idx < s:
                        raise DataError(f"fold {fi} references sample {idx} of {s}")
            if set(fold.train) & set(fold.test):
                raise DataError(f"fold {fi} train and test sets overlap")

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    def batch(self, indices) -> EmbeddingBatch:
        idx = np.asarray(list(indices), dtype=np.int64)
        splits = tuple(self.classes.splits[label] for label in self.labels[idx])
        return EmbeddingBatch(vectors=self.embeddings[idx],
                              labels=self.labels[idx], splits=splits)

    # -- serialization --------------------------------------------------------

    def to_json(self, embeddings_file: str | None = None) -> dict:
        doc = {
            "name": self.name,
            "dim": self.dim,
            "classes": [{"name": n, "split": s}
                        for n, s in zip(self.classes.names, self.classes.splits)],
            "folds": [{"train": list(f.train), "test": list(f.test)}
                      for f in self.folds],
            "metadata": self.metadata,
        }
        if embeddings_file is None:
            doc["samples"] = [
                {"embedding": row.tolist(), "label": int(label)}
                for row, label in zip(self.embeddings, self.labels)]
        else:
            doc["embeddings_file"] = embeddings_file
            doc["samples"] = [{"label": int(label)} for label in self.labels]
        return doc

    def save(self, path, binary_sidecar: bool = False):
        path = Path(path)
        if binary_sidecar:
            sidecar = path.with_suffix(path.suffix + ".bin").name
            write_embedding_blob(path.parent / sidecar, self.embeddings)
            doc = self.to_json(embeddings_file=sidecar)
        else:
            doc = self.to_json()
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict, base_dir: Path | None = None) -> "DatasetManifest":
        validate_document(doc, "manifest.schema.json")
        names = [c["name"] for c in doc["classes"]]
        normalized = [n.strip().lower() for n in names]
        if len(set(normalized)) != len(normalized):
            dupes = sorted({n for n in normalized if normalized.count(n) > 1})
            raise SchemaError(f"/classes: duplicate class names {dupes}")
        classes = ClassSet(names=tuple(names),
                           splits=tuple(c["split"] for c in doc["classes"]))
        dim = int(doc["dim"])
        labels = np.asarray([s["label"] for s in doc["samples"]], dtype=np.int64)
        if "embeddings_file" in doc:
            if any("embedding" in s for s in doc["samples"]):
                raise SchemaError(
                    "/samples: inline embeddings not allowed with embeddings_file")
            if base_dir is None:
                raise DataError("cannot resolve embeddings_file without a base path")
            embeddings = read_embedding_blob(Path(base_dir) / doc["embeddings_file"])
        else:
            rows = []
            for i, s in enumerate(doc["samples"]):
                if "embedding" not in s:
                    raise SchemaError(f"/samples/{i}: missing embedding")
                if len(s["embedding"]) != dim:
                    raise SchemaError(
                        f"/samples/{i}/embedding: length {len(s['embedding'])} != dim {dim}")
                rows.append(s["embedding"])
            embeddings = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, dim))
        folds = tuple(Fold(train=tuple(f["train"]), test=tuple(f["test"]))
                      for f in doc["folds"])
        try:
            return cls(name=doc["name"], classes=classes, dim=dim,
                       embeddings=embeddings, labels=labels, folds=folds,
                       metadata=doc.get("metadata", {}))
        except DataError as exc:
            raise SchemaError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        return cls.from_json(doc, base_dir=path.parent)


def write_embedding_blob(path, embeddings: np.ndarray):
    """Binary sidecar: magic, u64 LE count, u64 LE dim, count*dim f64 LE."""
    arr = np.ascontiguousarray(embeddings, dtype="<f8")
    with open(path, "wb") as f:
        f.write(SIDECAR_MAGIC)
        f.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def read_embedding_blob(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(len(SIDECAR_MAGIC))
        if magic != SIDECAR_MAGIC:
            raise DataError(f"{path}: not an embedding blob (bad magic)")
        count, dim = struct.unpack("<QQ", f.read(16))
        data = f.read(count * dim * 8)
    if len(data) != count * dim * 8:
        raise DataError(f"{path}: truncated embedding blob")
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(count, dim)


# -- synthetic data -----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic embedding dataset around template centers."""

    k: int = 8
    samples_per_class: int = 24
    dim: int = 32
    sigma: float = 0.35
    seed: int = 0
    neighbor_noise: float = 0.0

    def __post_init__(self):
        if self.k < 2:
            raise DomainError("synthetic dataset needs at least 2 classes")
        if self.sigma < 0:
            raise DomainError("cluster sigma must be >= 0")
        if self.samples_per_class < 2:
            raise DomainError("need at least 2 samples per class")


def generate_synthetic(spec: SyntheticSpec, encoder, names=None,
                       template: str = DEFAULT_TEMPLATE,
                       name: str = "synthetic") -> DatasetManifest:
    """Deterministic synthetic manifest: class centers are the template
    embeddings of the class names; samples are renormalized noisy copies.

    With sigma 0 every sample equals its class center, so zero-shot
    classification under the same template is perfect by construction.
    """
    from .prompting import TemplateEmbedder

    if names is None:
        if spec.k > len(_DEFAULT_CLASS_NAMES):
            raise DomainError(
                f"default name pool has {len(_DEFAULT_CLASS_NAMES)} entries; "
                f"pass explicit names for k={spec.k}")
        names = _DEFAULT_CLASS_NAMES[: spec.k]
    if len(names) != spec.k:
        raise DataError(f"got {len(names)} names for k={spec.k}")
    classes = ClassSet.from_names(names)
    embedder = TemplateEmbedder(encoder)
    rng = SeededRng(spec.seed).spawn("synthetic-samples")

    rows, labels = [], []
    for i, class_name in enumerate(classes.names):
        center = embedder.template_embedding(template, class_name)
        noise = rng.normal(1.0, (spec.samples_per_class, spec.dim))
        for s in range(spec.samples_per_class):
            v = center + spec.sigma * noise[s]
            v = v / np.linalg.norm(v)
            rows.append(v)
            labels.append(i)

    spc = spec.samples_per_class
    test_count = max(1, spc // 3)
    train_idx, test_idx = [], []
    for i in range(spec.k):
        start = i * spc
        train_idx.extend(range(start, start + spc - test_count))
        test_idx.extend(range(start + spc - test_count, start + spc))

    metadata = {
        "generator": "synthetic",
        "sigma": spec.sigma,
        "seed": spec.seed,
        "encoder_seed": encoder.seed,
        "template": template,
        "rng": SeededRng.algorithm,
    }
    return DatasetManifest(
        name=name, classes=classes, dim=spec.dim,
        embeddings=np.asarray(rows), labels=np.asarray(labels),
        folds=(Fold(train=tuple(train_idx), test=tuple(test_idx)),),
        metadata=metadata)


def generate_synthetic_neighbors(classes: ClassSet, n: int, seed: int,
                                 noise: float = 0.0) -> NeighborSet:
    """Paraphrase-style neighbor strings for synthetic classes.

    Patterns always add a word to the class name, so neighbors never
    collide with any (single-word) class name. ``noise`` is the probability
    of appending a distractor token to a neighbor.
    """
    if n < 1:
        raise DomainError("neighbor count must be >= 1")
    rng = SeededRng(seed).spawn("synthetic-neighbors")
    normalized_names = {c.strip().lower() for c in classes.names}
    lists = []
    for class_name in classes.names:
        candidates = [p.format(class_name) for p in _NEIGHBOR_PATTERNS]
        candidates = [c for c in candidates if c.strip().lower() not in normalized_names]
        if n <= len(candidates):
            picks = rng.choice_without_replacement(np.arange(len(candidates)), n)
            chosen = [candidates[int(p)] for p in sorted(picks)]
        else:
            chosen = [candidates[j % len(candidates)] for j in range(n)]
        noisy = []
        for s in chosen:
            if noise > 0.0 and float(rng.uniform()) < noise:
                tok = _NOISE_TOKENS[int(rng.uniform() * len(_NOISE_TOKENS)) % len(_NOISE_TOKENS)]
                s = f"{s} {tok}"
            noisy.append(s)
        lists.append(noisy)
    return NeighborSet.build(lists, n=n)
