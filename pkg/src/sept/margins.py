"""Precomputed distance margins between classes and neighbor strings.

For every (class i, class j, neighbor n) triple the margin is the average
L2 distance between the hand-crafted template embeddings of class i's name
and of class j's n-th neighbor, taken over a template pool. Margins depend
only on the frozen encoder and the pool, never on the learnable context, so
the table is built once and treated as a constant geometric prior.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .backend import parallel_map
from .errors import ConfigError, DataError
from .prompting import ClassSet, NeighborSet, TemplatePool
from .schemas import validate_document

ENSEMBLE = "ensemble"
FIXED_PREFIX = "fixed_prefix"


@dataclass
class MarginTable:
    """K x K x N non-negative margins plus the provenance that produced them."""

    values: np.ndarray
    mode: str
    pool_hash: str
    encoder_seed: int
    metadata: dict = None

    def __post_init__(self):
        if self.metadata is None:
            self.metadata = {}
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise DataError(f"margin table must be K x K x N, got shape {v.shape}")
        if v.shape[0] != v.shape[1]:
            raise DataError("margin table must be square in its class axes")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise DataError("margins must be finite and non-negative")
        if self.mode not in (ENSEMBLE, FIXED_PREFIX):
            raise ConfigError(f"unknown margin mode {self.mode!r}")
        v.setflags(write=False)
        self.values = v

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[2]

    def _core_json(self) -> dict:
        return {
            "k": self.k,
            "n": self.n,
            "mode": self.mode,
            "pool_hash": self.pool_hash,
            "encoder_seed": self.encoder_seed,
            "values": self.values.ravel().tolist(),
        }

    def to_json(self) -> dict:
        doc = self._core_json()
        if self.metadata:
            doc["metadata"] = self.metadata
        return doc

    def table_hash(self) -> str:
        """Hash of the mathematical content; run metadata is excluded."""
        doc = json.dumps(self._core_json(), sort_keys=True)
        return hashlib.sha256(doc.encode("utf-8")).hexdigest()

    @classmethod
    def from_json(cls, doc: dict) -> "MarginTable":
        validate_document(doc, "margins.schema.json")
        k, n = int(doc["k"]), int(doc["n"])
        values = np.asarray(doc["values"], dtype=np.float64)
        if values.size != k * k * n:
            raise DataError(
                f"margin table payload has {values.size} entries, expected {k * k * n}")
        return cls(values=values.reshape(k, k, n), mode=doc["mode"],
                   pool_hash=doc["pool_hash"], encoder_seed=int(doc["encoder_seed"]),
                   metadata=doc.get("metadata", {}))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, sort_keys=True)

    @classmethod
    def load(cls, path) -> "MarginTable":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def margin_pool(mode: str, pool: TemplatePool) -> TemplatePool:
    """Effective template pool for a margin mode.

    The fixed-prefix variant always measures distances under the single
    default template, regardless of the configured ensemble pool.
    """
    if mode == ENSEMBLE:
        return pool
    if mode == FIXED_PREFIX:
        return TemplatePool.single()
    raise ConfigError(f"unknown margin mode {mode!r}")


def compute_margin_table(embedder, classes: ClassSet, neighbors: NeighborSet,
                         pool: TemplatePool, mode: str = ENSEMBLE,
                         encoder_seed: int | None = None) -> MarginTable:
    """Average template-embedding distance for every (i, j, n) triple.

    ``embedder`` needs a ``template_embedding(template, name)`` method; no
    learnable parameters are consulted. Identical strings map to identical
    embeddings, so a neighbor that repeats its own class name yields an
    exactly-zero margin.
    """
    if neighbors.k != len(classes):
        raise DataError(
            f"neighbor set covers {neighbors.k} classes, class set has {len(classes)}")
    effective = margin_pool(mode, pool)
    k, n = len(classes), neighbors.n

    def distances_for_template(template: str) -> np.ndarray:
        cache: dict[str, np.ndarray] = {}

        def embed(text: str) -> np.ndarray:
            vec = cache.get(text)
            if vec is None:
                vec = np.asarray(embedder.template_embedding(template, text),
                                 dtype=np.float64)
                cache[text] = vec
            return vec

        class_vecs = np.stack([embed(name) for name in classes.names])
        neigh_vecs = np.stack([embed(s) for entries in neighbors.lists for s in entries])
        dists = np.empty((k, k, n))
        for i in range(k):
            diffs = neigh_vecs - class_vecs[i]
            dists[i] = np.linalg.norm(diffs, axis=1).reshape(k, n)
        return dists

    per_template = parallel_map(distances_for_template, effective.templates)
    total = per_template[0].copy()
    for d in per_template[1:]:
        total += d
    values = total / len(effective)

    if encoder_seed is None:
        inner = getattr(embedder, "encoder", None)
        encoder_seed = getattr(inner, "seed", 0)
    return MarginTable(values=values, mode=mode, pool_hash=effective.pool_hash(),
                       encoder_seed=int(encoder_seed))


def check_margin_compatibility(margins: MarginTable, classes: ClassSet,
                               pool: TemplatePool, mode: str, encoder_seed: int,
                               n_neighbors: int):
    """Refuse to train against a table built for a different configuration."""
    expected_hash = margin_pool(mode, pool).pool_hash()
    if margins.mode != mode:
        raise ConfigError(
            f"margin table mode {margins.mode!r} does not match configured {mode!r}")
    if margins.pool_hash != expected_hash:
        raise ConfigError("margin table pool hash does not match the live template pool")
    if margins.encoder_seed != encoder_seed:
        raise ConfigError(
            f"margin table encoder seed {margins.encoder_seed} does not match "
            f"configured seed {encoder_seed}")
    if margins.k != len(classes):
        raise ConfigError(
            f"margin table covers {margins.k} classes, class set has {len(classes)}")
    if margins.n < n_neighbors:
        raise ConfigError(
            f"margin table has {margins.n} neighbor slots, need {n_neighbors}")
