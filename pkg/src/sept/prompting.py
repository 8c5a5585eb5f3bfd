"""Learnable context assembly: class, neighbor, and template prompts.

The context matrix is the only trainable state in the system. Class and
neighbor prompts share the same context rows as a strict prefix of the
class-name tokens; hand-crafted template prompts carry no learnable slots
at all, so they are constants of the frozen encoder.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .encoder import PromptTokens, TextEncoder, context_prompt, fixed_prompt
from .errors import ConfigError, DataError, DomainError, InputError, ShapeError
from .numerics import SeededRng, as_matrix
from .schemas import validate_document

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "This is a sound of {class}"

BASE = "base"
NEW = "new"


@dataclass
class ContextMatrix:
    """The M x d learnable prompt vectors; mutated only by the optimizer."""

    values: np.ndarray

    def __post_init__(self):
        self.values = as_matrix(self.values, "context")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def initialize(cls, m: int, dim: int, seed: int, scale: float = 0.02) -> "ContextMatrix":
        if m < 1:
            raise ConfigError("context length must be >= 1")
        rng = SeededRng(seed).spawn("context-init")
        return cls(values=rng.normal(scale, (m, dim)))

    @classmethod
    def initialize_from_template(cls, encoder: TextEncoder, m: int, seed: int,
                                 template: str = DEFAULT_TEMPLATE,
                                 scale: float = 0.02) -> "ContextMatrix":
        """Rows start at the token embeddings of the template's prefix words.

        This puts the initial context prompt geometrically on top of the
        hand-crafted template prompt, so precomputed margins bracket the
        starting distances instead of an arbitrary random configuration.
        Cycled if the template has fewer than m words; the usual Gaussian
        perturbation is added on top.
        """
        if m < 1:
            raise ConfigError("context length must be >= 1")
        prefix = template.replace("{class}", " ").strip()
        ids = encoder.tokenize(prefix)
        rows = np.stack([encoder.table[ids[i % len(ids)]] for i in range(m)])
        rng = SeededRng(seed).spawn("context-init")
        return cls(values=rows + rng.normal(scale, (m, encoder.dim)))

    def copy(self) -> "ContextMatrix":
        return ContextMatrix(values=self.values.copy())


@dataclass(frozen=True)
class ClassSet:
    """Ordered class names with base/new split tags."""

    names: tuple[str, ...]
    splits: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) != len(self.splits):
            raise DataError("names and splits must align")
        if not self.names:
            raise DataError("class set must be non-empty")
        normalized = [n.strip().lower() for n in self.names]
        if any(not n for n in normalized):
            raise DataError("class names must be non-empty")
        if len(set(normalized)) != len(normalized):
            raise DataError("class names must be distinct after lowercasing/trimming")
        for s in self.splits:
            if s not in (BASE, NEW):
                raise DataError(f"split tag must be '{BASE}' or '{NEW}', got {s!r}")

    def __len__(self):
        return len(self.names)

    @property
    def base_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.splits) if s == BASE)

    @property
    def new_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.splits) if s == NEW)

    @classmethod
    def from_names(cls, names, splits=None) -> "ClassSet":
        names = tuple(names)
        if splits is None:
            # default protocol split: first half base, remainder new
            half = (len(names) + 1) // 2
            splits = tuple(BASE if i < half else NEW for i in range(len(names)))
        return cls(names=names, splits=tuple(splits))


@dataclass(frozen=True)
class NeighborSet:
    """Per-class neighbor strings, padded to a uniform count N."""

    lists: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.lists:
            raise DataError("neighbor set must cover at least one class")
        n = len(self.lists[0])
        for i, entries in enumerate(self.lists):
            if len(entries) != n:
                raise DataError(f"class {i} has {len(entries)} neighbors, expected {n}")
            if any(not s or not s.strip() for s in entries):
                raise DataError(f"class {i} has an empty neighbor string")

    @property
    def n(self) -> int:
        return len(self.lists[0])

    @property
    def k(self) -> int:
        return len(self.lists)

    @classmethod
    def build(cls, per_class_lists, n: int | None = None) -> "NeighborSet":
        """Normalize ragged per-class lists to a uniform width.

        Short lists are padded by cycling their own entries (with a logged
        warning); long lists are truncated.
        """
        lists = [list(entries) for entries in per_class_lists]
        if n is None:
            n = max(len(entries) for entries in lists)
        out = []
        for i, entries in enumerate(lists):
            if not entries:
                raise DataError(f"class {i} has no neighbors to pad from")
            if len(entries) < n:
                log.warning("class %d has %d neighbors, padding to %d by repetition",
                            i, len(entries), n)
                entries = [entries[j % len(entries)] for j in range(n)]
            out.append(tuple(entries[:n]))
        return cls(lists=tuple(out))

    def truncated(self, n: int) -> "NeighborSet":
        if n < 1 or n > self.n:
            raise DomainError(f"cannot truncate neighbor count to {n} (have {self.n})")
        return NeighborSet(lists=tuple(entries[:n] for entries in self.lists))

    def to_json(self, classes: ClassSet) -> dict:
        return {name: list(entries) for name, entries in zip(classes.names, self.lists)}

    @classmethod
    def from_json(cls, doc: dict, classes: ClassSet, n: int | None = None) -> "NeighborSet":
        validate_document(doc, "neighbors.schema.json")
        missing = [name for name in classes.names if name not in doc]
        if missing:
            raise DataError(f"neighbor file missing classes: {missing}")
        return cls.build([list(doc[name]) for name in classes.names], n=n)

    def save(self, path, classes: ClassSet):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(classes), f, indent=1)

    @classmethod
    def load(cls, path, classes: ClassSet, n: int | None = None) -> "NeighborSet":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f), classes, n=n)


@dataclass(frozen=True)
class TemplatePool:
    """Pool of prefix templates, each with exactly one {class} placeholder."""

    templates: tuple[str, ...]

    def __post_init__(self):
        if not self.templates:
            raise InputError("template pool must be non-empty")
        for t in self.templates:
            if t.count("{class}") != 1:
                raise InputError(
                    f"template must contain exactly one {{class}} placeholder: {t!r}")

    def __len__(self):
        return len(self.templates)

    def pool_hash(self) -> str:
        canonical = json.dumps(list(self.templates), ensure_ascii=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def single(cls, template: str = DEFAULT_TEMPLATE) -> "TemplatePool":
        return cls(templates=(template,))

    @classmethod
    def load(cls, path) -> "TemplatePool":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        validate_document(doc, "templates.schema.json")
        return cls(templates=tuple(doc))

    @classmethod
    def packaged(cls, name: str = "templates_100.json") -> "TemplatePool":
        """Pool shipped with the package (100 diverse prefixes by default)."""
        from importlib import resources
        doc = json.loads(resources.files("sept").joinpath(f"data/{name}")
                         .read_text(encoding="utf-8"))
        validate_document(doc, "templates.schema.json")
        return cls(templates=tuple(doc))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(list(self.templates), f, indent=1)


def expand_template(template: str, name: str) -> str:
    if template.count("{class}") != 1:
        raise InputError(f"template must contain exactly one {{class}}: {template!r}")
    return template.replace("{class}", name)


class TemplateEmbedder:
    """Hand-crafted template path of the frozen encoder; no learnable slots."""

    def __init__(self, encoder: TextEncoder):
        self.encoder = encoder

    def template_embedding(self, template: str, name: str) -> np.ndarray:
        text = expand_template(template, name)
        return self.encoder.encode(fixed_prompt(self.encoder.tokenize(text)))


class PromptSpace:
    """Prompt construction and embedding for one encoder + class set.

    Class and neighbor prompts are [context rows..., class-name tokens];
    the fixed tokens are truncated so the whole prompt fits the encoder's
    slot budget, always keeping at least one fixed slot.
    """

    def __init__(self, encoder: TextEncoder, classes: ClassSet, m_ctx: int,
                 neighbors: NeighborSet | None = None):
        if m_ctx < 1:
            raise ConfigError("context length must be >= 1")
        if m_ctx >= encoder.max_len:
            raise ConfigError(
                f"context length {m_ctx} leaves no room for class tokens "
                f"(encoder max_len {encoder.max_len})")
        if neighbors is not None and neighbors.k != len(classes):
            raise DataError(
                f"neighbor set covers {neighbors.k} classes, class set has {len(classes)}")
        self.encoder = encoder
        self.classes = classes
        self.m_ctx = int(m_ctx)
        self.neighbors = neighbors
        self._text_prompt_cache: dict[str, PromptTokens] = {}

    # -- prompt builders ------------------------------------------------------

    def text_prompt(self, text: str) -> PromptTokens:
        """Context-prefixed prompt for an arbitrary string."""
        cached = self._text_prompt_cache.get(text)
        if cached is None:
            ids = self.encoder.tokenize(text)[: self.encoder.max_len - self.m_ctx]
            cached = context_prompt(self.m_ctx, ids)
            self._text_prompt_cache[text] = cached
        return cached

    def class_prompt(self, i: int) -> PromptTokens:
        return self.text_prompt(self.classes.names[i])

    def neighbor_prompt(self, i: int, n: int) -> PromptTokens:
        return self.text_prompt(self._neighbor_string(i, n))

    def _neighbor_string(self, i: int, n: int) -> str:
        if self.neighbors is None:
            raise ConfigError("prompt space was built without a neighbor set")
        return self.neighbors.lists[i][n]

    # -- embeddings -----------------------------------------------------------

    def class_embedding(self, i: int, context: ContextMatrix) -> np.ndarray:
        return self.encoder.encode(self.class_prompt(i), context.values)

    def neighbor_embedding(self, i: int, n: int, context: ContextMatrix) -> np.ndarray:
        return self.encoder.encode(self.neighbor_prompt(i, n), context.values)

    def template_embedding(self, template: str, name: str) -> np.ndarray:
        """Hand-crafted prompt embedding; independent of any context matrix."""
        return TemplateEmbedder(self.encoder).template_embedding(template, name)


class InjectedTextEmbedder:
    """Fixture embedder mapping strings straight to preset vectors.

    Implements the template-embedding interface used by margin and
    diversity computations, ignoring the template, so tests can pin exact
    geometric configurations.
    """

    def __init__(self, mapping: dict[str, np.ndarray]):
        self.mapping = {k: np.asarray(v, dtype=np.float64) for k, v in mapping.items()}

    def template_embedding(self, template: str, name: str) -> np.ndarray:
        try:
            return self.mapping[name]
        except KeyError:
            raise DataError(f"no injected embedding for {name!r}")


def ensemble_zero_shot_embedding(embedder, name: str, pool: TemplatePool) -> np.ndarray:
    """Mean of per-template embeddings, renormalized to unit length."""
    vecs = [embedder.template_embedding(t, name) for t in pool.templates]
    mean = np.mean(vecs, axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise DomainError(f"ensemble embedding of {name!r} has zero norm")
    return mean / norm
