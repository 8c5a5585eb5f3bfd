"""Frozen deterministic text pipeline: tokenizer, embedding table, encoder.

The encoder maps a prompt (a sequence of slots, each either a fixed token or
a learnable context row) to a unit-norm vector: slot embeddings plus
positional vectors are mean-pooled, passed through a two-layer tanh MLP, and
L2-normalized. A hand-derived vector-Jacobian product routes gradients back
to the learnable context rows; all other weights are immutable after
construction.

Unit-norm outputs make L2 distance a monotone function of cosine
similarity, so distance-based and similarity-based objectives see the same
geometry.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError, InputError, NumericError, ShapeError
from .numerics import SeededRng, as_matrix, as_vector

ARCHITECTURE_ID = "meanpool-tanh2-l2norm-v1"

FIXED = 0
LEARNABLE = 1

_TOKEN_RE_LOWER = re.compile(r"[a-z0-9]+")
_TOKEN_RE_ANY = re.compile(r"[A-Za-z0-9]+")


def _hash_token(token: str, vocab_size: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % vocab_size


@dataclass(frozen=True)
class Tokenizer:
    """Deterministic hash tokenizer: split on non-alphanumerics, hash mod V."""

    vocab_size: int = 4096
    lowercase: bool = True
    max_len: int = 32

    def tokenize(self, text: str) -> list[int]:
        if not text or not text.strip():
            raise InputError("cannot tokenize empty or whitespace-only text")
        if self.lowercase:
            words = _TOKEN_RE_LOWER.findall(text.lower())
        else:
            words = _TOKEN_RE_ANY.findall(text)
        if not words:
            raise InputError(f"no tokens found in {text!r}")
        ids = [_hash_token(w, self.vocab_size) for w in words]
        return ids[: self.max_len]


@dataclass(frozen=True)
class PromptTokens:
    """Ordered slot sequence; each slot is a fixed token or a context row.

    kinds[i] is FIXED or LEARNABLE; ids[i] is a token id or a context row
    index respectively. Learnable indices must be distinct.
    """

    kinds: tuple[int, ...]
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.kinds) != len(self.ids):
            raise ShapeError("kinds and ids must have equal length")
        if len(self.kinds) == 0:
            raise ShapeError("prompt must have at least one slot")
        learn = [i for k, i in zip(self.kinds, self.ids) if k == LEARNABLE]
        if len(set(learn)) != len(learn):
            raise ShapeError("learnable slot indices must be distinct")

    def __len__(self):
        return len(self.kinds)

    @property
    def learnable_indices(self) -> tuple[int, ...]:
        return tuple(i for k, i in zip(self.kinds, self.ids) if k == LEARNABLE)


def fixed_prompt(token_ids) -> PromptTokens:
    """Prompt with no learnable slots (hand-crafted template path)."""
    ids = tuple(int(t) for t in token_ids)
    return PromptTokens(kinds=(FIXED,) * len(ids), ids=ids)


def context_prompt(n_context: int, token_ids) -> PromptTokens:
    """Context rows 0..n_context-1 followed by fixed tokens."""
    ids = tuple(range(n_context)) + tuple(int(t) for t in token_ids)
    kinds = (LEARNABLE,) * n_context + (FIXED,) * (len(ids) - n_context)
    return PromptTokens(kinds=kinds, ids=ids)


class TextEncoder:
    """Frozen token table + positional vectors + two-layer tanh MLP.

    All weights are drawn once from a seeded Philox stream and made
    read-only; encode is then a pure function of its inputs, identical
    across runs and platforms for a fixed seed.
    """

    def __init__(self, dim: int = 32, hidden: int = 64, vocab_size: int = 4096,
                 max_len: int = 32, seed: int = 0, lowercase: bool = True,
                 embedding_scale: float = 4.0, _weights: dict | None = None):
        if dim < 1 or hidden < 1 or vocab_size < 1 or max_len < 1:
            raise ConfigError("encoder dimensions must be positive")
        if embedding_scale <= 0:
            raise ConfigError("embedding scale must be positive")
        self.dim = int(dim)
        self.hidden = int(hidden)
        self.vocab_size = int(vocab_size)
        self.max_len = int(max_len)
        self.seed = int(seed)
        self.embedding_scale = float(embedding_scale)
        self.tokenizer = Tokenizer(vocab_size=vocab_size, lowercase=lowercase,
                                   max_len=max_len)
        if _weights is None:
            rng = SeededRng(seed)
            # MLP weights use Normal(0, 1/sqrt(fan-in)); biases start at zero.
            # Token embeddings are scaled up so pooled inputs land in the
            # tanh's curved region instead of its linear neighborhood.
            d_scale = 1.0 / np.sqrt(dim)
            self.table = rng.spawn("token-table").normal(embedding_scale,
                                                         (vocab_size, dim))
            self.positions = rng.spawn("positions").normal(d_scale, (max_len, dim))
            self.w1 = rng.spawn("w1").normal(d_scale, (hidden, dim))
            self.b1 = np.zeros(hidden)
            self.w2 = rng.spawn("w2").normal(1.0 / np.sqrt(hidden), (dim, hidden))
            self.b2 = np.zeros(dim)
        else:
            self.table = _weights["table"]
            self.positions = _weights["positions"]
            self.w1 = _weights["w1"]
            self.b1 = _weights["b1"]
            self.w2 = _weights["w2"]
            self.b2 = _weights["b2"]
        for arr in (self.table, self.positions, self.w1, self.b1, self.w2, self.b2):
            arr.setflags(write=False)
        self._compile_cache: dict[PromptTokens, tuple[np.ndarray, float]] = {}

    # -- prompt compilation -------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        return self.tokenizer.tokenize(text)

    def _compiled(self, prompt: PromptTokens) -> tuple[np.ndarray, float]:
        """Static pooled contribution and 1/len for a prompt.

        The pooled input is static + (counts @ context) / len, where static
        folds in every fixed-token embedding and all positional vectors.
        """
        cached = self._compile_cache.get(prompt)
        if cached is not None:
            return cached
        n = len(prompt)
        if n > self.max_len:
            raise ShapeError(f"prompt has {n} slots, max is {self.max_len}")
        static = np.zeros(self.dim)
        for pos, (kind, idx) in enumerate(zip(prompt.kinds, prompt.ids)):
            if kind == FIXED:
                if not 0 <= idx < self.vocab_size:
                    raise ShapeError(f"token id {idx} outside vocab of {self.vocab_size}")
                static += self.table[idx]
            static += self.positions[pos]
        inv_len = 1.0 / n
        static *= inv_len
        result = (static, inv_len)
        self._compile_cache[prompt] = result
        return result

    def batch(self, prompts, n_context_rows: int) -> "PromptBatch":
        return PromptBatch(self, prompts, n_context_rows)

    # -- single-prompt API ---------------------------------------------------

    def encode(self, prompt: PromptTokens, context=None) -> np.ndarray:
        """Unit-norm embedding of one prompt under the given context rows."""
        n_rows = 0 if context is None else as_matrix(context, "context").shape[0]
        return self.batch([prompt], n_rows).forward(context)[0]

    def encode_vjp(self, prompt: PromptTokens, context, upstream) -> np.ndarray:
        """d<upstream, encode(prompt, context)>/dcontext, shape (M, d).

        Rows for context indices absent from the prompt are zero.
        """
        ctx = as_matrix(context, "context")
        up = as_vector(upstream, "upstream")
        if up.shape[0] != self.dim:
            raise ShapeError(f"upstream has length {up.shape[0]}, want {self.dim}")
        return self.batch([prompt], ctx.shape[0]).vjp(ctx, up[None, :])

    # -- integrity and serialization ------------------------------------------

    def weights_hash(self) -> str:
        """sha256 over all frozen weights; constant for the encoder's lifetime."""
        h = hashlib.sha256()
        for arr in (self.table, self.positions, self.w1, self.b1, self.w2, self.b2):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_json(self) -> dict:
        def blob(arr):
            return base64.b64encode(
                np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")

        return {
            "architecture": ARCHITECTURE_ID,
            "seed": self.seed,
            "dims": {"vocab": self.vocab_size, "embed": self.dim,
                     "hidden": self.hidden, "max_len": self.max_len},
            "embedding_scale": self.embedding_scale,
            "lowercase": self.tokenizer.lowercase,
            "weights": {
                "table": blob(self.table),
                "positions": blob(self.positions),
                "w1": blob(self.w1),
                "b1": blob(self.b1),
                "w2": blob(self.w2),
                "b2": blob(self.b2),
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TextEncoder":
        if doc.get("architecture") != ARCHITECTURE_ID:
            raise ConfigError(
                f"unknown encoder architecture {doc.get('architecture')!r}")
        dims = doc["dims"]

        def unblob(key, shape):
            raw = base64.b64decode(doc["weights"][key])
            arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            return arr

        v, d, h, L = dims["vocab"], dims["embed"], dims["hidden"], dims["max_len"]
        weights = {
            "table": unblob("table", (v, d)),
            "positions": unblob("positions", (L, d)),
            "w1": unblob("w1", (h, d)),
            "b1": unblob("b1", (h,)),
            "w2": unblob("w2", (d, h)),
            "b2": unblob("b2", (d,)),
        }
        return cls(dim=d, hidden=h, vocab_size=v, max_len=L, seed=doc["seed"],
                   lowercase=doc["lowercase"],
                   embedding_scale=doc.get("embedding_scale", 4.0),
                   _weights=weights)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @classmethod
    def load(cls, path) -> "TextEncoder":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


class PromptBatch:
    """Stack of compiled prompts sharing one context matrix.

    forward/vjp route the batch through the kernel backend in one call;
    per-prompt gradients scatter back to context rows via the counts matrix.
    """

    def __init__(self, encoder: TextEncoder, prompts, n_context_rows: int):
        prompts = list(prompts)
        if not prompts:
            raise ShapeError("prompt batch must be non-empty")
        self.encoder = encoder
        self.n_context_rows = int(n_context_rows)
        B = len(prompts)
        static = np.empty((B, encoder.dim))
        inv_len = np.empty((B, 1))
        counts = np.zeros((B, self.n_context_rows)) if self.n_context_rows else None
        any_learnable = False
        for b, prompt in enumerate(prompts):
            s, il = encoder._compiled(prompt)
            static[b] = s
            inv_len[b] = il
            for m in prompt.learnable_indices:
                if m >= self.n_context_rows:
                    raise ShapeError(
                        f"prompt uses context row {m}, context has {self.n_context_rows}")
                counts[b, m] += 1.0
                any_learnable = True
        self.static = static
        self.inv_len = inv_len
        self.counts = counts if any_learnable else None

    def _pooled(self, context) -> np.ndarray:
        if self.counts is None:
            return self.static
        ctx = as_matrix(context, "context")
        if ctx.shape != (self.n_context_rows, self.encoder.dim):
            raise ShapeError(
                f"context shape {ctx.shape} does not match "
                f"({self.n_context_rows}, {self.encoder.dim})")
        return self.static + (self.counts @ ctx) * self.inv_len

    def forward(self, context=None) -> np.ndarray:
        e = self.encoder
        z = backend.mlp_forward(self._pooled(context), e.w1, e.b1, e.w2, e.b2)
        if not np.all(np.isfinite(z)):
            raise NumericError("encoder produced non-finite embedding")
        return z

    def vjp(self, context, upstream) -> np.ndarray:
        """Gradient of sum_b <upstream[b], z_b> w.r.t. the context matrix."""
        e = self.encoder
        up = np.asarray(upstream, dtype=np.float64)
        g_pooled = backend.mlp_vjp(self._pooled(context), e.w1, e.b1, e.w2, e.b2, up)
        if self.counts is None:
            return np.zeros((self.n_context_rows, e.dim))
        return self.counts.T @ (g_pooled * self.inv_len)
