"""Few-shot sampling and SGD-with-momentum training of the context matrix.

A training run is a strict sequential chain: sample a few-shot subset,
then repeat (shuffle, evaluate loss and gradient, heavy-ball step) for a
fixed number of epochs. Everything is derived from named RNG streams, so a
(manifest, config) pair fully determines the result.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backend import active_backend
from .encoder import TextEncoder
from .errors import ConfigError, DataError, NumericError, ShapeError
from .losses import MEAN, SUM, AblationFlags, cross_entropy, total_loss
from .manifest import DatasetManifest
from .margins import ENSEMBLE, MarginTable, check_margin_compatibility
from .numerics import RNG_ALGORITHM, SeededRng
from .prompting import ContextMatrix, NeighborSet, PromptSpace, TemplatePool
from .schemas import validate_document

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 32
    hidden: int = 64
    vocab: int = 4096
    max_len: int = 32
    seed: int = 0
    lowercase: bool = True
    embedding_scale: float = 4.0

    def build(self) -> TextEncoder:
        return TextEncoder(dim=self.dim, hidden=self.hidden, vocab_size=self.vocab,
                           max_len=self.max_len, seed=self.seed,
                           lowercase=self.lowercase,
                           embedding_scale=self.embedding_scale)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "EncoderConfig":
        return cls(**doc)


@dataclass(frozen=True)
class TrainConfig:
    """All protocol knobs for one training run."""

    lr: float = 0.0125
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int | None = None  # None = full batch
    shots: int = 16
    lam: float = 3.0
    mu: float = 0.0
    tau: float = 0.01
    m_ctx: int = 16
    n_neighbors: int = 10
    seed: int = 0
    flags: AblationFlags = field(default_factory=AblationFlags)
    ce_reduction: str = MEAN
    margin_mode: str = ENSEMBLE
    kg_mode: str = "single"
    context_init: str = "normal"  # or "template": start at template word embeddings
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.context_init not in ("normal", "template"):
            raise ConfigError("context_init must be 'normal' or 'template'")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs < 1 or self.shots < 1:
            raise ConfigError("epochs and shots must be >= 1")
        if self.lam < 0 or self.mu < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.tau <= 0:
            raise ConfigError("temperature must be positive")
        if self.ce_reduction not in (MEAN, SUM):
            raise ConfigError("ce_reduction must be 'mean' or 'sum'")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["flags"] = self.flags.to_json()
        doc["encoder"] = self.encoder.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        doc["flags"] = AblationFlags.from_json(doc.get("flags", {}))
        doc["encoder"] = EncoderConfig.from_json(doc.get("encoder", {}))
        return cls(**doc)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class OptimizerState:
    velocity: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, m: int, dim: int) -> "OptimizerState":
        return cls(velocity=np.zeros((m, dim)))


def sgd_step(context: ContextMatrix, gradient: np.ndarray, state: OptimizerState,
             lr: float, momentum: float):
    """Heavy-ball update: v <- momentum*v + g; theta <- theta - lr*v."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != context.values.shape:
        raise ShapeError(
            f"gradient shape {gradient.shape} != context {context.values.shape}")
    if not np.all(np.isfinite(gradient)):
        bad = int(np.count_nonzero(~np.isfinite(gradient)))
        raise NumericError(
            f"non-finite gradient at step {state.step}: {bad} bad entries")
    state.velocity = momentum * state.velocity + gradient
    context.values = context.values - lr * state.velocity
    state.step += 1
    return context, state


@dataclass
class FewShotSample:
    """Per-base-class training indices, drawn without replacement."""

    indices_by_class: dict[int, tuple[int, ...]]

    @property
    def flat(self) -> np.ndarray:
        out = []
        for c in sorted(self.indices_by_class):
            out.extend(self.indices_by_class[c])
        return np.asarray(out, dtype=np.int64)


def sample_few_shot(manifest: DatasetManifest, shots: int, seed: int,
                    fold: int = 0) -> FewShotSample:
    """Uniform without-replacement draw of up to ``shots`` per base class."""
    if not 0 <= fold < len(manifest.folds):
        raise ConfigError(f"fold {fold} out of range ({len(manifest.folds)} folds)")
    train = np.asarray(manifest.folds[fold].train, dtype=np.int64)
    rng = SeededRng(seed).spawn("few-shot")
    picked: dict[int, tuple[int, ...]] = {}
    for c in manifest.classes.base_indices:
        pool = np.sort(train[manifest.labels[train] == c])
        if pool.size == 0:
            raise DataError(f"base class {c} has no training samples in fold {fold}")
        if pool.size <= shots:
            if pool.size < shots:
                log.info("class %d has only %d samples (< %d shots), using all",
                         c, pool.size, shots)
            picked[c] = tuple(int(i) for i in pool)
        else:
            sel = rng.choice_without_replacement(pool, shots)
            picked[c] = tuple(int(i) for i in np.sort(sel))
    return FewShotSample(indices_by_class=picked)


@dataclass
class TrainedPrompt:
    """A trained context matrix plus everything needed to reuse it."""

    config: TrainConfig
    context: np.ndarray
    margin_hash: str | None
    loss_history: list[float]
    metadata: dict

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "context": self.context.tolist(),
            "margin_hash": self.margin_hash,
            "loss_history": list(self.loss_history),
            "metadata": self.metadata,
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, sort_keys=True)

    @classmethod
    def from_json(cls, doc: dict) -> "TrainedPrompt":
        validate_document(doc, "trained_prompt.schema.json")
        return cls(config=TrainConfig.from_json(doc["config"]),
                   context=np.asarray(doc["context"], dtype=np.float64),
                   margin_hash=doc.get("margin_hash"),
                   loss_history=list(doc["loss_history"]),
                   metadata=doc.get("metadata", {}))

    @classmethod
    def load(cls, path) -> "TrainedPrompt":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_json(json.load(f))


def _train_loop(manifest: DatasetManifest, config: TrainConfig, fold: int,
                encoder: TextEncoder, step_fn, margin_hash: str | None,
                extra_metadata: dict | None = None) -> TrainedPrompt:
    """Shared optimization loop; step_fn(batch, context) -> (loss, gradient).

    The CE-only baseline and the full objective run through this exact code
    so that a zero-weight configuration reproduces the baseline bitwise.
    """
    few = sample_few_shot(manifest, config.shots, config.seed, fold)
    flat = few.flat
    full_batch = manifest.batch(flat)
    if config.context_init == "template":
        context = ContextMatrix.initialize_from_template(encoder, config.m_ctx,
                                                         config.seed)
    else:
        context = ContextMatrix.initialize(config.m_ctx, encoder.dim, config.seed)
    state = OptimizerState.zeros(config.m_ctx, encoder.dim)
    shuffle_rng = SeededRng(config.seed).spawn("batch-shuffle")
    batch_size = config.batch_size or len(flat)

    def epoch_loss() -> float:
        loss, _ = step_fn(full_batch, context)
        return loss

    history = [epoch_loss()]
    if not np.isfinite(history[0]):
        raise NumericError("initial loss is non-finite")
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(len(flat))
        for start in range(0, len(flat), batch_size):
            idx = flat[order[start:start + batch_size]]
            loss, grad = step_fn(manifest.batch(idx), context)
            if not np.isfinite(loss):
                raise NumericError(f"loss became non-finite at step {state.step}")
            sgd_step(context, grad, state, config.lr, config.momentum)
        history.append(epoch_loss())

    metadata = {
        "rng": RNG_ALGORITHM,
        "backend": active_backend(),
        "encoder_weights_hash": encoder.weights_hash(),
        "fold": fold,
        "dataset": manifest.name,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    return TrainedPrompt(config=config, context=context.values.copy(),
                         margin_hash=margin_hash, loss_history=history,
                         metadata=metadata)


def train(manifest: DatasetManifest, config: TrainConfig, neighbors: NeighborSet | None,
          margins: MarginTable | None, pool: TemplatePool | None,
          fold: int = 0) -> TrainedPrompt:
    """Optimize the context matrix with the full objective on one fold."""
    encoder = config.encoder.build()
    if encoder.dim != manifest.dim:
        raise ConfigError(
            f"encoder dim {encoder.dim} != manifest dim {manifest.dim}")

    if config.flags.any_se:
        if neighbors is None:
            raise ConfigError("semantic expansion needs a neighbor set")
        if margins is None:
            raise ConfigError("semantic expansion needs a margin table")
        if pool is None:
            raise ConfigError("margin validation needs the template pool")
        if neighbors.n < config.n_neighbors:
            raise DataError(
                f"neighbor set has {neighbors.n} entries, config wants "
                f"{config.n_neighbors}")
        neighbors = neighbors.truncated(config.n_neighbors)
        check_margin_compatibility(margins, manifest.classes, pool,
                                   config.margin_mode, config.encoder.seed,
                                   config.n_neighbors)
    space = PromptSpace(encoder, manifest.classes, config.m_ctx, neighbors)

    def step(batch, context):
        breakdown = total_loss(batch, space, context, margins, config.flags,
                               config.tau, config.lam, config.mu, pool,
                               config.kg_mode, config.ce_reduction)
        return breakdown.total, breakdown.gradient

    margin_hash = margins.table_hash() if margins is not None else None
    return _train_loop(manifest, config, fold, encoder, step, margin_hash)


def train_ce_baseline(manifest: DatasetManifest, config: TrainConfig,
                      fold: int = 0) -> TrainedPrompt:
    """Cross-entropy-only reference path (no neighbors, margins, anchors)."""
    encoder = config.encoder.build()
    if encoder.dim != manifest.dim:
        raise ConfigError(
            f"encoder dim {encoder.dim} != manifest dim {manifest.dim}")
    space = PromptSpace(encoder, manifest.classes, config.m_ctx)

    def step(batch, context):
        return cross_entropy(batch, space, context, config.tau, config.ce_reduction)

    return _train_loop(manifest, config, fold, encoder, step, None,
                       extra_metadata={"objective": "ce-only"})


def run_sweep(manifest: DatasetManifest, base_config: TrainConfig, axis: str,
              values, seeds, neighbors: NeighborSet, pool: TemplatePool,
              margins_by_mode: dict | None = None):
    """Train+evaluate once per axis value, averaged over seeds and folds.

    axis is one of 'lambda', 'neighbors', 'flags', 'margin_mode'; values
    are the raw settings for that axis. Returns one row per setting.
    """
    from . import evaluation  # local import: evaluation drives train()
    from .margins import compute_margin_table, margin_pool
    from .prompting import TemplateEmbedder

    values = list(values)
    if not values:
        raise ConfigError("sweep axis must have at least one value")
    seeds = list(seeds)

    def config_for(value) -> TrainConfig:
        if axis == "lambda":
            return base_config.replace(lam=float(value))
        if axis == "neighbors":
            return base_config.replace(n_neighbors=int(value))
        if axis == "flags":
            flags = value if isinstance(value, AblationFlags) \
                else AblationFlags.from_json(value)
            return base_config.replace(flags=flags)
        if axis == "margin_mode":
            return base_config.replace(margin_mode=str(value))
        raise ConfigError(f"unknown sweep axis {axis!r}")

    margins_by_mode = dict(margins_by_mode or {})

    def margins_for(mode: str) -> MarginTable:
        if mode not in margins_by_mode:
            encoder = base_config.encoder.build()
            margins_by_mode[mode] = compute_margin_table(
                TemplateEmbedder(encoder), manifest.classes, neighbors,
                pool, mode=mode, encoder_seed=encoder.seed)
        return margins_by_mode[mode]

    rows = []
    for value in values:
        cfg = config_for(value)
        report = evaluation.run_base_to_new(
            manifest, cfg, neighbors, pool, seeds,
            margins=margins_for(cfg.margin_mode) if cfg.flags.any_se else None)
        label = value.to_json() if isinstance(value, AblationFlags) else value
        rows.append({
            "axis": axis,
            "value": label,
            "base_acc": report.base_acc,
            "new_acc": report.new_acc,
            "h": report.h,
            "records": report.records,
        })
    return rows
