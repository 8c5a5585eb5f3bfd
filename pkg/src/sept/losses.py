"""Training objectives with exact analytic gradients w.r.t. the context.

Cross-entropy drives base-class classification; the semantic-expansion
term pulls each class embedding toward its own neighbors and pushes it
away from other classes' neighbors, both gated by precomputed distance
margins. A squared-distance pull toward hand-crafted anchors is available
as an optional extra regularizer.

Hinge subgradients at the kink are taken as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ProtocolError, UsageError
from .manifest import EmbeddingBatch
from .margins import MarginTable
from .prompting import ContextMatrix, PromptSpace, TemplatePool, ensemble_zero_shot_embedding

# Margin-free inter ablation pushes against the unit-sphere diameter instead
# of a semantic margin; embeddings are unit vectors so 2.0 is the max distance.
INTER_FALLBACK_MARGIN = 2.0

KG_SINGLE = "single"
KG_ENSEMBLE = "ensemble"

MEAN = "mean"
SUM = "sum"


@dataclass(frozen=True)
class AblationFlags:
    """Which semantic-expansion terms are active and whether they use margins."""

    use_intra: bool = True
    use_inter: bool = True
    intra_margin: bool = True
    inter_margin: bool = True

    @property
    def any_se(self) -> bool:
        return self.use_intra or self.use_inter

    def to_json(self) -> dict:
        return {"use_intra": self.use_intra, "use_inter": self.use_inter,
                "intra_margin": self.intra_margin, "inter_margin": self.inter_margin}

    @classmethod
    def from_json(cls, doc: dict) -> "AblationFlags":
        return cls(**doc)

    @classmethod
    def off(cls) -> "AblationFlags":
        """Plain cross-entropy baseline: no expansion terms at all."""
        return cls(use_intra=False, use_inter=False,
                   intra_margin=False, inter_margin=False)


@dataclass
class LossBreakdown:
    ce: float
    intra: float
    inter: float
    se: float
    kg: float
    total: float
    gradient: np.ndarray


class _Rows:
    """One prompt batch holding base-class rows and optionally neighbor rows."""

    def __init__(self, space: PromptSpace, context: ContextMatrix,
                 with_neighbors: bool):
        base = space.classes.base_indices
        if not base:
            raise ProtocolError("no base classes available")
        self.base = base
        self.kb = len(base)
        self.n = space.neighbors.n if with_neighbors else 0
        prompts = [space.class_prompt(i) for i in base]
        if with_neighbors:
            if space.neighbors is None:
                raise ConfigError("semantic terms need a neighbor set")
            for i in base:
                for nn in range(self.n):
                    prompts.append(space.neighbor_prompt(i, nn))
        self.batch = space.encoder.batch(prompts, context.m)

    def forward(self, context: ContextMatrix) -> np.ndarray:
        return self.batch.forward(context.values)

    def vjp(self, context: ContextMatrix, gz: np.ndarray) -> np.ndarray:
        return self.batch.vjp(context.values, gz)

    def neighbor_row(self, a: int, nn: int) -> int:
        # a indexes into the base tuple, not global class ids
        return self.kb + a * self.n + nn


def _softmax_ce(logits: np.ndarray, positions: np.ndarray):
    """Per-row stable log-softmax CE; returns (total loss, dL/dlogits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    probs = exp / denom
    rows = np.arange(logits.shape[0])
    log_probs = shifted[rows, positions] - np.log(denom[:, 0])
    loss = float(-log_probs.sum())
    dlogits = probs
    dlogits[rows, positions] -= 1.0
    return loss, dlogits


def cross_entropy(batch: EmbeddingBatch, space: PromptSpace, context: ContextMatrix,
                  tau: float, reduction: str = MEAN):
    """Cosine/temperature softmax cross-entropy over the base classes.

    Returns (loss, gradient w.r.t. context). Labels must be base-class
    indices; the softmax never sees new classes.
    """
    if tau <= 0:
        raise DomainError("temperature must be positive")
    if reduction not in (MEAN, SUM):
        raise ConfigError(f"reduction must be {MEAN!r} or {SUM!r}")
    rows = _Rows(space, context, with_neighbors=False)
    position = {g: a for a, g in enumerate(rows.base)}
    try:
        pos = np.asarray([position[int(y)] for y in batch.labels], dtype=np.int64)
    except KeyError as exc:
        raise ProtocolError(f"label {exc.args[0]} is not a base class") from None

    x = batch.vectors
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise DomainError("audio embedding with zero norm")
    xhat = x / norms

    z = rows.forward(context)
    logits = (xhat @ z.T) / tau
    loss, dlogits = _softmax_ce(logits, pos)
    scale = 1.0 / len(batch) if reduction == MEAN else 1.0
    gz = (dlogits.T @ xhat) * (scale / tau)
    return loss * scale, rows.vjp(context, gz)


def intra_loss(i: int, space: PromptSpace, context: ContextMatrix,
               margins: MarginTable, flags: AblationFlags):
    """Hinge pull of class i toward its own neighbors (margin optional)."""
    if space.classes.splits[i] != "base":
        raise ProtocolError(f"class {i} is not in the base split")
    n = space.neighbors.n
    prompts = [space.class_prompt(i)] + [space.neighbor_prompt(i, nn) for nn in range(n)]
    pb = space.encoder.batch(prompts, context.m)
    z = pb.forward(context.values)
    diffs = z[0] - z[1:]
    dists = np.linalg.norm(diffs, axis=1)
    if flags.intra_margin:
        hinge = dists - margins.values[i, i, :n]
        active = hinge > 0.0
        loss = float(hinge[active].sum()) / n
    else:
        active = dists > 0.0
        loss = float(dists.sum()) / n
    gz = np.zeros_like(z)
    for nn in np.nonzero(active)[0]:
        u = diffs[nn] / (dists[nn] * n)
        gz[0] += u
        gz[1 + nn] -= u
    return loss, pb.vjp(context.values, gz)


def inter_loss(i: int, j: int, space: PromptSpace, context: ContextMatrix,
               margins: MarginTable, flags: AblationFlags):
    """Hinge push of class i away from class j's neighbors when too close."""
    if i == j:
        raise UsageError("inter-class separation needs two distinct classes")
    for c in (i, j):
        if space.classes.splits[c] != "base":
            raise ProtocolError(f"class {c} is not in the base split")
    n = space.neighbors.n
    prompts = [space.class_prompt(i)] + [space.neighbor_prompt(j, nn) for nn in range(n)]
    pb = space.encoder.batch(prompts, context.m)
    z = pb.forward(context.values)
    diffs = z[0] - z[1:]
    dists = np.linalg.norm(diffs, axis=1)
    marg = margins.values[i, j, :n] if flags.inter_margin \
        else np.full(n, INTER_FALLBACK_MARGIN)
    hinge = marg - dists
    active = (hinge > 0.0) & (dists > 0.0)
    loss = float(hinge[hinge > 0.0].sum()) / n
    gz = np.zeros_like(z)
    for nn in np.nonzero(active)[0]:
        u = diffs[nn] / (dists[nn] * n)
        gz[0] -= u
        gz[1 + nn] += u
    return loss, pb.vjp(context.values, gz)


def _se_terms(space: PromptSpace, context: ContextMatrix, margins: MarginTable,
              flags: AblationFlags):
    """Intra/inter aggregates and combined gradient in one encoder pass."""
    rows = _Rows(space, context, with_neighbors=True)
    kb, n = rows.kb, rows.n
    z = rows.forward(context)
    zc = z[: kb]
    zn = z[kb:].reshape(kb, n, -1)
    gz = np.zeros_like(z)

    intra_avg = 0.0
    if flags.use_intra:
        coef = 1.0 / (kb * n)
        total = 0.0
        for a, gi in enumerate(rows.base):
            diffs = zc[a] - zn[a]
            dists = np.linalg.norm(diffs, axis=1)
            if flags.intra_margin:
                hinge = dists - margins.values[gi, gi, :n]
                active = hinge > 0.0
                total += float(hinge[active].sum()) / n
            else:
                active = dists > 0.0
                total += float(dists.sum()) / n
            for nn in np.nonzero(active)[0]:
                u = diffs[nn] * (coef / dists[nn])
                gz[a] += u
                gz[rows.neighbor_row(a, nn)] -= u
        intra_avg = total / kb

    inter_avg = 0.0
    if flags.use_inter and kb > 1:
        coef = 1.0 / (kb * (kb - 1) * n)
        total = 0.0
        for a, gi in enumerate(rows.base):
            for b, gj in enumerate(rows.base):
                if b == a:
                    continue
                diffs = zc[a] - zn[b]
                dists = np.linalg.norm(diffs, axis=1)
                marg = margins.values[gi, gj, :n] if flags.inter_margin \
                    else np.full(n, INTER_FALLBACK_MARGIN)
                hinge = marg - dists
                active = (hinge > 0.0) & (dists > 0.0)
                total += float(hinge[hinge > 0.0].sum()) / (n * (kb - 1))
                for nn in np.nonzero(active)[0]:
                    u = diffs[nn] * (coef / dists[nn])
                    gz[a] -= u
                    gz[rows.neighbor_row(b, nn)] += u
        inter_avg = total / kb

    return intra_avg, inter_avg, rows.vjp(context, gz)


def semantic_expansion_loss(space: PromptSpace, context: ContextMatrix,
                            margins: MarginTable, flags: AblationFlags):
    """Average of intra- and inter-class terms over the base split.

    With a single base class the inter term is defined as zero; with both
    flags off the loss is exactly zero with a zero gradient.
    """
    if not flags.any_se:
        return 0.0, np.zeros_like(context.values)
    intra_avg, inter_avg, grad = _se_terms(space, context, margins, flags)
    return intra_avg + inter_avg, grad


def kg_regularizer(space: PromptSpace, context: ContextMatrix, pool: TemplatePool,
                   mode: str = KG_SINGLE):
    """Mean squared distance from class embeddings to hand-crafted anchors."""
    if mode not in (KG_SINGLE, KG_ENSEMBLE):
        raise ConfigError(f"anchor mode must be {KG_SINGLE!r} or {KG_ENSEMBLE!r}")
    rows = _Rows(space, context, with_neighbors=False)
    z = rows.forward(context)
    anchors = []
    for gi in rows.base:
        name = space.classes.names[gi]
        if mode == KG_SINGLE:
            anchors.append(space.template_embedding(pool.templates[0], name))
        else:
            anchors.append(ensemble_zero_shot_embedding(space, name, pool))
    a = np.stack(anchors)
    diff = z - a
    loss = float((diff * diff).sum()) / rows.kb
    gz = diff * (2.0 / rows.kb)
    return loss, rows.vjp(context, gz)


def total_loss(batch: EmbeddingBatch, space: PromptSpace, context: ContextMatrix,
               margins: MarginTable | None, flags: AblationFlags, tau: float,
               lam: float, mu: float = 0.0, pool: TemplatePool | None = None,
               kg_mode: str = KG_SINGLE, reduction: str = MEAN) -> LossBreakdown:
    """Cross-entropy plus weighted semantic-expansion and anchor terms.

    With lam and mu at zero and all flags off this reduces exactly to the
    cross-entropy baseline: the returned gradient is the CE gradient
    itself, with no extra arithmetic applied.
    """
    if lam < 0 or mu < 0:
        raise DomainError("loss weights must be non-negative")
    ce, gradient = cross_entropy(batch, space, context, tau, reduction)

    intra = inter = se = kg = 0.0
    if flags.any_se:
        if margins is None:
            raise ConfigError("semantic expansion terms need a margin table")
        intra, inter, se_grad = _se_terms(space, context, margins, flags)
        se = intra + inter
        if lam != 0.0:
            gradient = gradient + lam * se_grad
    if mu != 0.0:
        if pool is None:
            raise ConfigError("anchor regularizer needs a template pool")
        kg, kg_grad = kg_regularizer(space, context, pool, kg_mode)
        gradient = gradient + mu * kg_grad

    total = ce
    if lam != 0.0:
        total = total + lam * se
    if mu != 0.0:
        total = total + mu * kg
    return LossBreakdown(ce=ce, intra=intra, inter=inter, se=se, kg=kg,
                         total=total, gradient=gradient)
