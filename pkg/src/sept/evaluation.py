"""Classification, base-to-new and cross-dataset protocols, neighbor analytics.

Base-to-new evaluation scores base and new class splits separately, each
within its own label space, and reports their harmonic mean. Aggregated
reports average base accuracy, new accuracy, and the harmonic mean
independently across runs: H is computed per (seed, fold) run first and
then averaged, not recomputed from the averaged accuracies.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DomainError, ProtocolError
from .manifest import DatasetManifest
from .margins import MarginTable, compute_margin_table
from .numerics import stable_softmax
from .prompting import (DEFAULT_TEMPLATE, ClassSet, ContextMatrix, NeighborSet,
                        PromptSpace, TemplateEmbedder, TemplatePool,
                        ensemble_zero_shot_embedding)
from .trainer import TrainConfig, TrainedPrompt, train


def harmonic_mean(a: float, b: float) -> float:
    """2ab/(a+b); defined as 0 when both arguments are 0."""
    if a < 0 or b < 0:
        raise DomainError("harmonic mean needs non-negative arguments")
    if a + b == 0:
        return 0.0
    return 2.0 * a * b / (a + b)


def classify_against(x, rows: np.ndarray, tau: float):
    """Softmax over cosine/tau against candidate rows.

    Returns (predicted row index, probability vector). Ties break to the
    lowest index (argmax returns the first maximum).
    """
    if rows.shape[0] == 0:
        raise ProtocolError("cannot classify against an empty class subset")
    if tau <= 0:
        raise DomainError("temperature must be positive")
    x = np.asarray(x, dtype=np.float64)
    xn = np.linalg.norm(x)
    if xn == 0.0:
        raise DomainError("cannot classify a zero-norm embedding")
    row_norms = np.linalg.norm(rows, axis=1)
    logits = (rows @ (x / xn)) / (row_norms * tau)
    probs = stable_softmax(logits)
    return int(np.argmax(probs)), probs


def class_rows(space: PromptSpace, context: ContextMatrix, class_indices) -> np.ndarray:
    prompts = [space.class_prompt(i) for i in class_indices]
    return space.encoder.batch(prompts, context.m).forward(context.values)


def classify(x, space: PromptSpace, context: ContextMatrix, class_indices,
             tau: float):
    """Prompt-tuned prediction within a class subset."""
    return classify_against(x, class_rows(space, context, class_indices), tau)


def zero_shot_rows(embedder, names, pool: TemplatePool, ensemble: bool) -> np.ndarray:
    if ensemble:
        return np.stack([ensemble_zero_shot_embedding(embedder, n, pool) for n in names])
    return np.stack([embedder.template_embedding(pool.templates[0], n) for n in names])


def zero_shot_classify(x, embedder, names, pool: TemplatePool, tau: float,
                       ensemble: bool = False):
    """Hand-crafted-template prediction; no learnable context involved."""
    return classify_against(x, zero_shot_rows(embedder, names, pool, ensemble), tau)


def _subset_accuracy(manifest: DatasetManifest, test_indices, subset, rows,
                     tau: float) -> float:
    """Accuracy (%) over test samples whose label lies in ``subset``,
    classifying within that subset's label space."""
    subset = list(subset)
    pos = {g: a for a, g in enumerate(subset)}
    total = correct = 0
    for idx in test_indices:
        label = int(manifest.labels[idx])
        if label not in pos:
            continue
        pred, _ = classify_against(manifest.embeddings[idx], rows, tau)
        total += 1
        if pred == pos[label]:
            correct += 1
    if total == 0:
        raise ProtocolError("evaluation split has no test samples")
    return 100.0 * correct / total


def evaluate_base_to_new(trained: TrainedPrompt, manifest: DatasetManifest,
                         fold: int = 0) -> dict:
    """Base and new accuracy for one trained prompt on one fold."""
    config = trained.config
    encoder = config.encoder.build()
    if encoder.dim != manifest.dim:
        raise ConfigError(f"encoder dim {encoder.dim} != manifest dim {manifest.dim}")
    if not 0 <= fold < len(manifest.folds):
        raise ProtocolError(f"fold {fold} out of range")
    classes = manifest.classes
    if not classes.base_indices or not classes.new_indices:
        raise ProtocolError("base-to-new evaluation needs both splits populated")
    space = PromptSpace(encoder, classes, config.m_ctx)
    context = ContextMatrix(trained.context.copy())
    test = manifest.folds[fold].test

    base_rows = class_rows(space, context, classes.base_indices)
    new_rows = class_rows(space, context, classes.new_indices)
    base_acc = _subset_accuracy(manifest, test, classes.base_indices, base_rows,
                                config.tau)
    new_acc = _subset_accuracy(manifest, test, classes.new_indices, new_rows,
                               config.tau)
    return {
        "base_acc": base_acc,
        "new_acc": new_acc,
        "h": harmonic_mean(base_acc, new_acc),
        "fold": fold,
        "seed": config.seed,
    }


def evaluate_cross_dataset(trained: TrainedPrompt, source: DatasetManifest,
                           target: DatasetManifest, source_fold: int = 0,
                           target_fold: int = 0) -> dict:
    """Source-set accuracy plus transfer accuracy under the same context."""
    config = trained.config
    encoder = config.encoder.build()
    for m in (source, target):
        if m.dim != encoder.dim:
            raise ConfigError(
                f"manifest {m.name!r} dim {m.dim} != encoder dim {encoder.dim}")
    context = ContextMatrix(trained.context.copy())

    out = {}
    for tag, manifest, fold in (("source", source, source_fold),
                                ("target", target, target_fold)):
        if not 0 <= fold < len(manifest.folds):
            raise ProtocolError(f"{tag} fold {fold} out of range")
        test = manifest.folds[fold].test
        if not test:
            raise ProtocolError(f"{tag} manifest has an empty test partition")
        space = PromptSpace(encoder, manifest.classes, config.m_ctx)
        all_classes = tuple(range(len(manifest.classes)))
        rows = class_rows(space, context, all_classes)
        out[f"{tag}_acc"] = _subset_accuracy(manifest, test, all_classes, rows,
                                             config.tau)
    return out


@dataclass
class EvalReport:
    """Aggregated base-to-new results across seeds and folds."""

    base_acc: float
    new_acc: float
    h: float
    records: list
    config_hash: str

    def to_json(self) -> dict:
        return {"base_acc": self.base_acc, "new_acc": self.new_acc, "h": self.h,
                "records": self.records, "config_hash": self.config_hash}

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, sort_keys=True)

    def save_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["seed", "fold", "base_acc",
                                                   "new_acc", "h"])
            writer.writeheader()
            for rec in self.records:
                writer.writerow(rec)
            writer.writerow({"seed": "mean", "fold": "", "base_acc": self.base_acc,
                             "new_acc": self.new_acc, "h": self.h})


def run_base_to_new(manifest: DatasetManifest, config: TrainConfig,
                    neighbors: NeighborSet | None, pool: TemplatePool | None,
                    seeds, margins: MarginTable | None = None) -> EvalReport:
    """Full protocol: train per (seed, fold), evaluate, average per-run H."""
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    if config.flags.any_se and margins is None:
        encoder = config.encoder.build()
        margins = compute_margin_table(TemplateEmbedder(encoder), manifest.classes,
                                       neighbors, pool, mode=config.margin_mode,
                                       encoder_seed=encoder.seed)
    records = []
    for seed in seeds:
        cfg = config.replace(seed=int(seed))
        for fold in range(len(manifest.folds)):
            trained = train(manifest, cfg, neighbors, margins, pool, fold=fold)
            records.append(evaluate_base_to_new(trained, manifest, fold))
    base = float(np.mean([r["base_acc"] for r in records]))
    new = float(np.mean([r["new_acc"] for r in records]))
    h = float(np.mean([r["h"] for r in records]))
    return EvalReport(base_acc=base, new_acc=new, h=h, records=records,
                      config_hash=config.config_hash())


def zero_shot_report(manifest: DatasetManifest, encoder, pool: TemplatePool,
                     tau: float, ensemble: bool = False, fold: int = 0) -> dict:
    """Zero-shot accuracy over all classes plus per-split accuracies."""
    embedder = TemplateEmbedder(encoder)
    classes = manifest.classes
    test = manifest.folds[fold].test
    all_idx = tuple(range(len(classes)))
    rows = zero_shot_rows(embedder, classes.names, pool, ensemble)
    out = {"accuracy": _subset_accuracy(manifest, test, all_idx, rows, tau)}
    for tag, subset in (("base", classes.base_indices), ("new", classes.new_indices)):
        if subset:
            sub_rows = rows[list(subset)]
            out[f"{tag}_accuracy"] = _subset_accuracy(manifest, test, subset,
                                                      sub_rows, tau)
    return out


# -- neighbor analytics --------------------------------------------------------


def diversity_score(i: int, neighbors: NeighborSet, embedder,
                    template: str = DEFAULT_TEMPLATE) -> float:
    """1 minus the mean pairwise cosine similarity among a class's neighbors."""
    n = neighbors.n
    if n < 2:
        raise DomainError("diversity needs at least 2 neighbors")
    vecs = [np.asarray(embedder.template_embedding(template, s), dtype=np.float64)
            for s in neighbors.lists[i]]
    unit = [v / np.linalg.norm(v) for v in vecs]
    total = 0.0
    pairs = 0
    for a in range(n):
        for b in range(a + 1, n):
            total += float(np.clip(unit[a] @ unit[b], -1.0, 1.0))
            pairs += 1
    return 1.0 - total / pairs


def dataset_diversity(classes: ClassSet, neighbors: NeighborSet, embedder,
                      template: str = DEFAULT_TEMPLATE) -> float:
    scores = [diversity_score(i, neighbors, embedder, template)
              for i in range(len(classes))]
    return float(np.mean(scores))


_HIST_EDGES = np.round(np.arange(-1.0, 1.0 + 1e-9, 0.05), 10)


def neighbor_similarity_stats(classes: ClassSet, neighbors: NeighborSet, embedder,
                              template: str = DEFAULT_TEMPLATE) -> dict:
    """Similarity of each class to own (positive) vs other (negative) neighbors.

    Histograms use 0.05-wide bins over [-1, 1]. With a single class the
    negative population is empty and reported as absent.
    """
    if neighbors.k != len(classes):
        raise DataError("neighbor set does not cover the class set")
    class_vecs = []
    for name in classes.names:
        v = np.asarray(embedder.template_embedding(template, name), dtype=np.float64)
        class_vecs.append(v / np.linalg.norm(v))
    neigh_vecs = []
    for entries in neighbors.lists:
        row = []
        for s in entries:
            v = np.asarray(embedder.template_embedding(template, s), dtype=np.float64)
            row.append(v / np.linalg.norm(v))
        neigh_vecs.append(row)

    positive, negative = [], []
    for i in range(len(classes)):
        for j in range(len(classes)):
            sims = [float(np.clip(class_vecs[i] @ p, -1.0, 1.0))
                    for p in neigh_vecs[j]]
            (positive if i == j else negative).extend(sims)

    def hist(vals):
        counts, _ = np.histogram(vals, bins=_HIST_EDGES)
        return counts.tolist()

    out = {
        "mean_positive": float(np.mean(positive)),
        "mean_negative": float(np.mean(negative)) if negative else None,
        "histogram": {
            "bin_edges": _HIST_EDGES.tolist(),
            "positive": hist(positive),
            "negative": hist(negative) if negative else None,
        },
    }
    return out


def _normalize_name(s: str) -> str:
    return re.sub(r"\s+", " ", s.strip().lower())


def filter_overlapping_neighbors(neighbors: NeighborSet, new_class_names):
    """Drop neighbors that exactly match a new class name (case/space-insensitive).

    Returns (filtered set, removed fraction). Classes keep their width N by
    re-padding from the surviving entries; a class losing every neighbor is
    an error.
    """
    blocked = {_normalize_name(n) for n in new_class_names}
    n = neighbors.n
    total = neighbors.k * n
    removed = 0
    survivors = []
    for i, entries in enumerate(neighbors.lists):
        kept = [s for s in entries if _normalize_name(s) not in blocked]
        removed += len(entries) - len(kept)
        if not kept:
            raise DataError(
                f"class {i}: every neighbor overlaps a new class name")
        survivors.append(kept)
    if removed == 0:
        return neighbors, 0.0
    return NeighborSet.build(survivors, n=n), removed / total


def dump_embeddings(manifest: DatasetManifest, encoder, path,
                    trained: TrainedPrompt | None = None,
                    neighbors: NeighborSet | None = None,
                    pool: TemplatePool | None = None):
    """Write JSON-lines {name, split, vector} for external projection tools.

    With a trained prompt, class (and neighbor) embeddings are encoded under
    its context; otherwise the hand-crafted template path is used.
    """
    classes = manifest.classes
    lines = []
    if trained is not None:
        space = PromptSpace(encoder, classes, trained.config.m_ctx, neighbors)
        context = ContextMatrix(trained.context.copy())
        for i, (name, split) in enumerate(zip(classes.names, classes.splits)):
            vec = space.class_embedding(i, context)
            lines.append({"name": name, "split": split, "vector": vec.tolist()})
        if neighbors is not None:
            for i, entries in enumerate(neighbors.lists):
                for nn, s in enumerate(entries):
                    vec = space.neighbor_embedding(i, nn, context)
                    lines.append({"name": s,
                                  "split": f"neighbor-{classes.splits[i]}",
                                  "vector": vec.tolist()})
    else:
        embedder = TemplateEmbedder(encoder)
        template = (pool.templates[0] if pool is not None else DEFAULT_TEMPLATE)
        for name, split in zip(classes.names, classes.splits):
            vec = embedder.template_embedding(template, name)
            lines.append({"name": name, "split": split, "vector": vec.tolist()})
        if neighbors is not None:
            for i, entries in enumerate(neighbors.lists):
                for s in entries:
                    vec = embedder.template_embedding(template, s)
                    lines.append({"name": s,
                                  "split": f"neighbor-{classes.splits[i]}",
                                  "vector": vec.tolist()})
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(json.dumps(line) + "\n")
    return len(lines)
