"""Independent naive-loop implementations used only as test oracles.

Everything here is straight-line Python over lists and math functions,
deliberately sharing no vectorized code with the package. Embeddings are
obtained through the public single-prompt encoder API, since the loss
definitions take embeddings as inputs.
"""

import math

import numpy as np

from sept.losses import INTER_FALLBACK_MARGIN


def naive_l2(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def naive_margin_table(embedder, classes, neighbors, pool):
    k, n, t_count = len(classes), neighbors.n, len(pool)
    table = [[[0.0] * n for _ in range(k)] for _ in range(k)]
    for template in pool.templates:
        for i, name in enumerate(classes.names):
            ci = embedder.template_embedding(template, name)
            for j in range(k):
                for nn, s in enumerate(neighbors.lists[j]):
                    pj = embedder.template_embedding(template, s)
                    table[i][j][nn] += naive_l2(ci, pj)
    return np.asarray(table) / t_count


def naive_cross_entropy(vectors, labels, class_embeddings, base_indices, tau,
                        reduction="mean"):
    pos = {g: a for a, g in enumerate(base_indices)}
    total = 0.0
    for x, y in zip(vectors, labels):
        nx = math.sqrt(sum(v * v for v in x))
        logits = []
        for z in class_embeddings:
            nz = math.sqrt(sum(v * v for v in z))
            logits.append(sum(a * b for a, b in zip(x, z)) / (nx * nz * tau))
        m = max(logits)
        denom = sum(math.exp(l - m) for l in logits)
        total -= (logits[pos[int(y)]] - m) - math.log(denom)
    if reduction == "mean":
        total /= len(labels)
    return total


def naive_intra(z_i, neighbor_embeddings, margins_row, use_margin):
    n = len(neighbor_embeddings)
    total = 0.0
    for nn in range(n):
        d = naive_l2(z_i, neighbor_embeddings[nn])
        total += max(0.0, d - margins_row[nn]) if use_margin else d
    return total / n


def naive_inter(z_i, neighbor_embeddings, margins_row, use_margin):
    n = len(neighbor_embeddings)
    total = 0.0
    for nn in range(n):
        d = naive_l2(z_i, neighbor_embeddings[nn])
        m = margins_row[nn] if use_margin else INTER_FALLBACK_MARGIN
        total += max(0.0, m - d)
    return total / n


def naive_se(space, context, margins, flags):
    """Quadruple loop over (i, j, n) with per-string encoder calls."""
    base = space.classes.base_indices
    kb = len(base)
    n = space.neighbors.n
    z = {i: space.class_embedding(i, context) for i in base}
    p = {(i, nn): space.neighbor_embedding(i, nn, context)
         for i in base for nn in range(n)}
    total = 0.0
    for i in base:
        if flags.use_intra:
            total += naive_intra(z[i], [p[(i, nn)] for nn in range(n)],
                                 margins.values[i, i, :n], flags.intra_margin) / kb
        if flags.use_inter and kb > 1:
            for j in base:
                if j == i:
                    continue
                total += naive_inter(z[i], [p[(j, nn)] for nn in range(n)],
                                     margins.values[i, j, :n], flags.inter_margin) \
                    / (kb * (kb - 1))
    return total


def fd_gradient(f, context_values, eps=1e-5):
    """Central finite differences of a scalar function of the context."""
    grad = np.zeros_like(context_values)
    for i in range(context_values.shape[0]):
        for j in range(context_values.shape[1]):
            up = context_values.copy()
            down = context_values.copy()
            up[i, j] += eps
            down[i, j] -= eps
            grad[i, j] = (f(up) - f(down)) / (2 * eps)
    return grad
