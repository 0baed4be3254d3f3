"""Synthetic families with a known coupling graph.

Each column carries a latent 21-dimensional Gaussian vector; coupled
columns are tied through a block of the latent precision matrix that
pairs state ``a`` of one column with state ``perm[a]`` of the other.
Rows are obtained by projecting each latent vector onto the one-hot
code of its largest component.
"""

from __future__ import annotations

import numpy as np

from .msa import N_SYMBOLS, Msa


def random_contacts(L, n_contacts, rng, min_sep=6, max_degree=2):
    """Random column pairs with ``j - i >= min_sep`` and bounded degree."""
    deg = np.zeros(L, dtype=int)
    pairs = set()
    tries = 0
    while len(pairs) < n_contacts and tries < 100 * n_contacts:
        tries += 1
        i, j = sorted(rng.choice(L, size=2, replace=False))
        if j - i < min_sep or (i, j) in pairs:
            continue
        if deg[i] >= max_degree or deg[j] >= max_degree:
            continue
        pairs.add((int(i), int(j)))
        deg[i] += 1
        deg[j] += 1
    return sorted(pairs)


def latent_precision(L, contacts, rng, strength=0.45, q=N_SYMBOLS):
    """``I + coupling`` blocks; positive definite when ``strength * max_degree < 1``."""
    Om = np.eye(L * q)
    perms = {}
    for i, j in contacts:
        perm = rng.permutation(q)
        P = np.zeros((q, q))
        P[np.arange(q), perm] = 1.0
        Om[i * q:(i + 1) * q, j * q:(j + 1) * q] = -strength * P
        Om[j * q:(j + 1) * q, i * q:(i + 1) * q] = -strength * P.T
        perms[(i, j)] = perm
    return Om, perms


def sample_family(Om, L, n, rng, q=N_SYMBOLS, prefix="s"):
    """Draw ``n`` rows: latent Gaussian with precision ``Om``, then argmax per column."""
    C = np.linalg.cholesky(Om)
    # z = C^{-T} e has covariance Om^{-1}
    e = rng.standard_normal((L * q, n))
    z = np.linalg.solve(C.T, e).T
    codes = z.reshape(n, L, q).argmax(axis=2).astype(np.uint8)
    return Msa(codes, tuple(f"{prefix}{r}" for r in range(n)))


def true_support(L, contacts):
    sup = np.zeros((L, L), dtype=bool)
    for i, j in contacts:
        sup[i, j] = sup[j, i] = True
    return sup


def ranking_auc(scores, support, min_sep=6):
    """AUC of ranking pairs ``j - i >= min_sep`` by score against ``support``."""
    from scipy.stats import rankdata

    iu, ju = np.triu_indices(scores.shape[0], k=min_sep)
    s = scores[iu, ju]
    y = support[iu, ju]
    npos, nneg = int(y.sum()), int((~y).sum())
    if npos == 0 or nneg == 0:
        raise ValueError("need both positive and negative pairs")
    r = rankdata(s)
    return float((r[y].sum() - npos * (npos + 1) / 2) / (npos * nneg))


def support_f1(pred, truth, min_sep=6):
    iu, ju = np.triu_indices(pred.shape[0], k=min_sep)
    p, t = pred[iu, ju], truth[iu, ju]
    tp = int((p & t).sum())
    fp = int((p & ~t).sum())
    fn = int((~p & t).sum())
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)
